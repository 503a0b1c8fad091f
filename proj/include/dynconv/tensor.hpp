#pragma once

#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace dynconv {

using i64 = std::int64_t;
using Shape = std::vector<i64>;

// Shape/argument mismatch, message names the offending axes.
struct DimensionError : std::runtime_error {
    explicit DimensionError(const std::string& msg) : std::runtime_error(msg) {}
};

// Bad input values (labels out of range, k_active out of range, ...).
struct ValidationError : std::runtime_error {
    explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed binary container (IDX).
struct FormatError : std::runtime_error {
    explicit FormatError(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed text input (TSV, config), message carries the line number where known.
struct ParseError : std::runtime_error {
    explicit ParseError(const std::string& msg) : std::runtime_error(msg) {}
};

inline i64 shape_numel(const Shape& s) {
    i64 n = 1;
    for (i64 d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

// Dense row-major tensor of 64-bit reals. All toolkit math runs in 64-bit;
// the checkpoint container quantizes to 32-bit floats at the file boundary.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, double fill = 0.0)
        : shape_(std::move(shape)), data_(static_cast<std::size_t>(shape_numel(shape_)), fill) {
        validate_shape();
    }
    Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
        validate_shape();
        if (static_cast<i64>(data_.size()) != shape_numel(shape_))
            throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                                 " does not match shape " + shape_str(shape_));
    }

    const Shape& shape() const { return shape_; }
    i64 dim(std::size_t i) const { return shape_.at(i); }
    std::size_t rank() const { return shape_.size(); }
    i64 numel() const { return static_cast<i64>(data_.size()); }
    bool empty() const { return data_.empty(); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::vector<double>& vec() { return data_; }
    const std::vector<double>& vec() const { return data_; }

    double& operator[](i64 i) { return data_[static_cast<std::size_t>(i)]; }
    double operator[](i64 i) const { return data_[static_cast<std::size_t>(i)]; }

    double& at2(i64 i, i64 j) { return data_[static_cast<std::size_t>(i * shape_[1] + j)]; }
    double at2(i64 i, i64 j) const { return data_[static_cast<std::size_t>(i * shape_[1] + j)]; }
    double& at3(i64 i, i64 j, i64 k) {
        return data_[static_cast<std::size_t>((i * shape_[1] + j) * shape_[2] + k)];
    }
    double at3(i64 i, i64 j, i64 k) const {
        return data_[static_cast<std::size_t>((i * shape_[1] + j) * shape_[2] + k)];
    }
    double& at4(i64 i, i64 j, i64 k, i64 l) {
        return data_[static_cast<std::size_t>(((i * shape_[1] + j) * shape_[2] + k) * shape_[3] + l)];
    }
    double at4(i64 i, i64 j, i64 k, i64 l) const {
        return data_[static_cast<std::size_t>(((i * shape_[1] + j) * shape_[2] + k) * shape_[3] + l)];
    }

    void fill(double v) { std::fill(data_.begin(), data_.end(), v); }
    Tensor reshaped(Shape s) const {
        if (shape_numel(s) != numel())
            throw DimensionError("reshape " + shape_str(shape_) + " -> " + shape_str(s) + ": size mismatch");
        return Tensor(std::move(s), data_);
    }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

private:
    void validate_shape() const {
        for (i64 d : shape_)
            if (d < 1) throw DimensionError("dimension sizes must be >= 1, got " + shape_str(shape_));
    }

    Shape shape_;
    std::vector<double> data_;
};

// SplitMix64 stream feeding a Box-Muller normal sampler. Same seed gives the
// same sample sequence on every run.
class Prng {
public:
    explicit Prng(std::uint64_t seed = 0) : state_(seed) {}

    std::uint64_t next_u64() {
        std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    // Uniform in [0,1).
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform index in [0,n).
    i64 index(i64 n) { return static_cast<i64>(next_u64() % static_cast<std::uint64_t>(n)); }

    double normal();
    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    void fill_normal(Tensor& t, double mean, double stddev) {
        for (i64 i = 0; i < t.numel(); ++i) t[i] = normal(mean, stddev);
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (i64 i = static_cast<i64>(v.size()) - 1; i > 0; --i) std::swap(v[i], v[index(i + 1)]);
    }

private:
    std::uint64_t state_ = 0;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

// Stride/padding for 1-D and 2-D convolutions; dilation is fixed at 1.
// 1-D ops use the *_w components.
struct ConvSpec {
    i64 stride_h = 1;
    i64 stride_w = 1;
    i64 pad_h = 0;
    i64 pad_w = 0;

    static ConvSpec uniform(i64 stride, i64 pad) { return ConvSpec{stride, stride, pad, pad}; }

    void validate() const {
        if (stride_h < 1 || stride_w < 1) throw ValidationError("conv stride must be positive");
        if (pad_h < 0 || pad_w < 0) throw ValidationError("conv padding must be non-negative");
    }
};

// floor((in + 2*pad - k)/stride) + 1, errors when no window fits.
inline i64 conv_out_size(i64 in, i64 k, i64 stride, i64 pad, const char* axis) {
    const i64 span = in + 2 * pad - k;
    if (span < 0)
        throw DimensionError(std::string("conv output size < 1 on axis ") + axis + ": input " +
                             std::to_string(in) + " + 2*" + std::to_string(pad) + " pad < kernel " +
                             std::to_string(k));
    return span / stride + 1;
}

void debug_check_finite(const Tensor& t, const char* op);

}  // namespace dynconv
