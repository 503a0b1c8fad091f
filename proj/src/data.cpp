#include "dynconv/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iostream>
#include <map>
#include <numbers>
#include <sstream>

namespace dynconv {

LabeledData TimeSeriesDataset::to_labeled() const {
    // Model input layout is [N, 1, L].
    return LabeledData{series.reshaped({size(), 1, length}), labels, {}};
}

// -- UCR TSV -------------------------------------------------------------------

TimeSeriesDataset read_ucr_tsv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open TSV file: " + path);

    std::vector<std::vector<double>> rows;
    std::vector<i64> raw_labels;
    std::string line;
    i64 line_no = 0;
    i64 length = -1;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::vector<std::string> fields;
        std::size_t start = 0;
        while (true) {
            const std::size_t tab = line.find('\t', start);
            fields.push_back(line.substr(start, tab == std::string::npos ? tab : tab - start));
            if (tab == std::string::npos) break;
            start = tab + 1;
        }
        if (fields.size() < 2)
            throw ParseError("line " + std::to_string(line_no) + ": need a label and at least one value");

        std::vector<double> values;
        values.reserve(fields.size() - 1);
        i64 label = 0;
        for (std::size_t i = 0; i < fields.size(); ++i) {
            try {
                std::size_t used = 0;
                if (i == 0) {
                    label = std::stoll(fields[i], &used);
                } else {
                    values.push_back(std::stod(fields[i], &used));
                }
                if (used != fields[i].size()) throw std::invalid_argument("trailing characters");
            } catch (const std::exception&) {
                throw ParseError("line " + std::to_string(line_no) + ": non-numeric field '" + fields[i] +
                                 "'");
            }
        }
        if (length < 0) length = static_cast<i64>(values.size());
        if (static_cast<i64>(values.size()) != length)
            throw ParseError("line " + std::to_string(line_no) + ": ragged row, expected " +
                             std::to_string(length) + " values, got " + std::to_string(values.size()));
        raw_labels.push_back(label);
        rows.push_back(std::move(values));
    }
    if (rows.empty()) throw ParseError("TSV file has no data rows: " + path);

    // Dense label remap in sorted original order.
    std::map<i64, i64> remap;
    for (const i64 l : raw_labels) remap.emplace(l, 0);
    i64 next = 0;
    for (auto& [orig, dense] : remap) dense = next++;

    TimeSeriesDataset ds;
    ds.length = length;
    ds.num_classes = next;
    ds.series = Tensor({static_cast<i64>(rows.size()), length});
    ds.original_labels.resize(static_cast<std::size_t>(next));
    for (const auto& [orig, dense] : remap) ds.original_labels[static_cast<std::size_t>(dense)] = orig;
    for (std::size_t r = 0; r < rows.size(); ++r) {
        ds.labels.push_back(remap.at(raw_labels[r]));
        // Per-series z-normalization; constant series map to all-zeros.
        double mean = 0.0;
        for (const double v : rows[r]) mean += v;
        mean /= static_cast<double>(length);
        double var = 0.0;
        for (const double v : rows[r]) var += (v - mean) * (v - mean);
        const double std_dev = std::sqrt(var / static_cast<double>(length));
        double* out = ds.series.data() + static_cast<i64>(r) * length;
        if (std_dev < 1e-12) {
            for (i64 i = 0; i < length; ++i) out[i] = 0.0;
        } else {
            for (i64 i = 0; i < length; ++i) out[i] = (rows[r][static_cast<std::size_t>(i)] - mean) / std_dev;
        }
    }
    return ds;
}

void write_ucr_tsv(const TimeSeriesDataset& data, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw ParseError("cannot open TSV file for writing: " + path);
    char buf[64];
    for (i64 n = 0; n < data.size(); ++n) {
        out << data.original_labels[static_cast<std::size_t>(data.labels[static_cast<std::size_t>(n)])];
        for (i64 i = 0; i < data.length; ++i) {
            std::snprintf(buf, sizeof(buf), "%.9g", data.series.at2(n, i));
            out << '\t' << buf;
        }
        out << '\n';
    }
}

// -- IDX --------------------------------------------------------------------------

namespace {

i64 idx_elem_bytes(IdxType t) { return t == IdxType::U8 ? 1 : 4; }

}  // namespace

IdxArray read_idx(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open IDX file: " + path);
    std::vector<std::uint8_t> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (buf.size() < 4) throw FormatError("IDX file too short: " + path);
    if (buf[0] != 0 || buf[1] != 0)
        throw FormatError("bad IDX magic (first two bytes must be zero) in " + path);
    const std::uint8_t dtype = buf[2];
    if (dtype != 0x08 && dtype != 0x0D)
        throw FormatError("unsupported IDX dtype byte 0x" + [&] {
            char h[8];
            std::snprintf(h, sizeof(h), "%02X", dtype);
            return std::string(h);
        }() + " in " + path);
    const i64 ndim = buf[3];
    if (buf.size() < 4 + static_cast<std::size_t>(ndim) * 4)
        throw FormatError("truncated IDX dimension header in " + path);

    IdxArray array;
    array.dtype = static_cast<IdxType>(dtype);
    for (i64 d = 0; d < ndim; ++d) {
        const std::size_t at = 4 + static_cast<std::size_t>(d) * 4;
        const i64 dim = (static_cast<i64>(buf[at]) << 24) | (static_cast<i64>(buf[at + 1]) << 16) |
                        (static_cast<i64>(buf[at + 2]) << 8) | static_cast<i64>(buf[at + 3]);
        array.dims.push_back(dim);
    }
    const std::size_t header = 4 + static_cast<std::size_t>(ndim) * 4;
    const std::size_t expected = static_cast<std::size_t>(array.count() * idx_elem_bytes(array.dtype));
    const std::size_t actual = buf.size() - header;
    if (actual != expected)
        throw FormatError("IDX payload size mismatch in " + path + ": expected " +
                          std::to_string(expected) + " bytes, got " + std::to_string(actual));
    array.bytes.assign(buf.begin() + static_cast<std::ptrdiff_t>(header), buf.end());
    return array;
}

void write_idx(const IdxArray& array, const std::string& path) {
    const std::size_t expected = static_cast<std::size_t>(array.count() * idx_elem_bytes(array.dtype));
    if (array.bytes.size() != expected)
        throw FormatError("IDX payload size mismatch on write: expected " + std::to_string(expected) +
                          " bytes, have " + std::to_string(array.bytes.size()));
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot open IDX file for writing: " + path);
    const char header[4] = {0, 0, static_cast<char>(array.dtype), static_cast<char>(array.dims.size())};
    out.write(header, 4);
    for (const i64 dim : array.dims) {
        const char d[4] = {static_cast<char>((dim >> 24) & 0xFF), static_cast<char>((dim >> 16) & 0xFF),
                           static_cast<char>((dim >> 8) & 0xFF), static_cast<char>(dim & 0xFF)};
        out.write(d, 4);
    }
    out.write(reinterpret_cast<const char*>(array.bytes.data()),
              static_cast<std::streamsize>(array.bytes.size()));
    if (!out) throw FormatError("IDX write failed: " + path);
}

IdxArray idx_from_f32(const Shape& dims, const std::vector<float>& values) {
    IdxArray array;
    array.dtype = IdxType::F32;
    array.dims = dims;
    array.bytes.resize(values.size() * 4);
    for (std::size_t i = 0; i < values.size(); ++i) {
        std::uint32_t bits;
        std::memcpy(&bits, &values[i], 4);
        array.bytes[i * 4] = static_cast<std::uint8_t>((bits >> 24) & 0xFF);
        array.bytes[i * 4 + 1] = static_cast<std::uint8_t>((bits >> 16) & 0xFF);
        array.bytes[i * 4 + 2] = static_cast<std::uint8_t>((bits >> 8) & 0xFF);
        array.bytes[i * 4 + 3] = static_cast<std::uint8_t>(bits & 0xFF);
    }
    return array;
}

IdxArray idx_from_u8(const Shape& dims, const std::vector<std::uint8_t>& values) {
    IdxArray array;
    array.dtype = IdxType::U8;
    array.dims = dims;
    array.bytes = values;
    return array;
}

std::vector<float> idx_to_f32(const IdxArray& array) {
    if (array.dtype != IdxType::F32) throw FormatError("idx_to_f32: array is not float32");
    std::vector<float> out(static_cast<std::size_t>(array.count()));
    for (std::size_t i = 0; i < out.size(); ++i) {
        const std::uint32_t bits = (static_cast<std::uint32_t>(array.bytes[i * 4]) << 24) |
                                   (static_cast<std::uint32_t>(array.bytes[i * 4 + 1]) << 16) |
                                   (static_cast<std::uint32_t>(array.bytes[i * 4 + 2]) << 8) |
                                   static_cast<std::uint32_t>(array.bytes[i * 4 + 3]);
        std::memcpy(&out[i], &bits, 4);
    }
    return out;
}

ImageDataset load_image_split(const std::string& dir, const std::string& split) {
    const std::string base = dir + "/" + split;
    const IdxArray images = read_idx(base + "-images.idx");
    const IdxArray labels = read_idx(base + "-labels.idx");
    if (images.dims.size() != 4)
        throw FormatError("image IDX must be 4-D [N,C,H,W], got " + shape_str(images.dims));
    if (labels.dims.size() != 1 || labels.dims[0] != images.dims[0])
        throw FormatError("label IDX must be 1-D with one label per image");

    ImageDataset ds;
    ds.images = Tensor(images.dims);
    if (images.dtype == IdxType::U8) {
        for (i64 i = 0; i < ds.images.numel(); ++i)
            ds.images[i] = static_cast<double>(images.bytes[static_cast<std::size_t>(i)]) / 255.0;
    } else {
        const auto f = idx_to_f32(images);
        for (i64 i = 0; i < ds.images.numel(); ++i) ds.images[i] = static_cast<double>(f[static_cast<std::size_t>(i)]);
    }
    if (labels.dtype != IdxType::U8) throw FormatError("label IDX must be unsigned byte");
    i64 max_label = 0;
    for (const std::uint8_t b : labels.bytes) {
        ds.labels.push_back(b);
        max_label = std::max<i64>(max_label, b);
    }
    ds.num_classes = max_label + 1;

    std::ifstream probe(base + "-masks.idx", std::ios::binary);
    if (probe.good()) {
        probe.close();
        const IdxArray masks = read_idx(base + "-masks.idx");
        if (masks.dims.size() != 3 || masks.dims[0] != images.dims[0] ||
            masks.dims[1] != images.dims[2] || masks.dims[2] != images.dims[3])
            throw FormatError("mask IDX must be [N,H,W] matching the images");
        if (masks.dtype != IdxType::U8) throw FormatError("mask IDX must be unsigned byte");
        i64 max_mask = 0;
        for (const std::uint8_t b : masks.bytes) {
            ds.masks.push_back(b);
            max_mask = std::max<i64>(max_mask, b);
        }
        ds.num_classes = std::max(ds.num_classes, max_mask + 1);
    }
    return ds;
}

void save_image_split(const ImageDataset& data, const std::string& dir, const std::string& split) {
    const std::string base = dir + "/" + split;
    std::vector<float> pixels(static_cast<std::size_t>(data.images.numel()));
    for (i64 i = 0; i < data.images.numel(); ++i) pixels[static_cast<std::size_t>(i)] = static_cast<float>(data.images[i]);
    write_idx(idx_from_f32(data.images.shape(), pixels), base + "-images.idx");

    std::vector<std::uint8_t> labels;
    for (const i64 l : data.labels) {
        if (l < 0 || l > 255) throw ValidationError("save_image_split: labels must fit unsigned byte");
        labels.push_back(static_cast<std::uint8_t>(l));
    }
    write_idx(idx_from_u8({data.size()}, labels), base + "-labels.idx");

    if (data.has_masks()) {
        std::vector<std::uint8_t> masks;
        for (const i64 m : data.masks) masks.push_back(static_cast<std::uint8_t>(m));
        write_idx(idx_from_u8({data.size(), data.images.dim(2), data.images.dim(3)}, masks),
                  base + "-masks.idx");
    }
}

// -- augmentation ---------------------------------------------------------------------

namespace {

// Nearest-neighbor resample through an inverse map about the image center.
template <typename MapFn>
Tensor resample(const Tensor& img, MapFn&& inverse_map) {
    const i64 C = img.dim(0), H = img.dim(1), W = img.dim(2);
    Tensor out(img.shape());
    for (i64 y = 0; y < H; ++y)
        for (i64 x = 0; x < W; ++x) {
            double sx, sy;
            inverse_map(static_cast<double>(x), static_cast<double>(y), sx, sy);
            const i64 ix = static_cast<i64>(std::llround(sx));
            const i64 iy = static_cast<i64>(std::llround(sy));
            if (ix < 0 || ix >= W || iy < 0 || iy >= H) continue;  // zero fill
            for (i64 c = 0; c < C; ++c) out.at3(c, y, x) = img.at3(c, iy, ix);
        }
    return out;
}

Tensor flip_horizontal(const Tensor& img) {
    const i64 C = img.dim(0), H = img.dim(1), W = img.dim(2);
    Tensor out(img.shape());
    for (i64 c = 0; c < C; ++c)
        for (i64 y = 0; y < H; ++y)
            for (i64 x = 0; x < W; ++x) out.at3(c, y, x) = img.at3(c, y, W - 1 - x);
    return out;
}

}  // namespace

void augment(Tensor& image, Tensor* mask, const AugmentConfig& cfg, Prng& rng) {
    if (image.rank() != 3) throw DimensionError("augment expects a single [C,H,W] image");
    const i64 H = image.dim(1), W = image.dim(2);
    const double cx = static_cast<double>(W - 1) / 2.0;
    const double cy = static_cast<double>(H - 1) / 2.0;

    // Draw every factor up front so image and mask share the same geometry.
    const bool flip = cfg.horizontal_flip && rng.uniform() < 0.5;
    const double theta =
        rng.uniform(-cfg.rotation_range_deg, cfg.rotation_range_deg) * std::numbers::pi / 180.0;
    const double zoom = rng.uniform(1.0 - cfg.zoom_range, 1.0 + cfg.zoom_range);
    const double brightness = rng.uniform(cfg.brightness_lo, cfg.brightness_hi);

    const double ct = std::cos(theta), st = std::sin(theta);
    auto rotate_map = [&](double x, double y, double& sx, double& sy) {
        const double dx = x - cx, dy = y - cy;
        sx = cx + ct * dx + st * dy;
        sy = cy - st * dx + ct * dy;
    };
    auto zoom_map = [&](double x, double y, double& sx, double& sy) {
        sx = cx + (x - cx) / zoom;
        sy = cy + (y - cy) / zoom;
    };

    auto apply_geometry = [&](Tensor& t) {
        if (flip) t = flip_horizontal(t);
        if (theta != 0.0) t = resample(t, rotate_map);
        if (zoom != 1.0) t = resample(t, zoom_map);
    };

    apply_geometry(image);
    if (mask) apply_geometry(*mask);

    for (i64 i = 0; i < image.numel(); ++i)
        image[i] = std::clamp(image[i] * brightness, 0.0, 1.0);
}

// -- generators ------------------------------------------------------------------------

ImageDataset gen_oriented_bars(i64 n_per_class, i64 size, i64 n_orientations, Prng& rng,
                               double noise_std) {
    if (n_orientations != 2 && n_orientations != 4 && n_orientations != 8)
        throw ValidationError("gen_oriented_bars: n_orientations must be 2, 4 or 8");
    if (size < 8) throw ValidationError("gen_oriented_bars: size must be >= 8");

    const i64 N = n_per_class * n_orientations;
    ImageDataset ds;
    ds.images = Tensor({N, 1, size, size});
    ds.num_classes = n_orientations;
    const double c = static_cast<double>(size - 1) / 2.0;
    const double half_thickness = std::max(1.0, static_cast<double>(size) / 12.0);
    const double half_length = 0.45 * static_cast<double>(size);

    i64 idx = 0;
    for (i64 cls = 0; cls < n_orientations; ++cls) {
        const double angle = std::numbers::pi * static_cast<double>(cls) / static_cast<double>(n_orientations);
        const double dx = std::cos(angle), dy = std::sin(angle);
        for (i64 s = 0; s < n_per_class; ++s, ++idx) {
            ds.labels.push_back(cls);
            for (i64 y = 0; y < size; ++y)
                for (i64 x = 0; x < size; ++x) {
                    const double px = static_cast<double>(x) - c, py = static_cast<double>(y) - c;
                    const double along = px * dx + py * dy;
                    const double across = std::fabs(px * dy - py * dx);
                    double v = (across <= half_thickness && std::fabs(along) <= half_length) ? 1.0 : 0.0;
                    if (noise_std > 0.0) v += rng.normal(0.0, noise_std);
                    ds.images.at4(idx, 0, y, x) = std::clamp(v, 0.0, 1.0);
                }
        }
    }
    return ds;
}

ImageDataset rotate_bars_90(const ImageDataset& data, i64 n_orientations) {
    ImageDataset out;
    out.images = Tensor(data.images.shape());
    out.num_classes = data.num_classes;
    const i64 N = data.size(), C = data.images.dim(1), S = data.images.dim(2);
    for (i64 n = 0; n < N; ++n)
        for (i64 ch = 0; ch < C; ++ch)
            for (i64 i = 0; i < S; ++i)
                for (i64 j = 0; j < S; ++j)
                    out.images.at4(n, ch, i, j) = data.images.at4(n, ch, j, S - 1 - i);
    for (const i64 l : data.labels) out.labels.push_back((l + n_orientations / 2) % n_orientations);
    return out;
}

ImageDataset gen_shapes_seg(i64 n, i64 size, Prng& rng, double noise_std) {
    if (size < 16) throw ValidationError("gen_shapes_seg: size must be >= 16");
    ImageDataset ds;
    ds.images = Tensor({n, 1, size, size});
    ds.masks.assign(static_cast<std::size_t>(n * size * size), 0);
    ds.labels.assign(static_cast<std::size_t>(n), 0);  // unused for segmentation
    ds.num_classes = 3;

    for (i64 img = 0; img < n; ++img) {
        const i64 count = 1 + rng.index(3);
        i64* mask = ds.masks.data() + img * size * size;
        for (i64 shape = 0; shape < count; ++shape) {
            const bool disc = rng.index(2) == 1;
            const double brightness = rng.uniform(0.6, 1.0);
            for (int attempt = 0; attempt < 20; ++attempt) {
                const i64 half = 2 + rng.index(size / 6);
                const i64 cx = half + rng.index(size - 2 * half);
                const i64 cy = half + rng.index(size - 2 * half);
                // Reject overlap with anything already drawn.
                bool clear = true;
                for (i64 y = cy - half; y <= cy + half && clear; ++y)
                    for (i64 x = cx - half; x <= cx + half && clear; ++x)
                        if (mask[y * size + x] != 0) clear = false;
                if (!clear) continue;
                for (i64 y = cy - half; y <= cy + half; ++y)
                    for (i64 x = cx - half; x <= cx + half; ++x) {
                        if (disc) {
                            const double r2 = static_cast<double>((x - cx) * (x - cx) + (y - cy) * (y - cy));
                            if (r2 > static_cast<double>(half * half)) continue;
                        }
                        mask[y * size + x] = disc ? 2 : 1;
                        ds.images.at4(img, 0, y, x) = brightness;
                    }
                break;
            }
        }
        if (noise_std > 0.0)
            for (i64 p = 0; p < size * size; ++p) {
                double& v = ds.images.vec()[static_cast<std::size_t>(img * size * size + p)];
                v = std::clamp(v + rng.normal(0.0, noise_std), 0.0, 1.0);
            }
    }
    return ds;
}

TimeSeriesDataset gen_synth_timeseries(i64 n_per_class, i64 length, i64 n_classes, Prng& rng,
                                       double noise_std) {
    TimeSeriesDataset ds;
    ds.length = length;
    ds.num_classes = n_classes;
    ds.series = Tensor({n_per_class * n_classes, length});
    for (i64 c = 0; c < n_classes; ++c) ds.original_labels.push_back(c);

    i64 idx = 0;
    for (i64 c = 0; c < n_classes; ++c)
        for (i64 s = 0; s < n_per_class; ++s, ++idx) {
            ds.labels.push_back(c);
            const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
            const double freq = 2.0 * std::numbers::pi * static_cast<double>(c + 1);
            for (i64 t = 0; t < length; ++t) {
                const double u = static_cast<double>(t) / static_cast<double>(length);
                ds.series.at2(idx, t) = std::sin(freq * u + phase) + rng.normal(0.0, noise_std);
            }
        }
    return ds;
}

// -- k-fold --------------------------------------------------------------------------

std::vector<FoldSplit> stratified_kfold(const std::vector<i64>& labels, i64 k, std::uint64_t seed) {
    const i64 N = static_cast<i64>(labels.size());
    if (k < 2) throw ValidationError("stratified_kfold: k must be >= 2");
    if (k > N)
        throw ValidationError("stratified_kfold: k=" + std::to_string(k) + " exceeds dataset size " +
                              std::to_string(N));

    std::map<i64, std::vector<i64>> by_class;
    for (i64 i = 0; i < N; ++i) by_class[labels[static_cast<std::size_t>(i)]].push_back(i);

    bool stratify = true;
    for (const auto& [cls, members] : by_class)
        if (static_cast<i64>(members.size()) < k) stratify = false;

    Prng rng(seed);
    std::vector<std::vector<i64>> fold_members(static_cast<std::size_t>(k));
    if (stratify) {
        i64 cursor = 0;
        for (auto& [cls, members] : by_class) {
            rng.shuffle(members);
            for (const i64 idx : members) fold_members[static_cast<std::size_t>(cursor++ % k)].push_back(idx);
        }
    } else {
        std::cerr << "warning: a class has fewer than " << k
                  << " members; falling back to non-stratified folds\n";
        std::vector<i64> order(static_cast<std::size_t>(N));
        std::iota(order.begin(), order.end(), 0);
        rng.shuffle(order);
        for (i64 i = 0; i < N; ++i) fold_members[static_cast<std::size_t>(i % k)].push_back(order[static_cast<std::size_t>(i)]);
    }

    std::vector<FoldSplit> splits(static_cast<std::size_t>(k));
    for (i64 f = 0; f < k; ++f) {
        auto& split = splits[static_cast<std::size_t>(f)];
        split.test_index = fold_members[static_cast<std::size_t>(f)];
        std::sort(split.test_index.begin(), split.test_index.end());
        for (i64 other = 0; other < k; ++other) {
            if (other == f) continue;
            split.train_index.insert(split.train_index.end(), fold_members[static_cast<std::size_t>(other)].begin(),
                                     fold_members[static_cast<std::size_t>(other)].end());
        }
        std::sort(split.train_index.begin(), split.train_index.end());
    }
    return splits;
}

}  // namespace dynconv
