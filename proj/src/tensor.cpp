#include "dynconv/tensor.hpp"

#include <cmath>
#include <numbers>

namespace dynconv {

double Prng::normal() {
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    // u1 in (0,1] so the log is finite; u2 in [0,1).
    const double u1 = static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;
    const double u2 = static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
}

void debug_check_finite(const Tensor& t, const char* op) {
#ifndef NDEBUG
    for (i64 i = 0; i < t.numel(); ++i) {
        if (!std::isfinite(t[i]))
            throw ValidationError(std::string(op) + ": non-finite value at flat index " + std::to_string(i));
    }
#else
    (void)t;
    (void)op;
#endif
}

}  // namespace dynconv
