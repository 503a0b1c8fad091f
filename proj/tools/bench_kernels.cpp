// Times the OpenMP kernels against the serial reference on a few
// representative shapes and reports the numeric gap between them.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>

#include "dynconv/ops.hpp"
#include "dynconv/reference.hpp"
#include "dynconv/tensor.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

using namespace dynconv;

namespace {

double time_ms(const std::function<Tensor()>& fn, int repeats, Tensor& out) {
    out = fn();  // warmup + result capture
    const auto start = std::chrono::steady_clock::now();
    for (int r = 0; r < repeats; ++r) out = fn();
    const auto stop = std::chrono::steady_clock::now();
    return std::chrono::duration<double, std::milli>(stop - start).count() / repeats;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    double m = 0.0;
    for (i64 i = 0; i < a.numel(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
    return m;
}

void row(const char* label, const std::function<Tensor()>& serial, const std::function<Tensor()>& parallel,
         int repeats) {
    Tensor a, b;
    const double ts = time_ms(serial, repeats, a);
    const double tp = time_ms(parallel, repeats, b);
    std::printf("%-28s %10.3f ms %10.3f ms %7.2fx %12.3e\n", label, ts, tp, ts / tp, max_abs_diff(a, b));
}

}  // namespace

int main() {
#ifdef _OPENMP
    std::printf("threads: %d\n", omp_get_max_threads());
#else
    std::printf("threads: 1 (compiled without OpenMP)\n");
#endif
    std::printf("%-28s %13s %13s %8s %12s\n", "kernel", "serial", "parallel", "speedup", "max|diff|");

    Prng rng(42);

    {
        Tensor x({8, 16, 32, 32}), w({32, 16, 3, 3});
        rng.fill_normal(x, 0.0, 1.0);
        rng.fill_normal(w, 0.0, 0.1);
        const ConvSpec spec = ConvSpec::uniform(1, 1);
        row("conv2d 8x16x32x32 k3", [&] { return ref::conv2d(x, w, spec); },
            [&] { return ops::conv2d(x, w, spec); }, 5);
    }
    {
        Tensor x({32, 8, 256}), w({16, 8, 7});
        rng.fill_normal(x, 0.0, 1.0);
        rng.fill_normal(w, 0.0, 0.1);
        const ConvSpec spec{1, 1, 0, 3};
        row("conv1d 32x8x256 k7", [&] { return ref::conv1d(x, w, spec); },
            [&] { return ops::conv1d(x, w, spec); }, 20);
    }
    {
        Tensor x({16, 32, 64, 64});
        rng.fill_normal(x, 0.0, 1.0);
        row("maxpool2d 16x32x64x64", [&] { return ref::maxpool2d(x, 2, 2, 2, 2); },
            [&] { return ops::maxpool2d(x, 2, 2, 2, 2); }, 10);
        row("gap 16x32x64x64", [&] { return ref::gap(x); }, [&] { return ops::gap(x); }, 20);
    }
    {
        Tensor x({64, 512}), w({256, 512}), b({256});
        rng.fill_normal(x, 0.0, 1.0);
        rng.fill_normal(w, 0.0, 0.05);
        row("dense 64x512 -> 256", [&] { return ref::dense(x, w, b); },
            [&] { return ops::dense(x, w, b); }, 20);
    }
    return 0;
}
