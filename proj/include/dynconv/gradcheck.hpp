#pragma once

#include <functional>
#include <string>
#include <vector>

#include "dynconv/model.hpp"

namespace dynconv {

// Central finite differences against the analytic backward pass. Models run
// in 64-bit eval mode with dropout off; hard-attention layers are checked on
// their soft surrogate path (the only path the estimator can see).

struct GradCheckOptions {
    double epsilon = 1e-5;
    double tolerance = 1e-4;
    i64 batch = 2;
    // Test fixture: additively corrupt this parameter's analytic gradient.
    std::string tamper_param;
    double tamper_amount = 0.0;
};

struct GradCheckGroup {
    std::string param;
    double max_rel_err = 0.0;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
    bool pass = true;
};

struct GradCheckReport {
    std::vector<GradCheckGroup> groups;
    bool pass = true;
    bool surrogate_path = false;  // hard-attention presets only

    const GradCheckGroup* worst() const;
};

// |a-n| / max(|a|, |n|, 1e-3); the floor keeps near-zero gradients from
// amplifying finite-difference noise.
double relative_error(double analytic, double numeric);

// f(x + eps*e_i) - f(x - eps*e_i) over 2*eps for every element of x.
Tensor fd_grad(const std::function<double(const Tensor&)>& f, Tensor x, double eps);

// The tiny configuration the preset checks run on (batch 2, 1x8x8 images or
// length-16 series).
ModelSpec gradcheck_spec(Preset preset);

GradCheckReport gradcheck_model(const ModelSpec& spec, std::uint64_t seed,
                                const GradCheckOptions& options = {});

}  // namespace dynconv
