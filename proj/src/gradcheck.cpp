#include "dynconv/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "dynconv/train.hpp"

namespace dynconv {

double relative_error(double analytic, double numeric) {
    const double denom = std::max({std::fabs(analytic), std::fabs(numeric), 1e-3});
    return std::fabs(analytic - numeric) / denom;
}

Tensor fd_grad(const std::function<double(const Tensor&)>& f, Tensor x, double eps) {
    Tensor g(x.shape());
    for (i64 i = 0; i < x.numel(); ++i) {
        const double saved = x[i];
        x[i] = saved + eps;
        const double up = f(x);
        x[i] = saved - eps;
        const double down = f(x);
        x[i] = saved;
        g[i] = (up - down) / (2.0 * eps);
    }
    return g;
}

const GradCheckGroup* GradCheckReport::worst() const {
    const GradCheckGroup* w = nullptr;
    for (const auto& g : groups)
        if (!w || g.max_rel_err > w->max_rel_err) w = &g;
    return w;
}

ModelSpec gradcheck_spec(Preset preset) {
    ModelSpec spec;
    spec.preset = preset;
    spec.num_classes = 3;
    spec.kernels_per_bank = 2;
    spec.kr_dim = 4;
    if (preset == Preset::Net1Dcnn || preset == Preset::Net2Dcnn) {
        spec.task = Task::Timeseries;
        spec.input_shape = {1, 16};
        spec.width_multiplier = 0.25;
    } else {
        spec.task = Task::Classify;
        spec.input_shape = {1, 8, 8};
        spec.width_multiplier = 0.125;
        spec.depth = 1;
    }
    return spec;
}

GradCheckReport gradcheck_model(const ModelSpec& spec, std::uint64_t seed,
                                const GradCheckOptions& options) {
    Prng rng(seed);
    Model model = build_model(spec, rng);

    Shape in_shape{options.batch};
    in_shape.insert(in_shape.end(), spec.input_shape.begin(), spec.input_shape.end());
    Tensor x(in_shape);
    rng.fill_normal(x, 0.0, 1.0);

    LabeledData data;
    data.inputs = x;
    if (spec.task == Task::Segment) {
        const i64 pixels = spec.input_shape[1] * spec.input_shape[2];
        data.masks.resize(static_cast<std::size_t>(options.batch * pixels));
        for (auto& m : data.masks) m = rng.index(spec.num_classes);
    } else {
        data.labels.resize(static_cast<std::size_t>(options.batch));
        for (auto& l : data.labels) l = rng.index(spec.num_classes);
    }
    std::vector<i64> index(static_cast<std::size_t>(options.batch));
    for (i64 i = 0; i < options.batch; ++i) index[static_cast<std::size_t>(i)] = i;

    auto loss_fn = [&]() {
        ForwardCtx ctx;
        ctx.training = false;
        ctx.soft_surrogate = true;
        Tensor out = model.forward(x, ctx);
        return task_loss(out, data, index);
    };

    // Analytic pass.
    model.zero_grads();
    {
        ForwardCtx ctx;
        ctx.training = false;
        ctx.soft_surrogate = true;
        Tensor out = model.forward(x, ctx);
        auto [loss, grad] = task_loss(out, data, index);
        (void)loss;
        model.backward(grad, ctx);
    }

    GradCheckReport report;
    report.surrogate_path = spec.preset == Preset::HardAttention;
    for (Param* p : model.params()) {
        GradCheckGroup group;
        group.param = p->name;
        for (i64 i = 0; i < p->value.numel(); ++i) {
            const double saved = p->value[i];
            p->value[i] = saved + options.epsilon;
            const double up = loss_fn().first;
            p->value[i] = saved - options.epsilon;
            const double down = loss_fn().first;
            p->value[i] = saved;
            const double numeric = (up - down) / (2.0 * options.epsilon);
            double analytic = p->grad[i];
            if (p->name == options.tamper_param) analytic += options.tamper_amount;
            const double err = relative_error(analytic, numeric);
            if (err > group.max_rel_err) {
                group.max_rel_err = err;
                group.worst_analytic = analytic;
                group.worst_numeric = numeric;
            }
        }
        group.pass = group.max_rel_err < options.tolerance;
        report.pass = report.pass && group.pass;
        report.groups.push_back(std::move(group));
    }
    return report;
}

}  // namespace dynconv
