#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <map>

#include "dynconv/gradcheck.hpp"
#include "dynconv/model.hpp"
#include "dynconv/train.hpp"

using namespace dynconv;

namespace {

Tensor rot90_image(const Tensor& x) {
    const i64 N = x.dim(0), C = x.dim(1), S = x.dim(2);
    Tensor out(x.shape());
    for (i64 n = 0; n < N; ++n)
        for (i64 c = 0; c < C; ++c)
            for (i64 i = 0; i < S; ++i)
                for (i64 j = 0; j < S; ++j) out.at4(n, c, i, j) = x.at4(n, c, j, S - 1 - i);
    return out;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    double m = 0.0;
    for (i64 i = 0; i < a.numel(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
    return m;
}

// Copies base_cnn weights into a K=1 dynamic sibling; the bank's only kernel
// takes the corresponding static weight, generators are left alone.
void copy_params_for_reduction(Model& base, Model& dyn) {
    std::map<std::string, const Tensor*> by_name;
    for (Param* p : base.params()) by_name[p->name] = &p->value;
    for (Param* p : dyn.params()) {
        std::string want = p->name;
        if (const auto pos = want.find(".bank0"); pos != std::string::npos)
            want = want.substr(0, pos) + ".w";
        else if (want.find(".gen.") != std::string::npos || want.find(".kr.") != std::string::npos)
            continue;
        const auto it = by_name.find(want);
        REQUIRE(it != by_name.end());
        REQUIRE(it->second->shape() == p->value.shape());
        p->value = *it->second;
    }
}

ModelSpec tiny_spec(Preset preset, Task task = Task::Classify) {
    ModelSpec spec;
    spec.preset = preset;
    spec.task = task;
    spec.width_multiplier = 0.25;
    spec.depth = 1;
    spec.num_classes = 3;
    spec.kernels_per_bank = 2;
    spec.kr_dim = 4;
    spec.input_shape = task == Task::Timeseries ? Shape{1, 16} : Shape{1, 8, 8};
    return spec;
}

}  // namespace

TEST_CASE("build_model: shape contracts") {
    Prng rng(1);
    ModelSpec spec;
    spec.preset = Preset::BaseCnn;
    spec.task = Task::Classify;
    spec.num_classes = 10;
    spec.input_shape = {1, 16, 16};
    Model m = build_model(spec, rng);

    Tensor x({3, 1, 16, 16});
    rng.fill_normal(x, 0.0, 1.0);
    ForwardCtx ctx;
    const Tensor y = m.forward(x, ctx);
    CHECK(y.shape() == Shape{3, 10});
    CHECK(m.output_shape(3) == Shape{3, 10});
}

TEST_CASE("build_model: segment head restores input resolution") {
    Prng rng(2);
    ModelSpec spec = tiny_spec(Preset::BaseCnn, Task::Segment);
    Model m = build_model(spec, rng);
    Tensor x({2, 1, 8, 8});
    rng.fill_normal(x, 0.0, 1.0);
    ForwardCtx ctx;
    const Tensor y = m.forward(x, ctx);
    CHECK(y.shape() == Shape{2, 3, 8, 8});
}

TEST_CASE("build_model: dynamic banks strictly add parameters") {
    Prng rng(3);
    Model base = build_model(tiny_spec(Preset::BaseCnn), rng);
    Prng rng2(3);
    Model dyn = build_model(tiny_spec(Preset::LocalSoft), rng2);
    CHECK(dyn.param_count() > base.param_count());
}

TEST_CASE("build_model: net1_dcnn has exactly one dynamic conv before the first pool") {
    Prng rng(4);
    Model m = build_model(tiny_spec(Preset::Net1Dcnn, Task::Timeseries), rng);
    i64 dynamic_before_pool = 0, total_dynamic = 0;
    bool pooled = false;
    for (const auto& layer : m.layers()) {
        if (std::string(layer->kind()) == "dynamic_conv1d") {
            ++total_dynamic;
            if (!pooled) ++dynamic_before_pool;
        }
        if (std::string(layer->kind()) == "maxpool1d") pooled = true;
    }
    CHECK(dynamic_before_pool == 1);
    CHECK(total_dynamic == 1);

    Prng rng2(4);
    Model m2 = build_model(tiny_spec(Preset::Net2Dcnn, Task::Timeseries), rng2);
    i64 total2 = 0;
    for (const auto& layer : m2.layers())
        if (std::string(layer->kind()) == "dynamic_conv1d") ++total2;
    CHECK(total2 == 2);
}

TEST_CASE("build_model: unsupported combinations list the matrix") {
    Prng rng(5);
    ModelSpec spec = tiny_spec(Preset::OdConv, Task::Timeseries);
    CHECK_THROWS_WITH_AS(build_model(spec, rng), doctest::Contains("supported preset/task"),
                         ValidationError);
    ModelSpec spec2 = tiny_spec(Preset::Net1Dcnn, Task::Classify);
    CHECK_THROWS_AS(build_model(spec2, rng), ValidationError);
}

TEST_CASE("static reduction: K=1 dynamic presets equal base_cnn") {
    for (const Preset preset : {Preset::LocalSoft, Preset::HardAttention}) {
        CAPTURE(to_string(preset));
        Prng rng_base(7);
        Model base = build_model(tiny_spec(Preset::BaseCnn), rng_base);

        ModelSpec dyn_spec = tiny_spec(preset);
        dyn_spec.kernels_per_bank = 1;
        Prng rng_dyn(8);
        Model dyn = build_model(dyn_spec, rng_dyn);
        copy_params_for_reduction(base, dyn);

        Prng rng_x(9);
        Tensor x({2, 1, 8, 8});
        rng_x.fill_normal(x, 0.0, 1.0);
        ForwardCtx ctx_a, ctx_b;
        const Tensor ya = base.forward(x, ctx_a);
        const Tensor yb = dyn.forward(x, ctx_b);
        CHECK(max_abs_diff(ya, yb) <= 1e-10);
    }
}

TEST_CASE("one-hot reduction: dynamic layer equals static conv with the chosen kernel") {
    Prng rng(11);
    const ConvSpec cs = ConvSpec::uniform(1, 1);
    DynamicConv2dLayer layer("dyn", 2, 3, 3, cs, 4, 4, 6, 6, rng);
    Tensor x({2, 2, 6, 6});
    rng.fill_normal(x, 0.0, 1.0);

    for (i64 j = 0; j < 4; ++j) {
        Tensor onehot({2, 4});
        onehot.at2(0, j) = 1.0;
        onehot.at2(1, j) = 1.0;
        layer.attention_override = onehot;
        ForwardCtx ctx;
        ctx.kr = Tensor({2, 4});
        const Tensor dyn_out = layer.forward(x, ctx);
        const Tensor static_out = ops::conv2d(x, layer.bank_.kernels[static_cast<std::size_t>(j)].value, cs);
        CHECK(max_abs_diff(dyn_out, static_out) <= 1e-12);
    }

    // Same through the oriented pipeline: one-hot on the 0-degree variant of j.
    OdConv2dLayer od("od", 2, 3, 3, cs, 2, 6, 6, rng);
    for (i64 j = 0; j < 2; ++j) {
        Tensor onehot({2, 16});
        onehot.at2(0, j * 8) = 1.0;
        onehot.at2(1, j * 8) = 1.0;
        od.attention_override = onehot;
        ForwardCtx ctx;
        const Tensor dyn_out = od.forward(x, ctx);
        const Tensor static_out = ops::conv2d(x, od.bank_.kernels[static_cast<std::size_t>(j)].value, cs);
        CHECK(max_abs_diff(dyn_out, static_out) <= 1e-12);
    }
}

TEST_CASE("odconv: 1x1 kernels make every orientation identical") {
    Prng rng(12);
    OdConv2dLayer od("od", 1, 1, 1, ConvSpec::uniform(1, 0), 1, 5, 5, rng);
    Tensor x({1, 1, 5, 5});
    rng.fill_normal(x, 0.0, 1.0);
    ForwardCtx ctx;
    const Tensor y = od.forward(x, ctx);
    const double k = od.bank_.kernels[0].value[0];
    for (i64 i = 0; i < x.numel(); ++i) CHECK(y[i] == doctest::Approx(k * x[i]).epsilon(1e-12));
}

TEST_CASE("odconv equivariance: uniform attention commutes with 90-degree rotation") {
    Prng rng(13);
    for (int trial = 0; trial < 100; ++trial) {
        OdConv2dLayer od("od", 1, 1, 3, ConvSpec::uniform(1, 1), 1, 5, 5, rng);
        od.gen_.w1.value.fill(0.0);
        od.gen_.b1.value.fill(0.0);
        od.gen_.w2.value.fill(0.0);
        od.gen_.b2.value.fill(0.0);  // uniform softmax over the 8 variants

        Tensor x({1, 1, 5, 5});
        rng.fill_normal(x, 0.0, 1.0);
        ForwardCtx ctx;
        const Tensor y = od.forward(x, ctx);
        const Tensor y_rot = od.forward(rot90_image(x), ctx);
        CHECK(max_abs_diff(y_rot, rot90_image(y)) < 1e-6);
    }
}

TEST_CASE("model attention invariants: softmax rows sum to 1, gates in (0,1), hard masks exact") {
    Prng rng(14);
    ModelSpec spec = tiny_spec(Preset::HardAttention);
    spec.kernels_per_bank = 4;
    Model m = build_model(spec, rng);
    Tensor x({3, 1, 8, 8});
    rng.fill_normal(x, 0.0, 1.0);
    ForwardCtx ctx;
    m.forward(x, ctx);
    REQUIRE(!m.attention_layers().empty());
    for (const Layer* layer : m.attention_layers()) {
        const Tensor* a = layer->last_attention();
        REQUIRE(a != nullptr);
        for (i64 n = 0; n < a->dim(0); ++n) {
            double sum = 0.0;
            i64 nonzero = 0;
            for (i64 c = 0; c < a->dim(1); ++c) {
                sum += a->at2(n, c);
                if (a->at2(n, c) != 0.0) ++nonzero;
            }
            CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
            CHECK(nonzero == 2);  // k_active = K/2
        }
    }

    Prng rng2(15);
    Model gs = build_model(tiny_spec(Preset::GlobalSoft), rng2);
    ForwardCtx ctx2;
    gs.forward(x, ctx2);
    REQUIRE(!gs.attention_layers().empty());
    for (const Layer* layer : gs.attention_layers()) {
        const Tensor* a = layer->last_attention();
        for (i64 i = 0; i < a->numel(); ++i) {
            CHECK((*a)[i] > 0.0);
            CHECK((*a)[i] < 1.0);
        }
    }
}

TEST_CASE("end-to-end gradcheck: every preset on its tiny spec") {
    for (const Preset preset : {Preset::BaseCnn, Preset::GlobalSoft, Preset::LocalSoft,
                                Preset::HardAttention, Preset::OdConv, Preset::Net1Dcnn,
                                Preset::Net2Dcnn}) {
        CAPTURE(to_string(preset));
        const GradCheckReport report =
            gradcheck_model(gradcheck_spec(preset), 90 + static_cast<std::uint64_t>(preset));
        if (!report.pass) {
            const auto* worst = report.worst();
            MESSAGE("worst group: " << worst->param << " rel err " << worst->max_rel_err);
        }
        CHECK(report.pass);
        if (preset == Preset::HardAttention) CHECK(report.surrogate_path);
    }
}

TEST_CASE("end-to-end gradcheck: segment task backpropagates through the pixel head") {
    ModelSpec spec = gradcheck_spec(Preset::BaseCnn);
    spec.task = Task::Segment;
    const GradCheckReport report = gradcheck_model(spec, 1234);
    CHECK(report.pass);
}

TEST_CASE("gradcheck harness flags a corrupted gradient by name") {
    GradCheckOptions options;
    options.tamper_param = "head.fc.b";
    options.tamper_amount = 0.5;
    const GradCheckReport report = gradcheck_model(gradcheck_spec(Preset::BaseCnn), 42, options);
    CHECK(!report.pass);
    for (const auto& g : report.groups) {
        if (g.param == "head.fc.b")
            CHECK(!g.pass);
        else
            CHECK(g.pass);
    }
}

TEST_CASE("frozen banks are bit-identical after an optimizer step") {
    Prng rng(16);
    ModelSpec spec = tiny_spec(Preset::Net1Dcnn, Task::Timeseries);
    Model m = build_model(spec, rng);
    auto* dyn = dynamic_cast<DynamicConv1dLayer*>(m.layers()[0].get());
    REQUIRE(dyn != nullptr);
    dyn->bank_.set_frozen(true);
    std::vector<Tensor> before;
    for (const auto& k : dyn->bank_.kernels) before.push_back(k.value);

    Tensor x({4, 1, 16});
    rng.fill_normal(x, 0.0, 1.0);
    LabeledData data;
    data.inputs = x;
    data.labels = {0, 1, 2, 0};
    std::vector<i64> index = {0, 1, 2, 3};

    ForwardCtx ctx;
    ctx.training = true;
    const Tensor out = m.forward(x, ctx);
    auto [loss, grad] = task_loss(out, data, index);
    m.zero_grads();
    m.backward(grad, ctx);
    auto params = m.params();
    OptimizerState opt;
    adam_step(params, opt, 0.01);

    for (std::size_t k = 0; k < before.size(); ++k)
        for (i64 i = 0; i < before[k].numel(); ++i)
            CHECK(dyn->bank_.kernels[k].value[i] == before[k][i]);

    // Unfrozen parameters did move.
    double moved = 0.0;
    for (Param* p : params)
        if (!p->frozen)
            for (i64 i = 0; i < p->grad.numel(); ++i) moved += std::fabs(p->grad[i]);
    CHECK(moved > 0.0);
}

TEST_CASE("preset and task names round-trip") {
    CHECK(preset_from_string("odconv") == Preset::OdConv);
    CHECK(task_from_string("segment") == Task::Segment);
    CHECK_THROWS_AS(preset_from_string("resnet50"), ValidationError);
    CHECK_THROWS_AS(task_from_string("detect"), ValidationError);
}
