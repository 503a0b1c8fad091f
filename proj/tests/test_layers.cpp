#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "dynconv/layers.hpp"

using namespace dynconv;

namespace {

KernelBank make_bank(i64 K, const Shape& shape, Prng& rng) {
    KernelBank bank;
    for (i64 k = 0; k < K; ++k) {
        Tensor t(shape);
        rng.fill_normal(t, 0.0, 1.0);
        bank.kernels.emplace_back("bank" + std::to_string(k), std::move(t));
    }
    return bank;
}

}  // namespace

TEST_CASE("channel_attention: sigmoid bounds and closed forms") {
    SUBCASE("zero weight and bias give 0.5 everywhere") {
        Tensor F({2, 3, 4, 4});
        Prng rng(1);
        rng.fill_normal(F, 0.0, 1.0);
        const Tensor A = channel_attention(F, Tensor({3, 3}), Tensor({3}));
        for (i64 i = 0; i < A.numel(); ++i) CHECK(A[i] == doctest::Approx(0.5));
    }
    SUBCASE("weights stay strictly inside (0,1) for any finite input") {
        Prng rng(2);
        for (int trial = 0; trial < 100; ++trial) {
            Tensor F({1, 4, 3, 3}), w({4, 4}), b({4});
            rng.fill_normal(F, 0.0, 20.0);
            rng.fill_normal(w, 0.0, 5.0);
            rng.fill_normal(b, 0.0, 5.0);
            const Tensor A = channel_attention(F, w, b);
            for (i64 i = 0; i < A.numel(); ++i) {
                CHECK(A[i] > 0.0);
                CHECK(A[i] < 1.0);
            }
        }
    }
    SUBCASE("C=1 scalar closed form") {
        const double wv = 1.3;
        Tensor F({1, 1, 2, 2}, {1, 1, 1, 1});
        Tensor w({1, 1}, {wv});
        const Tensor A = channel_attention(F, w, Tensor({1}));
        CHECK(A[0] == doctest::Approx(1.0 / (1.0 + std::exp(-wv))).epsilon(1e-12));
    }
}

TEST_CASE("apply_channel_gate: identity, suppression, scaling") {
    Tensor F({1, 2, 2, 2}, {1, 2, 3, 4, 5, 6, 7, 8});
    Tensor ones({1, 2}, {1, 1});
    const Tensor same = apply_channel_gate(F, ones);
    for (i64 i = 0; i < F.numel(); ++i) CHECK(same[i] == F[i]);

    Tensor zeros({1, 2});
    const Tensor none = apply_channel_gate(F, zeros);
    for (i64 i = 0; i < F.numel(); ++i) CHECK(none[i] == 0.0);

    Tensor F1({1, 1, 1, 1}, {2.0});
    Tensor A({1, 1}, {0.25});
    CHECK(apply_channel_gate(F1, A)[0] == doctest::Approx(0.5));

    CHECK_THROWS_AS(apply_channel_gate(F, Tensor({1, 3})), DimensionError);
}

TEST_CASE("kernel_attention: softmax over the bottleneck") {
    const i64 D = 4, C = 3, K = 4;
    const i64 hidden = AttnGenParams::hidden_dim(D + C);
    AttnGenParams p;
    p.w1 = Param("w1", Tensor({hidden, D + C}));
    p.b1 = Param("b1", Tensor({hidden}));
    p.w2 = Param("w2", Tensor({K, hidden}));
    p.b2 = Param("b2", Tensor({K}));

    SUBCASE("all-zero params give uniform attention") {
        Prng rng(3);
        Tensor kr({2, D}), g({2, C});
        rng.fill_normal(kr, 0.0, 1.0);
        rng.fill_normal(g, 0.0, 1.0);
        const Tensor a = kernel_attention(kr, g, p);
        for (i64 i = 0; i < a.numel(); ++i) CHECK(a[i] == doctest::Approx(0.25).epsilon(1e-12));
    }
    SUBCASE("dominant logit wins") {
        // Drive logits through the bias alone: softmax([10,0,0,0]).
        p.b2.value[0] = 10.0;
        const Tensor a = kernel_attention(Tensor({1, D}), Tensor({1, C}), p);
        CHECK(a[0] > 0.999);
    }
    SUBCASE("rows sum to one for 100 random inputs") {
        Prng rng(4);
        rng.fill_normal(p.w1.value, 0.0, 1.0);
        rng.fill_normal(p.w2.value, 0.0, 1.0);
        for (int trial = 0; trial < 100; ++trial) {
            Tensor kr({1, D}), g({1, C});
            rng.fill_normal(kr, 0.0, 1.0);
            rng.fill_normal(g, 0.0, 1.0);
            const Tensor a = kernel_attention(kr, g, p);
            double sum = 0.0;
            for (i64 i = 0; i < K; ++i) {
                CHECK(a[i] >= 0.0);
                sum += a[i];
            }
            CHECK(std::fabs(sum - 1.0) < 1e-6);
        }
    }
}

TEST_CASE("aggregate_kernels: selection, midpoint, brute force") {
    Prng rng(5);
    SUBCASE("one-hot selects a kernel exactly") {
        KernelBank bank = make_bank(3, {2, 2, 3, 3}, rng);
        const std::vector<double> a = {0.0, 1.0, 0.0};
        const Tensor w = aggregate_kernels(bank, a.data());
        for (i64 i = 0; i < w.numel(); ++i) CHECK(w[i] == bank.kernels[1].value[i]);
    }
    SUBCASE("uniform attention over 2I and 4I gives 3I") {
        KernelBank bank;
        Tensor w1({1, 1, 1, 1}, {2.0}), w2({1, 1, 1, 1}, {4.0});
        bank.kernels.emplace_back("a", w1);
        bank.kernels.emplace_back("b", w2);
        const std::vector<double> a = {0.5, 0.5};
        CHECK(aggregate_kernels(bank, a.data())[0] == doctest::Approx(3.0));
    }
    SUBCASE("matches elementwise brute force on random simplex weights") {
        for (int trial = 0; trial < 20; ++trial) {
            KernelBank bank = make_bank(3, {2, 1, 2, 2}, rng);
            std::vector<double> a = {rng.uniform(), rng.uniform(), rng.uniform()};
            const double z = a[0] + a[1] + a[2];
            for (double& v : a) v /= z;
            const Tensor got = aggregate_kernels(bank, a.data());
            for (i64 i = 0; i < got.numel(); ++i) {
                double want = 0.0;
                for (i64 k = 0; k < 3; ++k)
                    want += a[static_cast<std::size_t>(k)] * bank.kernels[static_cast<std::size_t>(k)].value[i];
                CHECK(got[i] == doctest::Approx(want).epsilon(1e-12));
            }
        }
    }
}

TEST_CASE("update_kernel_representation: recurrence") {
    SUBCASE("zero params map anything to zero") {
        KrUpdateParams p;
        p.u = Param("u", Tensor({4, 4}));
        p.v = Param("v", Tensor({4, 2}));
        p.b = Param("b", Tensor({4}));
        KernelRepresentation prev{Tensor({1, 4}, {0.3, -0.5, 0.9, 0.1}), 0};
        Tensor g({1, 2}, {1.0, 2.0});
        const auto next = update_kernel_representation(prev, g, p);
        for (i64 i = 0; i < 4; ++i) CHECK(next.state[i] == 0.0);
        CHECK(next.layer_index == 1);
    }
    SUBCASE("D=1 scalar tanh") {
        KrUpdateParams p;
        p.u = Param("u", Tensor({1, 1}, {1.0}));
        p.v = Param("v", Tensor({1, 1}, {0.0}));
        p.b = Param("b", Tensor({1}));
        KernelRepresentation prev{Tensor({1, 1}, {0.5}), 3};
        const auto next = update_kernel_representation(prev, Tensor({1, 1}, {9.0}), p);
        CHECK(next.state[0] == doctest::Approx(std::tanh(0.5)).epsilon(1e-10));
        CHECK(next.layer_index == 4);
    }
    SUBCASE("components stay inside (-1,1)") {
        Prng rng(6);
        KrUpdateParams p;
        p.u = Param("u", Tensor({4, 4}));
        p.v = Param("v", Tensor({4, 2}));
        p.b = Param("b", Tensor({4}));
        rng.fill_normal(p.u.value, 0.0, 3.0);
        rng.fill_normal(p.v.value, 0.0, 3.0);
        rng.fill_normal(p.b.value, 0.0, 3.0);
        KernelRepresentation kr{Tensor({2, 4}), 0};
        for (int layer = 0; layer < 5; ++layer) {
            Tensor g({2, 2});
            rng.fill_normal(g, 0.0, 2.0);
            kr = update_kernel_representation(kr, g, p);
            for (i64 i = 0; i < kr.state.numel(); ++i) {
                CHECK(kr.state[i] > -1.0);
                CHECK(kr.state[i] < 1.0);
            }
        }
        CHECK(kr.layer_index == 5);
    }
}

TEST_CASE("hard_select: top-k with lowest-index ties") {
    const GateMask m1 = hard_select({0.9, 0.1, 0.5}, 2);
    CHECK(m1.mask == std::vector<std::uint8_t>{1, 0, 1});

    const GateMask m2 = hard_select({0.9, 0.1, 0.5}, 3);
    CHECK(m2.mask == std::vector<std::uint8_t>{1, 1, 1});

    const GateMask m3 = hard_select({1.0, 1.0, 0.0}, 1);
    CHECK(m3.mask == std::vector<std::uint8_t>{1, 0, 0});

    CHECK_THROWS_AS(hard_select({1.0, 2.0}, 0), ValidationError);
    CHECK_THROWS_AS(hard_select({1.0, 2.0}, 3), ValidationError);

    Prng rng(7);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<double> logits(5);
        for (double& v : logits) v = rng.normal();
        const i64 k = 1 + rng.index(5);
        const GateMask m = hard_select(logits, k);
        i64 ones = 0;
        for (const auto b : m.mask) ones += b;
        CHECK(ones == k);
    }
}

TEST_CASE("dihedral transforms: index map, identity, closure") {
    Tensor k({1, 1, 2, 2}, {1, 2, 3, 4});
    const Tensor r1 = dihedral_transform(k, 1);
    CHECK(r1[0] == 2.0);
    CHECK(r1[1] == 4.0);
    CHECK(r1[2] == 1.0);
    CHECK(r1[3] == 3.0);

    const Tensor r0 = dihedral_transform(k, 0);
    for (i64 i = 0; i < 4; ++i) CHECK(r0[i] == k[i]);

    // Four quarter turns come back around.
    Tensor cyc = k;
    for (int i = 0; i < 4; ++i) cyc = dihedral_transform(cyc, 1);
    for (i64 i = 0; i < 4; ++i) CHECK(cyc[i] == k[i]);

    CHECK_THROWS_AS(dihedral_transform(Tensor({1, 1, 2, 3}), 1), ValidationError);
}

TEST_CASE("orient_bank: 8 variants per kernel, adjoint scatters back") {
    Prng rng(8);
    KernelBank bank = make_bank(2, {1, 1, 3, 3}, rng);
    const auto oriented = orient_bank(bank);
    REQUIRE(oriented.size() == 16);
    for (i64 i = 0; i < 9; ++i) CHECK(oriented[0][i] == bank.kernels[0].value[i]);
    for (i64 i = 0; i < 9; ++i) CHECK(oriented[8][i] == bank.kernels[1].value[i]);

    // adjoint is the inverse permutation: T_t^adj(T_t(w)) == w.
    for (int t = 0; t < 8; ++t) {
        Tensor back({1, 1, 3, 3});
        dihedral_transform_adjoint(dihedral_transform(bank.kernels[0].value, t), t, back);
        for (i64 i = 0; i < 9; ++i) CHECK(back[i] == bank.kernels[0].value[i]);
    }
}

TEST_CASE("frozen bank parameters are flagged through") {
    Prng rng(9);
    KernelBank bank = make_bank(3, {1, 1, 3, 3}, rng);
    bank.set_frozen(true);
    for (const auto& k : bank.kernels) CHECK(k.frozen);
    bank.set_frozen(false);
    for (const auto& k : bank.kernels) CHECK(!k.frozen);
}
