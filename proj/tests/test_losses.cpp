#include <doctest.h>

#include <cmath>

#include "fcad/losses.hpp"
#include "oracles.hpp"

using namespace fcad;

namespace {

PyramidT<double> random_pyramid(Rng& rng, int n = 1, int c = 4, int h0 = 6, int w0 = 6) {
    PyramidT<double> p;
    for (int k = 0; k < 3; ++k) {
        TensorD t({n, c * (1 << k), h0 >> k, w0 >> k});
        rng.fill_normal(t);
        p.push_back(std::move(t));
    }
    return p;
}

double max_abs_diff(const TensorD& a, const TensorD& b) {
    double m = 0;
    for (size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a.v[i] - b.v[i]));
    return m;
}

double rel_err(double got, double want) {
    return std::abs(got - want) / std::max({std::abs(got), std::abs(want), 1e-8});
}

}  // namespace

TEST_CASE("distance_map basic values") {
    // identical non-zero vectors -> 0
    TensorD fe({1, 2, 1, 1});
    fe.v = {1.0, 2.0};
    TensorD fd = fe;
    auto m = distance_map(fe, fd);
    CHECK(std::abs(m.v[0]) < 1e-6);

    // orthogonal unit vectors -> 1
    fd.v = {-2.0, 1.0};
    m = distance_map(fe, fd);
    CHECK(std::abs(m.v[0] - 1.0) < 1e-6);

    // (1,1) vs (1,0) -> 1 - 1/sqrt(2)
    fe.v = {1.0, 1.0};
    fd.v = {1.0, 0.0};
    m = distance_map(fe, fd);
    CHECK(std::abs(m.v[0] - (1.0 - 1.0 / std::sqrt(2.0))) < 1e-6);

    // shape mismatch rejected
    TensorD bad({1, 3, 1, 1});
    CHECK_THROWS_AS(distance_map(fe, bad), ShapeError);
}

TEST_CASE("distance_map range invariant on random inputs") {
    Rng rng(11);
    for (int rep = 0; rep < 20; ++rep) {
        TensorD fe({2, 5, 4, 3}), fd({2, 5, 4, 3});
        rng.fill_normal(fe);
        rng.fill_normal(fd);
        auto m = distance_map(fe, fd);
        for (double x : m.v) {
            CHECK(x >= -1e-6);
            CHECK(x <= 2.0 + 1e-6);
            CHECK(std::isfinite(x));
        }
    }
}

TEST_CASE("loss_regional matches nested-loop oracle") {
    Rng rng(7);
    for (int rep = 0; rep < 10; ++rep) {
        auto e = random_pyramid(rng, 2);
        auto d = random_pyramid(rng, 2);
        const double want = oracle::regional_loss(e, d);
        const auto got = loss_regional(e, d);
        CHECK(std::abs(got.value - want) < 1e-6);
    }
    // identical pyramids -> 0; per-point orthogonal at 3 stages -> 3
    auto e = random_pyramid(rng);
    CHECK(std::abs(loss_regional(e, e).value) < 1e-6);
    PyramidT<double> a, b;
    for (int k = 0; k < 3; ++k) {
        TensorD u({1, 2, 2, 2}), v({1, 2, 2, 2});
        for (int p = 0; p < 4; ++p) {
            u.v[p] = 1.0;      // channel 0
            u.v[4 + p] = 0.0;  // channel 1
            v.v[p] = 0.0;
            v.v[4 + p] = 1.0;
        }
        a.push_back(u);
        b.push_back(v);
    }
    CHECK(std::abs(loss_regional(a, b).value - 3.0) < 1e-6);
}

TEST_CASE("loss_global matches flatten-then-cosine oracle") {
    Rng rng(13);
    for (int rep = 0; rep < 10; ++rep) {
        auto e = random_pyramid(rng, 2);
        auto d = random_pyramid(rng, 2);
        const double want = oracle::global_loss(e, d);
        const auto got = loss_global(e, d, false);
        CHECK(std::abs(got.value - want) < 1e-6);
    }
    auto e = random_pyramid(rng);
    CHECK(std::abs(loss_global(e, e, false).value) < 1e-6);
}

TEST_CASE("loss_global zero-loss equivalence with distance maps") {
    // if the global loss is ~0 on unit-norm random tests, every regional
    // distance is small as well
    Rng rng(17);
    auto e = random_pyramid(rng, 1, 6, 4, 4);
    auto d = e;
    for (auto& x : d.back().v) x += 1e-9;  // nearly identical
    const auto l = loss_global(e, d, false);
    REQUIRE(l.value < 1e-6);
    for (size_t k = 0; k < e.size(); ++k) {
        auto m = distance_map(e[k], d[k]);
        for (double x : m.v) CHECK(x < 1e-3);
    }
}

TEST_CASE("loss gradients match central finite differences") {
    Rng rng(23);
    auto e = random_pyramid(rng, 2, 4, 4, 4);
    auto d = random_pyramid(rng, 2, 4, 4, 4);

    SUBCASE("regional") {
        auto res = loss_regional(e, d, true);
        for (size_t k = 0; k < e.size(); ++k) {
            auto fd_d = oracle::fd_gradient(
                [&] { return static_cast<double>(loss_regional(e, d).value); }, d[k]);
            auto fd_e = oracle::fd_gradient(
                [&] { return static_cast<double>(loss_regional(e, d).value); }, e[k]);
            for (size_t i = 0; i < fd_d.numel(); ++i) {
                CHECK(rel_err(res.grad_recon[k].v[i], fd_d.v[i]) < 1e-4);
                CHECK(rel_err(res.grad_target[k].v[i], fd_e.v[i]) < 1e-4);
            }
        }
    }
    SUBCASE("global, both sides live") {
        auto res = loss_global(e, d, false, true);
        for (size_t k = 0; k < e.size(); ++k) {
            auto fd_d = oracle::fd_gradient(
                [&] { return static_cast<double>(loss_global(e, d, false).value); }, d[k]);
            auto fd_e = oracle::fd_gradient(
                [&] { return static_cast<double>(loss_global(e, d, false).value); }, e[k]);
            for (size_t i = 0; i < fd_d.numel(); ++i) {
                CHECK(rel_err(res.grad_recon[k].v[i], fd_d.v[i]) < 1e-4);
                CHECK(rel_err(res.grad_target[k].v[i], fd_e.v[i]) < 1e-4);
            }
        }
    }
    SUBCASE("global with stop-gradient target") {
        auto res = loss_global(e, d, true, true);
        for (size_t k = 0; k < e.size(); ++k)
            for (double g : res.grad_target[k].v) CHECK(g == 0.0);
        // the recon side is unaffected by the stop-gradient
        auto live = loss_global(e, d, false, true);
        for (size_t k = 0; k < e.size(); ++k)
            CHECK(max_abs_diff(res.grad_recon[k], live.grad_recon[k]) == 0.0);
    }
}

TEST_CASE("hard mining: value equals plain global loss, gradients are masked") {
    Rng rng(31);
    auto e = random_pyramid(rng, 2, 4, 4, 4);
    auto d = random_pyramid(rng, 2, 4, 4, 4);
    const double alpha = 0.5;

    auto hm = loss_global_hm(e, d, alpha, true, true);
    auto plain = loss_global(e, d, true, true);
    CHECK(hm.value == plain.value);  // exact: same code path for the value

    for (size_t k = 0; k < e.size(); ++k) {
        auto m = distance_map(e[k], d[k]);
        auto mask = hard_mining_mask(m, alpha);
        const int n = d[k].dim(0), c = d[k].dim(1);
        const size_t plane = static_cast<size_t>(d[k].dim(2)) * d[k].dim(3);
        size_t masked = 0, kept = 0;
        for (int i = 0; i < n; ++i)
            for (size_t p = 0; p < plane; ++p)
                for (int ch = 0; ch < c; ++ch) {
                    const size_t idx = (static_cast<size_t>(i) * c + ch) * plane + p;
                    if (mask.easy[i * plane + p]) {
                        CHECK(hm.grad_recon[k].v[idx] == 0.0);
                        ++masked;
                    } else {
                        CHECK(hm.grad_recon[k].v[idx] == plain.grad_recon[k].v[idx]);
                        ++kept;
                    }
                }
        CHECK(masked > 0);  // alpha=0.5 discards most positions
        CHECK(kept > 0);
    }
}

TEST_CASE("hard mining: no positions discarded reproduces plain gradient") {
    Rng rng(37);
    auto e = random_pyramid(rng, 2, 4, 8, 8);
    auto d = random_pyramid(rng, 2, 4, 8, 8);

    SUBCASE("alpha -> -inf limit") {
        auto hm = loss_global_hm(e, d, -1e9, true, true);
        auto plain = loss_global(e, d, true, true);
        for (size_t k = 0; k < e.size(); ++k)
            CHECK(max_abs_diff(hm.grad_recon[k], plain.grad_recon[k]) == 0.0);
    }
    SUBCASE("all distances equal: sigma 0, strict inequality discards nothing") {
        // power-of-two constant keeps the mean exact under any summation
        // order, so sigma is exactly zero and d < mu + alpha*sigma is false
        // everywhere
        TensorD m({2, 8, 8});
        for (auto& v : m.v) v = 0.5;
        for (double alpha : {-2.0, 0.0, 1.0, 3.0}) {
            auto mask = hard_mining_mask(m, alpha);
            CHECK(mask.discarded == 0);
        }
    }
}

TEST_CASE("hard mining mask statistics on gaussian samples") {
    Rng rng(41);
    TensorD m({100, 100, 1});  // 10^4 samples is enough for a coarse unit check
    rng.fill_normal(m);
    auto mask = hard_mining_mask(m, 1.0);
    const double frac = static_cast<double>(mask.discarded) / m.numel();
    CHECK(frac == doctest::Approx(0.841).epsilon(0.03));
    CHECK_THROWS_AS(hard_mining_mask(TensorD({1, 1, 1}), 1.0), ShapeError);
}

TEST_CASE("alpha schedule") {
    HardMiningConfig cfg;
    CHECK(alpha_schedule(0, 2000, cfg) == doctest::Approx(-3.0));
    CHECK(alpha_schedule(100, 2000, cfg) == doctest::Approx(-1.0));
    CHECK(alpha_schedule(200, 2000, cfg) == doctest::Approx(1.0));
    CHECK(alpha_schedule(1999, 2000, cfg) == doctest::Approx(1.0));
    CHECK_THROWS_AS(alpha_schedule(-1, 2000, cfg), ConfigError);
    CHECK_THROWS_AS(alpha_schedule(2000, 2000, cfg), ConfigError);
    cfg.warmup_fraction = 0.0;
    CHECK_THROWS_AS(alpha_schedule(0, 2000, cfg), ConfigError);
}
