#include <catch_amalgamated.hpp>

#include <cmath>
#include <stdexcept>
#include <vector>

#include "kpl/selection.hpp"

using namespace kpl;

namespace {

const auto kRad = DiscreteMeasure::rademacher();

RandomMeasure two_scales() { return RandomMeasure({{0.5, kRad}, {0.5, DiscreteMeasure::rademacher(2)}}); }

SelectionConfig small_config(std::size_t k_max) {
    SelectionConfig cfg;
    cfg.k_max = k_max;
    cfg.test_family = standard_test_family(k_max, 4, 17);
    cfg.n_samples = 2000;
    return cfg;
}

}  // namespace

TEST_CASE("selection config") {
    auto cfg = small_config(3);
    CHECK_NOTHROW(cfg.validate());
    CHECK(cfg.tolerance(1) == 0.1);
    CHECK(cfg.tolerance(3) == 0.025);
    cfg.epsilon = 0.6;
    CHECK_THROWS_AS(cfg.validate(), std::domain_error);
    cfg = small_config(3);
    cfg.test_family.push_back({{1, 1, 1, 1}});
    CHECK_THROWS_AS(cfg.validate(), std::domain_error);
    cfg = small_config(3);
    cfg.test_family.clear();
    CHECK_THROWS_AS(cfg.validate(), std::domain_error);
    cfg = small_config(3);
    cfg.p = 2.0;
    CHECK_THROWS_AS(cfg.validate(), std::domain_error);
}

TEST_CASE("uniform deviation vanishes for the exchangeable model") {
    const auto model = SequenceModel::exchangeable(two_scales());
    const auto fam = standard_test_family(4, 3, 5);
    const auto psi = detail::family_psi(model.mu(), fam, 4, 1.0, 2000, Source{1});
    for (std::size_t n : {3u, 10u, 100u}) {
        const auto dev = uniform_deviation(model, {1, 2}, n, fam, psi, 1.0, 2000, Source{2});
        CHECK(dev.value == 0.0);
    }
    CHECK_THROWS_AS(uniform_deviation(model, {1, 5}, 5, fam, psi, 1.0, 2000, Source{2}), std::invalid_argument);
}

TEST_CASE("uniform deviation decreases along the decay") {
    const auto model = SequenceModel::perturbed(two_scales(), PowerDecay{3.0, 1.0});
    const auto fam = standard_test_family(3, 3, 5);
    const auto psi = detail::family_psi(model.mu(), fam, 3, 1.0, 4000, Source{1});
    const auto early = uniform_deviation(model, {1}, 2, fam, psi, 1.0, 4000, Source{3});
    const auto late = uniform_deviation(model, {1}, 500, fam, psi, 1.0, 4000, Source{3});
    CHECK(early.value > 0.05);
    CHECK(late.value < 0.01);
    CHECK(late.value < early.value);
}

TEST_CASE("a single basis vector compares one coordinate") {
    const RandomMeasure mu(kRad);
    const auto model = SequenceModel::perturbed(mu, PowerDecay{4.0, 1.0});
    const std::vector<CoefficientVector> fam{{{1}}};
    const std::vector<double> psi{1.0};
    const auto dev = uniform_deviation(model, {}, 2, fam, psi, 1.0, 20000, Source{4});
    // delta_2 = 2: E|Y + 2W| with W ~ U(-sqrt3, sqrt3) against E|Y| = 1
    const double h = SequenceModel::kNoiseHalfWidth, s = 2 * h;
    const double exact = ((1 + s) * (1 + s) + (s - 1) * (s - 1)) / (4 * s);
    CHECK(std::abs(dev.value - (exact - 1)) <= 4 * dev.std_error);
    (void)h;
}

TEST_CASE("zero decay selects the first indices") {
    const auto model = SequenceModel::perturbed(two_scales(), PowerDecay{0.0, 1.0});
    const auto res = select_subsequence(model, small_config(5), Source{5});
    CHECK(res.indices == std::vector<std::size_t>{1, 2, 3, 4, 5});
    CHECK(res.verified);
    for (double d : res.step_deviations) CHECK(d == 0.0);
    const auto rep = verify_equivalence(model, res.indices, 1.0, small_config(5).test_family, 0.2,
                                        kDefaultLowerConstant, 4000, Source{6});
    CHECK(rep.all_hold());
}

TEST_CASE("decaying perturbation is selected and verified") {
    const auto model = SequenceModel::perturbed(two_scales(), PowerDecay{1.0, 1.0});
    const auto cfg = small_config(4);
    const auto res = select_subsequence(model, cfg, Source{7, 0, 1});
    REQUIRE(res.indices.size() == 4);
    CHECK(res.verified);
    CHECK_FALSE(res.failing_step);
    for (std::size_t k = 0; k < res.steps.size(); ++k) {
        CHECK(res.steps[k].deviation <= cfg.tolerance(k + 1));
        if (k) CHECK(res.indices[k] > res.indices[k - 1]);
    }
    const auto again = select_subsequence(model, cfg, Source{7, 0, 3});
    CHECK(again.indices == res.indices);
    CHECK(again.step_deviations == res.step_deviations);
    const auto rep = verify_equivalence(model, res.indices, 1.0, cfg.test_family, cfg.epsilon, kDefaultLowerConstant,
                                        4000, Source{8});
    CHECK(rep.all_hold());
    CHECK(rep.min_margin() >= 0);
}

TEST_CASE("selection reports an exhausted budget") {
    const auto model = SequenceModel::perturbed(two_scales(), PowerDecay{50.0, 0.1});
    auto cfg = small_config(3);
    cfg.max_candidates = 3;
    const auto res = select_subsequence(model, cfg, Source{9});
    CHECK_FALSE(res.verified);
    REQUIRE(res.failing_step);
    CHECK(*res.failing_step == res.indices.size() + 1);
}

TEST_CASE("degenerate random measures are rejected") {
    const auto model = SequenceModel::exchangeable(RandomMeasure(DiscreteMeasure::dirac(0)));
    CHECK_THROWS_AS(select_subsequence(model, small_config(2), Source{1}), std::domain_error);
}

TEST_CASE("basis vectors have equal norms along the subsequence") {
    const auto model = SequenceModel::perturbed(two_scales(), PowerDecay{0.0, 1.0});
    std::vector<CoefficientVector> basis;
    for (int i = 0; i < 4; ++i) {
        CoefficientVector e{std::vector<double>(4, 0.0)};
        e.entries[i] = 1;
        basis.push_back(e);
    }
    const auto rep = verify_equivalence(model, {2, 5, 9, 11}, 1.0, basis, 0.2, kDefaultLowerConstant, 20000, Source{10});
    REQUIRE(rep.rows.size() == 4);
    for (const auto& r : rep.rows) {
        CHECK(std::abs(r.x_norm.value - 1.5) <= 4 * r.x_norm.std_error);
        CHECK(r.holds_l2);
    }
    CHECK_THROWS_AS(verify_equivalence(model, {3, 3}, 1.0, basis, 0.2, 0.7, 1000, Source{1}), std::invalid_argument);
}

TEST_CASE("head length and lacunary tolerances") {
    CHECK(head_length(1) == 1);
    CHECK(head_length(2) == 1);
    CHECK(head_length(3) == 2);
    CHECK(head_length(4096) == 9);
    CHECK_THROWS_AS(head_length(0), std::domain_error);
    for (std::size_t k = 4; k < 5000; ++k) CHECK(2 * head_length(k) <= k);
    for (std::size_t k = 1; k < 60; ++k) {
        double tail = 0;
        for (std::size_t j = head_length(k) + 1; j < 12; ++j) tail += lacunary_tolerance(j);
        CHECK(tail <= std::ldexp(1.0, -static_cast<int>(k)));
    }
}

TEST_CASE("necessity: a deterministic law follows the plain CLT") {
    NecessityConfig cfg;
    cfg.T = 1.5;
    cfg.N_grid = {2000};
    cfg.replicates = 20000;
    const auto rows = necessity_experiment({RandomMeasure(DiscreteMeasure::rademacher(2))}, cfg, Source{11});
    REQUIRE(rows.size() == 1);
    const double target = 2 * normal_cdf(1.5 / 2) - 1;
    CHECK(std::abs(rows[0].prob - target) <= 4 * rows[0].prob_se + 0.01);
    CHECK(rows[0].head == head_length(2000));
    CHECK(rows[0].K == 4);
}

TEST_CASE("necessity: probability vanishes as the variance grows") {
    NecessityConfig cfg;
    cfg.N_grid = {512};
    cfg.variance_scales = {1, 100, 10000};
    cfg.replicates = 5000;
    const auto fam = variance_scaled_family(RandomMeasure(kRad), cfg.variance_scales);
    const auto rows = necessity_experiment(fam, cfg, Source{12});
    REQUIRE(rows.size() == 3);
    CHECK(rows[0].prob > rows[1].prob);
    CHECK(rows[1].prob > rows[2].prob);
    CHECK(rows[2].prob < 0.05);
    CHECK(rows[2].breaks_half());
}

TEST_CASE("necessity: bounded sums stay inside a wide window") {
    NecessityConfig cfg;
    cfg.T = 10;
    cfg.N_grid = {4, 16};
    cfg.replicates = 1000;
    const auto rows = necessity_experiment({RandomMeasure(kRad)}, cfg, Source{13});
    for (const auto& r : rows) CHECK(r.prob == 1.0);
    cfg.N_grid = {3};
    CHECK_THROWS_AS(necessity_experiment({RandomMeasure(kRad)}, cfg, Source{13}), std::domain_error);
}

TEST_CASE("CLT with a single Rademacher component") {
    const auto rep = clt_mixture_check(RandomMeasure(kRad), 2000, 5000, Source{14});
    CHECK(rep.ks_distance <= 0.05);
    CHECK(rep.moment_ok);
    CHECK(rep.moment_target == Catch::Approx(std::sqrt(2 / std::numbers::pi)));
}

TEST_CASE("CLT with a degenerate random measure") {
    const auto rep = clt_mixture_check(RandomMeasure(DiscreteMeasure::dirac(0)), 100, 500, Source{15});
    CHECK(rep.ks_distance == 0.0);
    const auto half = clt_mixture_check(RandomMeasure({{0.5, DiscreteMeasure::dirac(0)}, {0.5, kRad}}), 2000, 5000,
                                        Source{15});
    CHECK(half.ks_distance <= 0.05);
}

TEST_CASE("CLT with two variances") {
    const auto rep = clt_mixture_check(two_scales(), 2000, 5000, Source{16});
    CHECK(rep.ks_distance <= 0.05);
    CHECK(rep.moment_ok);
    CHECK(rep.moment_target == Catch::Approx(std::sqrt(2 / std::numbers::pi) * 1.5));
    CHECK_THROWS_AS(clt_mixture_check(RandomMeasure(DiscreteMeasure({{0, 0.5}, {1, 0.5}})), 10, 10, Source{1}),
                    std::domain_error);
}

TEST_CASE("normal helpers") {
    CHECK(normal_abs_moment(1.0) == Catch::Approx(std::sqrt(2 / std::numbers::pi)).epsilon(1e-14));
    CHECK(normal_abs_moment(2.0 - 1e-12) == Catch::Approx(1.0).epsilon(1e-10));
    CHECK(normal_cdf(0) == 0.5);
    CHECK(normal_cdf(1.959963984540054) == Catch::Approx(0.975).epsilon(1e-12));
}
