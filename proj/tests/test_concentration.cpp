#include <catch_amalgamated.hpp>

#include <cmath>
#include <random>
#include <stdexcept>
#include <vector>

#include "kpl/concentration.hpp"
#include "support.hpp"

using namespace kpl;

namespace {
const auto kRad = DiscreteMeasure::rademacher();
}

TEST_CASE("empirical concentration examples") {
    const std::vector<double> flat(7, 2.5);
    CHECK(empirical_concentration(flat, 0.0) == 1.0);
    CHECK(empirical_concentration(flat, 3.0) == 1.0);
    std::vector<double> ten;
    for (int i = 0; i < 10; ++i) ten.push_back(9 - i);
    CHECK(empirical_concentration(ten, 0.0) == 0.1);
    CHECK(empirical_concentration(ten, 4.5) == 0.5);
    CHECK(empirical_concentration(ten, 9.0) == 1.0);
    CHECK_THROWS_AS(empirical_concentration(std::vector<double>{}, 1.0), std::domain_error);
    CHECK_THROWS_AS(empirical_concentration(ten, -1.0), std::domain_error);
}

TEST_CASE("empirical concentration matches a quadratic scan and grows with the window") {
    std::mt19937_64 rng(41);
    std::normal_distribution<double> g;
    for (int rep = 0; rep < 30; ++rep) {
        std::vector<double> xs(60);
        for (auto& x : xs) x = std::round(4 * g(rng)) / 4;
        double prev = 0;
        for (double lam : {0.0, 0.25, 0.5, 1.0, 3.0}) {
            std::size_t best = 0;
            for (double x : xs) {
                std::size_t c = 0;
                for (double y : xs) c += y >= x && y <= x + lam;
                best = std::max(best, c);
            }
            const double q = empirical_concentration(xs, lam);
            CHECK(q == best / 60.0);
            CHECK(q >= prev);
            prev = q;
        }
    }
}

TEST_CASE("Esseen bound examples") {
    const auto r = esseen_bound(kRad, 100, 2.0, 1.0);
    CHECK(r.bracket == 1);
    CHECK(r.mass == 1);
    CHECK(r.valid());
    CHECK(r.esseen_value == Catch::Approx(0.2).epsilon(1e-15));

    const auto degenerate = esseen_bound(DiscreteMeasure::dirac(0), 10, 1.0);
    CHECK(degenerate.bracket == 0);
    CHECK(degenerate.mass_ok);
    CHECK_FALSE(degenerate.valid());
    CHECK(std::isinf(degenerate.esseen_value));

    const auto outside = esseen_bound(kRad, 10, 0.5);
    CHECK(outside.mass == 0);
    CHECK_FALSE(outside.mass_ok);
    CHECK_FALSE(outside.valid());

    CHECK_THROWS_AS(esseen_bound(kRad, 0, 1.0), std::domain_error);
    CHECK_THROWS_AS(esseen_bound(kRad, 1, 0.0), std::domain_error);
    CHECK_THROWS_AS(esseen_bound(kRad, 1, 1.0, -2.0), std::domain_error);
}

TEST_CASE("intermediate bound examples") {
    for (std::size_t n : {1u, 50u, 1000u}) {
        const auto v = esseen_intermediate(kRad, 3.0, n, 1.5);
        REQUIRE(v);
        CHECK(*v == Catch::Approx(3 * 1.5 / std::sqrt(2.0 * n)).epsilon(1e-14));
    }
    CHECK_FALSE(esseen_intermediate(DiscreteMeasure::dirac(4), 2.0, 10));
    CHECK_FALSE(esseen_intermediate(kRad, 2.0, 10));  // |x| < 2 misses the atoms at +-2
    // the truncated moment saturates at 2 Var, after which the value is linear in lambda
    const auto a = esseen_intermediate(kRad, 10.0, 4), b = esseen_intermediate(kRad, 20.0, 4);
    CHECK(*b == Catch::Approx(2 * *a).epsilon(1e-14));
    CHECK_THROWS_AS(esseen_intermediate(kRad, 0.0, 4), std::domain_error);
}

TEST_CASE("bracket is dominated by the symmetrized moment") {
    std::mt19937_64 rng(42);
    for (int i = 0; i < 300; ++i) {
        const auto F = testing::dyadic_measure(rng);
        const auto star = symmetrize(F);
        for (double t : {0.5, 1.0, 2.0, 4.0}) {
            const auto r = esseen_bound(F, 10, t);
            if (!r.mass_ok) continue;
            CHECK(r.bracket <= truncated_moments(star, 2 * t).second);
        }
    }
}

TEST_CASE("simulated sums are reproducible and correctly scaled") {
    const DiscreteMeasure F({{-1, 0.25}, {0, 0.25}, {0.5, 0.5}});
    const auto a = simulate_iid_sums(F, 400, 5000, Source{5, 0, 1});
    const auto b = simulate_iid_sums(F, 400, 5000, Source{5, 0, 4});
    CHECK(a == b);
    Moments m;
    for (double s : a) m.add(s);
    CHECK(std::abs(m.mean) < 4 * m.std_error());
    CHECK(m.variance() == Catch::Approx(400 * F.variance()).epsilon(0.06));
}

TEST_CASE("concentration study for Rademacher sums") {
    const auto study = concentration_study("rademacher", kRad, {100, 400}, {1.0, 2.0}, 2.0, 20000, Source{6});
    REQUIRE(study.rows.size() == 4);
    REQUIRE(study.scaling.size() == 2);
    for (const auto& row : study.rows) {
        CHECK(row.replicates == 20000);
        CHECK(row.seed == 6);
        CHECK(row.lambda == 2 * row.report.t);
        CHECK(row.report.empirical_prob <= row.concentration);
        CHECK(row.consistent());
    }
    // t = 1 excludes both atoms
    CHECK_FALSE(study.rows[0].report.valid());
    CHECK(study.rows[1].report.valid());
    // S_n is even for even n, so [x, x+1] holds one lattice point: Q(1) = P(S_n = 0) ~ sqrt(2/(pi n))
    for (const auto& s : study.scaling) CHECK(s.scaled == Catch::Approx(std::sqrt(2 / 3.14159265)).epsilon(0.05));
}
