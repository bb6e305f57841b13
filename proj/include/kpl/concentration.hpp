#pragma once

// Concentration functions of i.i.d. sums and the Esseen-type upper bound
//   P(|S_n| <= t) <= A t n^{-1/2} [ int_{|x|<t} x^2 dF - 2 (int_{|x|<t} x dF)^2 ]^{-1/2},
// stated only when the bracket is positive and F puts mass >= 1/2 on |x| < t.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "kpl/measures.hpp"
#include "kpl/random.hpp"

namespace kpl {

inline constexpr double kDefaultEsseenConstant = 2.0;

// Q(lambda) = sup_x #{samples in [x, x + lambda]} / n. The supremum is attained
// with x at a sample point, so a two-pointer sweep over the sorted data suffices.
inline double empirical_concentration(std::span<const double> samples, double lambda) {
    if (samples.empty()) throw std::domain_error("empirical concentration needs samples");
    if (!(lambda >= 0.0)) throw std::domain_error("window length must be nonnegative");
    std::vector<double> s(samples.begin(), samples.end());
    std::sort(s.begin(), s.end());
    std::size_t best = 0, j = 0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        j = std::max(j, i);
        while (j < s.size() && s[j] <= s[i] + lambda) ++j;
        best = std::max(best, j - i);
    }
    return static_cast<double>(best) / static_cast<double>(s.size());
}

struct ConcentrationReport {
    std::size_t n = 0;
    double t = 0.0;
    double A = kDefaultEsseenConstant;
    double empirical_prob = 0.0;  // filled by the simulation layer
    double esseen_value = 0.0;    // +inf when the bound does not apply
    double bracket = 0.0;
    double mass = 0.0;
    bool mass_ok = false;
    bool bracket_ok = false;
    bool valid() const { return mass_ok && bracket_ok; }
};

inline ConcentrationReport esseen_bound(const DiscreteMeasure& F, std::size_t n, double t,
                                        double A = kDefaultEsseenConstant) {
    if (n == 0) throw std::domain_error("n must be positive");
    if (!(t > 0.0) || !(A > 0.0)) throw std::domain_error("t and A must be positive");
    const auto m = truncated_moments(F, t);
    ConcentrationReport r;
    r.n = n;
    r.t = t;
    r.A = A;
    r.mass = m.mass;
    r.bracket = m.second - 2.0 * m.first * m.first;
    r.mass_ok = m.mass >= 0.5;
    r.bracket_ok = r.bracket > 0.0;
    r.esseen_value = r.valid() ? A * t / std::sqrt(static_cast<double>(n)) / std::sqrt(r.bracket)
                               : std::numeric_limits<double>::infinity();
    return r;
}

// A lambda n^{-1/2} (int_{|x|<lambda} x^2 dF*)^{-1/2} with F* the exact
// symmetrization; empty when that truncated moment vanishes.
inline std::optional<double> esseen_intermediate(const DiscreteMeasure& F, double lambda, std::size_t n,
                                                 double A = kDefaultEsseenConstant) {
    if (!(lambda > 0.0)) throw std::domain_error("lambda must be positive");
    if (n == 0) throw std::domain_error("n must be positive");
    const double m2 = truncated_moments(symmetrize(F), lambda).second;
    if (!(m2 > 0.0)) return std::nullopt;
    return A * lambda / std::sqrt(static_cast<double>(n)) / std::sqrt(m2);
}

// reps independent copies of S_n = X_1 + ... + X_n, X_i ~ F.
inline std::vector<double> simulate_iid_sums(const DiscreteMeasure& F, std::size_t n, std::size_t reps,
                                             const Source& src) {
    std::vector<double> out(reps);
    run_batches<int>(reps, src, [&](std::size_t, std::size_t begin, std::size_t end, Engine& rng) {
        for (std::size_t r = begin; r < end; ++r) out[r] = sample_iid_sum(F, n, rng);
        return 0;
    });
    return out;
}

struct ConcentrationRow {
    std::string law_id;
    ConcentrationReport report;
    double lambda = 0.0;         // 2t, the window that dominates P(|S_n| <= t)
    double empirical_se = 0.0;   // binomial standard error of empirical_prob
    double concentration = 0.0;  // empirical Q_{S_n}(2t)
    std::size_t replicates = 0;
    std::uint64_t seed = 0;
    // Bound respected within `sigmas` standard errors; true when not applicable.
    bool consistent(double sigmas = 3.0) const {
        return !report.valid() || report.empirical_prob - sigmas * empirical_se <= report.esseen_value;
    }
};

struct ScalingRow {
    std::string law_id;
    std::size_t n = 0;
    double lambda = 1.0;
    double concentration = 0.0;  // empirical Q_{S_n}(lambda)
    double scaled = 0.0;         // sqrt(n) * concentration
};

struct ConcentrationStudy {
    std::vector<ConcentrationRow> rows;
    std::vector<ScalingRow> scaling;
};

// Fresh sums for every n (fork keyed by n), shared across the t grid.
inline ConcentrationStudy concentration_study(const std::string& law_id, const DiscreteMeasure& F,
                                              const std::vector<std::size_t>& n_grid,
                                              const std::vector<double>& t_grid, double A, std::size_t reps,
                                              const Source& src, double scaling_lambda = 1.0) {
    ConcentrationStudy study;
    for (std::size_t n : n_grid) {
        const auto sums = simulate_iid_sums(F, n, reps, src.fork(n));
        for (double t : t_grid) {
            ConcentrationRow row;
            row.law_id = law_id;
            row.report = esseen_bound(F, n, t, A);
            const auto inside = std::count_if(sums.begin(), sums.end(), [t](double s) { return std::abs(s) <= t; });
            const double ph = static_cast<double>(inside) / static_cast<double>(reps);
            row.report.empirical_prob = ph;
            row.empirical_se = std::sqrt(ph * (1.0 - ph) / static_cast<double>(reps));
            row.lambda = 2.0 * t;
            row.concentration = empirical_concentration(sums, row.lambda);
            row.replicates = reps;
            row.seed = src.seed;
            study.rows.push_back(row);
        }
        const double q = empirical_concentration(sums, scaling_lambda);
        study.scaling.push_back({law_id, n, scaling_lambda, q, std::sqrt(static_cast<double>(n)) * q});
    }
    return study;
}

}  // namespace kpl
