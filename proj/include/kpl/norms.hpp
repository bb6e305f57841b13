#pragma once

// Monte Carlo L^p norms of weighted sums of exchangeable variables,
// psi(a) = || sum a_i Y_i ||_p, and the checks built on top of it.
//
// Standard errors: with m = mean of |S|^p over n replicates and s^2 its sample
// variance, the reported norm is m^{1/p} with delta-method error
// (1/p) m^{1/p - 1} s / sqrt(n).

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <utility>
#include <vector>

#include "kpl/measures.hpp"
#include "kpl/mixtures.hpp"
#include "kpl/random.hpp"

namespace kpl {

inline constexpr std::size_t kMinNormSamples = 100;
inline constexpr double kAssertSigmas = 3.0;
inline constexpr double kReportSigmas = 4.0;

struct CoefficientVector {
    std::vector<double> entries;

    std::size_t size() const { return entries.size(); }
    double operator[](std::size_t i) const { return entries[i]; }
    double l2() const {
        return std::sqrt(std::inner_product(entries.begin(), entries.end(), entries.begin(), 0.0));
    }
    bool is_zero() const {
        return std::all_of(entries.begin(), entries.end(), [](double x) { return x == 0.0; });
    }
    CoefficientVector scaled(double c) const {
        CoefficientVector out{entries};
        for (auto& x : out.entries) x *= c;
        return out;
    }
    CoefficientVector padded(std::size_t k) const {
        CoefficientVector out{entries};
        if (out.entries.size() < k) out.entries.resize(k, 0.0);
        return out;
    }
};

struct NormEstimate {
    double value = 0.0;
    double std_error = 0.0;
    std::size_t n_samples = 0;
    double p = 1.0;
};

inline NormEstimate norm_from_moments(const Moments& m, double p) {
    NormEstimate e;
    e.n_samples = m.n;
    e.p = p;
    if (m.mean <= 0.0) return e;
    e.value = std::pow(m.mean, 1.0 / p);
    e.std_error = std::pow(m.mean, 1.0 / p - 1.0) / p * m.std_error();
    return e;
}

namespace detail {

inline void require_norm_inputs(const CoefficientVector& a, double p, std::size_t n_samples) {
    require_p(p);
    if (a.size() == 0 || a.is_zero()) throw std::domain_error("coefficient vector must be nonzero");
    if (n_samples < kMinNormSamples) throw std::domain_error("at least 100 Monte Carlo samples are required");
}

// Derivative of m -> m^{1/p}, zero at m = 0.
inline double root_slope(double m, double p) { return m > 0.0 ? std::pow(m, 1.0 / p - 1.0) / p : 0.0; }

}  // namespace detail

// psi(a) by simulation: each replicate draws mu(omega), then k i.i.d. values.
// Draws never depend on a, so a fixed source gives identical sample paths for
// any coefficient vector of the same length.
template <SamplingLaw Law>
NormEstimate psi_mc(const Mixture<Law>& mu, const CoefficientVector& a, double p, std::size_t n_samples,
                    const Source& src) {
    detail::require_norm_inputs(a, p, n_samples);
    auto parts = run_batches<Moments>(n_samples, src, [&](std::size_t, std::size_t begin, std::size_t end, Engine& rng) {
        Moments m;
        for (std::size_t r = begin; r < end; ++r) {
            const auto& law = mu.law(mu.draw_component(rng));
            double s = 0.0;
            for (double ai : a.entries) s += ai * law.sample(rng);
            m.add(std::pow(std::abs(s), p));
        }
        return m;
    });
    return norm_from_moments(merge_all(parts), p);
}

// || a_1 t + sum_{i>=2} a_i xi_i ||_p with xi i.i.d. from nu; its p-th power is
// the kernel g^{a,l}(t, nu).
template <SamplingLaw Law>
NormEstimate shifted_norm_mc(double t, const Law& nu, const CoefficientVector& a, double p, std::size_t n_samples,
                             const Source& src) {
    detail::require_norm_inputs(a, p, n_samples);
    auto parts = run_batches<Moments>(n_samples, src, [&](std::size_t, std::size_t begin, std::size_t end, Engine& rng) {
        Moments m;
        for (std::size_t r = begin; r < end; ++r) {
            double s = a[0] * t;
            for (std::size_t i = 1; i < a.size(); ++i) s += a[i] * nu.sample(rng);
            m.add(std::pow(std::abs(s), p));
        }
        return m;
    });
    return norm_from_moments(merge_all(parts), p);
}

struct TwoSidedRow {
    std::size_t a_id = 0;
    NormEstimate psi;
    double l2 = 0.0;
    double bound_lo = 0.0;
    double bound_hi = 0.0;
    double margin = 0.0;  // min(psi - lo, hi - psi) / ||a||_2
    bool holds = false;
};

struct TwoSidedReport {
    ConstantsReport constants;
    std::vector<TwoSidedRow> rows;
    bool skipped = false;  // degenerate mu
    bool all_hold() const {
        return !skipped && std::all_of(rows.begin(), rows.end(), [](const auto& r) { return r.holds; });
    }
};

// A||a||_2 - 3 se <= psi(a) <= B||a||_2 + 3 se for every a in the family.
// Vector i is estimated with src.fork(i).
inline TwoSidedReport check_two_sided(const RandomMeasure& mu, double p, double C,
                                      const std::vector<CoefficientVector>& family, std::size_t n_samples,
                                      const Source& src) {
    TwoSidedReport rep;
    rep.constants = norm_constants(mu, p, C);
    if (rep.constants.degenerate) {
        rep.skipped = true;
        return rep;
    }
    for (std::size_t i = 0; i < family.size(); ++i) {
        TwoSidedRow row;
        row.a_id = i;
        row.psi = psi_mc(mu, family[i], p, n_samples, src.fork(i));
        row.l2 = family[i].l2();
        row.bound_lo = rep.constants.A_const * row.l2;
        row.bound_hi = rep.constants.B_const * row.l2;
        row.margin = std::min(row.psi.value - row.bound_lo, row.bound_hi - row.psi.value) / row.l2;
        const double slack = kAssertSigmas * row.psi.std_error;
        row.holds = row.psi.value >= row.bound_lo - slack && row.psi.value <= row.bound_hi + slack;
        rep.rows.push_back(row);
    }
    return rep;
}

struct MonotoneCheck {
    NormEstimate full;
    NormEstimate masked;
    double joint_std_error = 0.0;
    bool holds = false;
};

// psi(a) >= psi(a*) where a* zeroes the entries with mask == false. Both
// estimates share the source, hence the sample paths.
inline MonotoneCheck check_monotone(const RandomMeasure& mu, double p, const CoefficientVector& a,
                                    const std::vector<bool>& mask, std::size_t n_samples, const Source& src) {
    if (mask.size() != a.size()) throw std::invalid_argument("mask length must match the coefficient vector");
    CoefficientVector kept = a;
    for (std::size_t i = 0; i < a.size(); ++i)
        if (!mask[i]) kept.entries[i] = 0.0;
    MonotoneCheck r;
    r.full = psi_mc(mu, a, p, n_samples, src);
    if (kept.is_zero()) {
        r.masked = {0.0, 0.0, n_samples, p};
    } else {
        r.masked = psi_mc(mu, kept, p, n_samples, src);
    }
    r.joint_std_error = std::hypot(r.full.std_error, r.masked.std_error);
    r.holds = r.full.value >= r.masked.value - kAssertSigmas * r.joint_std_error;
    return r;
}

struct EquicontinuityCheck {
    double lhs = 0.0;
    double std_error = 0.0;
    double rhs_bound = 0.0;  // d(nu, lam) ||a||_2
    double d = 0.0;
    double k_ratio = 0.0;  // lhs / rhs_bound, the empirically needed constant
    bool holds = false;
};

// | ||t + sum a_k xi_k(nu)||_p - ||t + sum a_k xi_k(lam)||_p | under the
// comonotone coupling xi(nu) = F_nu^{-1}(eta), xi(lam) = F_lam^{-1}(eta).
inline EquicontinuityCheck check_equicontinuity(const DiscreteMeasure& nu, const DiscreteMeasure& lam, double t,
                                                const CoefficientVector& a, double p, std::size_t n_samples,
                                                const Source& src) {
    detail::require_norm_inputs(a, p, n_samples);
    if (!centered_check(nu).is_in_S || !centered_check(lam).is_in_S)
        throw std::domain_error("equicontinuity check needs centred laws");
    auto parts =
        run_batches<PairMoments>(n_samples, src, [&](std::size_t, std::size_t begin, std::size_t end, Engine& rng) {
            PairMoments m;
            for (std::size_t r = begin; r < end; ++r) {
                double u = t, v = t;
                for (double ai : a.entries) {
                    const double eta = uniform_open01(rng);
                    u += ai * nu.quantile(eta);
                    v += ai * lam.quantile(eta);
                }
                m.add(std::pow(std::abs(u), p), std::pow(std::abs(v), p));
            }
            return m;
        });
    const auto m = merge_all(parts);
    EquicontinuityCheck r;
    const double norm_nu = m.mean_x > 0.0 ? std::pow(m.mean_x, 1.0 / p) : 0.0;
    const double norm_lam = m.mean_y > 0.0 ? std::pow(m.mean_y, 1.0 / p) : 0.0;
    r.lhs = std::abs(norm_nu - norm_lam);
    const double g1 = detail::root_slope(m.mean_x, p);
    const double g2 = -detail::root_slope(m.mean_y, p);
    const double var = g1 * g1 * m.var_x() + g2 * g2 * m.var_y() + 2.0 * g1 * g2 * m.cov();
    r.std_error = std::sqrt(std::max(0.0, var) / static_cast<double>(m.n));
    r.d = d_metric(nu, lam);
    r.rhs_bound = r.d * a.l2();
    r.k_ratio = r.rhs_bound > 0.0 ? r.lhs / r.rhs_bound : 0.0;
    r.holds = r.lhs <= r.rhs_bound + kAssertSigmas * r.std_error;
    return r;
}

// Basis vectors e_1..e_k, the all-ones vector, and n_random seeded unit
// vectors with Gaussian directions, all of length k.
inline std::vector<CoefficientVector> standard_test_family(std::size_t k, std::size_t n_random, std::uint64_t seed) {
    std::vector<CoefficientVector> fam;
    for (std::size_t i = 0; i < k; ++i) {
        CoefficientVector e{std::vector<double>(k, 0.0)};
        e.entries[i] = 1.0;
        fam.push_back(std::move(e));
    }
    fam.push_back({std::vector<double>(k, 1.0)});
    Engine rng = Source{seed, 0x66616dULL}.engine();
    std::normal_distribution<double> g;
    for (std::size_t r = 0; r < n_random; ++r) {
        CoefficientVector v{std::vector<double>(k)};
        for (auto& x : v.entries) x = g(rng);
        fam.push_back(v.scaled(1.0 / v.l2()));
    }
    return fam;
}

}  // namespace kpl
