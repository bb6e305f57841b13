#pragma once

// Inductive subsequence selection towards (1 +- eps)-equivalence with the limit
// exchangeable sequence, its verification, the anti-concentration experiment
// behind the moment condition, and the CLT with random variance.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "kpl/concentration.hpp"
#include "kpl/measures.hpp"
#include "kpl/mixtures.hpp"
#include "kpl/norms.hpp"
#include "kpl/random.hpp"
#include "kpl/seqmodel.hpp"

namespace kpl {

struct SelectionConfig {
    double epsilon = 0.2;
    std::size_t k_max = 8;
    std::vector<CoefficientVector> test_family;  // zero-padded to k_max
    std::size_t candidate_stride = 1;
    std::size_t max_candidates = 4096;  // per step
    std::size_t n_samples = 4000;
    double p = 1.0;

    double tolerance(std::size_t k) const { return std::ldexp(epsilon, -static_cast<int>(k)); }

    void validate() const {
        if (!(epsilon > 0.0 && epsilon <= 0.5)) throw std::domain_error("epsilon must lie in (0, 1/2]");
        if (k_max == 0) throw std::domain_error("k_max must be positive");
        if (candidate_stride == 0 || max_candidates == 0) throw std::domain_error("candidate scan needs stride and budget");
        if (test_family.empty()) throw std::domain_error("test family is empty");
        for (const auto& a : test_family)
            if (a.size() > k_max || a.is_zero()) throw std::domain_error("test vectors must be nonzero with length <= k_max");
        require_p(p);
    }
};

struct DeviationResult {
    double value = 0.0;  // sup over the family of the normalized norm gap
    double std_error = 0.0;
    std::size_t worst_a = 0;
};

namespace detail {

inline std::vector<double> family_psi(const RandomMeasure& mu, const std::vector<CoefficientVector>& family,
                                      std::size_t k_max, double p, std::size_t n_samples, const Source& src) {
    std::vector<double> psi;
    for (std::size_t i = 0; i < family.size(); ++i)
        psi.push_back(psi_mc(mu, family[i].padded(k_max), p, n_samples, src.fork(i)).value);
    return psi;
}

}  // namespace detail

// sup_a | ||sum_{i<k} a_i X_{n_i} + a_k X_n + sum_{i>k} a_i Y_i||_p
//       - ||sum_{i<k} a_i X_{n_i} + a_k Y_k + sum_{i>k} a_i Y_i||_p | / psi(a)
// over family vectors with a_k != 0, where k = prefix.size() + 1. Both norms are
// estimated on common random numbers: the same replicate supplies the prefix
// and tail values, and Y_k is the exchangeable core of X_n. A fixed source
// gives the same prefix and tail draws for every candidate.
inline DeviationResult uniform_deviation(const SequenceModel& model, const std::vector<std::size_t>& prefix,
                                         std::size_t candidate, const std::vector<CoefficientVector>& family,
                                         const std::vector<double>& psi, double p, std::size_t n_samples,
                                         const Source& src) {
    if (!prefix.empty() && candidate <= prefix.back())
        throw std::invalid_argument("candidate must exceed the chosen prefix");
    const std::size_t k = prefix.size() + 1;
    std::size_t len = k;
    for (const auto& a : family) len = std::max(len, a.size());

    std::vector<std::size_t> active;
    for (std::size_t i = 0; i < family.size(); ++i)
        if (family[i].size() >= k && family[i][k - 1] != 0.0) active.push_back(i);
    if (active.empty()) return {};

    const bool table = model.kind() == ModelKind::custom_table;
    using Acc = std::vector<PairMoments>;
    auto parts = run_batches<Acc>(n_samples, src, [&](std::size_t, std::size_t begin, std::size_t end, Engine& rng) {
        Acc acc(active.size());
        std::vector<double> z(len);
        for (std::size_t r = begin; r < end; ++r) {
            const auto state = model.start_path(rng, r);
            for (std::size_t i = 0; i + 1 < k; ++i) z[i] = model.value_at(state, prefix[i], rng).x;
            for (std::size_t i = k; i < len; ++i) z[i] = model.limit_draw(state, rng);
            const auto draw = model.value_at(state, candidate, rng);
            const double core = table ? model.limit_draw(state, rng) : draw.core;
            for (std::size_t j = 0; j < active.size(); ++j) {
                const auto& a = family[active[j]];
                double common = 0.0;
                for (std::size_t i = 0; i < a.size(); ++i)
                    if (i != k - 1) common += a[i] * z[i];
                const double ak = a[k - 1];
                acc[j].add(std::pow(std::abs(common + ak * draw.x), p), std::pow(std::abs(common + ak * core), p));
            }
        }
        return acc;
    });

    DeviationResult res;
    res.value = -1.0;
    for (std::size_t j = 0; j < active.size(); ++j) {
        PairMoments m;
        for (const auto& part : parts) m.merge(part[j]);
        const double nx = m.mean_x > 0.0 ? std::pow(m.mean_x, 1.0 / p) : 0.0;
        const double ny = m.mean_y > 0.0 ? std::pow(m.mean_y, 1.0 / p) : 0.0;
        const double scale = psi[active[j]];
        const double dev = std::abs(nx - ny) / scale;
        if (dev > res.value) {
            const double g1 = detail::root_slope(m.mean_x, p), g2 = -detail::root_slope(m.mean_y, p);
            const double var = g1 * g1 * m.var_x() + g2 * g2 * m.var_y() + 2.0 * g1 * g2 * m.cov();
            res.value = dev;
            res.std_error = std::sqrt(std::max(0.0, var) / static_cast<double>(m.n)) / scale;
            res.worst_a = active[j];
        }
    }
    return res;
}

struct StepRecord {
    std::size_t step = 0;
    std::size_t index = 0;
    double deviation = 0.0;
    double std_error = 0.0;
    double tolerance = 0.0;
    std::size_t candidates_tried = 0;
};

struct SelectionResult {
    std::vector<std::size_t> indices;
    std::vector<double> step_deviations;
    std::vector<StepRecord> steps;
    bool verified = false;
    std::optional<std::size_t> failing_step;
};

inline void require_nondegenerate(const RandomMeasure& mu) {
    if (!(kp_condition_value(mu, 1.0) > 0.0)) throw std::domain_error("random measure is concentrated at zero");
}

// Step k scans n_{k-1} + 1, n_{k-1} + 1 + stride, ... and keeps the first
// candidate whose uniform deviation is within eps 2^{-k}. All candidates of a
// step share one source, so they are compared on the same prefix and tail draws.
inline SelectionResult select_subsequence(const SequenceModel& model, const SelectionConfig& cfg, const Source& src) {
    cfg.validate();
    require_nondegenerate(model.mu());
    const auto psi = detail::family_psi(model.mu(), cfg.test_family, cfg.k_max, cfg.p, cfg.n_samples, src.fork(0));

    SelectionResult res;
    for (std::size_t k = 1; k <= cfg.k_max; ++k) {
        const Source step_src = src.fork(k);
        const std::size_t start = res.indices.empty() ? 1 : res.indices.back() + 1;
        bool accepted = false;
        for (std::size_t c = 0; c < cfg.max_candidates; ++c) {
            const std::size_t n = start + c * cfg.candidate_stride;
            if (n > model.max_index()) break;
            const auto dev =
                uniform_deviation(model, res.indices, n, cfg.test_family, psi, cfg.p, cfg.n_samples, step_src);
            if (dev.value <= cfg.tolerance(k)) {
                res.indices.push_back(n);
                res.step_deviations.push_back(dev.value);
                res.steps.push_back({k, n, dev.value, dev.std_error, cfg.tolerance(k), c + 1});
                accepted = true;
                break;
            }
        }
        if (!accepted) {
            res.failing_step = k;
            return res;
        }
    }
    double total = 0.0;
    for (double d : res.step_deviations) total += d;
    res.verified = total <= cfg.epsilon;
    return res;
}

struct VerificationRow {
    std::size_t a_id = 0;
    NormEstimate x_norm;  // || sum a_i X_{n_i} ||_p
    NormEstimate psi;     // || sum a_i Y_i ||_p
    double l2 = 0.0;
    double equiv_lo = 0.0, equiv_hi = 0.0;  // (1 -+ eps) psi -+ 3 se
    double l2_lo = 0.0, l2_hi = 0.0;        // A (1 - eps)||a|| - 3 se, B (1 + eps)||a|| + 3 se
    double margin = 0.0;                    // min distance to the equivalence band, relative to psi
    bool holds_equiv = false;
    bool holds_l2 = false;
};

struct VerificationReport {
    ConstantsReport constants;
    double epsilon = 0.0;
    std::vector<VerificationRow> rows;
    bool all_hold() const {
        return std::all_of(rows.begin(), rows.end(), [](const auto& r) { return r.holds_equiv && r.holds_l2; });
    }
    double min_margin() const {
        double m = std::numeric_limits<double>::infinity();
        for (const auto& r : rows) m = std::min(m, r.margin);
        return m;
    }
};

// Independent estimates of || sum a_i X_{n_i} ||_p and psi(a) for every family
// vector, truncated to the number of chosen indices.
inline VerificationReport verify_equivalence(const SequenceModel& model, const std::vector<std::size_t>& indices,
                                             double p, const std::vector<CoefficientVector>& family, double epsilon,
                                             double C, std::size_t n_samples, const Source& src) {
    if (indices.empty()) throw std::invalid_argument("no indices to verify");
    for (std::size_t i = 1; i < indices.size(); ++i)
        if (indices[i] <= indices[i - 1]) throw std::invalid_argument("indices must be strictly increasing");
    VerificationReport rep;
    rep.constants = norm_constants(model.mu(), p, C);
    rep.epsilon = epsilon;
    const std::size_t k = indices.size();
    for (std::size_t id = 0; id < family.size(); ++id) {
        CoefficientVector a = family[id].padded(k);
        a.entries.resize(k);
        if (a.is_zero()) continue;
        const Source s = src.fork(id);
        auto parts =
            run_batches<Moments>(n_samples, s.fork(1), [&](std::size_t, std::size_t begin, std::size_t end, Engine& rng) {
                Moments m;
                for (std::size_t r = begin; r < end; ++r) {
                    const auto state = model.start_path(rng, r);
                    double sum = 0.0;
                    for (std::size_t i = 0; i < k; ++i) sum += a[i] * model.value_at(state, indices[i], rng).x;
                    m.add(std::pow(std::abs(sum), p));
                }
                return m;
            });
        VerificationRow row;
        row.a_id = id;
        row.x_norm = norm_from_moments(merge_all(parts), p);
        row.psi = psi_mc(model.mu(), a, p, n_samples, s.fork(2));
        row.l2 = a.l2();
        const double se = std::hypot(row.x_norm.std_error, row.psi.std_error);
        row.equiv_lo = (1.0 - epsilon) * row.psi.value - kAssertSigmas * se;
        row.equiv_hi = (1.0 + epsilon) * row.psi.value + kAssertSigmas * se;
        row.l2_lo = rep.constants.A_const * (1.0 - epsilon) * row.l2 - kAssertSigmas * row.x_norm.std_error;
        row.l2_hi = rep.constants.B_const * (1.0 + epsilon) * row.l2 + kAssertSigmas * row.x_norm.std_error;
        row.holds_equiv = row.x_norm.value >= row.equiv_lo && row.x_norm.value <= row.equiv_hi;
        row.holds_l2 = row.x_norm.value >= row.l2_lo && row.x_norm.value <= row.l2_hi;
        row.margin = std::min(row.x_norm.value - row.equiv_lo, row.equiv_hi - row.x_norm.value) / row.psi.value;
        rep.rows.push_back(row);
    }
    return rep;
}

// ---- necessity direction -------------------------------------------------

// a_k = [log k + 1], the length of the discarded head of the block.
inline std::size_t head_length(std::size_t k) {
    if (k == 0) throw std::domain_error("head length defined for k >= 1");
    return static_cast<std::size_t>(std::floor(std::log(static_cast<double>(k)) + 1.0));
}

// eps_j with sum_{j > a_k} eps_j <= 2^{-k} for every k: if a_k = m then
// k < e^m, and 2^{-(ceil(e^j) + 1)} sums over j > m to at most 2^{-ceil(e^{m+1})}.
inline double lacunary_tolerance(std::size_t j) {
    return std::exp2(-(std::ceil(std::exp(static_cast<double>(j))) + 1.0));
}

struct NecessityConfig {
    double T = 2.0;
    std::vector<std::size_t> N_grid{4096};
    std::vector<double> variance_scales{1.0, 4.0, 16.0, 64.0};
    std::size_t replicates = 20000;
    double A_esseen = kDefaultEsseenConstant;

    void validate() const {
        if (!(T > 0.0)) throw std::domain_error("T must be positive");
        if (N_grid.empty()) throw std::domain_error("N grid is empty");
        for (std::size_t N : N_grid)
            if (N < 2 || 2 * head_length(N) > N) throw std::domain_error("N grid needs a_N <= N/2");
        if (replicates == 0) throw std::domain_error("replicates must be positive");
    }
};

// Component points multiplied by sqrt(scale), one measure per variance scale.
inline std::vector<RandomMeasure> variance_scaled_family(const RandomMeasure& base, const std::vector<double>& scales) {
    std::vector<RandomMeasure> fam;
    for (double s : scales) {
        if (!(s > 0.0)) throw std::domain_error("variance scales must be positive");
        fam.push_back(scaled(base, std::sqrt(s)));
    }
    return fam;
}

struct NecessityRow {
    std::size_t family_index = 0;
    double scale = 0.0;
    std::size_t N = 0;
    double T = 0.0;
    std::size_t head = 0;       // a_N
    double prob = 0.0;          // P(|N^{-1/2} sum_{k<=N} Y_k| <= T)
    double prob_se = 0.0;
    double prob_tail = 0.0;     // same with the first a_N terms dropped
    double K = 0.0;             // K_t at t = sqrt(N/2)
    double eps = 0.0;           // tail envelope at t = sqrt(N/2)
    double proxy = 0.0;         // T K^{-1/2}
    double esseen_tail = 0.0;   // mixture of per-component Esseen bounds for the tail block
    std::size_t replicates = 0;
    std::uint64_t seed = 0;
    bool breaks_half() const { return prob < 0.5; }
};

inline std::vector<NecessityRow> necessity_experiment(const std::vector<RandomMeasure>& family,
                                                      const NecessityConfig& cfg, const Source& src) {
    cfg.validate();
    std::vector<NecessityRow> rows;
    for (std::size_t f = 0; f < family.size(); ++f) {
        const auto& mu = family[f];
        for (std::size_t N : cfg.N_grid) {
            NecessityRow row;
            row.family_index = f;
            row.scale = f < cfg.variance_scales.size() ? cfg.variance_scales[f] : 0.0;
            row.N = N;
            row.T = cfg.T;
            row.head = head_length(N);
            const double rootN = std::sqrt(static_cast<double>(N));
            struct Counts {
                std::size_t full = 0, tail = 0;
            };
            auto parts = run_batches<Counts>(cfg.replicates, src.fork(f * 1000003ULL + N),
                                             [&](std::size_t, std::size_t begin, std::size_t end, Engine& rng) {
                                                 Counts c;
                                                 for (std::size_t r = begin; r < end; ++r) {
                                                     const auto& law = mu.law(mu.draw_component(rng));
                                                     const double head = sample_iid_sum(law, row.head, rng);
                                                     const double tail = sample_iid_sum(law, N - row.head, rng);
                                                     if (std::abs(head + tail) / rootN <= cfg.T) ++c.full;
                                                     if (std::abs(tail) / rootN <= cfg.T) ++c.tail;
                                                 }
                                                 return c;
                                             });
            std::size_t full = 0, tail = 0;
            for (const auto& c : parts) {
                full += c.full;
                tail += c.tail;
            }
            const double reps = static_cast<double>(cfg.replicates);
            row.prob = static_cast<double>(full) / reps;
            row.prob_se = std::sqrt(row.prob * (1.0 - row.prob) / reps);
            row.prob_tail = static_cast<double>(tail) / reps;
            const auto env = envelopes(mu, {std::sqrt(static_cast<double>(N) / 2.0)});
            row.K = env.K_t.front();
            row.eps = env.eps_t.front();
            row.proxy = row.K > 0.0 ? cfg.T / std::sqrt(row.K) : std::numeric_limits<double>::infinity();
            for (const auto& c : mu.components()) {
                const auto b = esseen_bound(c.law, N - row.head, cfg.T * rootN, cfg.A_esseen);
                row.esseen_tail += c.weight * std::min(1.0, b.esseen_value);
            }
            row.replicates = cfg.replicates;
            row.seed = src.seed;
            rows.push_back(row);
        }
    }
    return rows;
}

// ---- CLT with random variance ----------------------------------------------

// E|zeta|^p for standard normal zeta.
inline double normal_abs_moment(double p) {
    return std::pow(2.0, p / 2.0) * std::tgamma((p + 1.0) / 2.0) / std::sqrt(std::numbers::pi);
}

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

struct CltReport {
    std::size_t N = 0;
    std::size_t n_reps = 0;
    double ks_distance = 0.0;
    std::string target_cdf;
    double p = 1.0;
    double moment_empirical = 0.0;  // mean of |N^{-1/2} S_N|^p
    double moment_se = 0.0;
    double moment_target = 0.0;  // E|zeta|^p * E (int x^2 dmu)^{p/2}
    bool moment_ok = false;
};

// KS distance between simulated N^{-1/2} sum_{k<=N} Y_k and the variance
// mixture of normals sum_j w_j Phi(x / sigma_j).
inline CltReport clt_mixture_check(const RandomMeasure& mu, std::size_t N, std::size_t n_reps, const Source& src,
                                   double p = 1.0) {
    require_p(p);
    if (N == 0 || n_reps == 0) throw std::domain_error("N and n_reps must be positive");
    if (!all_centered(mu)) throw std::domain_error("CLT check needs centred components");
    std::vector<double> sigma;
    for (const auto& c : mu.components()) sigma.push_back(std::sqrt(c.law.second_moment()));

    std::vector<double> sums(n_reps);
    const double rootN = std::sqrt(static_cast<double>(N));
    run_batches<int>(n_reps, src, [&](std::size_t, std::size_t begin, std::size_t end, Engine& rng) {
        for (std::size_t r = begin; r < end; ++r) {
            const auto& law = mu.law(mu.draw_component(rng));
            sums[r] = sample_iid_sum(law, N, rng) / rootN;
        }
        return 0;
    });

    auto target = [&](double x, bool left) {
        double F = 0.0;
        for (std::size_t j = 0; j < sigma.size(); ++j) {
            double Fj;
            if (sigma[j] > 0.0)
                Fj = normal_cdf(x / sigma[j]);
            else
                Fj = left ? (x > 0.0 ? 1.0 : 0.0) : (x >= 0.0 ? 1.0 : 0.0);
            F += mu.weight(j) * Fj;
        }
        return F;
    };

    CltReport rep;
    rep.N = N;
    rep.n_reps = n_reps;
    rep.p = p;
    rep.target_cdf = "sum_j w_j Phi(x / sigma_j), sigma = (";
    for (std::size_t j = 0; j < sigma.size(); ++j) rep.target_cdf += (j ? ", " : "") + std::to_string(sigma[j]);
    rep.target_cdf += ")";

    Moments mom;
    for (double s : sums) mom.add(std::pow(std::abs(s), p));
    std::sort(sums.begin(), sums.end());
    const double n = static_cast<double>(n_reps);
    double d = 0.0;
    for (std::size_t i = 0; i < sums.size();) {
        std::size_t j = i;
        while (j < sums.size() && sums[j] == sums[i]) ++j;
        d = std::max(d, std::abs(static_cast<double>(j) / n - target(sums[i], false)));
        d = std::max(d, std::abs(target(sums[i], true) - static_cast<double>(i) / n));
        i = j;
    }
    if (std::any_of(sigma.begin(), sigma.end(), [](double s) { return s == 0.0; })) {
        const auto at_zero = std::upper_bound(sums.begin(), sums.end(), 0.0) - sums.begin();
        d = std::max(d, std::abs(static_cast<double>(at_zero) / n - target(0.0, false)));
    }
    rep.ks_distance = d;
    rep.moment_empirical = mom.mean;
    rep.moment_se = mom.std_error();
    rep.moment_target = normal_abs_moment(p) * kp_condition_value(mu, p);
    rep.moment_ok = std::abs(rep.moment_empirical - rep.moment_target) <= kAssertSigmas * rep.moment_se;
    return rep;
}

}  // namespace kpl
