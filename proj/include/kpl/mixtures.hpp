#pragma once

// Random measures as finite mixtures: mu(omega) is one of finitely many laws,
// chosen with the given atom weights. Conditionally on that choice the
// exchangeable sequence is i.i.d. from the chosen law.

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <limits>
#include <random>
#include <stdexcept>
#include <vector>

#include "kpl/measures.hpp"
#include "kpl/random.hpp"

namespace kpl {

template <class L>
concept SamplingLaw = requires(const L& law, Engine& rng) {
    { law.sample(rng) } -> std::convertible_to<double>;
};

// Normal law; only enters through sampling.
struct GaussianLaw {
    double mean = 0.0;
    double sd = 1.0;

    double sample(Engine& rng) const { return std::normal_distribution<double>(mean, sd)(rng); }
};

template <SamplingLaw Law>
struct Component {
    double weight;
    Law law;
};

template <SamplingLaw Law>
class Mixture {
public:
    explicit Mixture(std::vector<Component<Law>> components) : components_(std::move(components)) {
        if (components_.empty()) throw std::invalid_argument("mixture needs at least one component");
        double total = 0.0;
        for (const auto& c : components_) {
            if (!(c.weight > 0.0) || !std::isfinite(c.weight))
                throw std::invalid_argument("mixture atom weights must be positive");
            total += c.weight;
            cumulative_.push_back(total);
        }
        if (std::abs(total - 1.0) > kWeightSumTolerance)
            throw std::invalid_argument("mixture atom weights must sum to 1");
        cumulative_.back() = 1.0;
    }

    // Deterministic random measure.
    explicit Mixture(Law law) : Mixture(std::vector<Component<Law>>{{1.0, std::move(law)}}) {}

    const std::vector<Component<Law>>& components() const { return components_; }
    std::size_t size() const { return components_.size(); }
    const Law& law(std::size_t j) const { return components_[j].law; }
    double weight(std::size_t j) const { return components_[j].weight; }

    std::size_t draw_component(Engine& rng) const {
        if (components_.size() == 1) return 0;
        const double u = uniform_open01(rng);
        auto it = std::lower_bound(cumulative_.begin(), cumulative_.end(), u);
        return static_cast<std::size_t>(it - cumulative_.begin());
    }

private:
    std::vector<Component<Law>> components_;
    std::vector<double> cumulative_;
};

using RandomMeasure = Mixture<DiscreteMeasure>;

// One omega-path of the exchangeable sequence: pick mu(omega), then k
// conditionally i.i.d. draws from it.
template <SamplingLaw Law>
std::vector<double> sample_exchangeable(const Mixture<Law>& mu, std::size_t k, Engine& rng) {
    if (k == 0) throw std::invalid_argument("sample_exchangeable needs k >= 1");
    const auto& law = mu.law(mu.draw_component(rng));
    std::vector<double> out(k);
    for (auto& y : out) y = law.sample(rng);
    return out;
}

// The law of Y_1: sum_j w_j nu_j.
inline DiscreteMeasure pooled_measure(const RandomMeasure& mu) {
    std::vector<Atom> atoms;
    for (const auto& c : mu.components())
        for (const auto& a : c.law.atoms()) atoms.push_back({a.point, c.weight * a.weight});
    return DiscreteMeasure(std::move(atoms));
}

inline void require_p(double p) {
    if (!(p >= 1.0 && p < 2.0)) throw std::domain_error("p must lie in [1, 2)");
}

// E (int x^2 dmu)^{p/2}.
inline double kp_condition_value(const RandomMeasure& mu, double p) {
    require_p(p);
    double s = 0.0;
    for (const auto& c : mu.components()) s += c.weight * std::pow(c.law.second_moment(), p / 2.0);
    return s;
}

inline constexpr double kDefaultLowerConstant = 0.70710678118654752440;  // 1/sqrt(2)

struct ConstantsReport {
    double p = 1.0;
    double A_const = 0.0;
    double B_const = 0.0;
    double C_const = kDefaultLowerConstant;
    double kp_value = 0.0;
    bool degenerate = false;
};

// A = C [E (int|x| dmu)^p]^{1/p},  B = [E (int x^2 dmu)^{p/2}]^{1/p}.
inline ConstantsReport norm_constants(const RandomMeasure& mu, double p, double C = kDefaultLowerConstant) {
    require_p(p);
    if (!(C > 0.0)) throw std::domain_error("lower-bound constant C must be positive");
    ConstantsReport r;
    r.p = p;
    r.C_const = C;
    double first = 0.0;
    for (const auto& c : mu.components()) first += c.weight * std::pow(c.law.abs_moment(1.0), p);
    r.kp_value = kp_condition_value(mu, p);
    r.degenerate = !(r.kp_value > 0.0);
    if (r.degenerate) return r;
    r.A_const = C * std::pow(first, 1.0 / p);
    r.B_const = std::pow(r.kp_value, 1.0 / p);
    return r;
}

struct MomentConsistency {
    double lhs = 0.0;  // mixture average of the truncated random second moment
    double rhs = 0.0;  // truncated second moment of the pooled measure
};

// Pass t = +infinity for the untruncated identity.
inline MomentConsistency moment_consistency_check(const RandomMeasure& mu, double t) {
    if (!(t > 0.0)) throw std::domain_error("truncation level must be positive");
    MomentConsistency r;
    for (const auto& c : mu.components()) r.lhs += c.weight * truncated_moments(c.law, t).second;
    r.rhs = truncated_moments(pooled_measure(mu), t).second;
    return r;
}

struct EnvelopeReport {
    std::vector<double> t_grid;
    std::vector<double> K_t;    // min_j int_{|x|<t} x^2 dnu_j
    std::vector<double> eps_t;  // max_j nu_j(|x| >= t)
};

inline EnvelopeReport envelopes(const RandomMeasure& mu, std::vector<double> t_grid) {
    for (std::size_t i = 0; i < t_grid.size(); ++i) {
        if (!(t_grid[i] > 0.0)) throw std::domain_error("envelope grid must be positive");
        if (i > 0 && !(t_grid[i] > t_grid[i - 1])) throw std::domain_error("envelope grid must be increasing");
    }
    EnvelopeReport r;
    for (double t : t_grid) {
        double k = std::numeric_limits<double>::infinity();
        double e = 0.0;
        for (const auto& c : mu.components()) {
            k = std::min(k, truncated_moments(c.law, t).second);
            e = std::max(e, tail_mass(c.law, t));
        }
        r.K_t.push_back(k);
        r.eps_t.push_back(e);
    }
    r.t_grid = std::move(t_grid);
    return r;
}

// Every component centred within the S-membership tolerance.
inline bool all_centered(const RandomMeasure& mu) {
    return std::all_of(mu.components().begin(), mu.components().end(),
                       [](const auto& c) { return centered_check(c.law).is_in_S; });
}

inline RandomMeasure scaled(const RandomMeasure& mu, double c) {
    std::vector<Component<DiscreteMeasure>> out;
    for (const auto& comp : mu.components()) out.push_back({comp.weight, comp.law.scaled(c)});
    return RandomMeasure(std::move(out));
}

}  // namespace kpl
