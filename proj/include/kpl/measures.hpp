#pragma once

// Finite-support probability measures on the real line: CDF/quantile with
// the inf convention, truncated moments, symmetrization, and the two
// metrics used throughout (Prohorov distance and the L2 quantile-coupling
// distance).

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "kpl/random.hpp"

namespace kpl {

inline constexpr double kWeightSumTolerance = 1e-12;
inline constexpr double kCenteringTolerance = 1e-9;

struct Atom {
    double point;
    double weight;

    friend bool operator==(const Atom&, const Atom&) = default;
};

class DiscreteMeasure {
public:
    // Sorts by point and merges atoms whose points compare equal. Throws
    // std::invalid_argument on empty input, non-finite values, non-positive
    // weights, or a total weight farther than 1e-12 from one.
    explicit DiscreteMeasure(std::vector<Atom> atoms) : atoms_(std::move(atoms)) {
        if (atoms_.empty()) throw std::invalid_argument("discrete measure needs at least one atom");
        for (const auto& a : atoms_) {
            if (!std::isfinite(a.point) || !std::isfinite(a.weight))
                throw std::invalid_argument("discrete measure atoms must be finite");
            if (!(a.weight > 0.0)) throw std::invalid_argument("discrete measure weights must be positive");
        }
        std::stable_sort(atoms_.begin(), atoms_.end(),
                         [](const Atom& a, const Atom& b) { return a.point < b.point; });
        std::vector<Atom> merged;
        merged.reserve(atoms_.size());
        for (const auto& a : atoms_) {
            if (!merged.empty() && merged.back().point == a.point)
                merged.back().weight += a.weight;
            else
                merged.push_back(a);
        }
        atoms_ = std::move(merged);

        double total = 0.0;
        cumulative_.reserve(atoms_.size());
        for (const auto& a : atoms_) {
            total += a.weight;
            cumulative_.push_back(total);
        }
        if (std::abs(total - 1.0) > kWeightSumTolerance)
            throw std::invalid_argument("discrete measure weights sum to " + std::to_string(total) + ", not 1");
        cumulative_.back() = 1.0;
    }

    static DiscreteMeasure dirac(double c) { return DiscreteMeasure({{c, 1.0}}); }

    static DiscreteMeasure uniform(std::span<const double> points) {
        std::vector<Atom> atoms;
        for (double x : points) atoms.push_back({x, 1.0 / static_cast<double>(points.size())});
        return DiscreteMeasure(std::move(atoms));
    }

    // Symmetric Bernoulli on {-c, c}.
    static DiscreteMeasure rademacher(double c = 1.0) { return DiscreteMeasure({{-c, 0.5}, {c, 0.5}}); }

    const std::vector<Atom>& atoms() const { return atoms_; }
    std::size_t size() const { return atoms_.size(); }
    double min_point() const { return atoms_.front().point; }
    double max_point() const { return atoms_.back().point; }

    // F(t) = nu((-inf, t]).
    double cdf(double t) const {
        auto it = std::upper_bound(atoms_.begin(), atoms_.end(), t,
                                   [](double v, const Atom& a) { return v < a.point; });
        if (it == atoms_.begin()) return 0.0;
        return cumulative_[static_cast<std::size_t>(it - atoms_.begin()) - 1];
    }

    // inf{t : F(t) >= u}; u must lie in the open unit interval.
    double quantile(double u) const {
        if (!(u > 0.0 && u < 1.0)) throw std::domain_error("quantile level must lie in (0,1)");
        auto it = std::lower_bound(cumulative_.begin(), cumulative_.end(), u);
        return atoms_[static_cast<std::size_t>(it - cumulative_.begin())].point;
    }

    double expect(auto&& f) const {
        double s = 0.0;
        for (const auto& a : atoms_) s += a.weight * f(a.point);
        return s;
    }

    double mean() const { return expect([](double x) { return x; }); }
    double second_moment() const { return expect([](double x) { return x * x; }); }
    double abs_moment(double p = 1.0) const {
        return expect([p](double x) { return std::pow(std::abs(x), p); });
    }
    double variance() const {
        const double m = mean();
        return expect([m](double x) { return (x - m) * (x - m); });
    }

    DiscreteMeasure scaled(double c) const {
        std::vector<Atom> out;
        out.reserve(atoms_.size());
        for (const auto& a : atoms_) out.push_back({c * a.point, a.weight});
        return DiscreteMeasure(std::move(out));
    }

    double sample(Engine& rng) const { return quantile(uniform_open01(rng)); }

    friend bool operator==(const DiscreteMeasure& a, const DiscreteMeasure& b) { return a.atoms_ == b.atoms_; }

private:
    std::vector<Atom> atoms_;
    std::vector<double> cumulative_;
};

inline double quantile(const DiscreteMeasure& nu, double u) { return nu.quantile(u); }

struct TruncatedMoments {
    double mass = 0.0;
    double first = 0.0;
    double second = 0.0;
};

// Integrals of 1, x, x^2 over the open window |x| < t.
inline TruncatedMoments truncated_moments(const DiscreteMeasure& nu, double t) {
    TruncatedMoments m;
    for (const auto& a : nu.atoms()) {
        if (std::abs(a.point) < t) {
            m.mass += a.weight;
            m.first += a.weight * a.point;
            m.second += a.weight * a.point * a.point;
        }
    }
    return m;
}

inline double tail_mass(const DiscreteMeasure& nu, double t) {
    double s = 0.0;
    for (const auto& a : nu.atoms())
        if (std::abs(a.point) >= t) s += a.weight;
    return s;
}

struct CenteredCheck {
    double mean = 0.0;
    double second_moment = 0.0;
    bool is_in_S = false;
};

inline CenteredCheck centered_check(const DiscreteMeasure& nu, double tol = kCenteringTolerance) {
    const double m = nu.mean();
    return {m, nu.second_moment(), std::abs(m) <= tol};
}

// (int_0^1 (F_nu^{-1}(u) - F_lam^{-1}(u))^2 du)^{1/2}. Both quantile functions
// are step functions, so the integral is an exact sum over the merged grid of
// their jump levels: walk both atom lists and consume the smaller remaining mass.
inline double d_metric_squared(const DiscreteMeasure& nu, const DiscreteMeasure& lam) {
    const auto& a = nu.atoms();
    const auto& b = lam.atoms();
    std::size_t i = 0, j = 0;
    double ra = a[0].weight, rb = b[0].weight;
    double acc = 0.0;
    while (i < a.size() && j < b.size()) {
        const double m = std::min(ra, rb);
        const double diff = a[i].point - b[j].point;
        acc += m * diff * diff;
        ra -= m;
        rb -= m;
        if (ra <= 0.0 && ++i < a.size()) ra = a[i].weight;
        if (rb <= 0.0 && ++j < b.size()) rb = b[j].weight;
    }
    return acc;
}

inline double d_metric(const DiscreteMeasure& nu, const DiscreteMeasure& lam) {
    return std::sqrt(d_metric_squared(nu, lam));
}

// sup_x |F_nu(x) - F_lam(x)|.
inline double ks_distance(const DiscreteMeasure& nu, const DiscreteMeasure& lam) {
    double d = 0.0;
    for (const auto& at : nu.atoms()) d = std::max(d, std::abs(nu.cdf(at.point) - lam.cdf(at.point)));
    for (const auto& at : lam.atoms()) d = std::max(d, std::abs(nu.cdf(at.point) - lam.cdf(at.point)));
    return d;
}

namespace detail {

// Mass of `from` that cannot be routed to `to` when an atom x may only send to
// atoms y with |x - y| <= level. The bipartite graph is an interval graph whose
// windows move monotonically to the right, so filling the leftmost open
// capacity first yields a maximum flow.
inline double unrouted_mass(const std::vector<Atom>& from, const std::vector<Atom>& to, double level) {
    std::vector<double> cap(to.size());
    for (std::size_t j = 0; j < to.size(); ++j) cap[j] = to[j].weight;
    std::size_t first = 0;
    double unrouted = 0.0;
    for (const auto& x : from) {
        while (first < to.size() && to[first].point < x.point && std::abs(x.point - to[first].point) > level)
            ++first;
        double supply = x.weight;
        for (std::size_t j = first; j < to.size() && supply > 0.0; ++j) {
            if (std::abs(x.point - to[j].point) > level) {
                if (to[j].point > x.point) break;
                continue;
            }
            const double take = std::min(supply, cap[j]);
            supply -= take;
            cap[j] -= take;
        }
        unrouted += supply;
    }
    return unrouted;
}

}  // namespace detail

// Exact Prohorov distance between finite-support measures.
//
// For eps in (L_k, L_{k+1}], where L_0 = 0 < L_1 < ... are the distinct pairwise
// support distances, the open eps-enlargements connect exactly the pairs at
// distance <= L_k. By Strassen's theorem the defining inequalities hold iff the
// unroutable mass D_k of the transport network at that level is <= eps, so the
// first level with D_k <= L_{k+1} gives pi = max(L_k, D_k). D_k is
// nonincreasing, which makes the level search a binary search.
inline double prohorov(const DiscreteMeasure& nu, const DiscreteMeasure& lam) {
    std::vector<double> levels{0.0};
    for (const auto& x : nu.atoms())
        for (const auto& y : lam.atoms()) levels.push_back(std::abs(x.point - y.point));
    std::sort(levels.begin(), levels.end());
    levels.erase(std::unique(levels.begin(), levels.end()), levels.end());

    auto deficit = [&](std::size_t k) {
        return std::max(detail::unrouted_mass(nu.atoms(), lam.atoms(), levels[k]),
                        detail::unrouted_mass(lam.atoms(), nu.atoms(), levels[k]));
    };
    auto next_level = [&](std::size_t k) {
        return k + 1 < levels.size() ? levels[k + 1] : std::numeric_limits<double>::infinity();
    };

    std::size_t lo = 0, hi = levels.size() - 1;
    while (lo < hi) {
        const std::size_t mid = lo + (hi - lo) / 2;
        if (deficit(mid) <= next_level(mid))
            hi = mid;
        else
            lo = mid + 1;
    }
    return std::min(1.0, std::max(levels[lo], deficit(lo)));
}

// Law of xi - eta for independent xi, eta ~ nu.
inline DiscreteMeasure symmetrize(const DiscreteMeasure& nu) {
    std::vector<Atom> out;
    out.reserve(nu.size() * nu.size());
    for (const auto& x : nu.atoms())
        for (const auto& y : nu.atoms()) out.push_back({x.point - y.point, x.weight * y.weight});
    return DiscreteMeasure(std::move(out));
}

// Sum of n i.i.d. draws from nu, sampled exactly through the multinomial
// occupation counts of the atoms (conditional binomials), O(size) per call.
inline double sample_iid_sum(const DiscreteMeasure& nu, std::size_t n, Engine& rng) {
    const auto& atoms = nu.atoms();
    double sum = 0.0;
    double remaining_mass = 1.0;
    auto remaining = static_cast<long long>(n);
    for (std::size_t i = 0; i < atoms.size() && remaining > 0; ++i) {
        long long count;
        if (i + 1 == atoms.size()) {
            count = remaining;
        } else {
            const double prob = std::clamp(atoms[i].weight / remaining_mass, 0.0, 1.0);
            count = std::binomial_distribution<long long>(remaining, prob)(rng);
        }
        sum += static_cast<double>(count) * atoms[i].point;
        remaining -= count;
        remaining_mass -= atoms[i].weight;
    }
    return sum;
}

}  // namespace kpl
