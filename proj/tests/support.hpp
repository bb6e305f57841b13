#pragma once

// Test-side generators and brute-force oracles. Nothing here calls the
// library routine it is used to check.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <set>
#include <vector>

#include "kpl/measures.hpp"
#include "kpl/mixtures.hpp"

namespace kpl::testing {

// Points on the 1/8 lattice in [-4, 4], weights multiples of 1/64. Every
// moment, quantile-coupling sum and symmetrized weight of such a measure is
// exactly representable, so identities can be compared with ==.
inline DiscreteMeasure dyadic_measure(std::mt19937_64& rng, int max_atoms = 6) {
    std::uniform_int_distribution<int> n_atoms(1, max_atoms), lattice(-32, 32);
    const int n = n_atoms(rng);
    std::set<int> pts;
    while (static_cast<int>(pts.size()) < n) pts.insert(lattice(rng));
    // split 64 units into n positive parts
    std::vector<int> cuts{0, 64};
    std::set<int> inner;
    std::uniform_int_distribution<int> cut(1, 63);
    while (static_cast<int>(inner.size()) < n - 1) inner.insert(cut(rng));
    cuts.insert(cuts.end(), inner.begin(), inner.end());
    std::sort(cuts.begin(), cuts.end());
    std::vector<Atom> atoms;
    auto it = pts.begin();
    for (int i = 0; i < n; ++i, ++it)
        atoms.push_back({*it / 8.0, (cuts[i + 1] - cuts[i]) / 64.0});
    return DiscreteMeasure(std::move(atoms));
}

// Arbitrary real points and weights, normalized.
inline DiscreteMeasure real_measure(std::mt19937_64& rng, int max_atoms = 6, double spread = 3.0) {
    std::uniform_int_distribution<int> n_atoms(1, max_atoms);
    std::uniform_real_distribution<double> pt(-spread, spread), wt(0.05, 1.0);
    const int n = n_atoms(rng);
    std::vector<Atom> atoms;
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
        atoms.push_back({pt(rng), wt(rng)});
        total += atoms.back().weight;
    }
    for (auto& a : atoms) a.weight /= total;
    double s = 0.0;
    for (std::size_t i = 0; i + 1 < atoms.size(); ++i) s += atoms[i].weight;
    atoms.back().weight = 1.0 - s;
    return DiscreteMeasure(std::move(atoms));
}

// real_measure shifted to mean zero (|mean| at rounding level).
inline DiscreteMeasure centered_measure(std::mt19937_64& rng, int max_atoms = 5, double spread = 3.0) {
    std::uniform_int_distribution<int> n_atoms(2, std::max(2, max_atoms));
    auto nu = real_measure(rng, n_atoms(rng), spread);
    while (nu.size() < 2) nu = real_measure(rng, max_atoms, spread);
    const double m = nu.mean();
    std::vector<Atom> atoms;
    for (const auto& a : nu.atoms()) atoms.push_back({a.point - m, a.weight});
    return DiscreteMeasure(std::move(atoms));
}

inline RandomMeasure random_mixture(std::mt19937_64& rng, int max_components = 4, bool centered = false) {
    std::uniform_int_distribution<int> n_comp(1, max_components);
    std::uniform_real_distribution<double> wt(0.1, 1.0);
    const int n = n_comp(rng);
    std::vector<Component<DiscreteMeasure>> comps;
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
        const double w = wt(rng);
        total += w;
        comps.push_back({w, centered ? centered_measure(rng) : real_measure(rng)});
    }
    for (auto& c : comps) c.weight /= total;
    double s = 0.0;
    for (std::size_t i = 0; i + 1 < comps.size(); ++i) s += comps[i].weight;
    comps.back().weight = 1.0 - s;
    return RandomMeasure(std::move(comps));
}

namespace oracle {

// inf{t : F(t) >= u} by a linear scan over the atom list.
inline double quantile_scan(const DiscreteMeasure& nu, double u) {
    double acc = 0.0;
    for (const auto& a : nu.atoms()) {
        acc += a.weight;
        if (acc >= u) return a.point;
    }
    return nu.atoms().back().point;
}

// L2 distance of quantile functions, integrated cell by cell over the union
// of both sets of jump levels; each cell is evaluated at its midpoint.
inline double d_metric(const DiscreteMeasure& nu, const DiscreteMeasure& lam) {
    std::vector<double> grid{0.0, 1.0};
    double c = 0.0;
    for (const auto& a : nu.atoms()) grid.push_back(c += a.weight);
    c = 0.0;
    for (const auto& a : lam.atoms()) grid.push_back(c += a.weight);
    std::sort(grid.begin(), grid.end());
    double acc = 0.0;
    for (std::size_t i = 0; i + 1 < grid.size(); ++i) {
        const double len = grid[i + 1] - grid[i];
        if (len <= 0.0) continue;
        const double mid = 0.5 * (grid[i] + grid[i + 1]);
        const double diff = quantile_scan(nu, mid) - quantile_scan(lam, mid);
        acc += len * diff * diff;
    }
    return std::sqrt(acc);
}

// Prohorov distance straight from the definition. For each candidate eps and
// every subset A of supp(nu), nu(A) <= lam(A^eps) + eps with A^eps the open
// enlargement (and the same with the roles swapped). The feasible set is an
// up-ray whose endpoint is a pairwise distance or a violation amount, so
// checking every candidate c and c + tiny locates the infimum.
inline bool feasible_one_way(const DiscreteMeasure& nu, const DiscreteMeasure& lam, double eps) {
    const auto& a = nu.atoms();
    const auto& b = lam.atoms();
    const std::size_t n = a.size();
    for (std::uint32_t mask = 1; mask < (1u << n); ++mask) {
        double mass = 0.0, covered = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            if (mask & (1u << i)) mass += a[i].weight;
        for (const auto& y : b) {
            bool near = false;
            for (std::size_t i = 0; i < n && !near; ++i)
                if ((mask & (1u << i)) && std::abs(a[i].point - y.point) < eps) near = true;
            if (near) covered += y.weight;
        }
        if (mass > covered + eps + 1e-12) return false;
    }
    return true;
}

inline bool prohorov_feasible(const DiscreteMeasure& nu, const DiscreteMeasure& lam, double eps) {
    return feasible_one_way(nu, lam, eps) && feasible_one_way(lam, nu, eps);
}

inline double prohorov(const DiscreteMeasure& nu, const DiscreteMeasure& lam) {
    std::vector<double> cand{0.0, 1.0};
    for (const auto& x : nu.atoms())
        for (const auto& y : lam.atoms()) cand.push_back(std::abs(x.point - y.point));
    // violation amounts nu(A) - lam(B) for all subsets
    auto subset_sums = [](const DiscreteMeasure& m) {
        std::vector<double> s;
        const auto& at = m.atoms();
        for (std::uint32_t mask = 0; mask < (1u << at.size()); ++mask) {
            double v = 0.0;
            for (std::size_t i = 0; i < at.size(); ++i)
                if (mask & (1u << i)) v += at[i].weight;
            s.push_back(v);
        }
        return s;
    };
    const auto sa = subset_sums(nu), sb = subset_sums(lam);
    for (double x : sa)
        for (double y : sb)
            if (std::abs(x - y) <= 1.0) cand.push_back(std::abs(x - y));
    std::sort(cand.begin(), cand.end());
    constexpr double tiny = 1e-10;
    for (double c : cand) {
        if (c > 0.0 && prohorov_feasible(nu, lam, c)) return c;
        if (prohorov_feasible(nu, lam, c + tiny)) return c;
    }
    return 1.0;
}

// E|sum_i a_i xi_i + shift|^p for i.i.d. xi ~ law, by enumerating all
// support^k outcomes.
inline double pth_moment(const DiscreteMeasure& law, const std::vector<double>& a, double p, double shift = 0.0) {
    const auto& at = law.atoms();
    double total = 0.0;
    std::vector<std::size_t> idx(a.size(), 0);
    while (true) {
        double s = shift, w = 1.0;
        for (std::size_t i = 0; i < a.size(); ++i) {
            s += a[i] * at[idx[i]].point;
            w *= at[idx[i]].weight;
        }
        total += w * std::pow(std::abs(s), p);
        std::size_t i = 0;
        while (i < idx.size() && ++idx[i] == at.size()) idx[i++] = 0;
        if (i == idx.size()) break;
    }
    return total;
}

inline double psi(const RandomMeasure& mu, const std::vector<double>& a, double p) {
    double m = 0.0;
    for (const auto& c : mu.components()) m += c.weight * pth_moment(c.law, a, p);
    return std::pow(m, 1.0 / p);
}

// ||a1 t + sum_{i>=2} a_i xi_i||_p.
inline double shifted_norm(double t, const DiscreteMeasure& law, const std::vector<double>& a, double p) {
    std::vector<double> rest(a.begin() + 1, a.end());
    if (rest.empty()) return std::abs(a[0] * t);
    return std::pow(pth_moment(law, rest, p, a[0] * t), 1.0 / p);
}

}  // namespace oracle

// Spearman rank correlation (no ties expected).
inline double rank_correlation(const std::vector<double>& x, const std::vector<double>& y) {
    auto ranks = [](const std::vector<double>& v) {
        std::vector<std::size_t> order(v.size());
        for (std::size_t i = 0; i < v.size(); ++i) order[i] = i;
        std::sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return v[i] < v[j]; });
        std::vector<double> r(v.size());
        for (std::size_t i = 0; i < order.size(); ++i) r[order[i]] = static_cast<double>(i);
        return r;
    };
    const auto rx = ranks(x), ry = ranks(y);
    const double n = static_cast<double>(x.size());
    double d2 = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) d2 += (rx[i] - ry[i]) * (rx[i] - ry[i]);
    return 1.0 - 6.0 * d2 / (n * (n * n - 1.0));
}

}  // namespace kpl::testing
