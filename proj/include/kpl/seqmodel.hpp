#pragma once

// Desk-scale determining sequences and diagnostics of their distributional
// convergence towards the limit exchangeable sequence.
//
// Kinds:
//   exchangeable  X_n = Y_n, conditionally i.i.d. from mu(omega)
//   perturbed     X_n = Y_n + delta_n W_n, W_n i.i.d. uniform with unit variance
//   custom_table  rows of a stored sample matrix replayed in order

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "kpl/measures.hpp"
#include "kpl/mixtures.hpp"
#include "kpl/random.hpp"

namespace kpl {

enum class ModelKind { exchangeable, perturbed, custom_table };

inline std::string to_string(ModelKind k) {
    switch (k) {
        case ModelKind::exchangeable: return "exchangeable";
        case ModelKind::perturbed: return "perturbed";
        case ModelKind::custom_table: return "custom-table";
    }
    return "unknown";
}

// delta_n = scale * n^{-exponent}; scale 0 is the zero schedule.
struct PowerDecay {
    double scale = 0.0;
    double exponent = 1.0;

    double operator()(std::size_t n) const {
        if (scale == 0.0) return 0.0;
        return scale * std::pow(static_cast<double>(n), -exponent);
    }
};

using SampleMatrix = std::vector<std::vector<double>>;

struct SampleTable {
    SampleMatrix rows;
    std::vector<std::size_t> labels;  // hidden component per row; empty if unknown
};

inline constexpr std::size_t kUnknownComponent = std::numeric_limits<std::size_t>::max();

struct PathState {
    std::size_t component = kUnknownComponent;
    std::size_t row = 0;
};

class SequenceModel {
public:
    static SequenceModel exchangeable(RandomMeasure mu) { return SequenceModel(ModelKind::exchangeable, std::move(mu), {}); }

    static SequenceModel perturbed(RandomMeasure mu, PowerDecay decay) {
        if (decay.scale < 0.0 || (decay.scale > 0.0 && !(decay.exponent > 0.0)))
            throw std::invalid_argument("decay must be nonincreasing and tend to zero");
        return SequenceModel(ModelKind::perturbed, std::move(mu), decay);
    }

    // mu describes the hidden components that labels refer to.
    static SequenceModel from_table(SampleTable table, RandomMeasure mu) {
        if (table.rows.empty()) throw std::invalid_argument("sample table is empty");
        const std::size_t width = table.rows.front().size();
        for (const auto& r : table.rows)
            if (r.size() != width) throw std::invalid_argument("sample table is not rectangular");
        if (!table.labels.empty() && table.labels.size() != table.rows.size())
            throw std::invalid_argument("sample table labels do not match its rows");
        SequenceModel m(ModelKind::custom_table, std::move(mu), {});
        m.table_ = std::move(table);
        return m;
    }

    ModelKind kind() const { return kind_; }
    const RandomMeasure& mu() const { return mu_; }
    const PowerDecay& decay() const { return decay_; }
    double delta(std::size_t n) const { return kind_ == ModelKind::perturbed ? decay_(n) : 0.0; }

    PathState start_path(Engine& rng, std::size_t replicate) const {
        if (kind_ != ModelKind::custom_table) return {mu_.draw_component(rng), replicate};
        if (replicate >= table_->rows.size()) throw std::out_of_range("sample table exhausted");
        return {table_->labels.empty() ? kUnknownComponent : table_->labels[replicate], replicate};
    }

    struct Draw {
        double x;     // X_n
        double core;  // its exchangeable part Y_n (equal to x for table rows)
    };

    // X_n for n >= 1. Given the component, coordinates are independent, so
    // values at distinct indices may be drawn in any order.
    Draw value_at(const PathState& s, std::size_t n, Engine& rng) const {
        if (n == 0) throw std::out_of_range("sequence indices start at 1");
        if (kind_ == ModelKind::custom_table) {
            const auto& row = table_->rows[s.row];
            if (n > row.size()) throw std::out_of_range("sample table has too few columns");
            return {row[n - 1], row[n - 1]};
        }
        const double y = mu_.law(s.component).sample(rng);
        if (kind_ == ModelKind::exchangeable || decay_(n) == 0.0) return {y, y};
        const double w = std::uniform_real_distribution<double>(-kNoiseHalfWidth, kNoiseHalfWidth)(rng);
        return {y + decay_(n) * w, y};
    }

    // A fresh draw from the path's limit law mu(omega).
    double limit_draw(const PathState& s, Engine& rng) const {
        if (s.component == kUnknownComponent)
            throw std::logic_error("path component unknown; exchangeable draws need labelled tables");
        return mu_.law(s.component).sample(rng);
    }

    std::size_t max_index() const {
        return kind_ == ModelKind::custom_table ? table_->rows.front().size() : std::numeric_limits<std::size_t>::max();
    }

    static constexpr double kNoiseHalfWidth = 1.7320508075688772;  // sqrt(3)

private:
    SequenceModel(ModelKind k, RandomMeasure mu, PowerDecay d) : kind_(k), mu_(std::move(mu)), decay_(d) {}

    ModelKind kind_;
    RandomMeasure mu_;
    PowerDecay decay_;
    std::optional<SampleTable> table_;
};

struct Path {
    std::size_t hidden_component = kUnknownComponent;
    std::vector<double> values;
};

inline Path draw_path(const SequenceModel& model, std::size_t n_max, Engine& rng, std::size_t replicate = 0) {
    if (n_max == 0) throw std::invalid_argument("n_max must be >= 1");
    const auto state = model.start_path(rng, replicate);
    Path p{state.component, std::vector<double>(n_max)};
    for (std::size_t n = 1; n <= n_max; ++n) p.values[n - 1] = model.value_at(state, n, rng).x;
    return p;
}

// n_paths rows of X_1..X_{n_max} plus the withheld component labels.
inline SampleTable simulate_matrix(const SequenceModel& model, std::size_t n_paths, std::size_t n_max,
                                   const Source& src) {
    SampleTable t;
    t.rows.resize(n_paths);
    t.labels.resize(n_paths);
    run_batches<int>(n_paths, src, [&](std::size_t, std::size_t begin, std::size_t end, Engine& rng) {
        for (std::size_t r = begin; r < end; ++r) {
            auto p = draw_path(model, n_max, rng, r);
            t.rows[r] = std::move(p.values);
            t.labels[r] = p.hidden_component;
        }
        return 0;
    });
    return t;
}

// ---- limit-measure estimation --------------------------------------------

using RowStatistic = std::function<double(std::span<const double>)>;
using CellPredicate = std::function<bool(std::span<const double>)>;

// Mean of x^2 over the first m coordinates.
inline RowStatistic mean_square_statistic(std::size_t m) {
    return [m](std::span<const double> row) {
        const std::size_t k = std::min(m, row.size());
        double s = 0.0;
        for (std::size_t i = 0; i < k; ++i) s += row[i] * row[i];
        return k ? s / static_cast<double>(k) : 0.0;
    };
}

// Sample variance (denominator m) over the first m coordinates.
inline RowStatistic variance_statistic(std::size_t m) {
    return [m](std::span<const double> row) {
        const std::size_t k = std::min(m, row.size());
        Moments mo;
        for (std::size_t i = 0; i < k; ++i) mo.add(row[i]);
        return k ? mo.m2 / static_cast<double>(k) : 0.0;
    };
}

// Cells (-inf, c_1], (c_1, c_2], ..., (c_k, inf) of a row statistic.
inline std::vector<CellPredicate> threshold_partition(RowStatistic stat, std::vector<double> cuts) {
    std::sort(cuts.begin(), cuts.end());
    std::vector<CellPredicate> cells;
    for (std::size_t i = 0; i <= cuts.size(); ++i) {
        const double lo = i == 0 ? -std::numeric_limits<double>::infinity() : cuts[i - 1];
        const double hi = i == cuts.size() ? std::numeric_limits<double>::infinity() : cuts[i];
        cells.push_back([stat, lo, hi](std::span<const double> row) {
            const double v = stat(row);
            return v > lo && v <= hi;
        });
    }
    return cells;
}

// Equal-frequency bins of the pilot statistic over the data.
inline std::vector<CellPredicate> quantile_partition(const RowStatistic& stat, std::size_t n_bins,
                                                     const SampleMatrix& paths) {
    if (n_bins == 0 || paths.empty()) throw std::invalid_argument("quantile partition needs bins and data");
    std::vector<double> v;
    for (const auto& r : paths) v.push_back(stat(r));
    std::sort(v.begin(), v.end());
    std::vector<double> cuts;
    for (std::size_t b = 1; b < n_bins; ++b) cuts.push_back(v[b * v.size() / n_bins - 1]);
    cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());
    return threshold_partition(stat, std::move(cuts));
}

inline double quantize(double x, double grid) { return grid > 0.0 ? grid * std::round(x / grid) : x; }

inline DiscreteMeasure empirical_measure(std::span<const double> values) {
    if (values.empty()) throw std::invalid_argument("empirical measure of no data");
    std::map<double, std::size_t> counts;
    for (double x : values) ++counts[x];
    std::vector<Atom> atoms;
    for (const auto& [x, c] : counts) atoms.push_back({x, static_cast<double>(c) / static_cast<double>(values.size())});
    return DiscreteMeasure(std::move(atoms));
}

struct EstimatedRandomMeasure {
    RandomMeasure components;
    std::vector<double> ks_per_atom;     // KS between halves of each cell's tail data
    std::vector<std::size_t> cell_index;  // declared cell of each component
    std::vector<std::string> warnings;
};

// Columns are 1-based: tail = [tail_first, tail_last].
inline EstimatedRandomMeasure estimate_limit_measure(const SampleMatrix& paths, const std::vector<CellPredicate>& cells,
                                                     std::size_t tail_first, std::size_t tail_last, double grid) {
    if (paths.empty()) throw std::invalid_argument("no paths to estimate from");
    if (cells.empty()) throw std::invalid_argument("partition has no cells");
    const std::size_t width = paths.front().size();
    for (const auto& r : paths)
        if (r.size() != width) throw std::invalid_argument("sample matrix is not rectangular");
    if (tail_first == 0 || tail_first > tail_last || tail_last > width)
        throw std::invalid_argument("tail column range outside the sample matrix");

    std::vector<std::vector<std::size_t>> members(cells.size());
    std::size_t assigned = 0;
    for (std::size_t r = 0; r < paths.size(); ++r) {
        for (std::size_t c = 0; c < cells.size(); ++c) {
            if (cells[c](paths[r])) {
                members[c].push_back(r);
                ++assigned;
                break;
            }
        }
    }

    EstimatedRandomMeasure est{RandomMeasure(DiscreteMeasure::dirac(0.0)), {}, {}, {}};
    if (assigned < paths.size())
        est.warnings.push_back(std::to_string(paths.size() - assigned) + " rows fell in no cell and were ignored");
    std::vector<Component<DiscreteMeasure>> comps;
    auto tail_values = [&](auto first, auto last) {
        std::vector<double> v;
        for (auto it = first; it != last; ++it)
            for (std::size_t n = tail_first; n <= tail_last; ++n) v.push_back(quantize(paths[*it][n - 1], grid));
        return v;
    };
    for (std::size_t c = 0; c < cells.size(); ++c) {
        if (members[c].empty()) {
            est.warnings.push_back("cell " + std::to_string(c) + " is empty; dropped and weights renormalized");
            continue;
        }
        const auto& rows = members[c];
        const auto all = tail_values(rows.begin(), rows.end());
        comps.push_back({static_cast<double>(rows.size()) / static_cast<double>(assigned), empirical_measure(all)});
        est.cell_index.push_back(c);
        const auto half = rows.begin() + static_cast<std::ptrdiff_t>(rows.size() / 2);
        if (rows.size() >= 2) {
            est.ks_per_atom.push_back(ks_distance(empirical_measure(tail_values(rows.begin(), half)),
                                                  empirical_measure(tail_values(half, rows.end()))));
        } else {
            est.ks_per_atom.push_back(1.0);
        }
    }
    if (comps.empty()) throw std::invalid_argument("every partition cell is empty");
    double total = 0.0;
    for (const auto& c : comps) total += c.weight;
    for (auto& c : comps) c.weight /= total;
    est.components = RandomMeasure(std::move(comps));
    return est;
}

// ---- distributional diagnostics -------------------------------------------

inline constexpr std::size_t kDefaultProbes = 200;

// max over random half-spaces {z : theta.z <= c} of the gap between the two
// empirical probabilities. Directions are uniform on the sphere; thresholds are
// uniform over the range of the pooled projections.
inline double halfspace_distance(const SampleMatrix& a, const SampleMatrix& b, std::size_t n_probes, Engine& rng) {
    if (a.empty() || b.empty()) throw std::invalid_argument("half-space distance needs samples");
    const std::size_t k = a.front().size();
    std::normal_distribution<double> g;
    double worst = 0.0;
    std::vector<double> pa(a.size()), pb(b.size());
    for (std::size_t probe = 0; probe < n_probes; ++probe) {
        std::vector<double> theta(k);
        double norm = 0.0;
        for (auto& x : theta) {
            x = g(rng);
            norm += x * x;
        }
        norm = std::sqrt(norm);
        auto project = [&](const std::vector<double>& z) {
            double s = 0.0;
            for (std::size_t i = 0; i < k; ++i) s += theta[i] * z[i] / norm;
            return s;
        };
        double lo = std::numeric_limits<double>::infinity(), hi = -lo;
        for (std::size_t i = 0; i < a.size(); ++i) {
            pa[i] = project(a[i]);
            lo = std::min(lo, pa[i]);
            hi = std::max(hi, pa[i]);
        }
        for (std::size_t i = 0; i < b.size(); ++i) {
            pb[i] = project(b[i]);
            lo = std::min(lo, pb[i]);
            hi = std::max(hi, pb[i]);
        }
        const double c = lo + (hi - lo) * uniform01(rng);
        const auto ca = std::count_if(pa.begin(), pa.end(), [c](double v) { return v <= c; });
        const auto cb = std::count_if(pb.begin(), pb.end(), [c](double v) { return v <= c; });
        worst = std::max(worst, std::abs(static_cast<double>(ca) / static_cast<double>(a.size()) -
                                         static_cast<double>(cb) / static_cast<double>(b.size())));
    }
    return worst;
}

// Distance between the law of (X_{j_1}, ..., X_{j_k}) and that of (Y_1, ..., Y_k).
inline double fdd_check(const SequenceModel& model, const RandomMeasure& mu, const std::vector<std::size_t>& offsets,
                        std::size_t n_paths, const Source& src, std::size_t n_probes = kDefaultProbes) {
    if (offsets.empty() || offsets.size() > 4) throw std::invalid_argument("fdd_check supports 1 <= k <= 4");
    for (std::size_t i = 0; i < offsets.size(); ++i)
        if (offsets[i] == 0 || (i > 0 && offsets[i] <= offsets[i - 1]))
            throw std::invalid_argument("offsets must be increasing positive indices");
    const std::size_t k = offsets.size();
    SampleMatrix xs(n_paths, std::vector<double>(k)), ys(n_paths, std::vector<double>(k));
    const Source sx = src.fork(1), sy = src.fork(2);
    run_batches<int>(n_paths, sx, [&](std::size_t, std::size_t begin, std::size_t end, Engine& rng) {
        for (std::size_t r = begin; r < end; ++r) {
            const auto s = model.start_path(rng, r);
            for (std::size_t i = 0; i < k; ++i) xs[r][i] = model.value_at(s, offsets[i], rng).x;
        }
        return 0;
    });
    run_batches<int>(n_paths, sy, [&](std::size_t, std::size_t begin, std::size_t end, Engine& rng) {
        for (std::size_t r = begin; r < end; ++r) ys[r] = sample_exchangeable(mu, k, rng);
        return 0;
    });
    Engine probe_rng = src.fork(3).engine();
    return halfspace_distance(xs, ys, n_probes, probe_rng);
}

// Distance between the laws of (X_{n_probe}, Z) and (Y, Z), with Z computed from
// the first `early` coordinates of the path and Y drawn from the path's own
// limit law.
inline double joint_convergence_check(const SequenceModel& model, const RowStatistic& statistic, std::size_t early,
                                      std::size_t n_probe, std::size_t n_paths, const Source& src,
                                      std::size_t n_probes = kDefaultProbes) {
    if (n_probe <= early) throw std::invalid_argument("probe index must lie beyond the early coordinates");
    SampleMatrix xs(n_paths, std::vector<double>(2)), ys(n_paths, std::vector<double>(2));
    run_batches<int>(n_paths, src.fork(1), [&](std::size_t, std::size_t begin, std::size_t end, Engine& rng) {
        std::vector<double> head(early);
        for (std::size_t r = begin; r < end; ++r) {
            const auto s = model.start_path(rng, r);
            for (std::size_t n = 1; n <= early; ++n) head[n - 1] = model.value_at(s, n, rng).x;
            const double z = statistic(head);
            xs[r] = {model.value_at(s, n_probe, rng).x, z};
            ys[r] = {model.limit_draw(s, rng), z};
        }
        return 0;
    });
    Engine probe_rng = src.fork(3).engine();
    return halfspace_distance(xs, ys, n_probes, probe_rng);
}

}  // namespace kpl
