// kpl: experiment runner over the kpl headers.
//
//   kpl <subcommand> [--config PATH] [--seed U64] [--workers N] [--out DIR] [--set key=value]...
//
// Exit codes: 0 success, 2 invalid input, 3 a checked inequality failed.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <limits>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <openssl/evp.h>

#include "CLI11.hpp"
#include "json.hpp"
#include "kpl/concentration.hpp"
#include "kpl/io.hpp"
#include "kpl/measures.hpp"
#include "kpl/mixtures.hpp"
#include "kpl/norms.hpp"
#include "kpl/selection.hpp"
#include "kpl/seqmodel.hpp"

#ifndef KPL_VERSION
#define KPL_VERSION "dev"
#endif

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace kpl;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitInvalid = 2;
constexpr int kExitCheckFailed = 3;

struct ValidationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

const std::vector<std::string> kSubcommands{"metrics", "simulate", "estimate", "mixture", "norms",
                                            "concentration", "select", "verify", "necessity", "clt"};

// ---- config --------------------------------------------------------------

json defaults_for(const std::string& cmd) {
    if (cmd == "metrics") return {{"pairs", json::array()}};
    if (cmd == "mixture")
        return {{"p", {1.0, 1.5}}, {"C", kDefaultLowerConstant}, {"t_grid", {0.5, 1.0, 2.0, 4.0}},
                {"moment_t", {1.0, 2.0, "inf"}}};
    if (cmd == "norms")
        return {{"p", {1.0}}, {"C", kDefaultLowerConstant}, {"n_samples", 20000},
                {"family", {{"k", 4}, {"random", 8}, {"seed", 7}}}};
    if (cmd == "concentration")
        return {{"law_id", "law"},     {"n_grid", {100, 1000, 10000}}, {"t_grid", {0.5, 1.0, 2.0}},
                {"A", kDefaultEsseenConstant}, {"replicates", 100000}, {"scaling_lambda", 1.0}, {"sigmas", 3.0}};
    if (cmd == "simulate") return {{"n_paths", 1000}, {"n_max", 100}};
    if (cmd == "estimate")
        return {{"partition", {{"statistic", "mean_square"}, {"early", 50}, {"cuts", {4.0}}}},
                {"tail", {51, 250}}, {"grid", 0.0}};
    if (cmd == "select")
        return {{"epsilon", 0.2},        {"k_max", 8},    {"p", 1.0}, {"candidate_stride", 1},
                {"max_candidates", 4096}, {"n_samples", 4000},
                {"family", {{"random", 15}, {"seed", 2024}}},
                {"verify", {{"n_samples", 20000}, {"C", kDefaultLowerConstant}}}};
    if (cmd == "verify")
        return {{"epsilon", 0.2}, {"p", 1.0}, {"C", kDefaultLowerConstant}, {"n_samples", 20000},
                {"family", {{"random", 15}, {"seed", 2024}}}};
    if (cmd == "necessity")
        return {{"T", 2.0}, {"N_grid", {4096}}, {"variance_scales", {1, 4, 16, 64}}, {"replicates", 20000},
                {"A", kDefaultEsseenConstant}};
    if (cmd == "clt") return {{"N", 2000}, {"n_reps", 5000}, {"p", 1.0}, {"ks_max", 0.05}};
    return json::object();
}

// Byte offset -> 1-based line number, for line-anchored JSON errors.
std::size_t line_of(const std::string& text, std::size_t byte) {
    return 1 + static_cast<std::size_t>(std::count(text.begin(), text.begin() + std::min(byte, text.size()), '\n'));
}

json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError(path + ": cannot open");
    std::stringstream ss;
    ss << in.rdbuf();
    const std::string text = ss.str();
    try {
        return json::parse(text);
    } catch (const json::parse_error& e) {
        throw ValidationError(path + ":" + std::to_string(line_of(text, e.byte)) + ": " + e.what());
    }
}

void merge_into(json& base, const json& over) {
    for (auto it = over.begin(); it != over.end(); ++it) {
        if (it->is_object() && base.contains(it.key()) && base[it.key()].is_object())
            merge_into(base[it.key()], *it);
        else
            base[it.key()] = *it;
    }
}

// key.sub.sub=value; the value is read as JSON when it parses, else as a string.
void apply_override(json& cfg, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) throw ValidationError("--set expects key=value, got '" + assignment + "'");
    const std::string key = assignment.substr(0, eq), raw = assignment.substr(eq + 1);
    json value;
    try {
        value = json::parse(raw);
    } catch (const json::parse_error&) {
        value = raw;
    }
    json* node = &cfg;
    std::size_t start = 0;
    while (true) {
        const auto dot = key.find('.', start);
        const std::string part = key.substr(start, dot - start);
        if (part.empty()) throw ValidationError("--set key '" + key + "' has an empty component");
        if (dot == std::string::npos) {
            (*node)[part] = value;
            return;
        }
        if (!node->contains(part) || !(*node)[part].is_object()) (*node)[part] = json::object();
        node = &(*node)[part];
        start = dot + 1;
    }
}

std::string sha256_hex(const std::string& data) {
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(data.data(), data.size(), md, &len, EVP_sha256(), nullptr) != 1)
        throw std::runtime_error("SHA-256 failed");
    static const char* hex = "0123456789abcdef";
    std::string out;
    for (unsigned i = 0; i < len; ++i) {
        out += hex[md[i] >> 4];
        out += hex[md[i] & 15];
    }
    return out;
}

// Typed access with messages that name the offending key.
class Config {
public:
    Config(json j, fs::path base) : j_(std::move(j)), base_(std::move(base)) {}

    const json& raw() const { return j_; }

    bool has(const std::string& key) const { return j_.contains(key) && !j_.at(key).is_null(); }

    const json& at(const std::string& key) const {
        if (!has(key)) throw ValidationError("config: missing required key '" + key + "'");
        return j_.at(key);
    }

    double number(const std::string& key) const { return number_of(at(key), key); }

    std::size_t count(const std::string& key) const { return count_of(at(key), key); }

    std::vector<double> numbers(const std::string& key) const {
        const auto& v = at(key);
        if (!v.is_array() || v.empty()) throw ValidationError("config: '" + key + "' must be a nonempty array");
        std::vector<double> out;
        for (const auto& x : v) out.push_back(number_of(x, key));
        return out;
    }

    std::vector<std::size_t> counts(const std::string& key) const {
        const auto& v = at(key);
        if (!v.is_array() || v.empty()) throw ValidationError("config: '" + key + "' must be a nonempty array");
        std::vector<std::size_t> out;
        for (const auto& x : v) out.push_back(count_of(x, key));
        return out;
    }

    std::string path(const std::string& p) const {
        const fs::path f(p);
        return (f.is_absolute() ? f : base_ / f).lexically_normal().string();
    }

    static double number_of(const json& v, const std::string& key) {
        if (v.is_number()) return v.get<double>();
        if (v.is_string()) {
            const auto s = v.get<std::string>();
            if (s == "inf" || s == "infinity") return std::numeric_limits<double>::infinity();
        }
        throw ValidationError("config: '" + key + "' must be a number");
    }

    static std::size_t count_of(const json& v, const std::string& key) {
        if (v.is_number_unsigned()) return v.get<std::size_t>();
        if (v.is_number_integer() && v.get<long long>() >= 0) return static_cast<std::size_t>(v.get<long long>());
        throw ValidationError("config: '" + key + "' must be a nonnegative integer");
    }

private:
    json j_;
    fs::path base_;
};

// Law spec: a file path, {"rademacher": c}, {"dirac": c} or {"atoms": [[x, w], ...]}.
DiscreteMeasure law_from(const json& spec, const Config& cfg, const std::string& key) {
    if (spec.is_string()) return load_measure(cfg.path(spec.get<std::string>()));
    if (spec.is_object()) {
        if (spec.contains("rademacher")) return DiscreteMeasure::rademacher(Config::number_of(spec["rademacher"], key));
        if (spec.contains("dirac")) return DiscreteMeasure::dirac(Config::number_of(spec["dirac"], key));
        if (spec.contains("atoms") && spec["atoms"].is_array()) {
            std::vector<Atom> atoms;
            for (const auto& a : spec["atoms"]) {
                if (!a.is_array() || a.size() != 2) throw ValidationError("config: '" + key + "' atoms must be [x, w] pairs");
                atoms.push_back({Config::number_of(a[0], key), Config::number_of(a[1], key)});
            }
            try {
                return DiscreteMeasure(std::move(atoms));
            } catch (const std::invalid_argument& e) {
                throw ValidationError("config: '" + key + "': " + e.what());
            }
        }
    }
    throw ValidationError("config: '" + key + "' must be a measure file or a law object");
}

// Mixture spec: a random-measure file path, a law spec (deterministic), or
// {"components": [{"weight": w, "law": law-spec}, ...]}.
RandomMeasure mixture_from(const json& spec, const Config& cfg, const std::string& key) {
    if (spec.is_string()) {
        const auto p = cfg.path(spec.get<std::string>());
        std::ifstream in(p);
        if (!in) throw ValidationError(p + ": cannot open");
        std::string first;
        while (std::getline(in, first) && (first.empty() || first.starts_with("##"))) {
        }
        if (first.find("discrete-measure") != std::string::npos) return RandomMeasure(load_measure(p));
        return load_random_measure(p);
    }
    if (spec.is_object() && spec.contains("components")) {
        std::vector<Component<DiscreteMeasure>> comps;
        for (const auto& c : spec["components"]) {
            if (!c.is_object() || !c.contains("weight") || !c.contains("law"))
                throw ValidationError("config: '" + key + "' components need 'weight' and 'law'");
            comps.push_back({Config::number_of(c["weight"], key), law_from(c["law"], cfg, key)});
        }
        try {
            return RandomMeasure(std::move(comps));
        } catch (const std::invalid_argument& e) {
            throw ValidationError("config: '" + key + "': " + e.what());
        }
    }
    return RandomMeasure(law_from(spec, cfg, key));
}

SampleTable table_from(const Config& cfg, const json& m) {
    if (!m.contains("table")) throw ValidationError("config: custom-table model needs 'table'");
    SampleTable t;
    t.rows = load_sample_matrix(cfg.path(m["table"].get<std::string>()));
    if (m.contains("labels")) {
        const auto lab = load_sample_matrix(cfg.path(m["labels"].get<std::string>()));
        for (const auto& r : lab) t.labels.push_back(static_cast<std::size_t>(r.at(0)));
    }
    return t;
}

SequenceModel model_from(const Config& cfg) {
    const auto& m = cfg.at("model");
    if (!m.is_object() || !m.contains("kind") || !m.contains("mu"))
        throw ValidationError("config: 'model' needs 'kind' and 'mu'");
    const auto kind = m["kind"].get<std::string>();
    auto mu = mixture_from(m["mu"], cfg, "model.mu");
    if (kind == "exchangeable") return SequenceModel::exchangeable(std::move(mu));
    if (kind == "perturbed") {
        PowerDecay d{1.0, 1.0};
        if (m.contains("decay")) {
            d.scale = Config::number_of(m["decay"].value("scale", json(1.0)), "model.decay.scale");
            d.exponent = Config::number_of(m["decay"].value("exponent", json(1.0)), "model.decay.exponent");
        }
        try {
            return SequenceModel::perturbed(std::move(mu), d);
        } catch (const std::invalid_argument& e) {
            throw ValidationError(std::string("config: 'model.decay': ") + e.what());
        }
    }
    if (kind == "custom-table") return SequenceModel::from_table(table_from(cfg, m), std::move(mu));
    throw ValidationError("config: model.kind must be exchangeable, perturbed or custom-table");
}

std::vector<CoefficientVector> family_from(const Config& cfg, std::size_t default_k) {
    const auto& f = cfg.at("family");
    std::vector<CoefficientVector> fam;
    if (f.contains("vectors")) {
        for (const auto& v : f["vectors"]) {
            CoefficientVector a;
            for (const auto& x : v) a.entries.push_back(Config::number_of(x, "family.vectors"));
            if (a.size() == 0 || a.is_zero()) throw ValidationError("config: family vectors must be nonzero");
            fam.push_back(std::move(a));
        }
    } else {
        const std::size_t k = f.contains("k") ? Config::count_of(f["k"], "family.k") : default_k;
        if (k == 0) throw ValidationError("config: family.k must be positive");
        fam = standard_test_family(k, f.contains("random") ? Config::count_of(f["random"], "family.random") : 0,
                                   f.contains("seed") ? Config::count_of(f["seed"], "family.seed") : 0);
    }
    if (fam.empty()) throw ValidationError("config: test family is empty");
    return fam;
}

// ---- outputs ---------------------------------------------------------------

class Run {
public:
    Run(std::string cmd, Config cfg, std::uint64_t seed, unsigned workers, fs::path out)
        : cmd_(std::move(cmd)), cfg_(std::move(cfg)), seed_(seed), workers_(workers), out_(std::move(out)) {}

    const Config& cfg() const { return cfg_; }
    std::uint64_t seed() const { return seed_; }
    Source source(std::uint64_t task = 0) const { return Source{seed_, task, workers_}; }
    std::string seed_str() const { return std::to_string(seed_); }

    std::ofstream open(const std::string& name) {
        fs::create_directories(out_);
        const auto p = out_ / name;
        std::ofstream f(p, std::ios::binary);
        if (!f) throw std::runtime_error(p.string() + ": cannot write");
        paths_.push_back(p.string());
        return f;
    }

    void csv(const std::string& name, const std::vector<std::string>& header,
             const std::vector<std::vector<std::string>>& rows) {
        auto f = open(name);
        auto line = [&](const std::vector<std::string>& cells) {
            for (std::size_t i = 0; i < cells.size(); ++i) f << (i ? "," : "") << cells[i];
            f << '\n';
        };
        line(header);
        for (const auto& r : rows) line(r);
    }

    void json_file(const std::string& name, const json& j) { open(name) << j.dump(2) << '\n'; }

    void failure(const std::string& what) {
        failures_.push_back(what);
    }

    int finish() {
        const std::string resolved = cfg_.raw().dump();
        json_file("config.resolved.json", cfg_.raw());
        json manifest = {{"subcommand", cmd_},
                         {"config_digest", "sha256:" + sha256_hex(resolved)},
                         {"seed", seed_},
                         {"worker_count", workers_},
                         {"artifact_version", KPL_VERSION},
                         {"output_paths", paths_}};
        std::ofstream m(out_ / "manifest.json", std::ios::binary);
        m << manifest.dump(2) << '\n';
        for (const auto& p : paths_) std::cout << p << '\n';
        std::cout << (out_ / "manifest.json").string() << '\n';
        if (failures_.empty()) return kExitOk;
        for (const auto& f : failures_) std::cerr << "FAIL " << f << '\n';
        return kExitCheckFailed;
    }

private:
    std::string cmd_;
    Config cfg_;
    std::uint64_t seed_;
    unsigned workers_;
    fs::path out_;
    std::vector<std::string> paths_;
    std::vector<std::string> failures_;
};

std::string fd(double x) { return format_double(x); }
std::string fb(bool b) { return b ? "true" : "false"; }
std::string fz(std::size_t n) { return std::to_string(n); }

std::string csv_quote(const std::string& s) {
    std::string out = "\"";
    for (char ch : s) out += ch == '"' ? std::string("\"\"") : std::string(1, ch);
    return out + "\"";
}

std::string label_of(const json& spec) { return spec.is_string() ? spec.get<std::string>() : spec.dump(); }

// ---- subcommands -----------------------------------------------------------

int cmd_metrics(Run& run) {
    const auto& pairs = run.cfg().at("pairs");
    if (!pairs.is_array() || pairs.empty()) throw ValidationError("config: 'pairs' must list [nu, lambda] entries");
    std::vector<std::vector<std::string>> rows;
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        const auto& pr = pairs[i];
        if (!pr.is_array() || pr.size() != 2) throw ValidationError("config: 'pairs' entries must be [nu, lambda]");
        const auto nu = law_from(pr[0], run.cfg(), "pairs"), lam = law_from(pr[1], run.cfg(), "pairs");
        rows.push_back({fz(i), csv_quote(label_of(pr[0])), csv_quote(label_of(pr[1])), fd(prohorov(nu, lam)),
                        fd(d_metric(nu, lam)), fd(ks_distance(nu, lam)), fb(centered_check(nu).is_in_S),
                        fb(centered_check(lam).is_in_S)});
    }
    run.csv("metrics.csv", {"pair_id", "nu", "lambda", "prohorov", "d", "ks", "nu_centered", "lambda_centered"}, rows);
    return run.finish();
}

int cmd_mixture(Run& run) {
    const auto& c = run.cfg();
    const auto mu = mixture_from(c.at("mu"), c, "mu");
    std::vector<std::vector<std::string>> consts;
    for (double p : c.numbers("p")) {
        const auto r = norm_constants(mu, p, c.number("C"));
        consts.push_back({fd(p), fd(r.A_const), fd(r.B_const), fd(r.C_const), fd(r.kp_value), fb(r.degenerate)});
    }
    run.csv("constants.csv", {"p", "A", "B", "C", "kp_value", "degenerate"}, consts);

    const auto env = envelopes(mu, c.numbers("t_grid"));
    std::vector<std::vector<std::string>> erows;
    for (std::size_t i = 0; i < env.t_grid.size(); ++i) erows.push_back({fd(env.t_grid[i]), fd(env.K_t[i]), fd(env.eps_t[i])});
    run.csv("envelopes.csv", {"t", "K_t", "eps_t"}, erows);

    std::vector<std::vector<std::string>> mrows;
    for (double t : c.numbers("moment_t")) {
        const auto r = moment_consistency_check(mu, t);
        const bool ok = std::abs(r.lhs - r.rhs) <= 1e-12;
        if (!ok) run.failure("moment consistency at t=" + fd(t) + ": " + fd(r.lhs) + " vs " + fd(r.rhs));
        mrows.push_back({fd(t), fd(r.lhs), fd(r.rhs), fb(ok)});
    }
    run.csv("moment_consistency.csv", {"t", "lhs", "rhs", "equal"}, mrows);
    return run.finish();
}

int cmd_norms(Run& run) {
    const auto& c = run.cfg();
    const auto mu = mixture_from(c.at("mu"), c, "mu");
    const auto fam = family_from(c, 4);
    const std::size_t n = c.count("n_samples");
    std::vector<std::vector<std::string>> rows;
    const std::string header_seed = run.seed_str();
    std::size_t task = 0;
    for (double p : c.numbers("p")) {
        const auto rep = check_two_sided(mu, p, c.number("C"), fam, n, run.source(task++));
        if (rep.skipped) throw ValidationError("random measure is degenerate (all mass at 0); bounds skipped");
        for (const auto& r : rep.rows) {
            if (!r.holds) run.failure("two_sided a_id=" + fz(r.a_id) + " p=" + fd(p) + " psi=" + fd(r.psi.value));
            rows.push_back({"two_sided", fz(r.a_id), fd(p), fd(r.psi.value), fd(r.psi.std_error), fz(r.psi.n_samples),
                            fd(r.bound_lo), fd(r.bound_hi), fd(r.margin), header_seed});
        }
    }
    // optional equicontinuity pairs: [{"nu": ..., "lambda": ..., "t": 0.5, "a": [...]}, ...]
    if (c.has("equicontinuity")) {
        std::size_t id = 0;
        for (const auto& e : c.at("equicontinuity")) {
            const auto nu = law_from(e.at("nu"), c, "equicontinuity.nu");
            const auto lam = law_from(e.at("lambda"), c, "equicontinuity.lambda");
            CoefficientVector a;
            for (const auto& x : e.at("a")) a.entries.push_back(Config::number_of(x, "equicontinuity.a"));
            const double t = Config::number_of(e.value("t", json(0.0)), "equicontinuity.t");
            for (double p : c.numbers("p")) {
                const auto r = check_equicontinuity(nu, lam, t, a, p, n, run.source(task++));
                if (!r.holds) run.failure("equicontinuity pair=" + fz(id) + " p=" + fd(p) + " lhs=" + fd(r.lhs));
                rows.push_back({"equicontinuity", fz(id), fd(p), fd(r.lhs), fd(r.std_error), fz(n), "0",
                                fd(r.rhs_bound), fd(r.rhs_bound - r.lhs), header_seed});
            }
            ++id;
        }
    }
    run.csv("norms.csv", {"op", "a_id", "p", "value", "std_error", "n_samples", "bound_lo", "bound_hi", "margin", "seed"},
            rows);
    return run.finish();
}

int cmd_concentration(Run& run) {
    const auto& c = run.cfg();
    const auto law = law_from(c.at("law"), c, "law");
    const auto id = c.at("law_id").get<std::string>();
    const double sigmas = c.number("sigmas");
    const auto study = concentration_study(id, law, c.counts("n_grid"), c.numbers("t_grid"), c.number("A"),
                                           c.count("replicates"), run.source(), c.number("scaling_lambda"));
    std::vector<std::vector<std::string>> rows, scaling;
    for (const auto& r : study.rows) {
        if (!r.consistent(sigmas))
            run.failure("esseen n=" + fz(r.report.n) + " t=" + fd(r.report.t) + " empirical=" +
                        fd(r.report.empirical_prob) + " bound=" + fd(r.report.esseen_value));
        rows.push_back({r.law_id, fz(r.report.n), fd(r.report.t), fd(r.lambda), fd(r.report.A),
                        fd(r.report.empirical_prob), fd(r.report.esseen_value), fd(r.report.bracket),
                        fb(r.report.mass_ok), fb(r.report.valid()), run.seed_str(), fd(r.empirical_se),
                        fd(r.concentration), fz(r.replicates)});
    }
    run.csv("concentration.csv",
            {"law_id", "n", "t", "lambda", "A", "empirical", "esseen", "bracket", "mass_ok", "valid", "seed",
             "empirical_se", "concentration_2t", "replicates"},
            rows);
    for (const auto& s : study.scaling)
        scaling.push_back({s.law_id, fz(s.n), fd(s.lambda), fd(s.concentration), fd(s.scaled),
                           fz(c.count("replicates")), run.seed_str()});
    run.csv("scaling.csv", {"law_id", "n", "lambda", "concentration", "sqrt_n_concentration", "replicates", "seed"},
            scaling);
    return run.finish();
}

int cmd_simulate(Run& run) {
    const auto& c = run.cfg();
    const auto model = model_from(c);
    const auto t = simulate_matrix(model, c.count("n_paths"), c.count("n_max"), run.source());
    {
        auto f = run.open("paths.csv");
        write_sample_matrix(f, t.rows);
    }
    std::vector<std::vector<std::string>> labels;
    for (auto l : t.labels) labels.push_back({l == kUnknownComponent ? "nan" : fz(l)});
    run.csv("labels.csv", {"n1"}, labels);
    return run.finish();
}

int cmd_estimate(Run& run) {
    const auto& c = run.cfg();
    SampleMatrix paths;
    if (c.has("paths")) {
        paths = load_sample_matrix(c.path(c.at("paths").get<std::string>()));
    } else {
        const auto model = model_from(c);
        paths = simulate_matrix(model, c.count("n_paths"), c.count("n_max"), run.source()).rows;
    }
    const auto& part = c.at("partition");
    const auto stat_name = part.value("statistic", std::string("mean_square"));
    const std::size_t early = Config::count_of(part.value("early", json(50)), "partition.early");
    RowStatistic stat;
    if (stat_name == "mean_square")
        stat = mean_square_statistic(early);
    else if (stat_name == "variance")
        stat = variance_statistic(early);
    else
        throw ValidationError("config: partition.statistic must be mean_square or variance");
    std::vector<CellPredicate> cells;
    if (part.contains("bins")) {
        cells = quantile_partition(stat, Config::count_of(part["bins"], "partition.bins"), paths);
    } else {
        std::vector<double> cuts;
        for (const auto& x : part.at("cuts")) cuts.push_back(Config::number_of(x, "partition.cuts"));
        cells = threshold_partition(stat, cuts);
    }
    const auto tail = c.counts("tail");
    if (tail.size() != 2) throw ValidationError("config: 'tail' must be [first, last]");
    const auto est = estimate_limit_measure(paths, cells, tail[0], tail[1], c.number("grid"));
    for (const auto& w : est.warnings) std::cerr << "warning: " << w << '\n';
    std::vector<std::vector<std::string>> rows;
    for (std::size_t j = 0; j < est.components.size(); ++j) {
        const auto& law = est.components.law(j);
        rows.push_back({fz(j), fz(est.cell_index[j]), fd(est.components.weight(j)), fd(law.mean()),
                        fd(law.second_moment()), fz(law.size()), fd(est.ks_per_atom[j])});
    }
    run.csv("estimate.csv", {"component", "cell", "weight", "mean", "second_moment", "support_size", "ks_halves"}, rows);
    {
        auto f = run.open("estimated_mu.txt");
        write_random_measure(f, est.components);
    }
    return run.finish();
}

std::vector<std::vector<std::string>> verification_rows(const VerificationReport& rep, Run& run) {
    std::vector<std::vector<std::string>> rows;
    for (const auto& r : rep.rows) {
        if (!r.holds_equiv || !r.holds_l2)
            run.failure("verify a_id=" + fz(r.a_id) + " norm=" + fd(r.x_norm.value) + " psi=" + fd(r.psi.value));
        rows.push_back({fz(r.a_id), fd(r.x_norm.value), fd(r.x_norm.std_error), fd(r.psi.value), fd(r.psi.std_error),
                        fz(r.x_norm.n_samples), fd(r.equiv_lo), fd(r.equiv_hi), fd(r.l2_lo), fd(r.l2_hi), fd(r.margin),
                        fb(r.holds_equiv), fb(r.holds_l2), run.seed_str()});
    }
    return rows;
}

const std::vector<std::string> kVerifyHeader{"a_id",  "x_norm",  "x_std_error", "psi",         "psi_std_error",
                                             "n_samples", "equiv_lo", "equiv_hi", "l2_lo", "l2_hi",
                                             "margin", "holds_equiv", "holds_l2", "seed"};

json indices_json(const std::vector<std::size_t>& v) {
    json a = json::array();
    for (auto x : v) a.push_back(x);
    return a;
}

int cmd_select(Run& run) {
    const auto& c = run.cfg();
    const auto model = model_from(c);
    SelectionConfig sc;
    sc.epsilon = c.number("epsilon");
    sc.k_max = c.count("k_max");
    sc.p = c.number("p");
    sc.candidate_stride = c.count("candidate_stride");
    sc.max_candidates = c.count("max_candidates");
    sc.n_samples = c.count("n_samples");
    sc.test_family = family_from(c, sc.k_max);
    sc.validate();
    const auto res = select_subsequence(model, sc, run.source(0));

    std::vector<std::vector<std::string>> steps;
    json jsteps = json::array();
    for (const auto& s : res.steps) {
        steps.push_back({fz(s.step), fz(s.index), fd(s.deviation), fd(s.std_error), fd(s.tolerance),
                         fz(s.candidates_tried), fz(sc.n_samples), run.seed_str()});
        jsteps.push_back({{"step", s.step}, {"index", s.index}, {"deviation", s.deviation}, {"std_error", s.std_error},
                          {"tolerance", s.tolerance}, {"candidates_tried", s.candidates_tried}});
    }
    run.csv("selection_steps.csv",
            {"step", "index", "deviation", "std_error", "tolerance", "candidates_tried", "n_samples", "seed"}, steps);

    json out = {{"indices", indices_json(res.indices)},
                {"step_deviations", res.step_deviations},
                {"tolerance_schedule", json::array()},
                {"steps", jsteps},
                {"verified", res.verified},
                {"failing_step", res.failing_step ? json(*res.failing_step) : json(nullptr)},
                {"epsilon", sc.epsilon},
                {"family_size", sc.test_family.size()},
                {"n_samples", sc.n_samples},
                {"seed", run.seed()}};
    for (std::size_t k = 1; k <= sc.k_max; ++k) out["tolerance_schedule"].push_back(sc.tolerance(k));
    if (!res.verified) {
        run.failure(res.failing_step ? "selection budget exhausted at step " + fz(*res.failing_step)
                                     : "sum of step deviations exceeds epsilon");
    } else {
        const auto& v = c.at("verify");
        const auto rep = verify_equivalence(model, res.indices, sc.p, sc.test_family, sc.epsilon,
                                            Config::number_of(v.at("C"), "verify.C"),
                                            Config::count_of(v.at("n_samples"), "verify.n_samples"), run.source(1));
        run.csv("verification.csv", kVerifyHeader, verification_rows(rep, run));
        out["verification"] = {{"all_hold", rep.all_hold()},
                               {"min_margin", rep.min_margin()},
                               {"A", rep.constants.A_const},
                               {"B", rep.constants.B_const}};
    }
    run.json_file("selection.json", out);
    return run.finish();
}

int cmd_verify(Run& run) {
    const auto& c = run.cfg();
    const auto model = model_from(c);
    const auto indices = c.counts("indices");
    const auto fam = family_from(c, indices.size());
    const auto rep =
        verify_equivalence(model, indices, c.number("p"), fam, c.number("epsilon"), c.number("C"), c.count("n_samples"),
                           run.source(1));
    run.csv("verification.csv", kVerifyHeader, verification_rows(rep, run));
    run.json_file("verification.json", {{"indices", indices_json(indices)},
                                        {"all_hold", rep.all_hold()},
                                        {"min_margin", rep.min_margin()},
                                        {"A", rep.constants.A_const},
                                        {"B", rep.constants.B_const},
                                        {"seed", run.seed()}});
    return run.finish();
}

int cmd_necessity(Run& run) {
    const auto& c = run.cfg();
    const auto base = mixture_from(c.at("mu"), c, "mu");
    NecessityConfig nc;
    nc.T = c.number("T");
    nc.N_grid = c.counts("N_grid");
    nc.variance_scales = c.numbers("variance_scales");
    nc.replicates = c.count("replicates");
    nc.A_esseen = c.number("A");
    const auto rows = necessity_experiment(variance_scaled_family(base, nc.variance_scales), nc, run.source());
    std::vector<std::vector<std::string>> out;
    for (const auto& r : rows)
        out.push_back({fz(r.family_index), fd(r.scale), fz(r.N), fd(r.T), fz(r.head), fd(r.prob), fd(r.prob_se),
                       fd(r.prob_tail), fd(r.K), fd(r.eps), fd(r.proxy), fd(r.esseen_tail), fb(r.breaks_half()),
                       fz(r.replicates), fz(r.seed)});
    run.csv("necessity.csv",
            {"family_index", "variance_scale", "N", "T", "head", "prob", "prob_se", "prob_tail", "K", "eps", "proxy",
             "esseen_tail", "below_half", "replicates", "seed"},
            out);
    return run.finish();
}

int cmd_clt(Run& run) {
    const auto& c = run.cfg();
    const auto mu = mixture_from(c.at("mu"), c, "mu");
    const auto rep = clt_mixture_check(mu, c.count("N"), c.count("n_reps"), run.source(), c.number("p"));
    const double ks_max = c.number("ks_max");
    if (rep.ks_distance > ks_max) run.failure("clt KS " + fd(rep.ks_distance) + " > " + fd(ks_max));
    if (!rep.moment_ok) run.failure("clt moment " + fd(rep.moment_empirical) + " vs " + fd(rep.moment_target));
    run.csv("clt.csv",
            {"N", "n_reps", "p", "ks_distance", "moment_empirical", "moment_se", "moment_target", "moment_ok", "seed"},
            {{fz(rep.N), fz(rep.n_reps), fd(rep.p), fd(rep.ks_distance), fd(rep.moment_empirical), fd(rep.moment_se),
              fd(rep.moment_target), fb(rep.moment_ok), run.seed_str()}});
    run.json_file("clt.json", {{"N", rep.N},
                               {"n_reps", rep.n_reps},
                               {"ks_distance", rep.ks_distance},
                               {"target_cdf", rep.target_cdf},
                               {"p", rep.p},
                               {"moment_empirical", rep.moment_empirical},
                               {"moment_se", rep.moment_se},
                               {"moment_target", rep.moment_target},
                               {"moment_ok", rep.moment_ok},
                               {"seed", run.seed()}});
    return run.finish();
}

const std::map<std::string, std::function<int(Run&)>> kHandlers{
    {"metrics", cmd_metrics},     {"mixture", cmd_mixture}, {"norms", cmd_norms},       {"concentration", cmd_concentration},
    {"simulate", cmd_simulate},   {"estimate", cmd_estimate}, {"select", cmd_select}, {"verify", cmd_verify},
    {"necessity", cmd_necessity}, {"clt", cmd_clt}};

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"kpl: discrete measures, random mixtures, L^p norm estimates and subsequence selection"};
    app.set_version_flag("--version", KPL_VERSION);
    std::string sub, config_path, out_dir;
    std::uint64_t seed = 0;
    unsigned workers = 0;
    std::vector<std::string> sets;
    app.add_option("subcommand", sub, "one of: metrics mixture norms concentration simulate estimate select verify necessity clt")
        ->required()
        ->check(CLI::IsMember(kSubcommands));
    app.add_option("--config", config_path, "JSON config file");
    auto* seed_opt = app.add_option("--seed", seed, "random seed (overrides config 'seed')");
    app.add_option("--workers", workers, "worker threads (results do not depend on it)");
    app.add_option("--out", out_dir, "output directory (default $KPL_OUT_DIR/<subcommand> or kpl-out/<subcommand>)");
    app.add_option("--set", sets, "override a config key, key.sub=value (repeatable)");
    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitInvalid;
    }

    try {
        json cfg = defaults_for(sub);
        fs::path base = fs::current_path();
        if (!config_path.empty()) {
            const json file = read_json_file(config_path);
            if (!file.is_object()) throw ValidationError(config_path + ":1: config must be a JSON object");
            merge_into(cfg, file);
            base = fs::absolute(config_path).parent_path();
        }
        for (const auto& s : sets) apply_override(cfg, s);
        if (*seed_opt) cfg["seed"] = seed;
        if (!cfg.contains("seed")) cfg["seed"] = 1;
        if (!cfg["seed"].is_number_unsigned() && !(cfg["seed"].is_number_integer() && cfg["seed"].get<long long>() >= 0))
            throw ValidationError("config: 'seed' must be a nonnegative integer");
        const auto resolved_seed = cfg["seed"].get<std::uint64_t>();
        if (workers == 0) workers = std::max(1u, std::thread::hardware_concurrency());

        fs::path out;
        if (!out_dir.empty())
            out = out_dir;
        else if (const char* env = std::getenv("KPL_OUT_DIR"); env && *env)
            out = fs::path(env) / sub;
        else
            out = fs::path("kpl-out") / sub;

        Run run(sub, Config(cfg, base), resolved_seed, workers, out);
        return kHandlers.at(sub)(run);
    } catch (const ValidationError& e) {
        std::cerr << "error: " << e.what() << '\n';
    } catch (const ParseError& e) {
        std::cerr << "error: " << e.what() << '\n';
    } catch (const json::exception& e) {
        std::cerr << "error: config: " << e.what() << '\n';
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << '\n';
    } catch (const std::domain_error& e) {
        std::cerr << "error: " << e.what() << '\n';
    } catch (const std::out_of_range& e) {
        std::cerr << "error: " << e.what() << '\n';
    } catch (const std::logic_error& e) {
        std::cerr << "error: " << e.what() << '\n';
    } catch (const std::runtime_error& e) {
        std::cerr << "error: " << e.what() << '\n';
    }
    return kExitInvalid;
}
