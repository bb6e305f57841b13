#pragma once

// Text formats:
//
//   # discrete-measure v1        # random-measure v1
//   -1,0.5                       atom 0.5
//   1,0.5                        -1,0.5
//                                1,0.5
//                                atom 0.5
//                                -2,0.5
//                                2,0.5
//
//   sample matrix: CSV, header n1,...,nN, one row per path.
//
// Blank lines and lines starting with "##" are ignored. Weight sums within
// 1e-9 of one are renormalized on load.

#include <charconv>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "kpl/measures.hpp"
#include "kpl/mixtures.hpp"
#include "kpl/seqmodel.hpp"

namespace kpl {

inline constexpr double kLoadTolerance = 1e-9;

class ParseError : public std::runtime_error {
public:
    ParseError(const std::string& source, std::size_t line, const std::string& what)
        : std::runtime_error(source + ":" + std::to_string(line) + ": " + what), line_(line) {}
    std::size_t line() const { return line_; }

private:
    std::size_t line_;
};

// Shortest round-trip decimal representation.
inline std::string format_double(double x) {
    if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
    if (std::isnan(x)) return "nan";
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof buf, x);
    return std::string(buf, res.ptr);
}

namespace detail {

inline std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

inline bool parse_double(std::string_view s, double& out) {
    s = trim(s);
    if (s.empty()) return false;
    if (s.front() == '+') s.remove_prefix(1);
    auto res = std::from_chars(s.data(), s.data() + s.size(), out);
    return res.ec == std::errc() && res.ptr == s.data() + s.size() && std::isfinite(out);
}

inline bool skippable(std::string_view line) {
    line = trim(line);
    return line.empty() || line.starts_with("##");
}

inline Atom parse_atom(std::string_view line, const std::string& source, std::size_t lineno) {
    const auto comma = line.find(',');
    if (comma == std::string_view::npos) throw ParseError(source, lineno, "expected 'point,weight'");
    Atom a{};
    if (!parse_double(line.substr(0, comma), a.point)) throw ParseError(source, lineno, "malformed point");
    if (!parse_double(line.substr(comma + 1), a.weight)) throw ParseError(source, lineno, "malformed weight");
    if (!(a.weight > 0.0)) throw ParseError(source, lineno, "weight must be positive");
    return a;
}

// Rescale to total one when the sum is within the load tolerance.
inline std::vector<Atom> normalized(std::vector<Atom> atoms, const std::string& source, std::size_t lineno) {
    if (atoms.empty()) throw ParseError(source, lineno, "no atoms");
    double total = 0.0;
    for (const auto& a : atoms) total += a.weight;
    if (std::abs(total - 1.0) > kLoadTolerance)
        throw ParseError(source, lineno, "weights sum to " + format_double(total) + ", not 1");
    if (total != 1.0)
        for (auto& a : atoms) a.weight /= total;
    return atoms;
}

}  // namespace detail

inline DiscreteMeasure read_measure(std::istream& in, const std::string& source = "<measure>") {
    std::string line;
    std::size_t lineno = 0;
    bool header = false;
    std::vector<Atom> atoms;
    while (std::getline(in, line)) {
        ++lineno;
        if (detail::skippable(line)) continue;
        const auto t = detail::trim(line);
        if (!header) {
            if (t != "# discrete-measure v1") throw ParseError(source, lineno, "expected header '# discrete-measure v1'");
            header = true;
            continue;
        }
        atoms.push_back(detail::parse_atom(t, source, lineno));
    }
    if (!header) throw ParseError(source, lineno, "missing header '# discrete-measure v1'");
    return DiscreteMeasure(detail::normalized(std::move(atoms), source, lineno));
}

inline void write_measure(std::ostream& out, const DiscreteMeasure& nu) {
    out << "# discrete-measure v1\n";
    for (const auto& a : nu.atoms()) out << format_double(a.point) << ',' << format_double(a.weight) << '\n';
}

inline RandomMeasure read_random_measure(std::istream& in, const std::string& source = "<random-measure>") {
    std::string line;
    std::size_t lineno = 0, block_line = 0;
    bool header = false, open = false;
    double weight = 0.0;
    std::vector<Atom> atoms;
    std::vector<Component<DiscreteMeasure>> comps;
    auto close = [&] {
        if (!open) return;
        comps.push_back({weight, DiscreteMeasure(detail::normalized(std::move(atoms), source, block_line))});
        atoms.clear();
    };
    while (std::getline(in, line)) {
        ++lineno;
        if (detail::skippable(line)) continue;
        const auto t = detail::trim(line);
        if (!header) {
            if (t != "# random-measure v1") throw ParseError(source, lineno, "expected header '# random-measure v1'");
            header = true;
            continue;
        }
        if (t.starts_with("atom")) {
            close();
            if (!detail::parse_double(t.substr(4), weight) || !(weight > 0.0))
                throw ParseError(source, lineno, "malformed atom weight");
            open = true;
            block_line = lineno;
            continue;
        }
        if (!open) throw ParseError(source, lineno, "point before the first 'atom' line");
        atoms.push_back(detail::parse_atom(t, source, lineno));
    }
    if (!header) throw ParseError(source, lineno, "missing header '# random-measure v1'");
    if (open && atoms.empty()) throw ParseError(source, block_line, "atom block without points");
    close();
    if (comps.empty()) throw ParseError(source, lineno, "no atoms");
    double total = 0.0;
    for (const auto& c : comps) total += c.weight;
    if (std::abs(total - 1.0) > kLoadTolerance)
        throw ParseError(source, lineno, "atom weights sum to " + format_double(total) + ", not 1");
    if (total != 1.0)
        for (auto& c : comps) c.weight /= total;
    return RandomMeasure(std::move(comps));
}

inline void write_random_measure(std::ostream& out, const RandomMeasure& mu) {
    out << "# random-measure v1\n";
    for (const auto& c : mu.components()) {
        out << "atom " << format_double(c.weight) << '\n';
        for (const auto& a : c.law.atoms()) out << format_double(a.point) << ',' << format_double(a.weight) << '\n';
    }
}

inline SampleMatrix read_sample_matrix(std::istream& in, const std::string& source = "<paths>") {
    std::string line;
    std::size_t lineno = 0, width = 0;
    SampleMatrix rows;
    bool header = false;
    while (std::getline(in, line)) {
        ++lineno;
        if (detail::trim(line).empty()) continue;
        std::vector<std::string_view> cells;
        std::string_view rest = line;
        while (true) {
            const auto c = rest.find(',');
            cells.push_back(detail::trim(rest.substr(0, c)));
            if (c == std::string_view::npos) break;
            rest.remove_prefix(c + 1);
        }
        if (!header) {
            for (std::size_t i = 0; i < cells.size(); ++i)
                if (cells[i] != "n" + std::to_string(i + 1))
                    throw ParseError(source, lineno, "expected header n1,...,nN");
            width = cells.size();
            header = true;
            continue;
        }
        if (cells.size() != width)
            throw ParseError(source, lineno, "row has " + std::to_string(cells.size()) + " columns, expected " +
                                                 std::to_string(width));
        std::vector<double> row(width);
        for (std::size_t i = 0; i < width; ++i)
            if (!detail::parse_double(cells[i], row[i])) throw ParseError(source, lineno, "malformed value");
        rows.push_back(std::move(row));
    }
    if (!header) throw ParseError(source, lineno, "missing header row");
    if (rows.empty()) throw ParseError(source, lineno, "no data rows");
    return rows;
}

inline void write_sample_matrix(std::ostream& out, const SampleMatrix& rows) {
    const std::size_t width = rows.empty() ? 0 : rows.front().size();
    for (std::size_t i = 0; i < width; ++i) out << (i ? "," : "") << 'n' << i + 1;
    out << '\n';
    for (const auto& r : rows) {
        for (std::size_t i = 0; i < r.size(); ++i) out << (i ? "," : "") << format_double(r[i]);
        out << '\n';
    }
}

template <class T, class Reader>
T load_file(const std::string& path, Reader&& reader) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error(path + ": cannot open");
    return reader(in, path);
}

inline DiscreteMeasure load_measure(const std::string& path) {
    return load_file<DiscreteMeasure>(path, [](std::istream& in, const std::string& s) { return read_measure(in, s); });
}

inline RandomMeasure load_random_measure(const std::string& path) {
    return load_file<RandomMeasure>(path,
                                    [](std::istream& in, const std::string& s) { return read_random_measure(in, s); });
}

inline SampleMatrix load_sample_matrix(const std::string& path) {
    return load_file<SampleMatrix>(path,
                                   [](std::istream& in, const std::string& s) { return read_sample_matrix(in, s); });
}

}  // namespace kpl
