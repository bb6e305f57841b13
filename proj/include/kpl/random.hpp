#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <thread>
#include <utility>
#include <vector>

namespace kpl {

using Engine = std::mt19937_64;

// Replicates are grouped into fixed-size batches, each batch owning its own
// engine keyed by (seed, task, batch). Results therefore depend on the seed
// and the task id only; the worker count just decides who runs which batch.
inline constexpr std::size_t kBatchSize = 2048;

struct Source {
    std::uint64_t seed = 0;
    std::uint64_t task = 0;
    unsigned workers = 1;

    // Independent sub-stream; the child id is mixed into the task key.
    Source fork(std::uint64_t id) const {
        std::seed_seq seq{lo(seed), hi(seed), lo(task), hi(task), lo(id), hi(id), 0x6b706cu};
        std::uint32_t out[2];
        seq.generate(out, out + 2);
        return {seed, (std::uint64_t{out[1]} << 32) | out[0], workers};
    }

    Engine engine(std::uint64_t batch = 0) const {
        std::seed_seq seq{lo(seed), hi(seed), lo(task), hi(task), lo(batch), hi(batch)};
        return Engine(seq);
    }

private:
    static std::uint32_t lo(std::uint64_t v) { return static_cast<std::uint32_t>(v); }
    static std::uint32_t hi(std::uint64_t v) { return static_cast<std::uint32_t>(v >> 32); }
};

inline double uniform01(Engine& rng) {
    return std::uniform_real_distribution<double>(0.0, 1.0)(rng);
}

// Uniform on the open interval (0,1); quantile functions are undefined at 0.
inline double uniform_open01(Engine& rng) {
    double u;
    do {
        u = uniform01(rng);
    } while (u <= 0.0);
    return u;
}

// Runs fn(batch_index, begin, end, engine) over ceil(n / kBatchSize) batches and
// returns the per-batch results in batch order.
template <class Result, class Fn>
std::vector<Result> run_batches(std::size_t n, const Source& src, Fn&& fn) {
    const std::size_t n_batches = (n + kBatchSize - 1) / kBatchSize;
    std::vector<Result> out(n_batches);
    auto work = [&](std::size_t b) {
        Engine rng = src.engine(b);
        const std::size_t begin = b * kBatchSize;
        const std::size_t end = std::min(n, begin + kBatchSize);
        out[b] = fn(b, begin, end, rng);
    };
    const unsigned workers = std::max(1u, std::min<unsigned>(src.workers, static_cast<unsigned>(n_batches)));
    if (workers <= 1) {
        for (std::size_t b = 0; b < n_batches; ++b) work(b);
        return out;
    }
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (unsigned w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
            for (std::size_t b = w; b < n_batches; b += workers) work(b);
        });
    }
    for (auto& t : pool) t.join();
    return out;
}

// Running mean/variance (Welford), mergeable in a fixed order (Chan et al.).
struct Moments {
    std::size_t n = 0;
    double mean = 0.0;
    double m2 = 0.0;

    void add(double x) {
        ++n;
        const double d = x - mean;
        mean += d / static_cast<double>(n);
        m2 += d * (x - mean);
    }

    void merge(const Moments& o) {
        if (o.n == 0) return;
        if (n == 0) {
            *this = o;
            return;
        }
        const double na = static_cast<double>(n), nb = static_cast<double>(o.n);
        const double nt = na + nb;
        const double d = o.mean - mean;
        mean += d * nb / nt;
        m2 += o.m2 + d * d * na * nb / nt;
        n += o.n;
    }

    double variance() const { return n > 1 ? m2 / static_cast<double>(n - 1) : 0.0; }
    double std_error() const { return n > 0 ? std::sqrt(variance() / static_cast<double>(n)) : 0.0; }
};

// Paired version of Moments, tracking the cross term for delta-method errors.
struct PairMoments {
    std::size_t n = 0;
    double mean_x = 0.0, mean_y = 0.0;
    double m2_x = 0.0, m2_y = 0.0, c_xy = 0.0;

    void add(double x, double y) {
        ++n;
        const double nn = static_cast<double>(n);
        const double dx = x - mean_x;
        const double dy = y - mean_y;
        mean_x += dx / nn;
        mean_y += dy / nn;
        m2_x += dx * (x - mean_x);
        m2_y += dy * (y - mean_y);
        c_xy += dx * (y - mean_y);
    }

    void merge(const PairMoments& o) {
        if (o.n == 0) return;
        if (n == 0) {
            *this = o;
            return;
        }
        const double na = static_cast<double>(n), nb = static_cast<double>(o.n);
        const double nt = na + nb;
        const double dx = o.mean_x - mean_x;
        const double dy = o.mean_y - mean_y;
        mean_x += dx * nb / nt;
        mean_y += dy * nb / nt;
        m2_x += o.m2_x + dx * dx * na * nb / nt;
        m2_y += o.m2_y + dy * dy * na * nb / nt;
        c_xy += o.c_xy + dx * dy * na * nb / nt;
        n += o.n;
    }

    double var_x() const { return n > 1 ? m2_x / static_cast<double>(n - 1) : 0.0; }
    double var_y() const { return n > 1 ? m2_y / static_cast<double>(n - 1) : 0.0; }
    double cov() const { return n > 1 ? c_xy / static_cast<double>(n - 1) : 0.0; }
};

template <class Acc>
Acc merge_all(const std::vector<Acc>& parts) {
    Acc total;
    for (const auto& p : parts) total.merge(p);
    return total;
}

}  // namespace kpl
