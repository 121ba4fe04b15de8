#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <cstring>
#include <istream>
#include <ostream>
#include <random>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/Dense>

#include "netgrowth/csv.hpp"
#include "netgrowth/error.hpp"
#include "netgrowth/model.hpp"
#include "netgrowth/moments.hpp"

namespace netgrowth {

enum class Boundary { clamp_zero };

struct SimConfig {
    double dt = 0.01;
    double t_end = 1.0;
    std::int64_t paths = 1;
    std::uint64_t seed = 0;
    Boundary boundary = Boundary::clamp_zero;
    unsigned threads = 0;                                  // 0: NETGROWTH_THREADS or hardware default
    std::uint64_t memory_budget = std::uint64_t{4} << 30;  // bytes of recorded values
};

/// Recorded sample paths; values are laid out [path][time][firm].
struct PathEnsemble {
    std::vector<double> times;
    Index n = 0;
    std::int64_t paths = 0;
    SimConfig config;
    std::vector<double> values;

    double operator()(std::int64_t path, std::size_t time, Index firm) const {
        return values[index(path, time, firm)];
    }
    double& operator()(std::int64_t path, std::size_t time, Index firm) {
        return values[index(path, time, firm)];
    }

    /// Position of t in the recorded grid; throws if t was not recorded.
    std::size_t time_index(double t) const {
        for (std::size_t g = 0; g < times.size(); ++g)
            if (std::abs(times[g] - t) <= 1e-9 * std::max(1.0, std::abs(t))) return g;
        throw InputError("time " + csv::format_number(t) + " is not on the recorded grid");
    }

private:
    std::size_t index(std::int64_t path, std::size_t time, Index firm) const {
        return (static_cast<std::size_t>(path) * times.size() + time) * static_cast<std::size_t>(n) +
               static_cast<std::size_t>(firm);
    }
};

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

/// Per-path stream seed; path p's draws never depend on scheduling.
inline std::uint64_t path_seed(std::uint64_t seed, std::int64_t path) {
    return splitmix64(splitmix64(seed) ^ splitmix64(static_cast<std::uint64_t>(path) + 0x632BE59BD9B4E019ull));
}

/// Precomputed square roots of the rates for the update kernel.
struct StepCoefficients {
    Eigen::MatrixXd phi;
    Eigen::MatrixXd sqrt_phi;
    Eigen::VectorXd lambda;
    Eigen::VectorXd sqrt_lambda;

    explicit StepCoefficients(const ModelParams& p)
        : phi(p.phi), sqrt_phi(p.phi.cwiseSqrt()), lambda(p.lambda), sqrt_lambda(p.lambda.cwiseSqrt()) {}
};

/// One Euler-Maruyama step. Income noise w_inc[j] belongs to the paying
/// firm j and is shared by every recipient i.
inline void em_update(const StepCoefficients& c, const double* a, double* out, double* sqrt_a, double dt,
                      double sqrt_dt, const double* w_inc, const double* w_exp, Index n) {
    for (Index j = 0; j < n; ++j) sqrt_a[j] = std::sqrt(std::max(a[j], 0.0));
    for (Index i = 0; i < n; ++i) {
        double drift = -c.lambda(i) * a[i];
        double noise = -c.sqrt_lambda(i) * sqrt_a[i] * w_exp[i];
        for (Index j = 0; j < n; ++j) {
            drift += c.phi(i, j) * a[j];
            noise += c.sqrt_phi(i, j) * sqrt_a[j] * w_inc[j];
        }
        out[i] = std::max(a[i] + dt * drift + sqrt_dt * noise, 0.0);
    }
}

inline unsigned resolve_threads(unsigned requested) {
    if (requested > 0) return requested;
    if (const char* env = std::getenv("NETGROWTH_THREADS")) {
        char* end = nullptr;
        const long v = std::strtol(env, &end, 10);
        if (end != env && *end == '\0' && v > 0) return static_cast<unsigned>(v);
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

} // namespace detail

/// Single Euler-Maruyama step from standard normal draws; sqrt(dt) is
/// applied here. The result is clamped at zero.
inline NetWorthVector em_step(const NetWorthVector& a, const ModelParams& params, double dt,
                              std::span<const double> noise_income, std::span<const double> noise_expend) {
    require_valid(params);
    require_state(params, a, "a");
    const Index n = params.n();
    if (noise_income.size() != static_cast<std::size_t>(n) || noise_expend.size() != static_cast<std::size_t>(n))
        throw InputError("noise vectors must have length N");
    if (!(dt > 0.0)) throw InputError("dt must be positive");
    detail::StepCoefficients c(params);
    NetWorthVector next(Eigen::VectorXd(n), a.t + dt);
    std::vector<double> scratch(static_cast<std::size_t>(n));
    detail::em_update(c, a.a.data(), next.a.data(), scratch.data(), dt, std::sqrt(dt), noise_income.data(),
                      noise_expend.data(), n);
    return next;
}

/// Simulates config.paths independent paths and records them at the grid
/// times, which must be multiples of dt inside [0, t_end].
inline PathEnsemble run_monte_carlo(const ModelParams& params, const NetWorthVector& a0, const SimConfig& config,
                                    std::span<const double> record_grid) {
    require_valid(params);
    require_state(params, a0);
    if (!(config.dt > 0.0) || !(config.dt <= config.t_end)) throw InputError("require 0 < dt <= t_end");
    if (config.paths < 1) throw InputError("paths must be >= 1");
    if (record_grid.empty()) throw InputError("record grid is empty");

    const Index n = params.n();
    std::vector<std::int64_t> record_steps;
    for (std::size_t g = 0; g < record_grid.size(); ++g) {
        const double t = record_grid[g];
        if (t < 0.0 || t > config.t_end * (1.0 + 1e-12))
            throw InputError("record time " + csv::format_number(t) + " outside [0, t_end]");
        const auto k = static_cast<std::int64_t>(std::llround(t / config.dt));
        if (std::abs(static_cast<double>(k) * config.dt - t) > 1e-9 * std::max(1.0, t))
            throw InputError("record time " + csv::format_number(t) + " is not a multiple of dt");
        if (g > 0 && k <= record_steps.back()) throw InputError("record grid must be strictly ascending");
        record_steps.push_back(k);
    }

    const double bytes = static_cast<double>(config.paths) * static_cast<double>(record_grid.size()) *
                         static_cast<double>(n) * sizeof(double);
    if (bytes > static_cast<double>(config.memory_budget))
        throw InputError("ensemble needs " + std::to_string(static_cast<std::uint64_t>(bytes)) +
                         " bytes, over the memory budget of " + std::to_string(config.memory_budget));

    PathEnsemble ens;
    ens.times.assign(record_grid.begin(), record_grid.end());
    ens.n = n;
    ens.paths = config.paths;
    ens.config = config;
    ens.values.assign(static_cast<std::size_t>(bytes / sizeof(double)), 0.0);

    const detail::StepCoefficients coeffs(params);
    const double dt = config.dt;
    const double sqrt_dt = std::sqrt(dt);
    const std::int64_t last_step = record_steps.back();

    auto simulate_range = [&](std::int64_t first, std::int64_t last) {
        const auto nn = static_cast<std::size_t>(n);
        std::vector<double> cur(nn), next(nn), sqrt_a(nn), w_inc(nn), w_exp(nn);
        std::normal_distribution<double> normal(0.0, 1.0);
        for (std::int64_t p = first; p < last; ++p) {
            std::mt19937_64 rng(detail::path_seed(config.seed, p));
            normal.reset();
            std::copy(a0.a.data(), a0.a.data() + n, cur.begin());
            std::size_t g = 0;
            for (std::int64_t step = 0;; ++step) {
                while (g < record_steps.size() && record_steps[g] == step) {
                    std::copy(cur.begin(), cur.end(), &ens(p, g, 0));
                    ++g;
                }
                if (step == last_step) break;
                for (auto& w : w_inc) w = normal(rng);
                for (auto& w : w_exp) w = normal(rng);
                detail::em_update(coeffs, cur.data(), next.data(), sqrt_a.data(), dt, sqrt_dt, w_inc.data(),
                                  w_exp.data(), n);
                cur.swap(next);
            }
        }
    };

    const auto threads =
        static_cast<std::int64_t>(std::min<std::int64_t>(detail::resolve_threads(config.threads), config.paths));
    if (threads <= 1) {
        simulate_range(0, config.paths);
    } else {
        std::vector<std::thread> pool;
        const std::int64_t chunk = (config.paths + threads - 1) / threads;
        for (std::int64_t t = 0; t < threads; ++t) {
            const std::int64_t lo = t * chunk;
            const std::int64_t hi = std::min(config.paths, lo + chunk);
            if (lo < hi) pool.emplace_back(simulate_range, lo, hi);
        }
        for (auto& th : pool) th.join();
    }
    return ens;
}

/// Sample mean and covariance (denominator paths - 1) at a recorded time.
inline MomentState empirical_moments(const PathEnsemble& ens, double t) {
    const std::size_t g = ens.time_index(t);
    const Index n = ens.n;
    MomentState s;
    s.t = ens.times[g];
    s.mu1 = Eigen::VectorXd::Zero(n);
    Eigen::MatrixXd comoment = Eigen::MatrixXd::Zero(n, n);
    Eigen::VectorXd x(n), delta(n);
    for (std::int64_t p = 0; p < ens.paths; ++p) {
        for (Index i = 0; i < n; ++i) x(i) = ens(p, g, i);
        delta = x - s.mu1;
        s.mu1 += delta / static_cast<double>(p + 1);
        comoment.noalias() += delta * (x - s.mu1).transpose();
    }
    s.mu2 = ens.paths > 1 ? Eigen::MatrixXd(comoment / static_cast<double>(ens.paths - 1))
                          : Eigen::MatrixXd::Zero(n, n);
    detail::symmetrize(s.mu2);
    return s;
}

/// Linear interpolation between order statistics: position (size-1)*q.
inline double sample_quantile(std::vector<double> samples, double q) {
    if (samples.empty()) throw InputError("quantile of an empty sample");
    if (!(q > 0.0 && q < 1.0)) throw InputError("q must lie in (0, 1)");
    std::sort(samples.begin(), samples.end());
    const double h = static_cast<double>(samples.size() - 1) * q;
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const std::size_t hi = std::min(lo + 1, samples.size() - 1);
    return samples[lo] + (h - static_cast<double>(lo)) * (samples[hi] - samples[lo]);
}

inline double empirical_quantile(const PathEnsemble& ens, Index firm, double t, double q) {
    if (firm < 0 || firm >= ens.n) throw InputError("firm index " + std::to_string(firm) + " out of range");
    const std::size_t g = ens.time_index(t);
    std::vector<double> samples(static_cast<std::size_t>(ens.paths));
    for (std::int64_t p = 0; p < ens.paths; ++p) samples[static_cast<std::size_t>(p)] = ens(p, g, firm);
    return sample_quantile(std::move(samples), q);
}

/// CSV: path,t,a_1..a_N
inline void write_ensemble_csv(std::ostream& out, const PathEnsemble& ens) {
    out << "path,t";
    for (Index i = 0; i < ens.n; ++i) out << ",a_" << (i + 1);
    out << '\n';
    for (std::int64_t p = 0; p < ens.paths; ++p)
        for (std::size_t g = 0; g < ens.times.size(); ++g) {
            out << p << ',' << csv::format_number(ens.times[g]);
            for (Index i = 0; i < ens.n; ++i) out << ',' << csv::format_number(ens(p, g, i));
            out << '\n';
        }
}

namespace detail {

inline void put_u64(std::ostream& out, std::uint64_t v) {
    unsigned char b[8];
    for (int k = 0; k < 8; ++k) b[k] = static_cast<unsigned char>(v >> (8 * k));
    out.write(reinterpret_cast<const char*>(b), 8);
}

inline void put_f64(std::ostream& out, double v) { put_u64(out, std::bit_cast<std::uint64_t>(v)); }

inline std::uint64_t get_u64(std::istream& in) {
    unsigned char b[8];
    if (!in.read(reinterpret_cast<char*>(b), 8)) throw InputError("truncated NGSIM1 stream");
    std::uint64_t v = 0;
    for (int k = 0; k < 8; ++k) v |= static_cast<std::uint64_t>(b[k]) << (8 * k);
    return v;
}

inline double get_f64(std::istream& in) { return std::bit_cast<double>(get_u64(in)); }

} // namespace detail

inline constexpr char kEnsembleMagic[6] = {'N', 'G', 'S', 'I', 'M', '1'};

/// Binary layout, little-endian: "NGSIM1", 2 zero bytes, u64 n, u64 paths,
/// u64 grid size, u64 seed, f64 dt, f64 t_end, f64 times[grid],
/// f64 values[paths][grid][n].
inline void write_ensemble_binary(std::ostream& out, const PathEnsemble& ens) {
    out.write(kEnsembleMagic, sizeof kEnsembleMagic);
    out.write("\0\0", 2);
    detail::put_u64(out, static_cast<std::uint64_t>(ens.n));
    detail::put_u64(out, static_cast<std::uint64_t>(ens.paths));
    detail::put_u64(out, ens.times.size());
    detail::put_u64(out, ens.config.seed);
    detail::put_f64(out, ens.config.dt);
    detail::put_f64(out, ens.config.t_end);
    for (double t : ens.times) detail::put_f64(out, t);
    for (double v : ens.values) detail::put_f64(out, v);
}

inline PathEnsemble read_ensemble_binary(std::istream& in) {
    char magic[8];
    if (!in.read(magic, 8) || std::memcmp(magic, kEnsembleMagic, sizeof kEnsembleMagic) != 0)
        throw InputError("not an NGSIM1 stream");
    PathEnsemble ens;
    ens.n = static_cast<Index>(detail::get_u64(in));
    ens.paths = static_cast<std::int64_t>(detail::get_u64(in));
    const auto grid = detail::get_u64(in);
    ens.config.seed = detail::get_u64(in);
    ens.config.dt = detail::get_f64(in);
    ens.config.t_end = detail::get_f64(in);
    ens.config.paths = ens.paths;
    ens.times.resize(grid);
    for (auto& t : ens.times) t = detail::get_f64(in);
    ens.values.resize(static_cast<std::size_t>(ens.paths) * grid * static_cast<std::size_t>(ens.n));
    for (auto& v : ens.values) v = detail::get_f64(in);
    return ens;
}

} // namespace netgrowth
