#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include "netgrowth/csv.hpp"
#include "netgrowth/error.hpp"
#include "netgrowth/expm.hpp"
#include "netgrowth/model.hpp"

namespace netgrowth {

/// Mean vector and central covariance of the net-worths at time t.
struct MomentState {
    double t = 0.0;
    Eigen::VectorXd mu1;
    Eigen::MatrixXd mu2;
};

/// Linear system d mu[m]/dt = A[m] mu[m] + B[m] mu[m-1] for the raw m-th
/// moments. Multi-index (i_1..i_m) maps to row sum_p i_p N^(m-p).
struct MomentSystem {
    int order = 1;
    Index n = 0;
    Eigen::SparseMatrix<double> a_m;
    Eigen::SparseMatrix<double> b_m;
};

struct MomentOptions {
    Index max_side = 1'000'000;  // cap on N^m
    ExpmOptions expm{};
};

namespace detail {

inline Index checked_power(Index n, int m, Index cap) {
    Index p = 1;
    for (int q = 0; q < m; ++q) {
        if (p > cap / n) throw InputError("moment order " + std::to_string(m) + " with N=" + std::to_string(n) +
                                          " exceeds the side cap " + std::to_string(cap));
        p *= n;
    }
    return p;
}

inline void check_grid(std::span<const double> t_grid) {
    if (t_grid.empty()) throw InputError("time grid is empty");
    if (t_grid.front() != 0.0) throw InputError("time grid must start at 0");
    for (std::size_t k = 1; k < t_grid.size(); ++k)
        if (!(t_grid[k] > t_grid[k - 1])) throw InputError("time grid must be strictly ascending");
}

inline void symmetrize(Eigen::MatrixXd& m) {
    Eigen::MatrixXd s = 0.5 * (m + m.transpose());
    m = std::move(s);
}

} // namespace detail

inline MomentSystem build_moment_system(const ModelParams& params, int m, const MomentOptions& opts = {}) {
    if (m < 1) throw InputError("moment order must be >= 1");
    const DriftMatrix drift = build_drift_matrix(params);
    const DiffusionTensor diff = build_diffusion_tensor(params);
    const Index n = params.n();
    const Index rows = detail::checked_power(n, m, opts.max_side);
    const Index cols = rows / n;

    MomentSystem sys;
    sys.order = m;
    sys.n = n;
    sys.a_m.resize(rows, rows);
    sys.b_m.resize(rows, cols);

    std::vector<Index> place(static_cast<std::size_t>(m));  // N^(m-1-p)
    place[static_cast<std::size_t>(m - 1)] = 1;
    for (int p = m - 2; p >= 0; --p) place[static_cast<std::size_t>(p)] = place[static_cast<std::size_t>(p + 1)] * n;

    std::vector<Eigen::Triplet<double>> a_trip;
    std::vector<Eigen::Triplet<double>> b_trip;
    a_trip.reserve(static_cast<std::size_t>(rows * m * n));
    std::vector<Index> digits(static_cast<std::size_t>(m));
    std::vector<Index> rest;
    for (Index r = 0; r < rows; ++r) {
        Index rem = r;
        for (int p = 0; p < m; ++p) {
            digits[static_cast<std::size_t>(p)] = rem / place[static_cast<std::size_t>(p)];
            rem %= place[static_cast<std::size_t>(p)];
        }
        // Drift acts on one index position at a time (Kronecker sum).
        for (int p = 0; p < m; ++p) {
            const Index ip = digits[static_cast<std::size_t>(p)];
            const Index base = r - ip * place[static_cast<std::size_t>(p)];
            for (Index k = 0; k < n; ++k) {
                const double v = drift.a_tilde(ip, k);
                if (v != 0.0) a_trip.emplace_back(r, base + k * place[static_cast<std::size_t>(p)], v);
            }
        }
        // Diffusion contracts each unordered pair of positions into one lower-order index.
        for (int p = 0; p < m; ++p)
            for (int q = p + 1; q < m; ++q) {
                rest.clear();
                for (int s = 0; s < m; ++s)
                    if (s != p && s != q) rest.push_back(digits[static_cast<std::size_t>(s)]);
                Index col_base = 0;
                for (Index d : rest) col_base = col_base * n + d;
                col_base *= n;
                for (Index k = 0; k < n; ++k) {
                    const double v = diff(digits[static_cast<std::size_t>(p)], digits[static_cast<std::size_t>(q)], k);
                    if (v != 0.0) b_trip.emplace_back(r, col_base + k, v);
                }
            }
    }
    sys.a_m.setFromTriplets(a_trip.begin(), a_trip.end());
    sys.b_m.setFromTriplets(b_trip.begin(), b_trip.end());
    return sys;
}

namespace detail {

/// Dense generator [[A2, B2], [0, A]] acting on (vec(mu2), mu1).
inline Eigen::MatrixXd second_order_generator(const ModelParams& params, const MomentOptions& opts) {
    const Index n = params.n();
    const MomentSystem second = build_moment_system(params, 2, opts);
    const DriftMatrix drift = build_drift_matrix(params);
    Eigen::MatrixXd g = Eigen::MatrixXd::Zero(n * n + n, n * n + n);
    g.topLeftCorner(n * n, n * n) = Eigen::MatrixXd(second.a_m);
    g.topRightCorner(n * n, n) = Eigen::MatrixXd(second.b_m);
    g.bottomRightCorner(n, n) = drift.a_tilde;
    return g;
}

inline MomentState unpack_second_order(const Eigen::VectorXd& x, Index n, double t) {
    MomentState s;
    s.t = t;
    s.mu1 = x.tail(n);
    s.mu2 = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(x.data(), n, n);
    symmetrize(s.mu2);
    return s;
}

inline Eigen::VectorXd pack_initial(const NetWorthVector& a0) {
    const Index n = a0.size();
    Eigen::VectorXd x = Eigen::VectorXd::Zero(n * n + n);
    x.tail(n) = a0.a;
    return x;
}

} // namespace detail

/// Mean and covariance at t from the matrix-exponential solution, starting
/// from a deterministic a0 (zero covariance).
inline MomentState solve_moments_closed_form(const ModelParams& params, const NetWorthVector& a0, double t,
                                             const MomentOptions& opts = {}) {
    require_valid(params);
    require_state(params, a0);
    if (!(t >= 0.0)) throw InputError("time must be nonnegative");
    const Index n = params.n();
    const Eigen::MatrixXd g = detail::second_order_generator(params, opts);
    const Eigen::VectorXd x = matrix_exponential(g, t, opts.expm) * detail::pack_initial(a0);
    return detail::unpack_second_order(x, n, t);
}

/// Closed-form solution on a grid. One exponential is computed per distinct
/// step length and applied repeatedly.
inline std::vector<MomentState> solve_moments_closed_form(const ModelParams& params, const NetWorthVector& a0,
                                                          std::span<const double> t_grid,
                                                          const MomentOptions& opts = {}) {
    require_valid(params);
    require_state(params, a0);
    detail::check_grid(t_grid);
    const Index n = params.n();
    const Eigen::MatrixXd g = detail::second_order_generator(params, opts);
    std::map<double, Eigen::MatrixXd> step_cache;
    std::vector<MomentState> out;
    out.reserve(t_grid.size());
    Eigen::VectorXd x = detail::pack_initial(a0);
    out.push_back(detail::unpack_second_order(x, n, 0.0));
    for (std::size_t k = 1; k < t_grid.size(); ++k) {
        const double dt = t_grid[k] - t_grid[k - 1];
        // Steps equal up to rounding share one exponential.
        auto it = step_cache.lower_bound(dt * (1.0 - 1e-12));
        if (it == step_cache.end() || it->first > dt * (1.0 + 1e-12))
            it = step_cache.emplace(dt, matrix_exponential(g, dt, opts.expm)).first;
        x = it->second * x;
        out.push_back(detail::unpack_second_order(x, n, t_grid[k]));
    }
    return out;
}

struct OdeOptions {
    double max_step = 0.01;
};

/// Fixed-step RK4 integration of the mean and covariance equations,
/// evaluated entrywise in matrix form.
inline std::vector<MomentState> solve_moments_ode(const ModelParams& params, const NetWorthVector& a0,
                                                  std::span<const double> t_grid, const OdeOptions& opts = {}) {
    require_valid(params);
    require_state(params, a0);
    detail::check_grid(t_grid);
    if (!(opts.max_step > 0.0)) throw InputError("ODE step must be positive");
    const Eigen::MatrixXd drift = build_drift_matrix(params).a_tilde;
    const DiffusionTensor diff = build_diffusion_tensor(params);
    const Index n = params.n();

    struct Deriv {
        Eigen::VectorXd m1;
        Eigen::MatrixXd m2;
    };
    auto rhs = [&](const Eigen::VectorXd& m1, const Eigen::MatrixXd& m2) {
        Deriv d;
        d.m1 = drift * m1;
        d.m2 = drift * m2 + m2 * drift.transpose() + diff.contract(m1);
        return d;
    };

    std::vector<MomentState> out;
    out.reserve(t_grid.size());
    Eigen::VectorXd m1 = a0.a;
    Eigen::MatrixXd m2 = Eigen::MatrixXd::Zero(n, n);
    out.push_back({0.0, m1, m2});
    for (std::size_t k = 1; k < t_grid.size(); ++k) {
        const double span_len = t_grid[k] - t_grid[k - 1];
        const double target = std::min(opts.max_step, span_len / 10.0);
        const auto steps = static_cast<std::int64_t>(std::ceil(span_len / target - 1e-9));
        const double h = span_len / static_cast<double>(steps);
        for (std::int64_t s = 0; s < steps; ++s) {
            const Deriv k1 = rhs(m1, m2);
            const Deriv k2 = rhs(m1 + 0.5 * h * k1.m1, m2 + 0.5 * h * k1.m2);
            const Deriv k3 = rhs(m1 + 0.5 * h * k2.m1, m2 + 0.5 * h * k2.m2);
            const Deriv k4 = rhs(m1 + h * k3.m1, m2 + h * k3.m2);
            m1 += (h / 6.0) * (k1.m1 + 2.0 * k2.m1 + 2.0 * k3.m1 + k4.m1);
            m2 += (h / 6.0) * (k1.m2 + 2.0 * k2.m2 + 2.0 * k3.m2 + k4.m2);
            detail::symmetrize(m2);
        }
        out.push_back({t_grid[k], m1, m2});
    }
    return out;
}

/// Raw m-th moments E[a_{i1} ... a_{im}] at t, flattened big-endian.
/// All orders 0..m are propagated jointly through one block-triangular
/// generator, starting from the deterministic a0^(tensor p).
inline Eigen::VectorXd solve_higher_moments(const ModelParams& params, const NetWorthVector& a0, int m, double t,
                                            const MomentOptions& opts = {}) {
    require_valid(params);
    require_state(params, a0);
    if (m < 1) throw InputError("moment order must be >= 1");
    if (!(t >= 0.0)) throw InputError("time must be nonnegative");
    const Index n = params.n();

    std::vector<MomentSystem> systems;
    std::vector<Index> offset{0, 1};  // order 0 occupies one slot
    for (int p = 1; p <= m; ++p) {
        systems.push_back(build_moment_system(params, p, opts));
        offset.push_back(offset.back() + systems.back().a_m.rows());
    }
    const Index total = offset.back();
    if (total > opts.expm.max_side)
        throw InputError("augmented moment system of side " + std::to_string(total) + " exceeds cap " +
                         std::to_string(opts.expm.max_side));

    Eigen::MatrixXd g = Eigen::MatrixXd::Zero(total, total);
    Eigen::VectorXd x0(total);
    x0(0) = 1.0;
    Eigen::VectorXd power = Eigen::VectorXd::Ones(1);
    for (int p = 1; p <= m; ++p) {
        const auto& sys = systems[static_cast<std::size_t>(p - 1)];
        const Index lo = offset[static_cast<std::size_t>(p)];
        const Index prev = offset[static_cast<std::size_t>(p - 1)];
        g.block(lo, lo, sys.a_m.rows(), sys.a_m.cols()) = Eigen::MatrixXd(sys.a_m);
        g.block(lo, prev, sys.b_m.rows(), sys.b_m.cols()) = Eigen::MatrixXd(sys.b_m);
        Eigen::VectorXd next(power.size() * n);
        for (Index i = 0; i < power.size(); ++i)
            for (Index k = 0; k < n; ++k) next(i * n + k) = power(i) * a0.a(k);
        power = std::move(next);
        x0.segment(lo, power.size()) = power;
    }
    const Eigen::VectorXd x = matrix_exponential(g, t, opts.expm) * x0;
    return x.segment(offset[static_cast<std::size_t>(m)], total - offset[static_cast<std::size_t>(m)]);
}

/// True when mu2 is symmetric and its smallest eigenvalue is at least
/// -tol * trace(mu2).
inline bool is_psd(const Eigen::MatrixXd& mu2, double tol = 1e-9) {
    if (mu2.rows() == 0) return true;
    if ((mu2 - mu2.transpose()).norm() > 1e-12 * (1.0 + mu2.norm())) return false;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(mu2, Eigen::EigenvaluesOnly);
    return es.eigenvalues().minCoeff() >= -tol * std::abs(mu2.trace());
}

/// Column name of covariance entry (i, j), 0-based: mu2_12 style, or
/// mu2_1_12 once N has two-digit indices.
inline std::string mu2_column(Index i, Index j, Index n) {
    const std::string sep = n > 9 ? "_" : "";
    return "mu2_" + std::to_string(i + 1) + sep + std::to_string(j + 1);
}

/// CSV: t,mu1_1..mu1_N,mu2_11,mu2_12,...,mu2_NN
inline void write_moments_csv(std::ostream& out, std::span<const MomentState> states) {
    if (states.empty()) return;
    const Index n = states.front().mu1.size();
    out << "t";
    for (Index i = 0; i < n; ++i) out << ",mu1_" << (i + 1);
    for (Index i = 0; i < n; ++i)
        for (Index j = 0; j < n; ++j) out << ',' << mu2_column(i, j, n);
    out << '\n';
    for (const auto& s : states) {
        out << csv::format_number(s.t);
        for (Index i = 0; i < n; ++i) out << ',' << csv::format_number(s.mu1(i));
        for (Index i = 0; i < n; ++i)
            for (Index j = 0; j < n; ++j) out << ',' << csv::format_number(s.mu2(i, j));
        out << '\n';
    }
}

} // namespace netgrowth
