#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numbers>
#include <numeric>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "netgrowth/csv.hpp"
#include "netgrowth/error.hpp"
#include "netgrowth/model.hpp"
#include "netgrowth/moments.hpp"

namespace netgrowth {

struct Observation {
    double t = 0.0;
    Eigen::VectorXd a;
};

/// Snapshots a^D(t_d) of the net-worth vector.
struct ObservationSet {
    std::vector<Observation> records;
};

namespace detail {

inline void check_observations(const ObservationSet& obs, Index n) {
    if (obs.records.empty()) throw InputError("observation set is empty");
    for (std::size_t d = 0; d < obs.records.size(); ++d) {
        const auto& r = obs.records[d];
        if (!(r.t > 0.0)) throw InputError("observation " + std::to_string(d) + " has non-positive time");
        if (r.a.size() != n)
            throw InputError("observation " + std::to_string(d) + " has length " + std::to_string(r.a.size()) +
                             ", expected " + std::to_string(n));
        if (!r.a.allFinite() || (r.a.array() < 0.0).any())
            throw InputError("observation " + std::to_string(d) + " must be finite and nonnegative");
    }
}

/// log N(x; mean, cov) with jitter 1e-9 trace/N on the diagonal.
inline double gaussian_log_density(const Eigen::VectorXd& x, const Eigen::VectorXd& mean, Eigen::MatrixXd cov,
                                   const std::string& label) {
    const Index n = x.size();
    const double jitter = 1e-9 * cov.trace() / static_cast<double>(n);
    cov.diagonal().array() += jitter;
    Eigen::LLT<Eigen::MatrixXd> llt(cov);
    if (llt.info() != Eigen::Success)
        throw NumericError("covariance is not positive definite at " + label);
    const Eigen::VectorXd z = llt.matrixL().solve(x - mean);
    const double log_det = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
    if (!std::isfinite(log_det)) throw NumericError("covariance is singular at " + label);
    return -0.5 * (static_cast<double>(n) * std::log(2.0 * std::numbers::pi) + log_det + z.squaredNorm());
}

} // namespace detail

/// Sum over observations of the Gaussian log-density with the moments
/// propagated from a0 to each t_d independently.
inline double log_likelihood(const ModelParams& params, const NetWorthVector& a0, const ObservationSet& obs,
                             const MomentOptions& opts = {}) {
    require_valid(params);
    require_state(params, a0);
    detail::check_observations(obs, params.n());

    std::vector<double> grid{0.0};
    for (const auto& r : obs.records) grid.push_back(r.t);
    std::sort(grid.begin(), grid.end());
    grid.erase(std::unique(grid.begin(), grid.end()), grid.end());
    const auto states = solve_moments_closed_form(params, a0, grid, opts);

    double total = 0.0;
    for (std::size_t d = 0; d < obs.records.size(); ++d) {
        const auto& r = obs.records[d];
        const auto k = static_cast<std::size_t>(std::lower_bound(grid.begin(), grid.end(), r.t) - grid.begin());
        total += detail::gaussian_log_density(r.a, states[k].mu1, states[k].mu2,
                                              "observation " + std::to_string(d) + " (t=" +
                                                  csv::format_number(r.t) + ")");
    }
    return total;
}

struct NelderMeadOptions {
    int max_iterations = 2000;
    double f_tol = 1e-8;
    double x_tol = 1e-6;
    double initial_step = 0.2;
};

struct NelderMeadResult {
    Eigen::VectorXd x;
    double value = 0.0;
    int iterations = 0;
    bool converged = false;
};

/// Derivative-free minimization (reflect 1, expand 2, contract 1/2,
/// shrink 1/2). Non-finite objective values count as +inf.
inline NelderMeadResult nelder_mead(const std::function<double(const Eigen::VectorXd&)>& f,
                                    const Eigen::VectorXd& x0, const NelderMeadOptions& opts = {}) {
    const Index dim = x0.size();
    if (dim == 0) throw InputError("nelder_mead: no free variables");
    auto eval = [&](const Eigen::VectorXd& x) {
        const double v = f(x);
        return std::isfinite(v) ? v : std::numeric_limits<double>::infinity();
    };

    std::vector<Eigen::VectorXd> pts(static_cast<std::size_t>(dim + 1), x0);
    std::vector<double> vals(static_cast<std::size_t>(dim + 1));
    for (Index k = 0; k < dim; ++k) pts[static_cast<std::size_t>(k + 1)](k) += opts.initial_step;
    for (std::size_t k = 0; k < pts.size(); ++k) vals[k] = eval(pts[k]);

    std::vector<std::size_t> order(pts.size());
    NelderMeadResult res;
    for (res.iterations = 0; res.iterations < opts.max_iterations; ++res.iterations) {
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return vals[a] < vals[b]; });
        const std::size_t best = order.front();
        const std::size_t worst = order.back();
        const std::size_t second = order[order.size() - 2];

        double size = 0.0;
        for (const auto& p : pts) size = std::max(size, (p - pts[best]).lpNorm<Eigen::Infinity>());
        const double spread = vals[worst] - vals[best];
        if (std::isfinite(spread) && spread <= opts.f_tol * (std::abs(vals[best]) + opts.f_tol) &&
            size <= opts.x_tol) {
            res.converged = true;
            break;
        }

        Eigen::VectorXd centroid = Eigen::VectorXd::Zero(dim);
        for (std::size_t k = 0; k < pts.size(); ++k)
            if (k != worst) centroid += pts[k];
        centroid /= static_cast<double>(dim);

        const Eigen::VectorXd reflected = centroid + (centroid - pts[worst]);
        const double f_r = eval(reflected);
        if (f_r < vals[best]) {
            const Eigen::VectorXd expanded = centroid + 2.0 * (centroid - pts[worst]);
            const double f_e = eval(expanded);
            if (f_e < f_r) {
                pts[worst] = expanded;
                vals[worst] = f_e;
            } else {
                pts[worst] = reflected;
                vals[worst] = f_r;
            }
            continue;
        }
        if (f_r < vals[second]) {
            pts[worst] = reflected;
            vals[worst] = f_r;
            continue;
        }
        const bool outside = f_r < vals[worst];
        const Eigen::VectorXd contracted =
            outside ? Eigen::VectorXd(centroid + 0.5 * (reflected - centroid))
                    : Eigen::VectorXd(centroid + 0.5 * (pts[worst] - centroid));
        const double f_c = eval(contracted);
        if (f_c < (outside ? f_r : vals[worst])) {
            pts[worst] = contracted;
            vals[worst] = f_c;
            continue;
        }
        for (std::size_t k = 0; k < pts.size(); ++k) {
            if (k == best) continue;
            pts[k] = pts[best] + 0.5 * (pts[k] - pts[best]);
            vals[k] = eval(pts[k]);
        }
    }
    const auto best = static_cast<std::size_t>(std::min_element(vals.begin(), vals.end()) - vals.begin());
    res.x = pts[best];
    res.value = vals[best];
    return res;
}

/// Which parameters are estimated; the rest stay at their initial values.
struct FitSpec {
    ModelParams init;
    Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic> phi_free;
    std::vector<bool> lambda_free;
    int max_iterations = 2000;
    double simplex_tolerance = 1e-8;

    std::size_t free_count() const {
        return static_cast<std::size_t>(phi_free.count()) +
               static_cast<std::size_t>(std::count(lambda_free.begin(), lambda_free.end(), true));
    }
};

enum class FreeSet { lambda, phi, both };

/// Frees every lambda and/or every phi entry that is positive in init
/// (zero entries are structural and stay fixed).
inline FitSpec make_fit_spec(const ModelParams& init, FreeSet which) {
    FitSpec spec;
    spec.init = init;
    const Index n = init.n();
    spec.phi_free = Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>::Constant(n, n, false);
    spec.lambda_free.assign(static_cast<std::size_t>(n), which != FreeSet::phi);
    if (which != FreeSet::lambda) spec.phi_free = (init.phi.array() > 0.0).matrix();
    return spec;
}

struct FitResult {
    ModelParams params;
    double log_likelihood = 0.0;
    int iterations = 0;
    bool converged = false;
};

/// Maximum-likelihood estimate of the free parameters. The search runs in
/// log space so estimates stay nonnegative.
inline FitResult fit_mle(const FitSpec& spec, const NetWorthVector& a0, const ObservationSet& obs,
                         const MomentOptions& opts = {}) {
    require_valid(spec.init);
    const Index n = spec.init.n();
    if (spec.phi_free.rows() != n || spec.phi_free.cols() != n || spec.lambda_free.size() != static_cast<std::size_t>(n))
        throw InputError("fit spec masks do not match N");
    if (spec.free_count() == 0) throw InputError("fit spec has no free parameters");
    require_state(spec.init, a0);
    detail::check_observations(obs, n);

    constexpr double start_floor = 1e-6;
    std::vector<double*> slots;
    ModelParams work = spec.init;
    for (Index j = 0; j < n; ++j)
        for (Index i = 0; i < n; ++i)
            if (spec.phi_free(i, j)) slots.push_back(&work.phi(i, j));
    for (Index i = 0; i < n; ++i)
        if (spec.lambda_free[static_cast<std::size_t>(i)]) slots.push_back(&work.lambda(i));

    Eigen::VectorXd x0(static_cast<Index>(slots.size()));
    for (std::size_t k = 0; k < slots.size(); ++k) x0(static_cast<Index>(k)) = std::log(std::max(*slots[k], start_floor));

    auto apply = [&](const Eigen::VectorXd& x) {
        for (std::size_t k = 0; k < slots.size(); ++k) *slots[k] = std::exp(x(static_cast<Index>(k)));
    };
    auto objective = [&](const Eigen::VectorXd& x) {
        apply(x);
        try {
            return -log_likelihood(work, a0, obs, opts);
        } catch (const NumericError&) {
            return std::numeric_limits<double>::infinity();
        }
    };

    NelderMeadOptions nm;
    nm.max_iterations = spec.max_iterations;
    nm.f_tol = spec.simplex_tolerance;
    const auto res = nelder_mead(objective, x0, nm);
    apply(res.x);

    FitResult out;
    out.params = work;
    out.log_likelihood = -res.value;
    out.iterations = res.iterations;
    out.converged = res.converged && std::isfinite(res.value);
    return out;
}

/// CSV header t,a_1..a_N; times must be strictly positive and ascending.
inline ObservationSet read_observations(const csv::Table& table) {
    if (table.header.size() < 2 || table.header.front() != "t")
        throw InputError(table.source + ":1: expected header t,a_1..a_N");
    ObservationSet obs;
    const auto n = static_cast<Index>(table.header.size() - 1);
    for (std::size_t r = 0; r < table.rows.size(); ++r) {
        Observation o;
        o.t = csv::parse_number(table.rows[r][0], table.where(r));
        o.a.resize(n);
        for (Index i = 0; i < n; ++i)
            o.a(i) = csv::parse_number(table.rows[r][static_cast<std::size_t>(i + 1)], table.where(r));
        if (!(o.t > 0.0)) throw InputError(table.where(r) + ": observation time must be positive");
        if (!obs.records.empty() && !(o.t > obs.records.back().t))
            throw InputError(table.where(r) + ": observation times must be strictly ascending");
        if ((o.a.array() < 0.0).any()) throw InputError(table.where(r) + ": net-worths must be nonnegative");
        obs.records.push_back(std::move(o));
    }
    if (obs.records.empty()) throw InputError(table.source + ": no observations");
    return obs;
}

} // namespace netgrowth
