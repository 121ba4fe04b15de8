#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "netgrowth/error.hpp"

namespace netgrowth {

using Index = Eigen::Index;

/// Trade-rate parameters phi (N x N, income of i per unit net-worth of j)
/// and expenditure rates lambda (N). Rates are per day.
struct ModelParams {
    Eigen::MatrixXd phi;
    Eigen::VectorXd lambda;

    Index n() const { return lambda.size(); }
};

/// Net-worths of all firms at time t (days).
struct NetWorthVector {
    Eigen::VectorXd a;
    double t = 0.0;

    NetWorthVector() = default;
    NetWorthVector(Eigen::VectorXd values, double time = 0.0) : a(std::move(values)), t(time) {}

    Index size() const { return a.size(); }
};

/// Linear drift generator: A_ij = phi_ij - lambda_i delta_ij.
struct DriftMatrix {
    Eigen::MatrixXd a_tilde;
};

/// State-linear diffusion coefficients B_ijk, so that B_ij(a) = sum_k B_ijk a_k.
class DiffusionTensor {
public:
    DiffusionTensor() = default;
    explicit DiffusionTensor(Index n) : n_(n), data_(static_cast<std::size_t>(n * n * n), 0.0) {}

    Index n() const { return n_; }

    double operator()(Index i, Index j, Index k) const { return data_[offset(i, j, k)]; }
    double& operator()(Index i, Index j, Index k) { return data_[offset(i, j, k)]; }

    /// B(a)_ij = sum_k B_ijk a_k, the instantaneous covariance rate at state a.
    Eigen::MatrixXd contract(const Eigen::VectorXd& a) const {
        Eigen::MatrixXd out = Eigen::MatrixXd::Zero(n_, n_);
        for (Index i = 0; i < n_; ++i)
            for (Index j = 0; j < n_; ++j) {
                double s = 0.0;
                for (Index k = 0; k < n_; ++k) s += (*this)(i, j, k) * a(k);
                out(i, j) = s;
            }
        return out;
    }

private:
    std::size_t offset(Index i, Index j, Index k) const {
        return static_cast<std::size_t>((i * n_ + j) * n_ + k);
    }

    Index n_ = 0;
    std::vector<double> data_;
};

/// Human-readable list of invariant violations; empty means valid.
struct ValidationReport {
    std::vector<std::string> violations;

    bool ok() const { return violations.empty(); }

    std::string summary() const {
        std::string s;
        for (const auto& v : violations) {
            if (!s.empty()) s += "; ";
            s += v;
        }
        return s;
    }
};

inline ValidationReport validate_params(const ModelParams& params) {
    ValidationReport report;
    const Index n = params.lambda.size();
    if (n == 0) report.violations.emplace_back("n must be positive");
    if (params.phi.rows() != n || params.phi.cols() != n) {
        report.violations.push_back("phi shape " + std::to_string(params.phi.rows()) + "x" +
                                    std::to_string(params.phi.cols()) + " does not match lambda length " +
                                    std::to_string(n));
    }
    for (Index i = 0; i < params.phi.rows(); ++i)
        for (Index j = 0; j < params.phi.cols(); ++j) {
            const double v = params.phi(i, j);
            const std::string where = "phi[" + std::to_string(i) + "][" + std::to_string(j) + "]";
            if (!std::isfinite(v))
                report.violations.push_back("non-finite " + where);
            else if (v < 0.0)
                report.violations.push_back("negative " + where);
        }
    for (Index i = 0; i < n; ++i) {
        const double v = params.lambda(i);
        const std::string where = "lambda[" + std::to_string(i) + "]";
        if (!std::isfinite(v))
            report.violations.push_back("non-finite " + where);
        else if (v < 0.0)
            report.violations.push_back("negative " + where);
    }
    return report;
}

inline void require_valid(const ModelParams& params) {
    auto report = validate_params(params);
    if (!report.ok()) throw InputError("invalid model parameters: " + report.summary());
}

inline void require_state(const ModelParams& params, const NetWorthVector& a, const char* what = "a0") {
    if (a.size() != params.n())
        throw InputError(std::string(what) + " has length " + std::to_string(a.size()) + ", expected " +
                         std::to_string(params.n()));
    for (Index i = 0; i < a.size(); ++i)
        if (!std::isfinite(a.a(i)) || a.a(i) < 0.0)
            throw InputError(std::string(what) + "[" + std::to_string(i) + "] must be finite and nonnegative");
}

inline DriftMatrix build_drift_matrix(const ModelParams& params) {
    require_valid(params);
    DriftMatrix d{params.phi};
    d.a_tilde.diagonal() -= params.lambda;
    return d;
}

inline DiffusionTensor build_diffusion_tensor(const ModelParams& params) {
    require_valid(params);
    const Index n = params.n();
    DiffusionTensor b(n);
    for (Index i = 0; i < n; ++i)
        for (Index j = 0; j < n; ++j)
            for (Index k = 0; k < n; ++k) {
                if (i == j)
                    b(i, j, k) = params.phi(i, k) + (i == k ? params.lambda(i) : 0.0);
                else
                    b(i, j, k) = std::sqrt(params.phi(i, k) * params.phi(j, k));
            }
    return b;
}

} // namespace netgrowth
