#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "netgrowth/csv.hpp"
#include "netgrowth/error.hpp"
#include "netgrowth/model.hpp"
#include "netgrowth/moments.hpp"
#include "netgrowth/simulation.hpp"

namespace netgrowth {

/// psi(q) = erfinv(2q - 1), the standardized quantile factor: the
/// q-quantile of N(m, s2) is m + sqrt(2 s2) psi(q).
inline double psi_quantile(double q) {
    if (!(q > 0.0 && q < 1.0)) throw InputError("q must lie in (0, 1)");
    if (q == 0.5) return 0.0;
    if (q > 0.5) return -psi_quantile(1.0 - q);

    // Initial guess (Giles' single-precision erfinv), then Halley steps on
    // erfc(-x) = 2q, which stays accurate deep in the lower tail.
    const double y = 2.0 * q - 1.0;
    double w = -std::log(2.0 * q * (1.0 - y));
    double p;
    if (w < 5.0) {
        w -= 2.5;
        p = 2.81022636e-08;
        p = 3.43273939e-07 + p * w;
        p = -3.5233877e-06 + p * w;
        p = -4.39150654e-06 + p * w;
        p = 0.00021858087 + p * w;
        p = -0.00125372503 + p * w;
        p = -0.00417768164 + p * w;
        p = 0.246640727 + p * w;
        p = 1.50140941 + p * w;
    } else {
        w = std::sqrt(w) - 3.0;
        p = -0.000200214257;
        p = 0.000100950558 + p * w;
        p = 0.00134934322 + p * w;
        p = -0.00367342844 + p * w;
        p = 0.00573950773 + p * w;
        p = -0.0076224613 + p * w;
        p = 0.00943887047 + p * w;
        p = 1.00167406 + p * w;
        p = 2.83297682 + p * w;
    }
    double x = p * y;
    const double two_over_sqrt_pi = 2.0 / std::sqrt(std::numbers::pi);
    for (int it = 0; it < 8; ++it) {
        const double f = std::erfc(-x) - 2.0 * q;
        const double fp = two_over_sqrt_pi * std::exp(-x * x);
        if (fp == 0.0) break;
        const double step = f / (fp - x * f);  // Halley: f'' = -2x f'
        x -= step;
        if (std::abs(step) <= 1e-16 * std::max(1.0, std::abs(x))) break;
    }
    return x;
}

/// q-quantile of the Gaussian marginal N(mu1_j, mu2_jj).
inline double value_at_risk(double mu1_j, double mu2_jj, double q) {
    if (!(mu2_jj >= 0.0)) throw InputError("value_at_risk: variance must be nonnegative");
    const double psi = psi_quantile(q);
    if (mu2_jj == 0.0) return mu1_j;
    return mu1_j + std::sqrt(2.0 * mu2_jj) * psi;
}

namespace detail {

/// Variance of a_i given a_j; rejects a non-PSD 2x2 block.
inline double conditional_variance(double mu2_ii, double mu2_jj, double mu2_ij) {
    if (!(mu2_jj > 0.0)) throw InputError("conditioning variance mu2_jj must be positive");
    if (!(mu2_ii >= 0.0)) throw InputError("variance mu2_ii must be nonnegative");
    const double det = mu2_ii * mu2_jj - mu2_ij * mu2_ij;
    if (det < -1e-9 * mu2_ii * mu2_jj) throw InputError("covariance block is not positive semidefinite");
    return std::max(0.0, mu2_ii - mu2_ij * mu2_ij / mu2_jj);
}

} // namespace detail

/// q-quantile of a_i conditioned on a_j sitting at its own value at risk.
inline double conditional_value_at_risk(double mu1_i, double mu1_j, double mu2_ii, double mu2_jj, double mu2_ij,
                                        double q) {
    const double var_c = detail::conditional_variance(mu2_ii, mu2_jj, mu2_ij);
    const double v_j = value_at_risk(mu1_j, mu2_jj, q);
    const double mean_c = mu1_i + (mu2_ij / mu2_jj) * (v_j - mu1_j);
    return mean_c + std::sqrt(2.0 * var_c) * psi_quantile(q);
}

/// (C_i|j - mu1_i) / mu1_i. The covariance term keeps its sign; for
/// mu2_ij >= 0 this is the usual sqrt(2 mu2_ij^2 / mu2_jj) form.
inline double relative_risk(double mu1_i, double mu2_ii, double mu2_jj, double mu2_ij, double q) {
    if (!(mu1_i > 0.0)) throw InputError("relative_risk: mean mu1_i must be positive");
    const double var_c = detail::conditional_variance(mu2_ii, mu2_jj, mu2_ij);
    const double spread = mu2_ij * std::sqrt(2.0 / mu2_jj) + std::sqrt(2.0 * var_c);
    return spread * psi_quantile(q) / mu1_i;
}

struct RiskPoint {
    double t = 0.0;
    Index firm = 0;
    double r = 0.0;  // relative risk R_i|j
    double c = 0.0;  // conditional value at risk C_i|j
    double v = 0.0;  // unconditional value at risk V_i
};

struct RiskCurve {
    Index source = 0;
    double q = 0.0;
    std::vector<RiskPoint> points;  // time-major, firms in index order
};

/// Risk of every firm against a stressed source firm along a time grid.
/// While the source has zero variance (t = 0) conditioning carries no
/// information and C_i|j falls back to V_i.
inline RiskCurve risk_curve(const ModelParams& params, const NetWorthVector& a0, Index source, double q,
                            std::span<const double> t_grid, const MomentOptions& opts = {}) {
    if (source < 0 || source >= params.n())
        throw InputError("source index " + std::to_string(source) + " out of range");
    psi_quantile(q);
    const auto states = solve_moments_closed_form(params, a0, t_grid, opts);
    RiskCurve curve;
    curve.source = source;
    curve.q = q;
    curve.points.reserve(states.size() * static_cast<std::size_t>(params.n()));
    for (const auto& s : states) {
        const double var_j = s.mu2(source, source);
        for (Index i = 0; i < params.n(); ++i) {
            RiskPoint pt;
            pt.t = s.t;
            pt.firm = i;
            const double var_i = std::max(0.0, s.mu2(i, i));
            pt.v = value_at_risk(s.mu1(i), var_i, q);
            if (var_j > 0.0) {
                pt.c = conditional_value_at_risk(s.mu1(i), s.mu1(source), var_i, var_j, s.mu2(i, source), q);
                pt.r = relative_risk(s.mu1(i), var_i, var_j, s.mu2(i, source), q);
            } else {
                if (!(s.mu1(i) > 0.0)) throw InputError("relative_risk: mean mu1_i must be positive");
                pt.c = pt.v;
                pt.r = (pt.c - s.mu1(i)) / s.mu1(i);
            }
            curve.points.push_back(pt);
        }
    }
    return curve;
}

/// Points at the last time of the curve, ordered by descending |R|.
inline std::vector<RiskPoint> rank_by_risk(const RiskCurve& curve) {
    std::vector<RiskPoint> last;
    if (curve.points.empty()) return last;
    const double t_end = curve.points.back().t;
    for (const auto& p : curve.points)
        if (p.t == t_end) last.push_back(p);
    std::stable_sort(last.begin(), last.end(),
                     [](const RiskPoint& a, const RiskPoint& b) { return std::abs(a.r) > std::abs(b.r); });
    return last;
}

inline std::string firm_label(std::span<const std::string> labels, Index i) {
    if (i >= 0 && static_cast<std::size_t>(i) < labels.size()) return labels[static_cast<std::size_t>(i)];
    return "firm_" + std::to_string(i + 1);
}

/// CSV: t,i,sector_label,V,C,R (i is 0-based).
inline void write_risk_csv(std::ostream& out, const RiskCurve& curve, std::span<const std::string> labels) {
    out << "t,i,sector_label,V,C,R\n";
    for (const auto& p : curve.points)
        out << csv::format_number(p.t) << ',' << p.firm << ',' << csv::escape(firm_label(labels, p.firm)) << ','
            << csv::format_number(p.v) << ',' << csv::format_number(p.c) << ',' << csv::format_number(p.r) << '\n';
}

/// CSV: rank,i,sector_label,R
inline void write_ranking_csv(std::ostream& out, const RiskCurve& curve, std::span<const std::string> labels) {
    out << "rank,i,sector_label,R\n";
    int rank = 1;
    for (const auto& p : rank_by_risk(curve))
        out << rank++ << ',' << p.firm << ',' << csv::escape(firm_label(labels, p.firm)) << ','
            << csv::format_number(p.r) << '\n';
}

/// Ensemble counterpart of value_at_risk.
inline double empirical_value_at_risk(const PathEnsemble& ens, Index firm, double t, double q) {
    return empirical_quantile(ens, firm, t, q);
}

/// Ensemble counterpart of conditional_value_at_risk: q-quantile of a_i over
/// the paths whose a_j lies within +-band (relative) of the empirical V_j.
inline double empirical_conditional_value_at_risk(const PathEnsemble& ens, Index i, Index j, double t, double q,
                                                  double band = 0.005) {
    if (i < 0 || i >= ens.n || j < 0 || j >= ens.n) throw InputError("firm index out of range");
    const double v_j = empirical_quantile(ens, j, t, q);
    const std::size_t g = ens.time_index(t);
    const double half = band * std::abs(v_j);
    std::vector<double> selected;
    for (std::int64_t p = 0; p < ens.paths; ++p)
        if (std::abs(ens(p, g, j) - v_j) <= half) selected.push_back(ens(p, g, i));
    if (selected.empty()) throw NumericError("no paths inside the conditioning band");
    return sample_quantile(std::move(selected), q);
}

} // namespace netgrowth
