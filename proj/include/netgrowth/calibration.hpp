#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "netgrowth/csv.hpp"
#include "netgrowth/error.hpp"
#include "netgrowth/model.hpp"

namespace netgrowth {

/// Intermediate transactions between sectors: transactions(i, j) is the
/// purchase of sector i's product by sector j. Currency per year.
struct IoTable {
    std::vector<std::string> labels;
    Eigen::MatrixXd transactions;
    Eigen::VectorXd outputs;

    Index n() const { return outputs.size(); }
};

struct CalibrationConfig {
    double time_unit_days = 365.0;
    double firm_share = 0.01;
    Eigen::VectorXd growth_rates;  // per day
};

inline void validate_io_table(const IoTable& table) {
    const Index n = table.n();
    if (n == 0) throw InputError("I-O table has no sectors");
    if (table.transactions.rows() != n || table.transactions.cols() != n)
        throw InputError("I-O transactions must be N x N with N = number of outputs");
    if (!table.labels.empty() && table.labels.size() != static_cast<std::size_t>(n))
        throw InputError("I-O table has " + std::to_string(table.labels.size()) + " labels for " +
                         std::to_string(n) + " sectors");
    for (Index j = 0; j < n; ++j) {
        if (!(table.outputs(j) > 0.0) || !std::isfinite(table.outputs(j)))
            throw InputError("output of sector " + std::to_string(j) + " must be positive");
        for (Index i = 0; i < n; ++i)
            if (!(table.transactions(i, j) >= 0.0) || !std::isfinite(table.transactions(i, j)))
                throw InputError("transaction (" + std::to_string(i) + "," + std::to_string(j) +
                                 ") must be finite and nonnegative");
        if (table.transactions.col(j).sum() > table.outputs(j) * (1.0 + 1e-12))
            throw InputError("intermediate inputs of sector " + std::to_string(j) + " exceed its output");
    }
}

/// Input coefficients c_ij = x_ij / output_j.
inline Eigen::MatrixXd leontief_coefficients(const IoTable& table) {
    validate_io_table(table);
    Eigen::MatrixXd c = table.transactions;
    for (Index j = 0; j < table.n(); ++j) c.col(j) /= table.outputs(j);
    return c;
}

/// Annual coefficients to daily trade rates.
inline Eigen::MatrixXd calibrate_phi(const Eigen::MatrixXd& coefficients, const CalibrationConfig& config) {
    if (!(config.time_unit_days > 0.0)) throw InputError("time unit must be positive");
    if ((coefficients.array() < 0.0).any() || (coefficients.array() > 1.0).any())
        throw InputError("Leontief coefficients must lie in [0, 1]");
    return coefficients / config.time_unit_days;
}

inline NetWorthVector representative_firm_initials(const Eigen::VectorXd& outputs, const CalibrationConfig& config) {
    if (!(config.firm_share > 0.0 && config.firm_share <= 1.0)) throw InputError("firm share must lie in (0, 1]");
    if ((outputs.array() <= 0.0).any()) throw InputError("sector outputs must be positive");
    return NetWorthVector(config.firm_share * outputs);
}

struct LambdaCalibration {
    Eigen::VectorXd lambda;
    std::vector<Index> clamped;
    std::vector<std::string> warnings;
};

/// Expenditure rates matching the observed growth at t = 0:
/// g_i a0_i = sum_j phi_ij a0_j - lambda_i a0_i. Negative results clamp to 0.
inline LambdaCalibration calibrate_lambda(const Eigen::MatrixXd& phi, const NetWorthVector& a0,
                                          const Eigen::VectorXd& growth_per_day) {
    const Index n = a0.size();
    if (phi.rows() != n || phi.cols() != n || growth_per_day.size() != n)
        throw InputError("calibrate_lambda: shape mismatch");
    if ((a0.a.array() <= 0.0).any()) throw InputError("calibrate_lambda: a0 must be positive");
    LambdaCalibration out;
    out.lambda.resize(n);
    const Eigen::VectorXd income = phi * a0.a;
    for (Index i = 0; i < n; ++i) {
        const double l = income(i) / a0.a(i) - growth_per_day(i);
        if (l < 0.0) {
            out.clamped.push_back(i);
            out.warnings.push_back("lambda[" + std::to_string(i) + "] = " + csv::format_number(l) +
                                   " clamped to 0 (growth exceeds income rate)");
            out.lambda(i) = 0.0;
        } else {
            out.lambda(i) = l;
        }
    }
    return out;
}

struct CalibratedModel {
    ModelParams params;
    NetWorthVector a0;
    std::vector<std::string> labels;
    std::vector<std::string> warnings;
};

inline CalibratedModel calibrate(const IoTable& table, const CalibrationConfig& config) {
    if (config.growth_rates.size() != table.n())
        throw InputError("growth rates have length " + std::to_string(config.growth_rates.size()) + ", expected " +
                         std::to_string(table.n()));
    CalibratedModel m;
    m.labels = table.labels;
    m.params.phi = calibrate_phi(leontief_coefficients(table), config);
    m.a0 = representative_firm_initials(table.outputs, config);
    auto lam = calibrate_lambda(m.params.phi, m.a0, config.growth_rates);
    m.params.lambda = std::move(lam.lambda);
    m.warnings = std::move(lam.warnings);
    return m;
}

/// Canonical layout: header label,x_1..x_N,output; row i holds sector i's
/// sales to every sector and its total output.
inline IoTable read_io_table(const csv::Table& t) {
    const auto& h = t.header;
    if (!h.empty() && h.front() == "sector")
        throw InputError(t.source + ":1: transposed 'sector,...' layout is not supported; use label,x_1..x_N,output");
    if (h.empty() || h.front() != "label") throw InputError(t.source + ":1: first column must be 'label'");
    if (h.back() != "output") throw InputError(t.source + ":1: missing 'output' column");
    const auto n = static_cast<Index>(h.size()) - 2;
    if (n < 1) throw InputError(t.source + ":1: no transaction columns");
    if (static_cast<Index>(t.rows.size()) != n)
        throw InputError(t.source + ": expected " + std::to_string(n) + " sector rows, found " +
                         std::to_string(t.rows.size()));
    IoTable table;
    table.transactions.resize(n, n);
    table.outputs.resize(n);
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
        const auto& row = t.rows[r];
        table.labels.push_back(row[0]);
        for (Index j = 0; j < n; ++j)
            table.transactions(static_cast<Index>(r), j) = csv::parse_number(row[static_cast<std::size_t>(j + 1)], t.where(r));
        table.outputs(static_cast<Index>(r)) = csv::parse_number(row.back(), t.where(r));
    }
    validate_io_table(table);
    return table;
}

/// Growth CSV (label,annual_growth) matched to labels, converted to per day.
inline Eigen::VectorXd read_growth_rates(const csv::Table& t, const std::vector<std::string>& labels,
                                         double time_unit_days) {
    if (t.header.size() != 2 || t.header[0] != "label" || t.header[1] != "annual_growth")
        throw InputError(t.source + ":1: expected header label,annual_growth");
    std::map<std::string, double> by_label;
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
        if (!by_label.emplace(t.rows[r][0], csv::parse_number(t.rows[r][1], t.where(r))).second)
            throw InputError(t.where(r) + ": duplicate label '" + t.rows[r][0] + "'");
    }
    Eigen::VectorXd g(static_cast<Index>(labels.size()));
    for (std::size_t i = 0; i < labels.size(); ++i) {
        auto it = by_label.find(labels[i]);
        if (it == by_label.end()) throw InputError(t.source + ": no growth rate for sector '" + labels[i] + "'");
        g(static_cast<Index>(i)) = it->second / time_unit_days;
    }
    return g;
}

} // namespace netgrowth
