#pragma once

#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "netgrowth/error.hpp"
#include "netgrowth/model.hpp"

namespace netgrowth {

/// Parameter file: {"n", "phi", "lambda", "a0"?, "labels"?} plus any
/// provenance blocks ("calibration", "fit_report") carried in extra.
struct ParamsDocument {
    ModelParams params;
    std::optional<NetWorthVector> a0;
    std::vector<std::string> labels;
    nlohmann::ordered_json extra = nlohmann::ordered_json::object();
};

inline nlohmann::ordered_json to_json(const ParamsDocument& doc) {
    const Index n = doc.params.n();
    nlohmann::ordered_json j;
    j["n"] = n;
    auto phi = nlohmann::ordered_json::array();
    for (Index i = 0; i < n; ++i) {
        auto row = nlohmann::ordered_json::array();
        for (Index k = 0; k < n; ++k) row.push_back(doc.params.phi(i, k));
        phi.push_back(std::move(row));
    }
    j["phi"] = std::move(phi);
    j["lambda"] = std::vector<double>(doc.params.lambda.data(), doc.params.lambda.data() + n);
    if (doc.a0) j["a0"] = std::vector<double>(doc.a0->a.data(), doc.a0->a.data() + doc.a0->size());
    if (!doc.labels.empty()) j["labels"] = doc.labels;
    for (const auto& [key, value] : doc.extra.items()) j[key] = value;
    return j;
}

inline ParamsDocument params_from_json(const nlohmann::json& j) {
    try {
        ParamsDocument doc;
        const auto n = j.at("n").get<Index>();
        if (n < 1) throw InputError("params: n must be positive");
        const auto& phi = j.at("phi");
        if (!phi.is_array() || static_cast<Index>(phi.size()) != n)
            throw InputError("params: phi must have n rows");
        doc.params.phi.resize(n, n);
        for (Index i = 0; i < n; ++i) {
            const auto& row = phi.at(static_cast<std::size_t>(i));
            if (!row.is_array() || static_cast<Index>(row.size()) != n)
                throw InputError("params: phi row " + std::to_string(i) + " must have n entries");
            for (Index k = 0; k < n; ++k) doc.params.phi(i, k) = row.at(static_cast<std::size_t>(k)).get<double>();
        }
        const auto lambda = j.at("lambda").get<std::vector<double>>();
        if (static_cast<Index>(lambda.size()) != n) throw InputError("params: lambda must have n entries");
        doc.params.lambda = Eigen::Map<const Eigen::VectorXd>(lambda.data(), n);
        if (j.contains("a0")) {
            const auto a0 = j.at("a0").get<std::vector<double>>();
            if (static_cast<Index>(a0.size()) != n) throw InputError("params: a0 must have n entries");
            doc.a0 = NetWorthVector(Eigen::Map<const Eigen::VectorXd>(a0.data(), n));
        }
        if (j.contains("labels")) {
            doc.labels = j.at("labels").get<std::vector<std::string>>();
            if (static_cast<Index>(doc.labels.size()) != n) throw InputError("params: labels must have n entries");
        }
        for (const auto& [key, value] : j.items())
            if (key != "n" && key != "phi" && key != "lambda" && key != "a0" && key != "labels")
                doc.extra[key] = value;
        require_valid(doc.params);
        if (doc.a0) require_state(doc.params, *doc.a0);
        return doc;
    } catch (const nlohmann::json::exception& e) {
        throw InputError(std::string("params: ") + e.what());
    }
}

inline ParamsDocument read_params_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open " + path.string());
    try {
        return params_from_json(nlohmann::json::parse(in));
    } catch (const nlohmann::json::parse_error& e) {
        throw InputError(path.string() + ": " + e.what());
    }
}

} // namespace netgrowth
