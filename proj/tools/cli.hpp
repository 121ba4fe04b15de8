#pragma once

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <openssl/evp.h>

#include "netgrowth/netgrowth.hpp"

#ifndef NETGROWTH_VERSION
#define NETGROWTH_VERSION "0.0.0"
#endif

namespace netgrowth::cli {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

enum ExitCode : int { kOk = 0, kUsage = 2, kNumeric = 3 };

inline std::string sha256_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("cannot open " + path.string());
    EVP_MD_CTX* ctx = EVP_MD_CTX_new();
    EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
    char buf[1 << 16];
    while (in.read(buf, sizeof buf) || in.gcount() > 0) EVP_DigestUpdate(ctx, buf, static_cast<std::size_t>(in.gcount()));
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_DigestFinal_ex(ctx, md, &len);
    EVP_MD_CTX_free(ctx);
    std::ostringstream hex;
    for (unsigned int i = 0; i < len; ++i) hex << std::hex << std::setw(2) << std::setfill('0') << int(md[i]);
    return hex.str();
}

/// Sidecar <output>.manifest.json describing how an output was produced.
class RunManifest {
public:
    explicit RunManifest(std::string command)
        : command_(std::move(command)), start_(std::chrono::steady_clock::now()) {}

    void option(const std::string& key, ojson value) { options_[key] = std::move(value); }
    void input(const fs::path& path) { inputs_[path.string()] = sha256_file(path); }
    void seed(std::uint64_t s) { seed_ = s; }
    void output(const fs::path& path) { outputs_.push_back(path.string()); }

    void write_beside(const fs::path& primary) const {
        ojson j;
        j["command"] = command_;
        j["options"] = options_;
        j["input_digests_sha256"] = inputs_;
        j["outputs"] = outputs_;
        if (seed_) j["seed"] = *seed_;
        j["tool_version"] = NETGROWTH_VERSION;
        j["wall_clock_seconds"] =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
        std::ofstream out(primary.string() + ".manifest.json");
        if (!out) throw InputError("cannot write manifest for " + primary.string());
        out << j.dump(2) << '\n';
    }

private:
    std::string command_;
    std::chrono::steady_clock::time_point start_;
    ojson options_ = ojson::object();
    ojson inputs_ = ojson::object();
    std::vector<std::string> outputs_;
    std::optional<std::uint64_t> seed_;
};

inline std::ofstream open_output(const fs::path& path, bool binary = false) {
    std::ofstream out(path, binary ? std::ios::binary : std::ios::out);
    if (!out) throw InputError("cannot write " + path.string());
    return out;
}

/// {0, step, 2 step, ...} up to t_max, with t_max appended if it is not a multiple.
inline std::vector<double> time_grid(double t_max, double step) {
    if (!(t_max >= 0.0)) throw InputError("--t-max must be nonnegative");
    if (!(step > 0.0)) throw InputError("--step must be positive");
    std::vector<double> grid;
    for (long k = 0;; ++k) {
        const double t = static_cast<double>(k) * step;
        if (t > t_max * (1.0 + 1e-12) + 1e-12) break;
        grid.push_back(t);
    }
    if (grid.back() < t_max * (1.0 - 1e-12)) grid.push_back(t_max);
    return grid;
}

inline NetWorthVector require_a0(const ParamsDocument& doc, const fs::path& path) {
    if (!doc.a0) throw InputError(path.string() + ": params file has no \"a0\" initial net-worths");
    return *doc.a0;
}

inline Index resolve_sector(const std::string& token, const std::vector<std::string>& labels, Index n) {
    for (std::size_t i = 0; i < labels.size(); ++i)
        if (labels[i] == token) return static_cast<Index>(i);
    if (!token.empty() && token.find_first_not_of("0123456789") == std::string::npos) {
        const long v = std::stol(token);
        if (v < n) return static_cast<Index>(v);
    }
    std::string valid;
    for (Index i = 0; i < n; ++i) valid += "\n  " + std::to_string(i) + ": " + firm_label(labels, i);
    throw InputError("unknown sector '" + token + "'; valid sectors:" + valid);
}

struct CalibrateOptions {
    std::string io_table, growth, out;
    double share = 0.01;
    double time_unit = 365.0;
};

inline int cmd_calibrate(const CalibrateOptions& o, std::ostream& err) {
    RunManifest manifest("calibrate");
    const IoTable table = read_io_table(csv::read_file(o.io_table));
    CalibrationConfig config;
    config.firm_share = o.share;
    config.time_unit_days = o.time_unit;
    config.growth_rates = read_growth_rates(csv::read_file(o.growth), table.labels, o.time_unit);
    const CalibratedModel model = calibrate(table, config);
    for (const auto& w : model.warnings) err << "warning: " << w << '\n';

    ParamsDocument doc;
    doc.params = model.params;
    doc.a0 = model.a0;
    doc.labels = model.labels;
    doc.extra["calibration"] = {{"io_table", o.io_table},
                                {"growth", o.growth},
                                {"share", o.share},
                                {"time_unit_days", o.time_unit},
                                {"warnings", model.warnings}};
    open_output(o.out) << to_json(doc).dump(2) << '\n';

    manifest.option("share", o.share);
    manifest.option("time_unit", o.time_unit);
    manifest.input(o.io_table);
    manifest.input(o.growth);
    manifest.output(o.out);
    manifest.write_beside(o.out);
    return kOk;
}

struct MomentsOptions {
    std::string params, out, method = "closed-form";
    double t_max = 90.0, step = 1.0;
};

inline int cmd_moments(const MomentsOptions& o) {
    RunManifest manifest("moments");
    const ParamsDocument doc = read_params_file(o.params);
    const NetWorthVector a0 = require_a0(doc, o.params);
    const auto grid = time_grid(o.t_max, o.step);
    std::vector<MomentState> states;
    if (o.method == "closed-form")
        states = solve_moments_closed_form(doc.params, a0, grid);
    else if (o.method == "ode")
        states = solve_moments_ode(doc.params, a0, grid);
    else
        throw InputError("--method must be closed-form or ode");
    auto out = open_output(o.out);
    write_moments_csv(out, states);

    manifest.option("t_max", o.t_max);
    manifest.option("step", o.step);
    manifest.option("method", o.method);
    manifest.input(o.params);
    manifest.output(o.out);
    manifest.write_beside(o.out);
    return kOk;
}

struct SimulateOptions {
    std::string params, out, moments_out;
    std::int64_t paths = 100000;
    double dt = 0.01, t_max = 90.0, record_step = 1.0;
    std::uint64_t seed = 42;
    bool binary = false;
    unsigned threads = 0;
    double mem_budget_mb = 4096.0;
};

inline int cmd_simulate(const SimulateOptions& o) {
    RunManifest manifest("simulate");
    const ParamsDocument doc = read_params_file(o.params);
    const NetWorthVector a0 = require_a0(doc, o.params);
    SimConfig cfg;
    cfg.dt = o.dt;
    cfg.t_end = o.t_max;
    cfg.paths = o.paths;
    cfg.seed = o.seed;
    cfg.threads = o.threads;
    cfg.memory_budget = static_cast<std::uint64_t>(o.mem_budget_mb * 1024.0 * 1024.0);
    const auto grid = time_grid(o.t_max, o.record_step);
    const PathEnsemble ens = run_monte_carlo(doc.params, a0, cfg, grid);

    {
        auto out = open_output(o.out, o.binary);
        if (o.binary)
            write_ensemble_binary(out, ens);
        else
            write_ensemble_csv(out, ens);
    }
    const std::string moments_path = o.moments_out.empty() ? o.out + ".moments.csv" : o.moments_out;
    std::vector<MomentState> states;
    for (double t : ens.times) states.push_back(empirical_moments(ens, t));
    auto mout = open_output(moments_path);
    write_moments_csv(mout, states);

    manifest.option("paths", o.paths);
    manifest.option("dt", o.dt);
    manifest.option("t_max", o.t_max);
    manifest.option("record_step", o.record_step);
    manifest.option("binary", o.binary);
    manifest.option("threads", detail::resolve_threads(o.threads));
    manifest.seed(o.seed);
    manifest.input(o.params);
    manifest.output(o.out);
    manifest.output(moments_path);
    manifest.write_beside(o.out);
    return kOk;
}

struct RiskOptions {
    std::string params, source, out, ranking;
    double q = 0.01, t_max = 90.0, step = 1.0;
};

inline int cmd_risk(const RiskOptions& o) {
    RunManifest manifest("risk");
    const ParamsDocument doc = read_params_file(o.params);
    const NetWorthVector a0 = require_a0(doc, o.params);
    const Index source = resolve_sector(o.source, doc.labels, doc.params.n());
    const auto grid = time_grid(o.t_max, o.step);
    const RiskCurve curve = risk_curve(doc.params, a0, source, o.q, grid);
    {
        auto out = open_output(o.out);
        write_risk_csv(out, curve, doc.labels);
    }
    const std::string ranking = o.ranking.empty() ? o.out + ".ranking.csv" : o.ranking;
    auto rout = open_output(ranking);
    write_ranking_csv(rout, curve, doc.labels);

    manifest.option("source", o.source);
    manifest.option("source_index", source);
    manifest.option("q", o.q);
    manifest.option("t_max", o.t_max);
    manifest.option("step", o.step);
    manifest.input(o.params);
    manifest.output(o.out);
    manifest.output(ranking);
    manifest.write_beside(o.out);
    return kOk;
}

struct FitOptions {
    std::string params_init, data, out, free = "lambda";
    int max_iter = 2000;
    double tol = 1e-8;
};

inline int cmd_fit(const FitOptions& o, std::ostream& err) {
    RunManifest manifest("fit");
    const ParamsDocument init = read_params_file(o.params_init);
    const NetWorthVector a0 = require_a0(init, o.params_init);
    const ObservationSet obs = read_observations(csv::read_file(o.data));
    FreeSet which = FreeSet::lambda;
    if (o.free == "phi")
        which = FreeSet::phi;
    else if (o.free == "both")
        which = FreeSet::both;
    else if (o.free != "lambda")
        throw InputError("--free must be lambda, phi or both");
    FitSpec spec = make_fit_spec(init.params, which);
    spec.max_iterations = o.max_iter;
    spec.simplex_tolerance = o.tol;
    const FitResult fit = fit_mle(spec, a0, obs);
    if (!fit.converged) err << "warning: optimizer did not converge; best point so far is reported\n";

    ParamsDocument doc = init;
    doc.params = fit.params;
    doc.extra["fit_report"] = {{"log_likelihood", fit.log_likelihood},
                               {"iterations", fit.iterations},
                               {"converged", fit.converged},
                               {"free", o.free}};
    open_output(o.out) << to_json(doc).dump(2) << '\n';

    manifest.option("free", o.free);
    manifest.option("max_iter", o.max_iter);
    manifest.option("tol", o.tol);
    manifest.input(o.params_init);
    manifest.input(o.data);
    manifest.output(o.out);
    manifest.write_beside(o.out);
    return kOk;
}

/// Parses argv and runs one subcommand. Exit codes: 0 success, 2 usage or
/// input error, 3 numerical failure.
inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    CLI::App app{"Moment dynamics, simulation and risk for interdependent firm net-worths", "netgrowth"};
    app.set_version_flag("--version", NETGROWTH_VERSION);
    app.require_subcommand(1);

    CalibrateOptions cal;
    auto* c = app.add_subcommand("calibrate", "Derive phi, lambda and a0 from an input-output table");
    c->add_option("--io-table", cal.io_table, "I-O table CSV (label,x_1..x_N,output)")->required();
    c->add_option("--growth", cal.growth, "Growth CSV (label,annual_growth)")->required();
    c->add_option("--share", cal.share, "Representative-firm share of sector output")->capture_default_str();
    c->add_option("--time-unit", cal.time_unit, "Days per coefficient period")->capture_default_str();
    c->add_option("-o,--output", cal.out, "Params JSON")->required();

    MomentsOptions mom;
    auto* m = app.add_subcommand("moments", "Analytic mean/covariance trajectory");
    m->add_option("--params", mom.params)->required();
    m->add_option("--t-max", mom.t_max)->capture_default_str();
    m->add_option("--step", mom.step)->capture_default_str();
    m->add_option("--method", mom.method, "closed-form or ode")->capture_default_str();
    m->add_option("-o,--output", mom.out)->required();

    SimulateOptions sim;
    auto* s = app.add_subcommand("simulate", "Euler-Maruyama Monte Carlo ensemble");
    s->add_option("--params", sim.params)->required();
    s->add_option("--paths", sim.paths)->capture_default_str();
    s->add_option("--dt", sim.dt)->capture_default_str();
    s->add_option("--t-max", sim.t_max)->capture_default_str();
    s->add_option("--record-step", sim.record_step)->capture_default_str();
    s->add_option("--seed", sim.seed)->capture_default_str();
    s->add_option("--threads", sim.threads, "0: NETGROWTH_THREADS or all cores")->capture_default_str();
    s->add_option("--mem-budget-mb", sim.mem_budget_mb)->capture_default_str();
    s->add_option("--moments-out", sim.moments_out, "Empirical moments CSV (default <output>.moments.csv)");
    s->add_flag("--binary", sim.binary, "Write the NGSIM1 binary layout instead of CSV");
    s->add_option("-o,--output", sim.out)->required();

    RiskOptions rk;
    auto* r = app.add_subcommand("risk", "Relative risk curves against a stressed sector");
    r->add_option("--params", rk.params)->required();
    r->add_option("--source", rk.source, "Stressed sector label or 0-based index")->required();
    r->add_option("--q", rk.q)->capture_default_str();
    r->add_option("--t-max", rk.t_max)->capture_default_str();
    r->add_option("--step", rk.step)->capture_default_str();
    r->add_option("-o,--output", rk.out)->required();
    r->add_option("--ranking", rk.ranking, "Ranking CSV (default <output>.ranking.csv)");

    FitOptions ft;
    auto* f = app.add_subcommand("fit", "Maximum-likelihood fit to net-worth snapshots");
    f->add_option("--params-init", ft.params_init)->required();
    f->add_option("--data", ft.data, "Observations CSV (t,a_1..a_N)")->required();
    f->add_option("--free", ft.free, "lambda, phi or both")->capture_default_str();
    f->add_option("--max-iter", ft.max_iter)->capture_default_str();
    f->add_option("--tol", ft.tol)->capture_default_str();
    f->add_option("-o,--output", ft.out)->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kOk : kUsage;
    }

    try {
        if (c->parsed()) return cmd_calibrate(cal, err);
        if (m->parsed()) return cmd_moments(mom);
        if (s->parsed()) return cmd_simulate(sim);
        if (r->parsed()) return cmd_risk(rk);
        if (f->parsed()) return cmd_fit(ft, err);
    } catch (const InputError& e) {
        err << "error: " << e.what() << '\n';
        return kUsage;
    } catch (const NumericError& e) {
        err << "numeric failure: " << e.what() << '\n';
        return kNumeric;
    } catch (const std::exception& e) {
        err << "numeric failure: " << e.what() << '\n';
        return kNumeric;
    }
    return kUsage;
}

} // namespace netgrowth::cli
