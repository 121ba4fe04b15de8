#include <catch2/catch_amalgamated.hpp>

#include <random>
#include <sstream>

#include "netgrowth/moments.hpp"
#include "netgrowth/risk.hpp"
#include "netgrowth/simulation.hpp"
#include "oracles.hpp"

using namespace netgrowth;
using Catch::Approx;

namespace {

ModelParams scalar_model(double lambda) {
    return ModelParams{Eigen::MatrixXd::Zero(1, 1), Eigen::VectorXd::Constant(1, lambda)};
}

NetWorthVector scalar_a0(double a) { return NetWorthVector(Eigen::VectorXd::Constant(1, a)); }

SimConfig config(double dt, double t_end, std::int64_t paths, std::uint64_t seed, unsigned threads = 1) {
    SimConfig c;
    c.dt = dt;
    c.t_end = t_end;
    c.paths = paths;
    c.seed = seed;
    c.threads = threads;
    return c;
}

} // namespace

TEST_CASE("em_step examples", "[sde_sim]") {
    const std::vector<double> zero{0.0};
    const auto a = em_step(scalar_a0(100), scalar_model(0.1), 0.01, zero, zero);
    CHECK(a.a(0) == Approx(99.9).epsilon(1e-14));

    std::mt19937_64 rng(1);
    const auto p = oracle::random_params(rng, 3);
    const std::vector<double> w{0.7, -1.2, 2.0};
    const auto z = em_step(NetWorthVector(Eigen::Vector3d::Zero()), p, 0.5, w, w);
    CHECK(z.a.isZero(0.0));

    const std::vector<double> one{1.0};
    const auto b = em_step(scalar_a0(25), scalar_model(0.04), 1.0, zero, one);
    CHECK(b.a(0) == Approx(23.0).epsilon(1e-14));

    CHECK_THROWS_AS(em_step(scalar_a0(-1), scalar_model(0.1), 0.01, zero, zero), InputError);
}

TEST_CASE("em_step uses one income draw per paying firm", "[sde_sim]") {
    // Firms 0 and 1 both receive from firm 2; a single draw for firm 2 moves both.
    ModelParams p{Eigen::MatrixXd::Zero(3, 3), Eigen::Vector3d::Zero()};
    p.phi(0, 2) = 0.25;
    p.phi(1, 2) = 0.04;
    const std::vector<double> inc{0.0, 0.0, 1.0}, exp{0.0, 0.0, 0.0};
    const auto a = em_step(NetWorthVector(Eigen::Vector3d(0, 0, 100)), p, 1.0, inc, exp);
    CHECK(a.a(0) == Approx(25.0 + 5.0));
    CHECK(a.a(1) == Approx(4.0 + 2.0));
    CHECK(a.a(2) == Approx(100.0));
}

TEST_CASE("em_step clamps at zero", "[sde_sim]") {
    const std::vector<double> zero{0.0}, big{50.0};
    const auto a = em_step(scalar_a0(1), scalar_model(0.5), 1.0, zero, big);
    CHECK(a.a(0) == 0.0);
}

TEST_CASE("zero initial state stays at zero", "[sde_sim]") {
    std::mt19937_64 rng(2);
    const auto p = oracle::random_params(rng, 2);
    const std::vector<double> grid{0.0, 0.5, 1.0};
    const auto ens = run_monte_carlo(p, NetWorthVector(Eigen::Vector2d::Zero()), config(0.01, 1.0, 1, 5), grid);
    for (double v : ens.values) CHECK(v == 0.0);
}

TEST_CASE("scalar ensemble matches analytic mean and variance", "[sde_sim][statistical]") {
    const std::vector<double> grid{0.0, 10.0};
    const auto ens = run_monte_carlo(scalar_model(0.1), scalar_a0(100), config(0.01, 10.0, 100000, 2024), grid);
    const auto m = empirical_moments(ens, 10.0);
    const double mean = oracle::scalar_mean(100, 0.1, 10);
    const double var = oracle::scalar_variance(100, 0.1, 10);
    const double se = std::sqrt(m.mu2(0, 0) / 1e5);
    CHECK(std::abs(m.mu1(0) - mean) <= 3 * se);
    CHECK(m.mu1(0) == Approx(36.788).epsilon(0.01));
    CHECK(std::abs(m.mu2(0, 0) - var) <= 0.05 * var);
    for (double v : ens.values) REQUIRE(v >= 0.0);
}

TEST_CASE("empirical moments examples", "[sde_sim]") {
    PathEnsemble ens;
    ens.times = {1.0};
    ens.n = 1;
    ens.paths = 2;
    ens.values = {1.0, 3.0};
    const auto m = empirical_moments(ens, 1.0);
    CHECK(m.mu1(0) == 2.0);
    CHECK(m.mu2(0, 0) == 2.0);

    ens.values = {4.0, 4.0};
    CHECK(empirical_moments(ens, 1.0).mu2(0, 0) == 0.0);
    CHECK_THROWS_AS(empirical_moments(ens, 2.0), InputError);
}

TEST_CASE("streaming covariance matches the two-pass reference", "[sde_sim][property]") {
    std::mt19937_64 rng(3);
    std::normal_distribution<double> z;
    PathEnsemble ens;
    ens.times = {0.0, 1.0};
    ens.n = 4;
    ens.paths = 5000;
    ens.values.resize(static_cast<std::size_t>(ens.paths * 2 * 4));
    std::vector<Eigen::VectorXd> rows;
    for (std::int64_t p = 0; p < ens.paths; ++p) {
        Eigen::VectorXd x(4);
        for (Index i = 0; i < 4; ++i) x(i) = 1e3 + 10.0 * z(rng) + (i > 0 ? 5.0 * x(i - 1) / 1e3 : 0.0);
        for (Index i = 0; i < 4; ++i) ens(p, 1, i) = x(i);
        rows.push_back(x);
    }
    const auto got = empirical_moments(ens, 1.0);
    const auto [mean, cov] = oracle::two_pass_covariance(rows);
    CHECK(oracle::max_rel_error(got.mu1, mean) <= 1e-12);
    CHECK((got.mu2 - cov).norm() <= 1e-9 * cov.norm());
}

TEST_CASE("empirical quantile examples", "[sde_sim]") {
    PathEnsemble ens;
    ens.times = {0.0};
    ens.n = 1;
    ens.paths = 5;
    ens.values = {5, 3, 1, 4, 2};
    CHECK(empirical_quantile(ens, 0, 0.0, 0.5) == 3.0);
    CHECK(empirical_quantile(ens, 0, 0.0, 0.125) == 1.5);
    ens.values = {7, 7, 7, 7, 7};
    for (double q : {0.01, 0.3, 0.99}) CHECK(empirical_quantile(ens, 0, 0.0, q) == 7.0);
    CHECK_THROWS_AS(empirical_quantile(ens, 1, 0.0, 0.5), InputError);
    CHECK_THROWS_AS(empirical_quantile(ens, 0, 3.0, 0.5), InputError);
    CHECK_THROWS_AS(empirical_quantile(ens, 0, 0.0, 1.0), InputError);
}

TEST_CASE("empirical 1% quantile matches the Gaussian value at risk", "[sde_sim][statistical]") {
    // Small rates and a large start keep the law close to normal.
    const auto p = scalar_model(0.02);
    const std::vector<double> grid{0.0, 5.0};
    const auto ens = run_monte_carlo(p, scalar_a0(1000), config(0.05, 5.0, 100000, 77), grid);
    const auto s = solve_moments_closed_form(p, scalar_a0(1000), 5.0);
    const double v = value_at_risk(s.mu1(0), s.mu2(0, 0), 0.01);
    CHECK(empirical_quantile(ens, 0, 5.0, 0.01) == Approx(v).epsilon(0.02));
}

TEST_CASE("runs are deterministic across thread counts", "[sde_sim]") {
    std::mt19937_64 rng(4);
    const auto p = oracle::random_params(rng, 3);
    const NetWorthVector a0(oracle::random_state(rng, 3, 10, 100));
    const std::vector<double> grid{0.0, 0.5, 1.0};
    const auto one = run_monte_carlo(p, a0, config(0.01, 1.0, 257, 9, 1), grid);
    const auto four = run_monte_carlo(p, a0, config(0.01, 1.0, 257, 9, 4), grid);
    const auto seven = run_monte_carlo(p, a0, config(0.01, 1.0, 257, 9, 7), grid);
    CHECK(one.values == four.values);
    CHECK(one.values == seven.values);
    const auto other = run_monte_carlo(p, a0, config(0.01, 1.0, 257, 10, 1), grid);
    CHECK(one.values != other.values);
}

TEST_CASE("shared supplier produces the cross-covariance of the diffusion tensor", "[sde_sim][statistical]") {
    ModelParams p{Eigen::MatrixXd::Zero(3, 3), Eigen::Vector3d::Zero()};
    p.phi(0, 2) = 0.02;
    p.phi(1, 2) = 0.05;
    const NetWorthVector a0(Eigen::Vector3d(200, 200, 1000));
    const double t = 1.0;
    const std::vector<double> grid{0.0, t};
    const auto ens = run_monte_carlo(p, a0, config(0.01, t, 100000, 31), grid);
    const auto m = empirical_moments(ens, t);
    const double want = t * std::sqrt(0.02 * 0.05) * 1000;
    CHECK(m.mu2(0, 1) == Approx(want).epsilon(0.05));
    const auto s = solve_moments_closed_form(p, a0, t);
    CHECK(s.mu2(0, 1) == Approx(want).epsilon(1e-12));
}

TEST_CASE("ensemble mean error shrinks like the standard error", "[sde_sim][statistical]") {
    std::mt19937_64 rng(5);
    const auto p = oracle::random_params(rng, 2, 0.05, 0.2, 0.05, 0.3);
    const NetWorthVector a0(Eigen::Vector2d(200, 400));
    const double t = 2.0;
    const auto exact = solve_moments_closed_form(p, a0, t);
    const std::vector<double> grid{t};
    for (std::int64_t paths : {1000, 10000, 100000}) {
        const auto m = empirical_moments(run_monte_carlo(p, a0, config(0.01, t, paths, 8), grid), t);
        for (Index i = 0; i < 2; ++i) {
            const double se = std::sqrt(m.mu2(i, i) / static_cast<double>(paths));
            CHECK(std::abs(m.mu1(i) - exact.mu1(i)) <= 3.5 * se);
        }
    }
}

TEST_CASE("run_monte_carlo rejects bad configurations", "[sde_sim]") {
    const auto p = scalar_model(0.1);
    const std::vector<double> grid{0.0, 1.0};
    CHECK_THROWS_AS(run_monte_carlo(p, scalar_a0(1), config(0.0, 1.0, 10, 1), grid), InputError);
    CHECK_THROWS_AS(run_monte_carlo(p, scalar_a0(1), config(2.0, 1.0, 10, 1), grid), InputError);
    CHECK_THROWS_AS(run_monte_carlo(p, scalar_a0(1), config(0.01, 1.0, 0, 1), grid), InputError);
    CHECK_THROWS_AS(run_monte_carlo(p, scalar_a0(1), config(0.3, 1.0, 10, 1), grid), InputError);
    CHECK_THROWS_AS(run_monte_carlo(p, scalar_a0(1), config(0.01, 0.5, 10, 1), grid), InputError);
    auto small = config(0.01, 1.0, 1000, 1);
    small.memory_budget = 1000;
    CHECK_THROWS_AS(run_monte_carlo(p, scalar_a0(1), small, grid), InputError);
}

TEST_CASE("ensemble exports", "[sde_sim][io]") {
    std::mt19937_64 rng(6);
    const auto p = oracle::random_params(rng, 2);
    const std::vector<double> grid{0.0, 0.1};
    const auto ens = run_monte_carlo(p, NetWorthVector(Eigen::Vector2d(5, 6)), config(0.01, 0.1, 3, 4), grid);

    std::ostringstream csv_out;
    write_ensemble_csv(csv_out, ens);
    std::istringstream lines(csv_out.str());
    std::string line;
    std::getline(lines, line);
    CHECK(line == "path,t,a_1,a_2");
    std::getline(lines, line);
    CHECK(line == "0,0,5,6");
    int count = 1;
    while (std::getline(lines, line)) ++count;
    CHECK(count == 6);

    std::stringstream bin;
    write_ensemble_binary(bin, ens);
    const std::string bytes = bin.str();
    CHECK(bytes.substr(0, 6) == "NGSIM1");
    CHECK(bytes.size() == 8 + 4 * 8 + 2 * 8 + 2 * 8 + ens.values.size() * 8);
    CHECK(static_cast<unsigned char>(bytes[8]) == 2);  // n, little-endian
    const auto back = read_ensemble_binary(bin);
    CHECK(back.values == ens.values);
    CHECK(back.times == ens.times);
    CHECK(back.config.seed == 4);

    std::istringstream junk("NOTSIM..");
    CHECK_THROWS_AS(read_ensemble_binary(junk), InputError);
}
