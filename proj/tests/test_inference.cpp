#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <numbers>
#include <random>

#include "netgrowth/inference.hpp"
#include "oracles.hpp"
#include "synthetic.hpp"

using namespace netgrowth;
using Catch::Approx;

namespace {

ModelParams scalar(double lambda) { return ModelParams{Eigen::MatrixXd::Zero(1, 1), Eigen::VectorXd::Constant(1, lambda)}; }

NetWorthVector scalar_state(double a) { return NetWorthVector(Eigen::VectorXd::Constant(1, a)); }

double normal_log_pdf(double x, double mean, double var) {
    return -0.5 * (std::log(2 * std::numbers::pi * var) + (x - mean) * (x - mean) / var);
}

Observation obs1(double t, double a) { return Observation{t, Eigen::VectorXd::Constant(1, a)}; }

} // namespace

TEST_CASE("gaussian density at the mode", "[inference]") {
    const Eigen::VectorXd x = Eigen::VectorXd::Constant(1, 3.0);
    const Eigen::MatrixXd cov = Eigen::MatrixXd::Identity(1, 1);
    // Jitter scales the variance by 1 + 1e-9.
    CHECK(detail::gaussian_log_density(x, x, cov, "o") == Approx(-0.91894).margin(5e-6));
    CHECK(detail::gaussian_log_density(x, x, cov, "o") ==
          Approx(-0.5 * std::log(2 * std::numbers::pi * (1 + 1e-9))).epsilon(1e-14));
}

TEST_CASE("log likelihood: scalar example", "[inference]") {
    ObservationSet obs;
    obs.records.push_back(obs1(10, 36.8));
    const double l = log_likelihood(scalar(0.1), scalar_state(100), obs);
    const double mean = oracle::scalar_mean(100, 0.1, 10), var = oracle::scalar_variance(100, 0.1, 10);
    CHECK(mean == Approx(36.788).margin(5e-4));
    CHECK(var == Approx(23.254).margin(5e-4));
    CHECK(l == Approx(normal_log_pdf(36.8, mean, var * (1 + 1e-9))).epsilon(1e-10));
}

TEST_CASE("log likelihood is additive and order-free", "[inference][property]") {
    std::mt19937_64 rng(21);
    for (int trial = 0; trial < 20; ++trial) {
        const Index n = 1 + trial % 3;
        const auto p = oracle::random_params(rng, n, 0.05, 0.3, 0.05, 0.4);
        const NetWorthVector a0(oracle::random_state(rng, n, 50, 200));
        ObservationSet all;
        double sum = 0.0;
        for (int d = 0; d < 6; ++d) {
            ObservationSet one;
            one.records.push_back(Observation{0.5 + d, oracle::random_state(rng, n, 30, 300)});
            sum += log_likelihood(p, a0, one);
            all.records.push_back(one.records.front());
        }
        const double l = log_likelihood(p, a0, all);
        CHECK(l == Approx(sum).epsilon(1e-12));
        for (int k = 0; k < 5; ++k) {
            std::shuffle(all.records.begin(), all.records.end(), rng);
            CHECK(log_likelihood(p, a0, all) == Approx(l).epsilon(1e-12));
        }
    }
}

TEST_CASE("log likelihood errors", "[inference]") {
    ObservationSet obs;
    obs.records.push_back(obs1(1, 100));
    obs.records.push_back(obs1(2, 100));
    // No dynamics: the covariance is identically zero.
    try {
        (void)log_likelihood(ModelParams{Eigen::MatrixXd::Zero(1, 1), Eigen::VectorXd::Zero(1)}, scalar_state(100), obs);
        FAIL("expected NumericError");
    } catch (const NumericError& e) {
        CHECK(std::string(e.what()).find("observation 0") != std::string::npos);
    }
    CHECK_THROWS_AS(log_likelihood(scalar(0.1), scalar_state(100), ObservationSet{}), InputError);
    ObservationSet wrong;
    wrong.records.push_back(Observation{1, Eigen::Vector2d(1, 1)});
    CHECK_THROWS_AS(log_likelihood(scalar(0.1), scalar_state(100), wrong), InputError);
}

TEST_CASE("nelder-mead minimizes Rosenbrock", "[inference]") {
    auto rosen = [](const Eigen::VectorXd& x) {
        return 100 * std::pow(x(1) - x(0) * x(0), 2) + std::pow(1 - x(0), 2);
    };
    NelderMeadOptions opts;
    opts.max_iterations = 5000;
    opts.f_tol = 1e-14;
    opts.x_tol = 1e-9;
    const auto res = nelder_mead(rosen, Eigen::Vector2d(-1.2, 1.0), opts);
    CHECK(res.converged);
    CHECK(res.x(0) == Approx(1.0).margin(1e-5));
    CHECK(res.x(1) == Approx(1.0).margin(1e-5));

    opts.max_iterations = 5;
    const auto early = nelder_mead(rosen, Eigen::Vector2d(-1.2, 1.0), opts);
    CHECK_FALSE(early.converged);
    CHECK(early.value <= rosen(Eigen::Vector2d(-1.2, 1.0)));
    CHECK_THROWS_AS(nelder_mead(rosen, Eigen::VectorXd(0)), InputError);
}

TEST_CASE("fit spec validation", "[inference]") {
    ObservationSet obs;
    obs.records.push_back(obs1(1, 90));
    FitSpec spec = make_fit_spec(scalar(0.1), FreeSet::phi);  // phi is zero, so nothing is free
    CHECK(spec.free_count() == 0);
    CHECK_THROWS_AS(fit_mle(spec, scalar_state(100), obs), InputError);
    CHECK(make_fit_spec(scalar(0.1), FreeSet::lambda).free_count() == 1);
}

TEST_CASE("MLE recovers lambda from synthetic snapshots", "[inference][statistical]") {
    const auto truth = scalar(0.1);
    const auto a0 = scalar_state(100);
    const auto obs = synthetic::snapshots(truth, a0, 200, 0.1, 777);

    const auto fit = fit_mle(make_fit_spec(scalar(0.05), FreeSet::lambda), a0, obs);
    const double lam = fit.params.lambda(0);
    CHECK(fit.converged);
    CHECK(lam >= 0.08);
    CHECK(lam <= 0.12);
    CHECK(fit.log_likelihood == Approx(log_likelihood(fit.params, a0, obs)).epsilon(1e-12));

    // Independent grid search over lambda in {0.05, 0.06, ..., 0.15}.
    double best = -std::numeric_limits<double>::infinity(), arg = 0.0;
    for (int k = 5; k <= 15; ++k) {
        const double l = log_likelihood(scalar(k / 100.0), a0, obs);
        if (l > best) best = l, arg = k / 100.0;
    }
    CHECK(arg >= 0.08);
    CHECK(arg <= 0.12);
    CHECK(std::abs(lam - arg) <= 0.01);
    CHECK(fit.log_likelihood >= best);

    // Restarting at the optimum stays there.
    const auto again = fit_mle(make_fit_spec(fit.params, FreeSet::lambda), a0, obs);
    CHECK(again.params.lambda(0) == Approx(lam).epsilon(1e-4));
}

TEST_CASE("MLE keeps parameters nonnegative", "[inference][property]") {
    std::mt19937_64 rng(31);
    for (int trial = 0; trial < 4; ++trial) {
        const auto truth = oracle::random_params(rng, 2, 0.05, 0.3, 0.05, 0.4);
        const NetWorthVector a0(oracle::random_state(rng, 2, 100, 300));
        const auto obs = synthetic::snapshots(truth, a0, 40, 0.1, 900 + trial);
        ModelParams init = truth;
        init.phi *= 0.1;
        init.lambda *= 3.0;
        FitSpec spec = make_fit_spec(init, FreeSet::both);
        spec.max_iterations = 400;
        const auto fit = fit_mle(spec, a0, obs);
        CHECK((fit.params.phi.array() >= 0.0).all());
        CHECK((fit.params.lambda.array() >= 0.0).all());
        CHECK(validate_params(fit.params).ok());
        CHECK(fit.log_likelihood >= log_likelihood(init, a0, obs));
    }
}

TEST_CASE("generating parameters beat +-50% perturbations", "[inference][statistical]") {
    SECTION("scalar lambda") {
        const auto truth = scalar(0.1);
        const auto a0 = scalar_state(100);
        int wins = 0;
        for (int k = 0; k < 100; ++k) {
            const auto obs = synthetic::snapshots(truth, a0, 200, 0.1, 5000 + k);
            const double l = log_likelihood(truth, a0, obs);
            if (l > log_likelihood(scalar(0.05), a0, obs) && l > log_likelihood(scalar(0.15), a0, obs)) ++wins;
        }
        CHECK(wins >= 95);
    }
    SECTION("two firms, all parameters scaled") {
        ModelParams truth{(Eigen::MatrixXd(2, 2) << 0.0, 0.08, 0.05, 0.0).finished(), Eigen::Vector2d(0.12, 0.1)};
        const NetWorthVector a0(Eigen::Vector2d(100, 80));
        int wins = 0;
        for (int k = 0; k < 100; ++k) {
            const auto obs = synthetic::snapshots(truth, a0, 100, 0.1, 7000 + k);
            const double l = log_likelihood(truth, a0, obs);
            ModelParams lo = truth, hi = truth;
            lo.phi *= 0.5;
            lo.lambda *= 0.5;
            hi.phi *= 1.5;
            hi.lambda *= 1.5;
            if (l > log_likelihood(lo, a0, obs) && l > log_likelihood(hi, a0, obs)) ++wins;
        }
        CHECK(wins >= 95);
    }
}

TEST_CASE("observations CSV", "[inference][io]") {
    std::istringstream ok("t,a_1\n0.5,10\n1,9\n");
    const auto obs = read_observations(csv::read(ok, "obs.csv"));
    REQUIRE(obs.records.size() == 2);
    CHECK(obs.records[1].a(0) == 9);
    std::istringstream bad("t,a_1\n1,10\n0.5,9\n");
    CHECK_THROWS_AS(read_observations(csv::read(bad, "obs.csv")), InputError);
    std::istringstream zero("t,a_1\n0,10\n");
    CHECK_THROWS_AS(read_observations(csv::read(zero, "obs.csv")), InputError);
    std::istringstream neg("t,a_1\n1,-1\n");
    CHECK_THROWS_AS(read_observations(csv::read(neg, "obs.csv")), InputError);
}
