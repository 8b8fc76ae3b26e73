#include <exsnn/dynamics.hpp>
#include <exsnn/errors.hpp>

#include "helpers.hpp"

#include <doctest.h>

#include <cmath>
#include <numbers>

using namespace exsnn;
using testing::section21;

namespace {

RowMatrix pulse_input(int n, int horizon, int start, int end, double gamma)
{
    RowMatrix u = RowMatrix::Zero(horizon, n);
    for (int t = start; t <= end; ++t) u.row(t).setConstant(gamma);
    return u;
}

}  // namespace

TEST_SUITE("dynamics")
{
    TEST_CASE("parameter invariants are enforced")
    {
        auto p = section21();
        CHECK_NOTHROW(p.validate());
        p.eta_mem = 1.5;
        CHECK_THROWS_AS(p.validate(), std::invalid_argument);
        p = section21();
        p.spike_threshold = 1.0;
        CHECK_THROWS_AS(p.validate(), std::invalid_argument);
        p = section21();
        p.delta = -0.1;
        CHECK_THROWS_AS(p.validate(), std::invalid_argument);
        p = section21();
        p.beta = std::numeric_limits<double>::infinity();
        CHECK_THROWS_AS(p.validate(), std::invalid_argument);
    }

    TEST_CASE("params round-trip through JSON")
    {
        auto p = section21();
        p.excitable = false;
        nlohmann::json j = p;
        CHECK(j.get<NetworkParams>() == p);
    }

    TEST_CASE("step rejects a drive of the wrong length")
    {
        const auto optics = OpticsModel::ideal({2, 2});
        const std::vector<double> drive(3, 0.0);
        CHECK_THROWS_AS(step(NeuronArrays::zeros(4), section21(), optics, drive), DimensionError);
    }

    TEST_CASE("pulse at gamma 0.3 gives one full spike matching the scalar oracle")
    {
        const auto optics = OpticsModel::ideal({1, 1});
        const auto p = section21();
        const auto rest = rest_state(p, optics);
        const auto traj = run(rest.state, p, optics, pulse_input(1, 326, 50, 75, 0.3));
        std::vector<double> u(326, 0.0);
        for (int t = 50; t <= 75; ++t) u[static_cast<std::size_t>(t)] = 1.0;
        const auto ref = oracle::single_neuron(testing::oracle_params(p), kDefaultKappa, 0.3, u);
        Eigen::Index peak = 0;
        traj.col(0).maxCoeff(&peak);
        // Peak step and height from an independent numpy run of the same map.
        CHECK(peak == 53);
        CHECK(traj(53, 0) == doctest::Approx(0.9320923491044247).epsilon(1e-12));
        CHECK(traj.col(0).maxCoeff() > 0.8);
        for (int t = 0; t < 326; ++t) CHECK(traj(t, 0) == ref[static_cast<std::size_t>(t)]);
    }

    TEST_CASE("feedback-free map is memoryless")
    {
        NetworkParams p;
        p.beta = 0.0;
        p.delta = 0.0;
        p.eta_mem = 0.0;
        p.theta0 = -0.1 * std::numbers::pi;
        const auto optics = OpticsModel::ideal({1, 3});
        std::mt19937_64 rng{5};
        std::uniform_real_distribution<double> uni{-2.0, 2.0};
        auto st = NeuronArrays::zeros(3);
        for (int t = 0; t < 50; ++t) {
            const std::vector<double> drive{uni(rng), uni(rng), uni(rng)};
            st = step(st, p, optics, drive);
            for (int i = 0; i < 3; ++i) {
                const double sn = std::sin(2.0 * std::numbers::pi * (drive[static_cast<std::size_t>(i)] + p.theta0) / kDefaultKappa);
                CHECK(st.s[i] == doctest::Approx(sn * sn).epsilon(1e-14));
            }
        }
    }

    TEST_CASE("run with one row equals one step")
    {
        const auto optics = OpticsModel::ideal({2, 3});
        const auto p = section21();
        RowMatrix u = RowMatrix::Random(1, 6);
        const auto traj = run(NeuronArrays::zeros(6), p, optics, u);
        const auto st = step(NeuronArrays::zeros(6), p, optics, {u.data(), 6});
        for (int i = 0; i < 6; ++i) CHECK(traj(0, i) == st.s[i]);
    }

    TEST_CASE("run rejects an empty series")
    {
        const auto optics = OpticsModel::ideal({1, 1});
        CHECK_THROWS_AS(run(NeuronArrays::zeros(1), section21(), optics, RowMatrix(0, 1)), std::invalid_argument);
        CHECK_THROWS_AS(run(NeuronArrays::zeros(1), section21(), optics, RowMatrix::Zero(3, 2)), DimensionError);
    }

    TEST_CASE("run is bit-identical to repeated steps and to reruns")
    {
        const auto optics = synthesize_heterogeneity({4, 5}, 3, 0.6, 0.03, 0.05);
        const auto p = section21();
        std::mt19937_64 rng{17};
        std::uniform_real_distribution<double> uni{0.0, 0.5};
        RowMatrix u(200, 20);
        for (Eigen::Index k = 0; k < u.size(); ++k) u.data()[k] = uni(rng);
        const auto a = run(NeuronArrays::zeros(20), p, optics, u);
        const auto b = run(NeuronArrays::zeros(20), p, optics, u);
        CHECK(a == b);
        auto st = NeuronArrays::zeros(20);
        for (int t = 0; t < 200; ++t) {
            st = step(st, p, optics, {u.row(t).data(), 20});
            CHECK(a.row(t) == st.s.transpose());
        }
    }

    TEST_CASE("results do not depend on the worker count")
    {
        auto spec = OpticsSpec{};
        spec.grid = {16, 16};
        spec.gaussian_width = 0.5;
        spec.phase_jitter = 0.02;
        spec.doe_kernel = DoeKernel::center_dominant();
        const OpticsModel optics{spec};
        RowMatrix u = RowMatrix::Constant(100, 256, 0.3);
        const auto serial = run(NeuronArrays::zeros(256), section21(), optics, u, 1);
        const auto threaded = run(NeuronArrays::zeros(256), section21(), optics, u, 4);
        CHECK(serial == threaded);
    }

    TEST_CASE("vectorized network equals the scalar oracle on a coupled heterogeneous grid")
    {
        auto spec = OpticsSpec{};
        spec.grid = {6, 7};
        spec.gaussian_width = 0.4;
        spec.phase_jitter = 0.03;
        spec.kappa_jitter = 0.02;
        spec.seed = 99;
        spec.doe_kernel = DoeKernel::center_dominant(1.0, 0.2);
        const OpticsModel optics{spec};
        const auto p = section21();
        std::mt19937_64 rng{4};
        std::uniform_real_distribution<double> uni{0.0, 0.6};
        RowMatrix u(300, 42);
        oracle::Series drive(300, std::vector<double>(42));
        for (int t = 0; t < 300; ++t)
            for (int i = 0; i < 42; ++i) drive[static_cast<std::size_t>(t)][static_cast<std::size_t>(i)] = u(t, i) = uni(rng);
        const auto traj = run(NeuronArrays::zeros(42), p, optics, u);
        const auto ref = oracle::run(oracle::State::zeros(42), testing::oracle_params(p), testing::oracle_optics(optics), drive);
        double worst = 0.0;
        for (int t = 0; t < 300; ++t)
            for (int i = 0; i < 42; ++i)
                worst = std::max(worst, std::abs(traj(t, i) - ref[static_cast<std::size_t>(t)][static_cast<std::size_t>(i)]));
        CHECK(worst < 1e-12);
    }

    TEST_CASE("output stays in [0, 1] under random drive")
    {
        const auto optics = synthesize_heterogeneity({8, 8}, 1, 0.5, 0.05, 0.05);
        std::mt19937_64 rng{8};
        std::uniform_real_distribution<double> uni{-5.0, 5.0};
        Network net{section21(), optics};
        Vector drive(64);
        for (int t = 0; t < 500; ++t) {
            for (int i = 0; i < 64; ++i) drive[i] = uni(rng);
            net.advance(as_span(drive));
            CHECK(net.state().s.minCoeff() >= 0.0);
            CHECK(net.state().s.maxCoeff() <= 1.0);
            CHECK(net.state().intensity.minCoeff() >= 0.0);
        }
    }

    TEST_CASE("slow variable is the discounted sum of the fast variable")
    {
        const auto optics = OpticsModel::ideal({1, 1});
        const auto p = section21();
        std::mt19937_64 rng{12};
        std::uniform_real_distribution<double> uni{-1.0, 1.0};
        Network net{p, optics};
        std::vector<double> xs;
        for (int t = 0; t < 100; ++t) {
            const double d = uni(rng);
            net.advance(std::span<const double>{&d, 1});
            xs.push_back(net.state().x[0]);
            double closed = 0.0;
            for (std::size_t k = 0; k < xs.size(); ++k) closed += std::pow(p.eta_mem, static_cast<double>(xs.size() - 1 - k)) * xs[k];
            CHECK(std::abs(net.state().y[0] - closed) < 1e-12);
        }
    }

    TEST_CASE("non-excitable mode equals delta = 0 bit for bit")
    {
        const auto optics = synthesize_heterogeneity({3, 3}, 2, 0.7, 0.02, 0.02);
        auto a = section21();
        a.excitable = false;
        auto b = section21();
        b.delta = 0.0;
        RowMatrix u = RowMatrix::Constant(400, 9, 0.2);
        CHECK(run(NeuronArrays::zeros(9), a, optics, u) == run(NeuronArrays::zeros(9), b, optics, u));
    }

    TEST_CASE("rest state: converged, quiet, and at the oracle's step count")
    {
        const auto optics = OpticsModel::ideal({2, 2});
        const auto r = rest_state(section21(), optics);
        CHECK(r.converged);
        CHECK(r.steps == 183);
        CHECK(r.state.s.maxCoeff() < 0.1);
        CHECK(r.state.s[0] == doctest::Approx(0.0014437084554770974).epsilon(1e-9));
        CHECK(r.tolerance == kRestTolerance);
        CHECK(r.cap == kRestCap);

        NetworkParams fig1;
        fig1.beta = 0.45;
        fig1.theta0 = -0.1 * std::numbers::pi;
        const auto r1 = rest_state(fig1, optics);
        CHECK(r1.converged);
        CHECK(r1.state.s.maxCoeff() < 0.1);
        // Zero-input trajectory from zero stays small after the transient.
        Network net{fig1, optics};
        for (int t = 0; t < 2000; ++t) {
            net.advance_free();
            if (t > 20) CHECK(net.state().s.maxCoeff() < 0.1);
        }
    }

    TEST_CASE("rest state without feedback is reached in one step")
    {
        NetworkParams p;
        p.beta = 0.0;
        p.delta = 0.0;
        p.theta0 = -0.35;
        const auto r = rest_state(p, OpticsModel::ideal({1, 1}));
        const double sn = std::sin(2.0 * std::numbers::pi * -0.35 / kDefaultKappa);
        CHECK(r.converged);
        CHECK(r.steps == 2);
        CHECK(r.state.s[0] == sn * sn);
    }

    TEST_CASE("rest state reports non-convergence instead of throwing")
    {
        NetworkParams p;
        p.beta = 3.0;
        p.delta = 0.0;
        p.theta0 = 0.3;
        const auto r = rest_state(p, OpticsModel::ideal({1, 1}), 1e-10, 200);
        CHECK_FALSE(r.converged);
        CHECK(r.steps == 200);
        CHECK(r.final_change > 1e-10);
    }

    TEST_CASE("all-or-nothing contrast on the 50-point grid")
    {
        // Records how graded the single-pulse response is; the strict step
        // shape is an acceptance criterion of its own.
        const auto optics = OpticsModel::ideal({1, 1});
        const auto p = section21();
        const auto rest = rest_state(p, optics);
        double lo = 1.0;
        double hi = 0.0;
        for (int k = 0; k < 50; ++k) {
            const double g = 0.5 * k / 49.0;
            const auto traj = run(rest.state, p, optics, pulse_input(1, 326, 50, 75, g));
            const double m = traj.bottomRows(276).maxCoeff();
            if (g < 0.15) hi = std::max(hi, m);
            if (g > 0.3) lo = std::min(lo, m);
        }
        CHECK(hi < 0.3);
        CHECK(lo > 0.8);
    }

    TEST_CASE("power cut collapses the trajectory as in the oracle")
    {
        const auto optics = OpticsModel::ideal({1, 1});
        const auto p = section21();
        Network net{p, optics};
        auto o = testing::oracle_optics(optics);
        auto st = oracle::State::zeros(1);
        const std::vector<double> drive{0.4};
        for (int t = 0; t < 300; ++t) {
            if (t == 100) net.optics().set_power(false);
            net.advance(drive);
            st = oracle::step(st, testing::oracle_params(p), o, drive, t < 100);
            CHECK(net.state().s[0] == st.s[0]);
            if (t >= 100) CHECK(net.state().intensity[0] == 0.0);
        }
    }
}
