#include <exsnn/errors.hpp>
#include <exsnn/optics.hpp>

#include "helpers.hpp"

#include <doctest.h>

#include <cmath>
#include <numbers>

using namespace exsnn;

TEST_SUITE("optics")
{
    TEST_CASE("zero state gives zero field")
    {
        const auto m = OpticsModel::ideal({3, 3});
        CHECK(m.field(Vector::Zero(9)).cwiseAbs().maxCoeff() == 0.0);
    }

    TEST_CASE("quarter period gives the illumination amplitude")
    {
        const double phi = 0.3;
        const auto m = OpticsModel::ideal({2, 2}, 2.0, phi);
        const Vector x = Vector::Constant(4, 2.0 / 4.0 - phi);
        const auto e = m.field(x);
        for (int i = 0; i < 4; ++i) CHECK(e[i] == doctest::Approx(1.0).epsilon(1e-15));
    }

    TEST_CASE("field and intensity check sizes")
    {
        const auto m = OpticsModel::ideal({2, 2});
        CHECK_THROWS_AS(m.field(Vector::Zero(3)), DimensionError);
        CHECK_THROWS_AS(m.intensity(Vector::Zero(5)), DimensionError);
    }

    TEST_CASE("heterogeneous field matches a direct regeneration from the seed")
    {
        const auto m = synthesize_heterogeneity({9, 11}, 42, 0.3, 0.05, 0.04);
        CHECK(m.mode() == OpticsMode::heterogeneous);
        // Regenerate with the same engine and draw order: all offsets, then all factors.
        std::mt19937_64 rng{42};
        std::normal_distribution<double> dphi{0.0, 0.05};
        std::vector<double> phi(99);
        for (auto& v : phi) v = dphi(rng);
        std::normal_distribution<double> dk{0.0, 0.04};
        std::vector<double> kappa(99);
        for (auto& v : kappa) {
            double f = 1.0 + dk(rng);
            while (f <= 0.0) f = 1.0 + dk(rng);
            v = kDefaultKappa * f;
        }
        Vector x = Vector::Constant(99, 0.4);
        const auto e = m.field(x);
        for (int r = 0; r < 9; ++r)
            for (int c = 0; c < 11; ++c) {
                const int i = r * 11 + c;
                const double dr = (r - 4.0) / (0.3 * 9);
                const double dc = (c - 5.0) / (0.3 * 11);
                const double i0 = std::exp(-0.5 * (dr * dr + dc * dc));
                const double expect = std::sqrt(i0) * std::sin(2.0 * std::numbers::pi * (0.4 + phi[static_cast<std::size_t>(i)]) / kappa[static_cast<std::size_t>(i)]);
                CHECK(e[i] == doctest::Approx(expect).epsilon(1e-13));
            }
        // Centre pixel brighter than the corner for equal x without jitter.
        const auto smooth = synthesize_heterogeneity({9, 11}, 42, 0.3, 0.0, 0.0);
        const auto es = smooth.field(Vector::Constant(99, 0.5));
        CHECK(std::abs(es[4 * 11 + 5]) > std::abs(es[0]));
        CHECK(smooth.illumination().maxCoeff() == 1.0);
        CHECK(smooth.illumination().minCoeff() >= 0.0);
    }

    TEST_CASE("identity kernel reproduces E squared")
    {
        auto spec = OpticsSpec{};
        spec.grid = {4, 4};
        spec.doe_kernel = DoeKernel::identity();
        const OpticsModel m{spec};
        CHECK(m.mode() == OpticsMode::doe_coupled);
        const Vector e = Vector::LinSpaced(16, -1.0, 1.0);
        const auto i = m.intensity(e);
        for (int k = 0; k < 16; ++k) CHECK(i[k] == e[k] * e[k]);
    }

    TEST_CASE("zero field gives zero intensity")
    {
        auto spec = OpticsSpec{};
        spec.grid = {5, 5};
        spec.doe_kernel = DoeKernel::center_dominant();
        const OpticsModel m{spec};
        CHECK(m.intensity(Vector::Zero(25)).cwiseAbs().maxCoeff() == 0.0);
    }

    TEST_CASE("uniform 3x3 kernel on a single pixel matches brute-force convolution")
    {
        auto spec = OpticsSpec{};
        spec.grid = {5, 5};
        spec.doe_kernel = DoeKernel{3, 3, std::vector<double>(9, 1.0)};
        const OpticsModel m{spec};
        Vector e = Vector::Zero(25);
        e[2 * 5 + 2] = 0.7;
        const auto i = m.intensity(e);
        const auto ref = oracle::intensity(testing::oracle_optics(m), testing::to_std(e));
        int nonzero = 0;
        for (int k = 0; k < 25; ++k) {
            nonzero += i[k] != 0.0;
            CHECK(i[k] == doctest::Approx(ref[static_cast<std::size_t>(k)]).epsilon(1e-15));
        }
        CHECK(nonzero == 9);
        CHECK(i[2 * 5 + 2] == doctest::Approx(0.49 / 81.0));
    }

    TEST_CASE("asymmetric kernel at the border matches brute-force convolution")
    {
        auto spec = OpticsSpec{};
        spec.grid = {4, 6};
        spec.doe_kernel = DoeKernel{3, 5, {0.1, -0.2, 0.3, 0.05, 0.0, 0.4, 1.0, -0.3, 0.2, 0.1, 0.0, 0.5, -0.1, 0.0, 0.2}};
        const OpticsModel m{spec};
        std::mt19937_64 rng{2};
        std::uniform_real_distribution<double> uni{-1.0, 1.0};
        Vector e(24);
        for (int k = 0; k < 24; ++k) e[k] = uni(rng);
        const auto i = m.intensity(e);
        const auto ref = oracle::intensity(testing::oracle_optics(m), testing::to_std(e));
        CHECK(testing::max_abs_diff(i, ref) < 1e-15);
    }

    TEST_CASE("power off zeroes field and intensity; round trip restores")
    {
        auto spec = OpticsSpec{};
        spec.grid = {3, 3};
        spec.doe_kernel = DoeKernel::center_dominant();
        OpticsModel m{spec};
        const Vector x = Vector::LinSpaced(9, 0.0, 1.0);
        const auto e_on = m.field(x);
        const auto i_on = m.intensity(e_on);
        const auto off = set_power(m, false);
        CHECK_FALSE(off.powered_on());
        CHECK(off.field(x).cwiseAbs().maxCoeff() == 0.0);
        CHECK(off.intensity(e_on).cwiseAbs().maxCoeff() == 0.0);
        const auto back = set_power(off, true);
        CHECK(back.field(x) == e_on);
        CHECK(back.intensity(e_on) == i_on);
    }

    TEST_CASE("ideal closure: intensity of field equals sin squared")
    {
        const auto m = OpticsModel::ideal({1, 50}, 1.7, 0.2);
        const Vector x = Vector::LinSpaced(50, -3.0, 3.0);
        const auto i = m.intensity(m.field(x));
        for (int k = 0; k < 50; ++k) {
            const double sn = std::sin(2.0 * std::numbers::pi * (x[k] + 0.2) / 1.7);
            CHECK(std::abs(i[k] - sn * sn) < 1e-12);
        }
    }

    TEST_CASE("intensity is non-negative and bounded by one")
    {
        auto spec = OpticsSpec{};
        spec.grid = {10, 10};
        spec.gaussian_width = 0.4;
        spec.doe_kernel = DoeKernel{3, 3, {0.2, -0.4, 0.2, -0.4, 1.0, -0.4, 0.2, -0.4, 0.2}};
        const OpticsModel m{spec};
        std::mt19937_64 rng{9};
        std::uniform_real_distribution<double> uni{-4.0, 4.0};
        for (int trial = 0; trial < 100; ++trial) {
            Vector x(100);
            for (int k = 0; k < 100; ++k) x[k] = uni(rng);
            const auto i = m.intensity(m.field(x));
            CHECK(i.minCoeff() >= 0.0);
            CHECK(i.maxCoeff() <= 1.0 + 1e-15);
        }
    }

    TEST_CASE("8-bit quantization error is at most half a level")
    {
        auto spec = OpticsSpec{};
        spec.grid = {1, 200};
        auto exact_spec = spec;
        spec.quantize_8bit = true;
        const OpticsModel q{spec};
        const OpticsModel exact{exact_spec};
        const Vector x = Vector::LinSpaced(200, 0.0, 1.4);
        const auto iq = q.intensity(q.field(x));
        const auto ie = exact.intensity(exact.field(x));
        CHECK((iq - ie).cwiseAbs().maxCoeff() <= 1.0 / 510.0 + 1e-15);
        for (int k = 0; k < 200; ++k) CHECK(std::round(iq[k] * 255.0) == doctest::Approx(iq[k] * 255.0));
    }

    TEST_CASE("degenerate heterogeneity is the ideal model")
    {
        const auto m = synthesize_heterogeneity({6, 6}, 7, std::numeric_limits<double>::infinity(), 0.0, 0.0);
        CHECK(m.mode() == OpticsMode::ideal);
        CHECK(m.illumination() == Vector::Ones(36));
        CHECK(m.conversion() == Vector::Constant(36, kDefaultKappa));
        CHECK(m.phase_offset() == Vector::Zero(36));
    }

    TEST_CASE("same seed gives the same model")
    {
        const auto a = synthesize_heterogeneity({20, 20}, 5, 0.5, 0.1, 0.1);
        const auto b = synthesize_heterogeneity({20, 20}, 5, 0.5, 0.1, 0.1);
        const auto c = synthesize_heterogeneity({20, 20}, 6, 0.5, 0.1, 0.1);
        CHECK(a.phase_offset() == b.phase_offset());
        CHECK(a.conversion() == b.conversion());
        CHECK(a.phase_offset() != c.phase_offset());
    }

    TEST_CASE("conversion factors are centred on the nominal value")
    {
        const double jitter = 0.05;
        const auto m = synthesize_heterogeneity({200, 200}, 11, 0.5, 0.0, jitter);
        const double mean = m.conversion().mean();
        const double sem = kDefaultKappa * jitter / std::sqrt(40000.0);
        CHECK(std::abs(mean - kDefaultKappa) < 3.0 * sem);
        CHECK(m.conversion().minCoeff() > 0.0);
    }

    TEST_CASE("kernel validation")
    {
        CHECK_THROWS_AS((DoeKernel{2, 3, std::vector<double>(6, 1.0)}.validate()), std::invalid_argument);
        CHECK_THROWS_AS((DoeKernel{3, 3, std::vector<double>(9, 0.0)}.validate()), std::invalid_argument);
        CHECK_THROWS_AS((DoeKernel{3, 3, std::vector<double>(8, 1.0)}.validate()), DimensionError);
        CHECK_THROWS_AS((DoeKernel{1, 1, {std::nan("")}}.validate()), std::invalid_argument);
    }

    TEST_CASE("spec round-trips through JSON and rejects a contradictory mode")
    {
        auto spec = OpticsSpec{};
        spec.grid = {7, 9};
        spec.gaussian_width = 0.35;
        spec.phase_jitter = 0.01;
        spec.seed = 123456789012345ULL;
        spec.doe_kernel = DoeKernel::center_dominant(1.0, 0.1);
        nlohmann::json j = spec;
        CHECK(j.at("mode") == "doe-coupled");
        CHECK(j.get<OpticsSpec>() == spec);
        auto ideal = OpticsSpec{};
        nlohmann::json ji = ideal;
        CHECK(ji.at("gaussian_width").is_null());
        CHECK(ji.get<OpticsSpec>() == ideal);
        ji["mode"] = "heterogeneous";
        CHECK_THROWS_AS(ji.get<OpticsSpec>(), std::invalid_argument);
    }

    TEST_CASE("mode names")
    {
        for (auto m : {OpticsMode::ideal, OpticsMode::heterogeneous, OpticsMode::doe_coupled})
            CHECK(optics_mode_from_string(to_string(m)) == m);
        CHECK_THROWS_AS(optics_mode_from_string("laser"), std::invalid_argument);
    }
}
