#pragma once

#include <exsnn/dynamics.hpp>
#include <exsnn/optics.hpp>
#include <exsnn/types.hpp>

#include <oracle.hpp>

#include <filesystem>
#include <random>
#include <string>

namespace testing {

inline exsnn::Vector to_vector(const std::vector<double>& v)
{
    return Eigen::Map<const exsnn::Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

inline std::vector<double> to_std(const exsnn::Vector& v) { return {v.data(), v.data() + v.size()}; }

inline oracle::Optics oracle_optics(const exsnn::OpticsModel& m)
{
    oracle::Optics o;
    o.rows = m.grid().rows;
    o.cols = m.grid().cols;
    o.i0 = to_std(m.illumination());
    o.phi = to_std(m.phase_offset());
    o.kappa = to_std(m.conversion());
    if (m.spec().doe_kernel) o.kernel = oracle::Kernel{m.spec().doe_kernel->rows, m.spec().doe_kernel->cols, m.spec().doe_kernel->weights};
    o.quantize = m.quantize_8bit();
    return o;
}

inline oracle::Params oracle_params(const exsnn::NetworkParams& p)
{
    return {p.beta, p.delta, p.eta_mem, p.theta0, p.excitable};
}

inline exsnn::NetworkParams section21()
{
    exsnn::NetworkParams p;
    p.beta = 0.475;
    p.theta0 = -0.35;
    p.delta = 0.1;
    p.eta_mem = 0.995;
    return p;
}

/// Scratch directory removed on destruction.
struct TempDir {
    std::filesystem::path path;
    explicit TempDir(const std::string& name)
      : path{std::filesystem::temp_directory_path() / ("exsnn_test_" + name + "_" + std::to_string(std::random_device{}()))}
    {
        std::filesystem::create_directories(path);
    }
    ~TempDir() { std::filesystem::remove_all(path); }
};

inline double max_abs_diff(const exsnn::Vector& a, const std::vector<double>& b)
{
    double d = 0.0;
    for (Eigen::Index i = 0; i < a.size(); ++i) d = std::max(d, std::abs(a[i] - b[static_cast<std::size_t>(i)]));
    return d;
}

}  // namespace testing
