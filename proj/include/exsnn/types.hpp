#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <span>

namespace exsnn {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
/// Time-major series: one row per time step, one column per neuron.
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline std::span<const double> as_span(const Vector& v)
{
    return {v.data(), static_cast<std::size_t>(v.size())};
}

inline std::span<double> as_span(Vector& v)
{
    return {v.data(), static_cast<std::size_t>(v.size())};
}

}  // namespace exsnn
