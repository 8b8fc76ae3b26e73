#include <exsnn/dynamics.hpp>
#include <exsnn/errors.hpp>
#include <exsnn/parallel.hpp>

#include <fmt/format.h>

#include <cmath>
#include <numbers>

namespace exsnn {

void NetworkParams::validate() const
{
    if (!(eta_mem >= 0.0 && eta_mem <= 1.0))
        throw std::invalid_argument{fmt::format("eta_mem must lie in [0, 1], got {}", eta_mem)};
    if (!(spike_threshold > 0.0 && spike_threshold < 1.0))
        throw std::invalid_argument{fmt::format("spike_threshold must lie in (0, 1), got {}", spike_threshold)};
    for (auto [name, v] : {std::pair{"beta", beta}, std::pair{"gamma", gamma}, std::pair{"delta", delta}})
        if (!std::isfinite(v) || v < 0.0)
            throw std::invalid_argument{fmt::format("{} must be finite and >= 0, got {}", name, v)};
    if (!std::isfinite(theta0)) throw std::invalid_argument{"theta0 must be finite"};
}

void to_json(nlohmann::json& j, const NetworkParams& p)
{
    j = nlohmann::json{
      {"beta", p.beta},
      {"gamma", p.gamma},
      {"delta", p.delta},
      {"eta_mem", p.eta_mem},
      {"theta0", p.theta0},
      {"spike_threshold", p.spike_threshold},
      {"excitable", p.excitable}};
}

void from_json(const nlohmann::json& j, NetworkParams& p)
{
    NetworkParams d;
    p.beta = j.value("beta", d.beta);
    p.gamma = j.value("gamma", d.gamma);
    p.delta = j.value("delta", d.delta);
    p.eta_mem = j.value("eta_mem", d.eta_mem);
    p.theta0 = j.value("theta0", d.theta0);
    p.spike_threshold = j.value("spike_threshold", d.spike_threshold);
    p.excitable = j.value("excitable", d.excitable);
    p.validate();
}

NeuronArrays NeuronArrays::zeros(int n)
{
    return {Vector::Zero(n), Vector::Zero(n), Vector::Zero(n), Vector::Zero(n)};
}

Network::Network(NetworkParams params, OpticsModel optics, unsigned workers)
  : Network{params, optics, NeuronArrays::zeros(optics.size()), workers}
{
}

Network::Network(NetworkParams params, OpticsModel optics, NeuronArrays state, unsigned workers)
  : params_{params}
  , optics_{std::move(optics)}
  , field_{Vector::Zero(optics_.size())}
  , zero_drive_{Vector::Zero(optics_.size())}
  , workers_{workers}
{
    params_.validate();
    set_state(std::move(state));
}

void Network::set_state(NeuronArrays state)
{
    const int n = optics_.size();
    if (state.x.size() != n || state.y.size() != n || state.s.size() != n || state.intensity.size() != n)
        throw DimensionError{fmt::format("state vectors must all have {} entries", n)};
    state_ = std::move(state);
}

void Network::advance_free() { advance(as_span(zero_drive_)); }

void Network::advance(std::span<const double> drive)
{
    const auto n = static_cast<std::size_t>(optics_.size());
    if (drive.size() != n)
        throw DimensionError{fmt::format("input drive has {} entries, network has {}", drive.size(), n)};

    const double two_pi = 2.0 * std::numbers::pi;
    const double beta = params_.beta;
    const double delta = params_.excitable ? params_.delta : 0.0;
    const double eta = params_.eta_mem;
    const double theta0 = params_.theta0;
    const bool excitable = params_.excitable;
    const bool lit = optics_.powered_on();
    const double* phi = optics_.phase_offset().data();
    const double* kappa = optics_.conversion().data();
    const double* illum = optics_.illumination().data();
    double* x = state_.x.data();
    double* y = state_.y.data();
    double* s = state_.s.data();
    const double* in = state_.intensity.data();
    double* e = field_.data();

    parallel_for(n, workers_, [&](std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i) {
            const double xi = -delta * y[i] + beta * in[i] + drive[i] + (theta0 + phi[i]);
            if (excitable) y[i] = eta * y[i] + xi;
            x[i] = xi;
            const double sn = std::sin(two_pi * xi / kappa[i]);
            s[i] = sn * sn;
            e[i] = lit ? std::sqrt(illum[i]) * sn : 0.0;
        }
    });
    // Intensity needs every field value (DOE coupling), so it runs after the
    // per-neuron pass.
    optics_.intensity_into(as_span(field_), as_span(state_.intensity));
}

NeuronArrays step(
  const NeuronArrays& state,
  const NetworkParams& params,
  const OpticsModel& optics,
  std::span<const double> input_drive)
{
    Network net{params, optics, state};
    net.advance(input_drive);
    return net.state();
}

RowMatrix run(
  const NeuronArrays& state,
  const NetworkParams& params,
  const OpticsModel& optics,
  const RowMatrix& input_series,
  unsigned workers)
{
    if (input_series.rows() < 1) throw std::invalid_argument{"run: input series needs at least one row"};
    if (input_series.cols() != optics.size())
        throw DimensionError{fmt::format(
          "run: input series has {} columns, network has {}", input_series.cols(), optics.size())};
    Network net{params, optics, state, workers};
    RowMatrix out(input_series.rows(), input_series.cols());
    for (Eigen::Index t = 0; t < input_series.rows(); ++t) {
        net.advance({input_series.row(t).data(), static_cast<std::size_t>(input_series.cols())});
        out.row(t) = net.state().s.transpose();
    }
    return out;
}

RestState rest_state(const NetworkParams& params, const OpticsModel& optics, double tolerance, int cap)
{
    Network net{params, optics};
    RestState result;
    result.tolerance = tolerance;
    result.cap = cap;
    Vector previous = net.state().s;
    for (int t = 1; t <= cap; ++t) {
        net.advance_free();
        const double change = (net.state().s - previous).cwiseAbs().maxCoeff();
        result.steps = t;
        result.final_change = change;
        if (change < tolerance) {
            result.converged = true;
            break;
        }
        previous = net.state().s;
    }
    result.state = net.state();
    return result;
}

}  // namespace exsnn
