#include <exsnn/characterize.hpp>
#include <exsnn/errors.hpp>
#include <exsnn/parallel.hpp>
#include <exsnn/spike_codec.hpp>

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <ostream>

namespace exsnn {

namespace {

struct Trace {
    std::vector<double> probe;
    double deviation = 0.0;
};

// Runs from `rest` with drive(t) = gamma * u(t) on every neuron.
template <typename Input>
Trace simulate(
  const NetworkParams& params,
  const OpticsModel& optics,
  const NeuronArrays& rest,
  double gamma,
  int horizon,
  int probe,
  Input&& u)
{
    Network net{params, optics, rest};
    Vector drive = Vector::Zero(net.size());
    Trace trace;
    trace.probe.reserve(static_cast<std::size_t>(horizon));
    for (int t = 0; t < horizon; ++t) {
        drive.setConstant(gamma * u(t));
        net.advance(as_span(drive));
        const Vector& s = net.state().s;
        const double sp = s[probe];
        trace.probe.push_back(sp);
        trace.deviation = std::max(trace.deviation, (s.array() - sp).abs().maxCoeff());
    }
    return trace;
}

void check_grid(const std::vector<double>& grid)
{
    if (grid.empty()) throw std::invalid_argument{"sweep grid is empty"};
    for (std::size_t k = 1; k < grid.size(); ++k)
        if (!(grid[k] > grid[k - 1])) throw std::invalid_argument{"sweep grid must be strictly increasing"};
}

void check_probe(const OpticsModel& optics, const ProtocolOptions& options)
{
    if (options.probe_neuron < 0 || options.probe_neuron >= optics.size())
        throw std::out_of_range{fmt::format("probe neuron {} outside network of {}", options.probe_neuron, optics.size())};
}

nlohmann::json base_metadata(
  const std::string& protocol,
  const NetworkParams& params,
  const OpticsModel& optics,
  const RestState& rest,
  const ProtocolOptions& options)
{
    return {
      {"protocol", protocol},
      {"params", params},
      {"optics", optics.spec()},
      {"probe_neuron", options.probe_neuron},
      {"input_weight", 1.0},
      {"rest", {{"steps", rest.steps}, {"converged", rest.converged}, {"tolerance", rest.tolerance}, {"cap", rest.cap}}}};
}

std::optional<int> first_crossing(const std::vector<double>& s, int from, double threshold)
{
    for (std::size_t t = static_cast<std::size_t>(from); t < s.size(); ++t)
        if (s[t] > threshold) return static_cast<int>(t);
    return std::nullopt;
}

SweepResult pulse_sweep(
  const std::string& protocol,
  const NetworkParams& params,
  const OpticsModel& optics,
  const std::vector<double>& gamma_grid,
  Pulse pulse,
  const ProtocolOptions& options)
{
    check_grid(gamma_grid);
    check_probe(optics, options);
    if (pulse.start < 0 || pulse.end < pulse.start)
        throw std::invalid_argument{fmt::format("bad pulse [{}, {}]", pulse.start, pulse.end)};
    const auto rest = rest_state(params, optics);
    const int horizon = pulse.end + 1 + options.tail;
    SweepResult out;
    out.protocol = protocol;
    out.variable = "gamma";
    out.points.resize(gamma_grid.size());
    parallel_for(gamma_grid.size(), options.workers, [&](std::size_t begin, std::size_t end) {
        for (std::size_t k = begin; k < end; ++k) {
            const auto trace = simulate(params, optics, rest.state, gamma_grid[k], horizon, options.probe_neuron, [&](int t) {
                return (t >= pulse.start && t <= pulse.end) ? pulse.value : 0.0;
            });
            auto& p = out.points[k];
            p.value = gamma_grid[k];
            p.max_amplitude = *std::max_element(trace.probe.begin() + pulse.start, trace.probe.end());
            if (auto t = first_crossing(trace.probe, pulse.start, params.spike_threshold)) p.latency = *t - pulse.start;
            p.spike_times = spike_times(trace.probe, params.spike_threshold);
            p.ensemble_deviation = trace.deviation;
        }
    });
    out.metadata = base_metadata(protocol, params, optics, rest, options);
    out.metadata["pulse"] = {{"start", pulse.start}, {"end", pulse.end}, {"value", pulse.value}, {"inclusive", true}};
    out.metadata["horizon"] = horizon;
    return out;
}

}  // namespace

std::vector<double> SweepResult::grid() const
{
    std::vector<double> g;
    g.reserve(points.size());
    for (const auto& p : points) g.push_back(p.value);
    return g;
}

double SweepResult::max_ensemble_deviation() const
{
    double d = 0.0;
    for (const auto& p : points) d = std::max(d, p.ensemble_deviation);
    return d;
}

SweepResult excitability_sweep(
  const NetworkParams& params,
  const OpticsModel& optics,
  const std::vector<double>& gamma_grid,
  Pulse pulse,
  const ProtocolOptions& options)
{
    auto out = pulse_sweep("excitability", params, optics, gamma_grid, pulse, options);
    if (gamma_grid.size() >= 2) out.metadata["threshold_estimate"] = estimate_threshold(out);
    return out;
}

SweepResult latency_curve(
  const NetworkParams& params,
  const OpticsModel& optics,
  const std::vector<double>& gamma_grid,
  Pulse pulse,
  const ProtocolOptions& options)
{
    return pulse_sweep("latency", params, optics, gamma_grid, pulse, options);
}

SweepResult spike_rate_sweep(
  const NetworkParams& params,
  const OpticsModel& optics,
  const std::vector<double>& gamma_grid,
  int constant_from,
  const ProtocolOptions& options)
{
    check_grid(gamma_grid);
    check_probe(optics, options);
    const int count_from = constant_from + options.rate_transient;
    if (constant_from < 0 || count_from >= options.rate_horizon)
        throw std::invalid_argument{fmt::format(
          "rate protocol: onset {} + transient {} leaves no window before horizon {}",
          constant_from, options.rate_transient, options.rate_horizon)};
    const auto rest = rest_state(params, optics);
    SweepResult out;
    out.protocol = "spike_rate";
    out.variable = "gamma";
    out.points.resize(gamma_grid.size());
    const double window = options.rate_horizon - count_from;
    parallel_for(gamma_grid.size(), options.workers, [&](std::size_t begin, std::size_t end) {
        for (std::size_t k = begin; k < end; ++k) {
            const auto trace = simulate(
              params, optics, rest.state, gamma_grid[k], options.rate_horizon, options.probe_neuron,
              [&](int t) { return t >= constant_from ? 1.0 : 0.0; });
            auto& p = out.points[k];
            p.value = gamma_grid[k];
            p.max_amplitude = *std::max_element(trace.probe.begin() + constant_from, trace.probe.end());
            p.spike_times = spike_times(trace.probe, params.spike_threshold);
            const auto counted = std::count_if(p.spike_times.begin(), p.spike_times.end(), [&](int t) { return t >= count_from; });
            p.spike_rate = static_cast<double>(counted) / window;
            if (auto t = first_crossing(trace.probe, constant_from, params.spike_threshold)) p.latency = *t - constant_from;
            p.ensemble_deviation = trace.deviation;
        }
    });
    out.metadata = base_metadata("spike_rate", params, optics, rest, options);
    out.metadata["constant_from"] = constant_from;
    out.metadata["horizon"] = options.rate_horizon;
    out.metadata["transient"] = options.rate_transient;
    if (auto onset = rate_onset(out)) out.metadata["onset"] = {{"gamma", onset->gamma}, {"rate", onset->rate}};
    return out;
}

SweepResult refractory_probe(
  const NetworkParams& params,
  const OpticsModel& optics,
  double gamma,
  const std::vector<int>& tau_grid,
  double second_pulse_gain,
  const ProtocolOptions& options)
{
    std::vector<double> grid(tau_grid.begin(), tau_grid.end());
    check_grid(grid);
    check_probe(optics, options);
    if (tau_grid.front() < 1) throw std::invalid_argument{"refractory probe: tau must be >= 1"};
    const auto rest = rest_state(params, optics);
    SweepResult out;
    out.protocol = "refractory";
    out.variable = "tau";
    out.points.resize(tau_grid.size());
    parallel_for(tau_grid.size(), options.workers, [&](std::size_t begin, std::size_t end) {
        for (std::size_t k = begin; k < end; ++k) {
            const int tau = tau_grid[k];
            const int second_start = 506 + tau;
            const int second_end = 510 + tau;
            const int window_end = second_end + options.refractory_window;
            const auto trace = simulate(params, optics, rest.state, gamma, window_end + 1, options.probe_neuron, [&](int t) {
                if (t >= 500 && t <= 505) return 1.0;
                if (t >= second_start && t <= second_end) return second_pulse_gain;
                return 0.0;
            });
            auto& p = out.points[k];
            p.value = tau;
            p.spike_times = spike_times(trace.probe, params.spike_threshold);
            p.reexcited = std::any_of(p.spike_times.begin(), p.spike_times.end(), [&](int t) {
                return t >= second_start && t <= window_end;
            });
            p.max_amplitude = *std::max_element(trace.probe.begin() + second_start, trace.probe.end());
            p.ensemble_deviation = trace.deviation;
        }
    });
    out.metadata = base_metadata("refractory", params, optics, rest, options);
    out.metadata["gamma"] = gamma;
    out.metadata["second_pulse_gain"] = second_pulse_gain;
    out.metadata["first_pulse"] = {500, 505};
    out.metadata["detection_window_after_second_pulse"] = options.refractory_window;
    if (auto tr = refractory_length(out)) out.metadata["refractory_length"] = *tr;
    return out;
}

double estimate_threshold(const SweepResult& sweep)
{
    if (sweep.points.size() < 2) throw std::invalid_argument{"threshold estimate needs at least two grid points"};
    std::size_t best = 0;
    double rise = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k + 1 < sweep.points.size(); ++k) {
        const double d = sweep.points[k + 1].max_amplitude - sweep.points[k].max_amplitude;
        if (d > rise) {
            rise = d;
            best = k;
        }
    }
    return 0.5 * (sweep.points[best].value + sweep.points[best + 1].value);
}

std::optional<RateOnset> rate_onset(const SweepResult& sweep)
{
    for (const auto& p : sweep.points)
        if (p.spike_rate > 0.0) return RateOnset{p.value, p.spike_rate};
    return std::nullopt;
}

std::optional<int> refractory_length(const SweepResult& sweep)
{
    for (const auto& p : sweep.points)
        if (p.reexcited) return static_cast<int>(p.value);
    return std::nullopt;
}

std::vector<double> linspace(double lo, double hi, int count)
{
    if (count < 1) throw std::invalid_argument{"linspace needs count >= 1"};
    std::vector<double> out(static_cast<std::size_t>(count));
    if (count == 1) {
        out[0] = lo;
        return out;
    }
    for (int k = 0; k < count; ++k) out[static_cast<std::size_t>(k)] = lo + (hi - lo) * k / (count - 1);
    return out;
}

void write_csv(std::ostream& out, const SweepResult& sweep)
{
    out << sweep.variable << ",max_amplitude,spike_rate,latency,spike_count,reexcited,ensemble_deviation\n";
    for (const auto& p : sweep.points) {
        out << fmt::format(
          "{:.17g},{:.17g},{:.17g},{},{},{},{:.17g}\n",
          p.value,
          p.max_amplitude,
          p.spike_rate,
          p.latency ? fmt::format("{}", *p.latency) : std::string{},
          p.spike_times.size(),
          p.reexcited ? 1 : 0,
          p.ensemble_deviation);
    }
}

nlohmann::json sidecar(const SweepResult& sweep)
{
    auto j = sweep.metadata;
    j["variable"] = sweep.variable;
    j["grid"] = sweep.grid();
    j["max_ensemble_deviation"] = sweep.max_ensemble_deviation();
    return j;
}

}  // namespace exsnn
