#pragma once

// Single-neuron protocols: excitability threshold, spike rate under constant
// drive, refractory probe and latency curve. Every neuron of the network gets
// the same scalar input (weight 1); summaries are read from one probe neuron.

#include <exsnn/dynamics.hpp>

#include <json.hpp>

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace exsnn {

/// u(start:end) = value, both ends inclusive.
struct Pulse {
    int start = 50;
    int end = 75;
    double value = 1.0;
};

struct ProtocolOptions {
    int probe_neuron = 0;
    unsigned workers = 1;
    /// Steps simulated after the pulse ends (excitability and latency).
    int tail = 250;
    /// Total steps of the constant-drive protocol.
    int rate_horizon = 3000;
    /// Steps discarded after onset before counting spikes.
    int rate_transient = 100;
    /// Extra steps after the second pulse in which a spike still counts.
    int refractory_window = 15;
};

struct SweepPoint {
    double value = 0.0;
    double max_amplitude = 0.0;
    double spike_rate = 0.0;
    std::optional<int> latency;
    std::vector<int> spike_times;
    bool reexcited = false;
    /// max over t and neurons of |s_i(t) - s_probe(t)|.
    double ensemble_deviation = 0.0;

    bool operator==(const SweepPoint&) const = default;
};

struct SweepResult {
    std::string protocol;
    std::string variable;
    std::vector<SweepPoint> points;
    nlohmann::json metadata;

    std::vector<double> grid() const;
    double max_ensemble_deviation() const;
};

SweepResult excitability_sweep(
  const NetworkParams& params,
  const OpticsModel& optics,
  const std::vector<double>& gamma_grid,
  Pulse pulse = {},
  const ProtocolOptions& options = {});

SweepResult spike_rate_sweep(
  const NetworkParams& params,
  const OpticsModel& optics,
  const std::vector<double>& gamma_grid,
  int constant_from = 500,
  const ProtocolOptions& options = {});

/// First pulse u(500:505) = 1, second u(506+tau : 510+tau) = gain.
SweepResult refractory_probe(
  const NetworkParams& params,
  const OpticsModel& optics,
  double gamma,
  const std::vector<int>& tau_grid,
  double second_pulse_gain,
  const ProtocolOptions& options = {});

SweepResult latency_curve(
  const NetworkParams& params,
  const OpticsModel& optics,
  const std::vector<double>& gamma_grid,
  Pulse pulse = {},
  const ProtocolOptions& options = {});

/// Midpoint of the grid interval with the largest rise in max amplitude.
double estimate_threshold(const SweepResult& sweep);

struct RateOnset {
    double gamma = 0.0;
    double rate = 0.0;
};
std::optional<RateOnset> rate_onset(const SweepResult& sweep);

/// Smallest tau at which the second pulse re-excites.
std::optional<int> refractory_length(const SweepResult& sweep);

std::vector<double> linspace(double lo, double hi, int count);

void write_csv(std::ostream& out, const SweepResult& sweep);
nlohmann::json sidecar(const SweepResult& sweep);

}  // namespace exsnn
