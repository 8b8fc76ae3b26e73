#pragma once

// Slow-fast Ikeda map. Each step computes, in this order,
//   x(t+1) = -delta y(t) + beta I(t) + drive(t+1) + theta0 + phi
//   y(t+1) = eta_mem y(t) + x(t+1)
//   s(t+1) = sin^2(2 pi x(t+1) / kappa)
//   I(t+1) = camera intensity of the field at x(t+1)
// where phi and kappa are the per-neuron optics offset and conversion factor.
// Changing the order shifts the excitability threshold.

#include <exsnn/optics.hpp>
#include <exsnn/types.hpp>

#include <json.hpp>

#include <span>

namespace exsnn {

struct NetworkParams {
    double beta = 0.475;
    /// Injection strength. Callers fold it into the drive they pass to step().
    double gamma = 0.3;
    double delta = 0.1;
    double eta_mem = 0.995;
    double theta0 = -0.35;
    double spike_threshold = 0.6;
    /// false: plain Ikeda map, y frozen at 0.
    bool excitable = true;

    /// Throws std::invalid_argument when an invariant is violated.
    void validate() const;
    bool operator==(const NetworkParams&) const = default;
};

void to_json(nlohmann::json& j, const NetworkParams& p);
void from_json(const nlohmann::json& j, NetworkParams& p);

struct NeuronArrays {
    Vector x;
    Vector y;
    Vector s;
    Vector intensity;

    static NeuronArrays zeros(int n);
    int n() const { return static_cast<int>(x.size()); }
};

/// One step of the map. `input_drive` is the injected term gamma W u(t+1).
NeuronArrays step(
  const NeuronArrays& state,
  const NetworkParams& params,
  const OpticsModel& optics,
  std::span<const double> input_drive);

/// Stateful stepper that reuses its buffers; the hot loop of every protocol.
class Network {
public:
    Network(NetworkParams params, OpticsModel optics, unsigned workers = 1);
    Network(NetworkParams params, OpticsModel optics, NeuronArrays state, unsigned workers = 1);

    /// Advances one step with the given drive (size N).
    void advance(std::span<const double> drive);
    /// Advances one step with zero drive.
    void advance_free();

    const NeuronArrays& state() const { return state_; }
    void set_state(NeuronArrays state);
    const NetworkParams& params() const { return params_; }
    const OpticsModel& optics() const { return optics_; }
    OpticsModel& optics() { return optics_; }
    int size() const { return optics_.size(); }

private:
    NetworkParams params_;
    OpticsModel optics_;
    NeuronArrays state_;
    Vector field_;
    Vector zero_drive_;
    unsigned workers_;
};

/// Row t holds s after applying input row t, i.e. after t+1 steps. Identical to
/// calling step() once per row.
RowMatrix run(
  const NeuronArrays& state,
  const NetworkParams& params,
  const OpticsModel& optics,
  const RowMatrix& input_series,
  unsigned workers = 1);

struct RestState {
    NeuronArrays state;
    int steps = 0;
    bool converged = false;
    double final_change = 0.0;
    double tolerance = 0.0;
    int cap = 0;
};

inline constexpr double kRestTolerance = 1e-10;
inline constexpr int kRestCap = 10000;

/// Iterates from zeros with no input until max_i |s_i(t+1) - s_i(t)| falls
/// below `tolerance`. Non-convergence is reported, not thrown.
RestState rest_state(
  const NetworkParams& params,
  const OpticsModel& optics,
  double tolerance = kRestTolerance,
  int cap = kRestCap);

}  // namespace exsnn
