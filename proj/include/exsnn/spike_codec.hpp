#pragma once

// First-spike detection, rank-order gating and readout features.

#include <exsnn/types.hpp>

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace exsnn {

inline constexpr int kNoSpike = -1;
/// Gating window that keeps every spiking neuron.
inline constexpr int kUnboundedWindow = std::numeric_limits<int>::max();

struct SpikeRecord {
    int stimulus_onset = 0;
    /// Absolute step of the first threshold crossing at or after onset, or kNoSpike.
    std::vector<std::int32_t> first_spike_time;
    /// s at that crossing; 0 for silent neurons.
    std::vector<double> amplitude;

    static SpikeRecord silent(int n, int onset);

    int n() const { return static_cast<int>(first_spike_time.size()); }
    bool spiked(int i) const { return first_spike_time[static_cast<std::size_t>(i)] != kNoSpike; }
    std::optional<int> latency(int i) const;
    /// Earliest first-spike time over the population.
    std::optional<int> t0() const;
    int spike_count() const;

    bool operator==(const SpikeRecord&) const = default;
};

/// Incremental detector: feed the output rows one time step at a time.
class SpikeDetector {
public:
    SpikeDetector(int n, int stimulus_onset, double threshold);

    void observe(int t, std::span<const double> s);
    const SpikeRecord& record() const { return record_; }
    std::optional<int> t0() const { return t0_; }

private:
    SpikeRecord record_;
    double threshold_;
    std::optional<int> t0_;
};

/// Throws std::out_of_range when onset is not a row of the trajectory.
SpikeRecord detect_spikes(const RowMatrix& trajectory, int stimulus_onset, double spike_threshold);

/// Rising-edge crossings of `threshold`; a new spike counts only after the
/// signal has dropped back to or below it.
std::vector<int> spike_times(std::span<const double> series, double threshold);

enum class FeatureMode { amplitude, binary, latency };

std::string to_string(FeatureMode mode);
FeatureMode feature_mode_from_string(const std::string& name);

struct SparseResponse {
    int n = 0;
    int delta_l = 0;
    int stimulus_onset = 0;
    /// Population first-spike time, kNoSpike when nothing fired.
    int t0 = kNoSpike;
    std::vector<std::int32_t> index;
    std::vector<double> value;

    int active_count() const { return static_cast<int>(index.size()); }
    double sparsity() const { return n == 0 ? 1.0 : 1.0 - static_cast<double>(active_count()) / n; }
    Vector dense() const;
    bool operator==(const SparseResponse&) const = default;
};

/// Keeps neurons whose first spike falls within [t0, t0 + delta_l]. In
/// latency mode the feature is 1 / (1 + first_spike - t0).
SparseResponse gate(const SpikeRecord& record, int delta_l, FeatureMode mode = FeatureMode::amplitude);

/// Counts of gated-in latencies (first spike minus stimulus onset) over records.
std::map<int, std::int64_t> latency_histogram(std::span<const SpikeRecord> records, int delta_l);

/// result[r][k] = gate(records[r], delta_l_values[k]). Windows must be sorted ascending.
std::vector<std::vector<SparseResponse>> rank_order_feature_series(
  std::span<const SpikeRecord> records,
  std::span<const int> delta_l_values,
  FeatureMode mode = FeatureMode::amplitude);

void write_csv(std::ostream& out, const SpikeRecord& record);
void write_csv(std::ostream& out, const SparseResponse& response);

/// Binary record cache stamped with the hash of the configuration that
/// produced it.
void save_records(const std::filesystem::path& path, std::span<const SpikeRecord> records, std::uint64_t config_hash);
/// Throws StaleCacheError on hash mismatch and FormatError on a damaged file.
std::vector<SpikeRecord> load_records(const std::filesystem::path& path, std::uint64_t expected_hash);

}  // namespace exsnn
