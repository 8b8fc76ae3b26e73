#pragma once

// Declarative experiment configuration and the characterize / respond / train
// pipeline behind the command-line tool.

#include <exsnn/characterize.hpp>
#include <exsnn/dynamics.hpp>
#include <exsnn/mnist.hpp>
#include <exsnn/optics.hpp>
#include <exsnn/readout.hpp>
#include <exsnn/spike_codec.hpp>

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace exsnn {

struct GridSpec {
    double lo = 0.0;
    double hi = 0.5;
    int count = 50;

    std::vector<double> values() const { return linspace(lo, hi, count); }
};

struct CharacterizeConfig {
    /// Network size used for the sweeps; defaults to the optics grid.
    std::optional<GridShape> grid;
    int probe_neuron = 0;
    GridSpec excitability_grid{0.0, 0.5, 50};
    Pulse pulse{};
    GridSpec rate_grid{0.0, 0.5, 51};
    int constant_from = 500;
    int rate_horizon = 3000;
    int rate_transient = 100;
    double refractory_gamma = 0.3;
    int tau_min = 1;
    int tau_max = 30;
    std::vector<double> refractory_gains{1.0, 2.0};
    int refractory_window = 15;
    GridSpec latency_grid{0.3, 1.5, 50};
};

struct DataConfig {
    std::string train_images = "data/mnist5k-images-idx3-ubyte";
    std::string train_labels = "data/mnist5k-labels-idx1-ubyte";
    /// When set, test examples are drawn from this file pair instead of the
    /// remainder of the training file.
    std::optional<std::string> test_images;
    std::optional<std::string> test_labels;
    int n_train = 1000;
    int n_test = 200;
};

struct ResponseConfig {
    double gamma = 6.0;
    StimulusSchedule schedule{};
    /// false: every presentation starts from the rest state (parallel over
    /// images). true: one uninterrupted run over the whole schedule.
    bool continuous = false;
    /// Power the optics off this many steps after the population's first spike.
    std::optional<int> hard_cutoff;
    FeatureMode feature_mode = FeatureMode::amplitude;
};

struct TrainingConfig {
    bool spsa = true;
    bool ridge = true;
    SpsaConfig spsa_config{};
    std::vector<double> ridge_lambdas{1e-3, 1e-2, 1e-1, 1.0, 10.0};
    NmseMode nmse = NmseMode::total_variance;
};

struct Seeds {
    std::optional<std::uint64_t> optics;
    std::optional<std::uint64_t> projection;
    std::optional<std::uint64_t> split;
    std::optional<std::uint64_t> training;
};

struct ExperimentConfig {
    std::string profile = "desk";
    std::uint64_t seed = 1;
    Seeds seeds;
    NetworkParams network{};
    OpticsSpec optics{};
    CharacterizeConfig characterize{};
    DataConfig data{};
    ResponseConfig response{};
    std::vector<int> delta_l{1, 3, 7, kUnboundedWindow};
    TrainingConfig training{};
    std::string output_dir = "runs";
    /// Defaults to <output_dir>/cache.
    std::optional<std::string> cache_dir;
    /// Explicit response cache; defaults to a hash-named file in cache_dir.
    std::optional<std::string> cache_file;
    unsigned workers = 1;

    /// Fills every derived seed from the master seed and copies the optics seed.
    void resolve();
    std::uint64_t optics_seed() const;
    std::uint64_t projection_seed() const;
    std::uint64_t split_seed() const;
    std::uint64_t training_seed() const;
    std::filesystem::path cache_path() const;
};

std::uint64_t derive_seed(std::uint64_t master, const std::string& purpose);

nlohmann::json to_json(const ExperimentConfig& config);
ExperimentConfig config_from_json(const nlohmann::json& doc);

/// Built-in profile: "desk" or "paper".
ExperimentConfig profile_defaults(const std::string& profile);

/// Profile defaults, overlaid with the file (JSON merge patch), then the seed
/// override. The result is resolved.
ExperimentConfig load_config(
  const std::optional<std::filesystem::path>& file,
  const std::optional<std::string>& profile,
  const std::optional<std::uint64_t>& seed);

/// Hash of everything the spike responses depend on.
std::uint64_t response_hash(const ExperimentConfig& config);
/// Hash of everything a trained readout depends on.
std::uint64_t training_hash(const ExperimentConfig& config, int delta_l);

std::string delta_l_name(int delta_l);

using Progress = std::function<void(const std::string&)>;

struct Presentation {
    SpikeRecord record;
    /// Neuron-steps during which the optics were powered.
    long powered_steps = 0;
};

/// Runs one presentation window of `period` steps starting at drive row
/// `first_row`. Spike times are relative to the start of the window.
Presentation present(
  Network& network,
  DriveStream& stream,
  int first_row,
  int period,
  std::optional<int> hard_cutoff);

struct LabeledSplit {
    Dataset train;
    Dataset test;
};
LabeledSplit load_split(const ExperimentConfig& config);

struct ResponseSet {
    std::vector<SpikeRecord> train;
    std::vector<SpikeRecord> test;
    std::vector<std::uint8_t> train_labels;
    std::vector<std::uint8_t> test_labels;
    double powered_fraction = 1.0;
    bool from_cache = false;
};

ResponseSet generate_responses(const ExperimentConfig& config, const LabeledSplit& split, const Progress& progress = {});

/// Loads the cache when it exists (refusing a stale one), otherwise simulates
/// and writes it.
ResponseSet load_or_generate_responses(const ExperimentConfig& config, const Progress& progress = {});

/// Creates <out>/<timestamp>-<command> (suffixed when taken) and writes the
/// resolved config into it.
std::filesystem::path make_run_dir(const ExperimentConfig& config, const std::string& command);
void prepare_run_dir(const std::filesystem::path& dir, const ExperimentConfig& config);

nlohmann::json run_characterize(const ExperimentConfig& config, const std::filesystem::path& dir, const Progress& progress = {});
nlohmann::json run_respond(const ExperimentConfig& config, const std::filesystem::path& dir, const Progress& progress = {});
nlohmann::json run_train(
  const ExperimentConfig& config,
  const std::filesystem::path& dir,
  bool resume = false,
  const Progress& progress = {});

void write_json(const std::filesystem::path& path, const nlohmann::json& doc);

}  // namespace exsnn
