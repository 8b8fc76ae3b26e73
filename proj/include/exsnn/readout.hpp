#pragma once

// Linear readout: NMSE loss, SPSA descent, ridge baseline and evaluation.
// Feature matrices carry a trailing column of ones for the bias.

#include <exsnn/spike_codec.hpp>
#include <exsnn/types.hpp>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace exsnn {

inline constexpr int kClasses = 10;

struct ReadoutWeights {
    /// C x (N + 1); the last column is the bias.
    Matrix w_out;
    long epoch = 0;
    std::uint64_t rng_seed = 0;

    static ReadoutWeights zeros(int classes, int n_features);
    int classes() const { return static_cast<int>(w_out.rows()); }
    int n_features() const { return static_cast<int>(w_out.cols()) - 1; }
    bool finite() const { return w_out.allFinite(); }
};

struct SpsaConfig {
    double epsilon = 1.0 / 1024.0;
    double learning_rate = 1e-4;
    long epochs = 100000;
    /// Examples per loss evaluation; 0 means the full training set.
    int batch = 0;
    /// Epochs between history rows (and checkpoints).
    long eval_interval = 100;

    void validate() const;
};

enum class NmseMode { total_variance, per_class };
std::string to_string(NmseMode mode);
NmseMode nmse_mode_from_string(const std::string& name);

Matrix one_hot(std::span<const std::uint8_t> labels, int classes = kClasses);

/// Appends the bias column of ones.
Matrix with_bias(const Matrix& features);

/// Dense M x (N + 1) matrix built from gated responses.
Matrix feature_matrix(std::span<const SparseResponse> responses);

/// total_variance: sum ||pred - y||^2 / sum ||y - mean(y)||^2 over the batch.
/// per_class: the same ratio per target column, averaged over columns with
/// non-zero variance.
double nmse_from_predictions(const Matrix& predictions, const Matrix& targets, NmseMode mode = NmseMode::total_variance);
double nmse_loss(
  const ReadoutWeights& weights,
  const Matrix& features,
  const Matrix& targets,
  NmseMode mode = NmseMode::total_variance);

using LossFn = std::function<double(const Matrix&)>;

struct SpsaStep {
    double loss_plus = 0.0;
    double loss_minus = 0.0;
    /// (L+ - L-) / (2 eps VAR(Lambda)); the gradient estimate is this times Lambda.
    double scale = 0.0;
    double lambda_variance = 1.0;
};

/// Rademacher draw in storage order.
Matrix draw_rademacher(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng);

/// Second moment of the draw around its known zero mean.
double lambda_variance(const Matrix& lambda);

/// One SPSA update of `w` in place using exactly two calls to `loss`.
/// `gradient`, when given, receives the estimate.
SpsaStep spsa_step(Matrix& w, const LossFn& loss, const SpsaConfig& config, std::mt19937_64& rng, Matrix* gradient = nullptr);

/// Readout form: loss is the NMSE of weights on (features, targets).
ReadoutWeights spsa_step(
  const ReadoutWeights& weights,
  const Matrix& features,
  const Matrix& targets,
  const SpsaConfig& config,
  std::mt19937_64& rng,
  NmseMode mode = NmseMode::total_variance);

struct HistoryRow {
    long epoch = 0;
    double train_loss = 0.0;
    double train_accuracy = 0.0;
    /// NaN when no test set was supplied.
    double test_accuracy = 0.0;

    bool operator==(const HistoryRow&) const = default;
};

struct TrainOptions {
    NmseMode mode = NmseMode::total_variance;
    const Matrix* test_features = nullptr;
    std::span<const std::uint8_t> train_labels;
    std::span<const std::uint8_t> test_labels;
    /// Written every eval_interval epochs when set.
    std::optional<std::filesystem::path> checkpoint;
    bool resume = false;
    /// Stamped into checkpoints; resume refuses a different value.
    std::uint64_t config_hash = 0;
    /// Stops after this epoch count (for interrupt tests); the run is resumable.
    std::optional<long> stop_after;
};

struct TrainResult {
    ReadoutWeights weights;
    std::vector<HistoryRow> history;
};

/// Deterministic from seed. Uses cached predictions F W^T so each epoch costs
/// one product F Lambda^T; still exactly two loss evaluations per epoch.
TrainResult train_spsa(
  const Matrix& features,
  const Matrix& targets,
  const SpsaConfig& config,
  std::uint64_t seed,
  const TrainOptions& options = {});

/// W = (F^T F + lambda I)^-1 F^T Y, solved in the dual when M < N + 1.
/// Throws SingularSystemError when lambda = 0 and the system is singular.
ReadoutWeights train_ridge(const Matrix& features, const Matrix& targets, double lambda);

struct RidgeSelection {
    double lambda = 0.0;
    ReadoutWeights weights;
    std::vector<std::pair<double, double>> validation_accuracy;
};
/// Picks the lambda with the best validation accuracy; ties go to the larger lambda.
RidgeSelection select_ridge(
  const Matrix& train_features,
  const Matrix& train_targets,
  const Matrix& val_features,
  std::span<const std::uint8_t> val_labels,
  const std::vector<double>& lambdas);

struct Evaluation {
    double accuracy = 0.0;
    /// Rows are true classes, columns predictions.
    Eigen::MatrixXi confusion;
    std::vector<int> predictions;
};

/// Argmax over class scores, lowest index wins ties.
std::vector<int> predict(const Matrix& scores);
Evaluation evaluate(const ReadoutWeights& weights, const Matrix& features, std::span<const std::uint8_t> labels);

void write_history_csv(std::ostream& out, const std::vector<HistoryRow>& history);
void write_confusion_csv(std::ostream& out, const Eigen::MatrixXi& confusion);

void save_weights(const std::filesystem::path& path, const ReadoutWeights& weights, std::uint64_t config_hash);
ReadoutWeights load_weights(const std::filesystem::path& path, std::uint64_t expected_hash);

}  // namespace exsnn
