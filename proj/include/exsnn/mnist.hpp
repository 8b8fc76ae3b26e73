#pragma once

// IDX loading, the random input projection and the time-multiplexed drive.

#include <exsnn/random.hpp>
#include <exsnn/types.hpp>

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace exsnn {

struct Dataset {
    int rows = 0;
    int cols = 0;
    /// One flattened image per row, pixels scaled to [0, 1].
    RowMatrix images;
    std::vector<std::uint8_t> labels;

    int size() const { return static_cast<int>(labels.size()); }
    int pixels() const { return rows * cols; }
    Dataset subset(std::span<const int> indices) const;
};

/// Reads an image file (magic 0x803) and a label file (magic 0x801).
Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels);

struct IdxImages {
    int rows = 0;
    int cols = 0;
    std::vector<std::uint8_t> pixels;
    int count() const { return rows * cols == 0 ? 0 : static_cast<int>(pixels.size()) / (rows * cols); }
};
IdxImages read_idx_images(const std::filesystem::path& path);
std::vector<std::uint8_t> read_idx_labels(const std::filesystem::path& path);
void write_idx_images(const std::filesystem::path& path, const IdxImages& images);
void write_idx_labels(const std::filesystem::path& path, std::span<const std::uint8_t> labels);

struct InputProjection {
    /// N x P, spectral norm 1 after construction.
    Matrix weights;
    std::uint64_t seed = 0;
    /// Largest singular value of the raw uniform matrix.
    double normalization_scale = 1.0;
    int iterations = 0;
};

inline constexpr double kPowerTolerance = 1e-9;
inline constexpr int kPowerMaxIterations = 10000;

/// Entries uniform in [-1, 1], divided by the largest singular value found by
/// power iteration on W^T W. Throws ConvergenceError when the cap is hit.
InputProjection build_projection(
  int n_neurons,
  int n_pixels,
  std::uint64_t seed,
  double tolerance = kPowerTolerance,
  int max_iterations = kPowerMaxIterations);

/// Largest singular value by power iteration; `iterations` receives the count.
double largest_singular_value(const Matrix& w, double tolerance, int max_iterations, int* iterations = nullptr);

struct StimulusSchedule {
    int on_steps = 23;
    int off_steps = 25;

    int period() const { return on_steps + off_steps; }
};

/// Row generator for gamma W u(t). Each image's drive is computed once and
/// repeated for the on-window; off-window rows are exactly zero.
class DriveStream {
public:
    DriveStream(const InputProjection& projection, const RowMatrix& images, StimulusSchedule schedule, double gamma);

    int rows() const { return static_cast<int>(images_->rows()) * schedule_.period(); }
    int cols() const { return static_cast<int>(projection_->weights.rows()); }
    /// Drive row for absolute step t.
    std::span<const double> row(int t);

private:
    const InputProjection* projection_;
    const RowMatrix* images_;
    StimulusSchedule schedule_;
    double gamma_;
    int cached_image_ = -1;
    Vector on_drive_;
    Vector zero_;
};

/// Materialized T x N drive, T = images * period.
RowMatrix drive_series(
  const InputProjection& projection,
  const RowMatrix& images,
  StimulusSchedule schedule,
  double gamma);

struct DataSplit {
    std::vector<int> train;
    std::vector<int> test;
};

/// Disjoint random draw without replacement from [0, total).
DataSplit split_indices(int total, int n_train, int n_test, std::uint64_t seed);

}  // namespace exsnn
