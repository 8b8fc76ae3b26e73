#pragma once

// Optical readout model: SLM field nonlinearity, optional DOE coupling and
// camera normalization. Maps the SLM grayscale state to the intensity fed
// back into the dynamics.

#include <exsnn/types.hpp>

#include <json.hpp>

#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

namespace exsnn {

/// Grayscale-to-phase period used when nothing else is configured. With this
/// value the excitability threshold of the single-neuron protocol sits at
/// gamma ~ 0.23 (see README, "Conventions").
inline constexpr double kDefaultKappa = 2.75;

enum class OpticsMode { ideal, heterogeneous, doe_coupled };

std::string to_string(OpticsMode mode);
OpticsMode optics_mode_from_string(const std::string& name);

struct GridShape {
    int rows = 1;
    int cols = 1;

    int size() const { return rows * cols; }
    bool operator==(const GridShape&) const = default;
};

/// Real-valued coupling stencil with odd side lengths, stored row-major.
struct DoeKernel {
    int rows = 1;
    int cols = 1;
    std::vector<double> weights{1.0};

    double at(int r, int c) const { return weights[static_cast<std::size_t>(r * cols + c)]; }
    double abs_sum() const;
    void validate() const;

    static DoeKernel identity();
    /// 3x3 stencil with weight `center` in the middle and `neighbor` around it.
    static DoeKernel center_dominant(double center = 1.0, double neighbor = 0.15);
    bool operator==(const DoeKernel&) const = default;
};

/// Everything needed to regenerate an optics model. Serialized instead of raw
/// per-pixel arrays.
struct OpticsSpec {
    GridShape grid{};
    double kappa = kDefaultKappa;
    double phase_offset = 0.0;
    /// Gaussian illumination width as a fraction of the grid side; infinity
    /// gives uniform illumination.
    double gaussian_width = std::numeric_limits<double>::infinity();
    double phase_jitter = 0.0;
    /// Relative standard deviation of the per-pixel conversion factor.
    double kappa_jitter = 0.0;
    std::uint64_t seed = 0;
    std::optional<DoeKernel> doe_kernel;
    bool quantize_8bit = false;

    OpticsMode mode() const;
    bool operator==(const OpticsSpec&) const = default;
};

void to_json(nlohmann::json& j, const OpticsSpec& spec);
void from_json(const nlohmann::json& j, OpticsSpec& spec);

class OpticsModel {
public:
    /// Homogeneous model: unit illumination, constant offset and conversion.
    static OpticsModel ideal(GridShape grid, double kappa = kDefaultKappa, double phase_offset = 0.0);

    /// Builds the per-pixel arrays described by `spec`, deterministically from
    /// its seed.
    explicit OpticsModel(OpticsSpec spec);

    const OpticsSpec& spec() const { return spec_; }
    OpticsMode mode() const { return spec_.mode(); }
    GridShape grid() const { return spec_.grid; }
    int size() const { return spec_.grid.size(); }

    const Vector& illumination() const { return illumination_; }
    const Vector& phase_offset() const { return phase_offset_; }
    const Vector& conversion() const { return conversion_; }
    bool powered_on() const { return powered_on_; }
    bool quantize_8bit() const { return spec_.quantize_8bit; }
    /// Fixed camera normalization: 1 / (max illumination * (sum |kernel|)^2).
    double intensity_scale() const { return intensity_scale_; }

    /// Signed field E_i = sqrt(I0_i) sin(2 pi (x_i + phi_i) / kappa_i) for SLM
    /// grayscale values x.
    Vector field(const Vector& x) const;

    /// Normalized camera intensity for a field vector.
    Vector intensity(const Vector& field) const;
    /// Same as intensity() but writes into `out` (sized N).
    void intensity_into(std::span<const double> field, std::span<double> out) const;

    void set_power(bool on) { powered_on_ = on; }

    /// Rounds to the nearest of 256 camera levels.
    static double quantize(double value);

private:
    void convolve_square(std::span<const double> field, std::span<double> out) const;

    OpticsSpec spec_;
    Vector illumination_;
    Vector phase_offset_;
    Vector conversion_;
    double intensity_scale_ = 1.0;
    bool powered_on_ = true;
};

/// Functional form of OpticsModel::set_power.
OpticsModel set_power(OpticsModel optics, bool on);

/// Synthesizes a heterogeneous model: Gaussian illumination centred on the
/// grid, normally distributed phase offsets and conversion factors.
OpticsModel synthesize_heterogeneity(
  GridShape grid,
  std::uint64_t seed,
  double gaussian_width,
  double phase_jitter,
  double kappa_jitter,
  double kappa = kDefaultKappa,
  double phase_offset = 0.0);

}  // namespace exsnn
