#include <exsnn/errors.hpp>
#include <exsnn/optics.hpp>

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

namespace exsnn {

std::string to_string(OpticsMode mode)
{
    switch (mode) {
    case OpticsMode::ideal: return "ideal";
    case OpticsMode::heterogeneous: return "heterogeneous";
    case OpticsMode::doe_coupled: return "doe-coupled";
    }
    return "unknown";
}

OpticsMode optics_mode_from_string(const std::string& name)
{
    if (name == "ideal") return OpticsMode::ideal;
    if (name == "heterogeneous") return OpticsMode::heterogeneous;
    if (name == "doe-coupled") return OpticsMode::doe_coupled;
    throw std::invalid_argument{fmt::format("unknown optics mode '{}'", name)};
}

double DoeKernel::abs_sum() const
{
    double total = 0.0;
    for (double w : weights) total += std::abs(w);
    return total;
}

void DoeKernel::validate() const
{
    if (rows < 1 || cols < 1 || rows % 2 == 0 || cols % 2 == 0)
        throw std::invalid_argument{fmt::format("DOE kernel sides must be odd, got {}x{}", rows, cols)};
    if (weights.size() != static_cast<std::size_t>(rows * cols))
        throw DimensionError{fmt::format(
          "DOE kernel {}x{} needs {} weights, got {}", rows, cols, rows * cols, weights.size())};
    for (double w : weights)
        if (!std::isfinite(w)) throw std::invalid_argument{"DOE kernel has non-finite weights"};
    if (abs_sum() == 0.0) throw std::invalid_argument{"DOE kernel is all zeros"};
}

DoeKernel DoeKernel::identity() { return DoeKernel{1, 1, {1.0}}; }

DoeKernel DoeKernel::center_dominant(double center, double neighbor)
{
    DoeKernel k{3, 3, std::vector<double>(9, neighbor)};
    k.weights[4] = center;
    return k;
}

OpticsMode OpticsSpec::mode() const
{
    if (doe_kernel) return OpticsMode::doe_coupled;
    if (std::isinf(gaussian_width) && phase_jitter == 0.0 && kappa_jitter == 0.0)
        return OpticsMode::ideal;
    return OpticsMode::heterogeneous;
}

void to_json(nlohmann::json& j, const OpticsSpec& spec)
{
    j = nlohmann::json{
      {"mode", to_string(spec.mode())},
      {"grid_rows", spec.grid.rows},
      {"grid_cols", spec.grid.cols},
      {"kappa", spec.kappa},
      {"phase_offset", spec.phase_offset},
      {"phase_jitter", spec.phase_jitter},
      {"kappa_jitter", spec.kappa_jitter},
      {"seed", spec.seed},
      {"quantize_8bit", spec.quantize_8bit},
    };
    // JSON has no infinity; uniform illumination is written as null.
    if (std::isinf(spec.gaussian_width))
        j["gaussian_width"] = nullptr;
    else
        j["gaussian_width"] = spec.gaussian_width;
    if (spec.doe_kernel)
        j["doe_kernel"] = {
          {"rows", spec.doe_kernel->rows},
          {"cols", spec.doe_kernel->cols},
          {"weights", spec.doe_kernel->weights}};
    else
        j["doe_kernel"] = nullptr;
}

void from_json(const nlohmann::json& j, OpticsSpec& spec)
{
    spec = OpticsSpec{};
    spec.grid.rows = j.value("grid_rows", 1);
    spec.grid.cols = j.value("grid_cols", 1);
    spec.kappa = j.value("kappa", kDefaultKappa);
    spec.phase_offset = j.value("phase_offset", 0.0);
    spec.phase_jitter = j.value("phase_jitter", 0.0);
    spec.kappa_jitter = j.value("kappa_jitter", 0.0);
    spec.seed = j.value("seed", std::uint64_t{0});
    spec.quantize_8bit = j.value("quantize_8bit", false);
    if (j.contains("gaussian_width") && !j.at("gaussian_width").is_null())
        spec.gaussian_width = j.at("gaussian_width").get<double>();
    if (j.contains("doe_kernel") && !j.at("doe_kernel").is_null()) {
        const auto& k = j.at("doe_kernel");
        spec.doe_kernel = DoeKernel{
          k.at("rows").get<int>(), k.at("cols").get<int>(), k.at("weights").get<std::vector<double>>()};
    }
    if (j.contains("mode")) {
        // The mode is implied by the parameters; a mismatch means a hand-edited file.
        const auto declared = optics_mode_from_string(j.at("mode").get<std::string>());
        if (declared != spec.mode())
            throw std::invalid_argument{fmt::format(
              "optics mode '{}' does not match its parameters (implies '{}')",
              to_string(declared), to_string(spec.mode()))};
    }
}

OpticsModel OpticsModel::ideal(GridShape grid, double kappa, double phase_offset)
{
    OpticsSpec spec;
    spec.grid = grid;
    spec.kappa = kappa;
    spec.phase_offset = phase_offset;
    return OpticsModel{spec};
}

OpticsModel::OpticsModel(OpticsSpec spec)
  : spec_{std::move(spec)}
{
    const auto& g = spec_.grid;
    if (g.rows < 1 || g.cols < 1)
        throw std::invalid_argument{fmt::format("grid must be at least 1x1, got {}x{}", g.rows, g.cols)};
    if (!(spec_.kappa > 0.0)) throw std::invalid_argument{"kappa must be positive"};
    if (spec_.phase_jitter < 0.0 || spec_.kappa_jitter < 0.0)
        throw std::invalid_argument{"jitters must be non-negative"};
    if (!(spec_.gaussian_width > 0.0)) throw std::invalid_argument{"gaussian_width must be positive"};
    if (spec_.doe_kernel) spec_.doe_kernel->validate();

    const int n = g.size();
    illumination_ = Vector::Ones(n);
    phase_offset_ = Vector::Constant(n, spec_.phase_offset);
    conversion_ = Vector::Constant(n, spec_.kappa);

    if (!std::isinf(spec_.gaussian_width)) {
        const double rc = 0.5 * (g.rows - 1);
        const double cc = 0.5 * (g.cols - 1);
        const double sr = spec_.gaussian_width * g.rows;
        const double sc = spec_.gaussian_width * g.cols;
        for (int r = 0; r < g.rows; ++r)
            for (int c = 0; c < g.cols; ++c) {
                const double dr = (r - rc) / sr;
                const double dc = (c - cc) / sc;
                illumination_[r * g.cols + c] = std::exp(-0.5 * (dr * dr + dc * dc));
            }
        illumination_ /= illumination_.maxCoeff();
    }

    std::mt19937_64 rng{spec_.seed};
    if (spec_.phase_jitter > 0.0) {
        std::normal_distribution<double> jitter{0.0, spec_.phase_jitter};
        for (int i = 0; i < n; ++i) phase_offset_[i] += jitter(rng);
    }
    if (spec_.kappa_jitter > 0.0) {
        std::normal_distribution<double> jitter{0.0, spec_.kappa_jitter};
        for (int i = 0; i < n; ++i) {
            double factor = 1.0 + jitter(rng);
            while (factor <= 0.0) factor = 1.0 + jitter(rng);
            conversion_[i] = spec_.kappa * factor;
        }
    }

    const double k = spec_.doe_kernel ? spec_.doe_kernel->abs_sum() : 1.0;
    intensity_scale_ = 1.0 / (illumination_.maxCoeff() * k * k);
}

Vector OpticsModel::field(const Vector& x) const
{
    if (x.size() != size())
        throw DimensionError{fmt::format("field: state has {} entries, optics has {}", x.size(), size())};
    Vector e = Vector::Zero(size());
    if (!powered_on_) return e;
    for (int i = 0; i < size(); ++i)
        e[i] = std::sqrt(illumination_[i])
          * std::sin(2.0 * std::numbers::pi * (x[i] + phase_offset_[i]) / conversion_[i]);
    return e;
}

Vector OpticsModel::intensity(const Vector& field) const
{
    if (field.size() != size())
        throw DimensionError{fmt::format("intensity: field has {} entries, optics has {}", field.size(), size())};
    Vector out(size());
    intensity_into(as_span(field), as_span(out));
    return out;
}

double OpticsModel::quantize(double value) { return std::round(value * 255.0) / 255.0; }

void OpticsModel::intensity_into(std::span<const double> field, std::span<double> out) const
{
    if (static_cast<int>(field.size()) != size() || static_cast<int>(out.size()) != size())
        throw DimensionError{"intensity: buffer sizes do not match the optics grid"};
    if (!powered_on_) {
        std::fill(out.begin(), out.end(), 0.0);
        return;
    }
    if (spec_.doe_kernel) {
        convolve_square(field, out);
    }
    else {
        for (std::size_t i = 0; i < field.size(); ++i) out[i] = field[i] * field[i];
    }
    for (double& v : out) {
        v *= intensity_scale_;
        if (spec_.quantize_8bit) v = quantize(v);
    }
}

void OpticsModel::convolve_square(std::span<const double> field, std::span<double> out) const
{
    const auto& k = *spec_.doe_kernel;
    const auto& g = spec_.grid;
    const int hr = k.rows / 2;
    const int hc = k.cols / 2;
    for (int r = 0; r < g.rows; ++r)
        for (int c = 0; c < g.cols; ++c) {
            double acc = 0.0;
            for (int a = 0; a < k.rows; ++a) {
                const int sr = r - (a - hr);
                if (sr < 0 || sr >= g.rows) continue;
                for (int b = 0; b < k.cols; ++b) {
                    const int sc = c - (b - hc);
                    if (sc < 0 || sc >= g.cols) continue;
                    acc += k.at(a, b) * field[static_cast<std::size_t>(sr * g.cols + sc)];
                }
            }
            out[static_cast<std::size_t>(r * g.cols + c)] = acc * acc;
        }
}

OpticsModel set_power(OpticsModel optics, bool on)
{
    optics.set_power(on);
    return optics;
}

OpticsModel synthesize_heterogeneity(
  GridShape grid,
  std::uint64_t seed,
  double gaussian_width,
  double phase_jitter,
  double kappa_jitter,
  double kappa,
  double phase_offset)
{
    OpticsSpec spec;
    spec.grid = grid;
    spec.seed = seed;
    spec.gaussian_width = gaussian_width;
    spec.phase_jitter = phase_jitter;
    spec.kappa_jitter = kappa_jitter;
    spec.kappa = kappa;
    spec.phase_offset = phase_offset;
    return OpticsModel{spec};
}

}  // namespace exsnn
