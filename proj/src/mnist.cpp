#include <exsnn/errors.hpp>
#include <exsnn/mnist.hpp>

#include <fmt/format.h>

#include <array>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numeric>

namespace exsnn {

namespace {

std::vector<std::uint8_t> slurp(const std::filesystem::path& path)
{
    std::ifstream in{path, std::ios::binary};
    if (!in) throw std::runtime_error{fmt::format("cannot open {}", path.string())};
    return {std::istreambuf_iterator<char>{in}, std::istreambuf_iterator<char>{}};
}

std::uint32_t be32(const std::vector<std::uint8_t>& b, std::size_t at)
{
    return (std::uint32_t{b[at]} << 24) | (std::uint32_t{b[at + 1]} << 16) | (std::uint32_t{b[at + 2]} << 8)
      | std::uint32_t{b[at + 3]};
}

void put_be32(std::ofstream& out, std::uint32_t v)
{
    const std::array<char, 4> b{
      static_cast<char>(v >> 24), static_cast<char>(v >> 16), static_cast<char>(v >> 8), static_cast<char>(v)};
    out.write(b.data(), 4);
}

// Returns the dimension list after checking magic and payload size.
std::vector<std::uint32_t> parse_header(
  const std::vector<std::uint8_t>& bytes,
  std::uint32_t magic,
  const std::filesystem::path& path)
{
    const std::size_t ndim = magic & 0xFF;
    if (bytes.size() < 4 + 4 * ndim) throw FormatError{fmt::format("{}: file too short for an IDX header", path.string())};
    if (be32(bytes, 0) != magic)
        throw FormatError{fmt::format("{}: bad magic 0x{:08x}, expected 0x{:08x}", path.string(), be32(bytes, 0), magic)};
    std::vector<std::uint32_t> dims(ndim);
    std::uint64_t payload = 1;
    for (std::size_t d = 0; d < ndim; ++d) {
        dims[d] = be32(bytes, 4 + 4 * d);
        payload *= dims[d];
    }
    const std::uint64_t have = bytes.size() - 4 - 4 * ndim;
    if (have < payload)
        throw FormatError{fmt::format("{}: truncated, header promises {} bytes, found {}", path.string(), payload, have)};
    if (have > payload)
        throw FormatError{fmt::format("{}: {} trailing bytes after payload", path.string(), have - payload)};
    return dims;
}

}  // namespace

IdxImages read_idx_images(const std::filesystem::path& path)
{
    const auto bytes = slurp(path);
    const auto dims = parse_header(bytes, 0x00000803, path);
    IdxImages out;
    out.rows = static_cast<int>(dims[1]);
    out.cols = static_cast<int>(dims[2]);
    out.pixels.assign(bytes.begin() + 16, bytes.end());
    return out;
}

std::vector<std::uint8_t> read_idx_labels(const std::filesystem::path& path)
{
    const auto bytes = slurp(path);
    parse_header(bytes, 0x00000801, path);
    std::vector<std::uint8_t> labels(bytes.begin() + 8, bytes.end());
    for (auto l : labels)
        if (l > 9) throw FormatError{fmt::format("{}: label {} outside 0-9", path.string(), int{l})};
    return labels;
}

void write_idx_images(const std::filesystem::path& path, const IdxImages& images)
{
    std::ofstream out{path, std::ios::binary | std::ios::trunc};
    if (!out) throw std::runtime_error{fmt::format("cannot write {}", path.string())};
    put_be32(out, 0x00000803);
    put_be32(out, static_cast<std::uint32_t>(images.count()));
    put_be32(out, static_cast<std::uint32_t>(images.rows));
    put_be32(out, static_cast<std::uint32_t>(images.cols));
    out.write(reinterpret_cast<const char*>(images.pixels.data()), static_cast<std::streamsize>(images.pixels.size()));
}

void write_idx_labels(const std::filesystem::path& path, std::span<const std::uint8_t> labels)
{
    std::ofstream out{path, std::ios::binary | std::ios::trunc};
    if (!out) throw std::runtime_error{fmt::format("cannot write {}", path.string())};
    put_be32(out, 0x00000801);
    put_be32(out, static_cast<std::uint32_t>(labels.size()));
    out.write(reinterpret_cast<const char*>(labels.data()), static_cast<std::streamsize>(labels.size()));
}

Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels)
{
    const auto raw = read_idx_images(images);
    auto lab = read_idx_labels(labels);
    if (raw.count() != static_cast<int>(lab.size()))
        throw FormatError{fmt::format("{} holds {} images but {} holds {} labels",
                                      images.string(), raw.count(), labels.string(), lab.size())};
    Dataset d;
    d.rows = raw.rows;
    d.cols = raw.cols;
    d.labels = std::move(lab);
    d.images.resize(raw.count(), d.pixels());
    for (std::size_t k = 0; k < raw.pixels.size(); ++k) d.images.data()[k] = raw.pixels[k] / 255.0;
    return d;
}

Dataset Dataset::subset(std::span<const int> indices) const
{
    Dataset d;
    d.rows = rows;
    d.cols = cols;
    d.images.resize(static_cast<Eigen::Index>(indices.size()), pixels());
    d.labels.reserve(indices.size());
    for (std::size_t k = 0; k < indices.size(); ++k) {
        const int i = indices[k];
        if (i < 0 || i >= size()) throw std::out_of_range{fmt::format("image index {} outside dataset of {}", i, size())};
        d.images.row(static_cast<Eigen::Index>(k)) = images.row(i);
        d.labels.push_back(labels[static_cast<std::size_t>(i)]);
    }
    return d;
}

double largest_singular_value(const Matrix& w, double tolerance, int max_iterations, int* iterations)
{
    // Start from all-ones so the estimate does not depend on another RNG stream.
    Vector v = Vector::Ones(w.cols()).normalized();
    double sigma2 = 0.0;
    double residual = std::numeric_limits<double>::infinity();
    for (int it = 1; it <= max_iterations; ++it) {
        const Vector wv = w * v;
        const Vector next = w.transpose() * wv;
        const double estimate = v.dot(next);
        const double norm = next.norm();
        if (norm == 0.0) {
            if (iterations) *iterations = it;
            return 0.0;
        }
        const double change = std::abs(estimate - sigma2) / estimate;
        residual = change;
        v = next / norm;
        sigma2 = estimate;
        if (change < tolerance) {
            if (iterations) *iterations = it;
            return std::sqrt(sigma2);
        }
    }
    throw ConvergenceError{
      fmt::format("power iteration did not converge in {} iterations (residual {:.3e})", max_iterations, residual),
      residual};
}

InputProjection build_projection(int n_neurons, int n_pixels, std::uint64_t seed, double tolerance, int max_iterations)
{
    if (n_neurons < 1 || n_pixels < 1)
        throw std::invalid_argument{fmt::format("projection needs positive sizes, got {}x{}", n_neurons, n_pixels)};
    InputProjection p;
    p.seed = seed;
    p.weights.resize(n_neurons, n_pixels);
    std::mt19937_64 rng{seed};
    for (int i = 0; i < n_neurons; ++i)
        for (int j = 0; j < n_pixels; ++j) p.weights(i, j) = 2.0 * unit_uniform(rng) - 1.0;
    p.normalization_scale = largest_singular_value(p.weights, tolerance, max_iterations, &p.iterations);
    if (p.normalization_scale == 0.0) throw SingularSystemError{"projection matrix is identically zero"};
    p.weights /= p.normalization_scale;
    return p;
}

DriveStream::DriveStream(const InputProjection& projection, const RowMatrix& images, StimulusSchedule schedule, double gamma)
  : projection_{&projection}
  , images_{&images}
  , schedule_{schedule}
  , gamma_{gamma}
  , on_drive_{Vector::Zero(projection.weights.rows())}
  , zero_{Vector::Zero(projection.weights.rows())}
{
    if (images.cols() != projection.weights.cols())
        throw DimensionError{fmt::format(
          "images have {} pixels, projection expects {}", images.cols(), projection.weights.cols())};
    if (schedule.on_steps < 0 || schedule.off_steps < 0 || schedule.period() < 1)
        throw std::invalid_argument{"schedule needs non-negative on/off steps and a positive period"};
}

std::span<const double> DriveStream::row(int t)
{
    if (t < 0 || t >= rows()) throw std::out_of_range{fmt::format("drive row {} outside [0, {})", t, rows())};
    const int image = t / schedule_.period();
    if (t % schedule_.period() >= schedule_.on_steps) return as_span(zero_);
    if (image != cached_image_) {
        on_drive_.noalias() = projection_->weights * images_->row(image).transpose();
        on_drive_ *= gamma_;
        cached_image_ = image;
    }
    return as_span(on_drive_);
}

RowMatrix drive_series(const InputProjection& projection, const RowMatrix& images, StimulusSchedule schedule, double gamma)
{
    if (images.rows() < 1) throw std::invalid_argument{"drive series needs at least one image"};
    DriveStream stream{projection, images, schedule, gamma};
    RowMatrix out(stream.rows(), stream.cols());
    for (int t = 0; t < stream.rows(); ++t) {
        const auto r = stream.row(t);
        std::copy(r.begin(), r.end(), out.row(t).data());
    }
    return out;
}

DataSplit split_indices(int total, int n_train, int n_test, std::uint64_t seed)
{
    if (n_train < 0 || n_test < 0 || n_train + n_test > total)
        throw std::invalid_argument{fmt::format("cannot draw {} + {} examples from {}", n_train, n_test, total)};
    std::vector<int> order(static_cast<std::size_t>(total));
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng{seed};
    // Fisher-Yates with our own bounded draw; std::shuffle is not portable.
    for (int i = total - 1; i > 0; --i) {
        const auto j = static_cast<int>(unit_uniform(rng) * (i + 1));
        std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(j)]);
    }
    DataSplit s;
    s.train.assign(order.begin(), order.begin() + n_train);
    s.test.assign(order.begin() + n_train, order.begin() + n_train + n_test);
    return s;
}

}  // namespace exsnn
