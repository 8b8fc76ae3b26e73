#include <exsnn/errors.hpp>
#include <exsnn/spike_codec.hpp>

#include <fmt/format.h>

#include <algorithm>
#include <array>
#include <cstring>
#include <fstream>
#include <ostream>
#include <stdexcept>

namespace exsnn {

SpikeRecord SpikeRecord::silent(int n, int onset)
{
    SpikeRecord r;
    r.stimulus_onset = onset;
    r.first_spike_time.assign(static_cast<std::size_t>(n), kNoSpike);
    r.amplitude.assign(static_cast<std::size_t>(n), 0.0);
    return r;
}

std::optional<int> SpikeRecord::latency(int i) const
{
    if (!spiked(i)) return std::nullopt;
    return first_spike_time[static_cast<std::size_t>(i)] - stimulus_onset;
}

std::optional<int> SpikeRecord::t0() const
{
    std::optional<int> best;
    for (auto t : first_spike_time)
        if (t != kNoSpike && (!best || t < *best)) best = t;
    return best;
}

int SpikeRecord::spike_count() const
{
    return static_cast<int>(std::count_if(
      first_spike_time.begin(), first_spike_time.end(), [](auto t) { return t != kNoSpike; }));
}

SpikeDetector::SpikeDetector(int n, int stimulus_onset, double threshold)
  : record_{SpikeRecord::silent(n, stimulus_onset)}
  , threshold_{threshold}
{
}

void SpikeDetector::observe(int t, std::span<const double> s)
{
    if (s.size() != record_.first_spike_time.size())
        throw DimensionError{fmt::format("detector expects {} neurons, got {}", record_.n(), s.size())};
    if (t < record_.stimulus_onset) return;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (record_.first_spike_time[i] == kNoSpike && s[i] > threshold_) {
            record_.first_spike_time[i] = t;
            record_.amplitude[i] = s[i];
            if (!t0_) t0_ = t;
        }
    }
}

SpikeRecord detect_spikes(const RowMatrix& trajectory, int stimulus_onset, double spike_threshold)
{
    if (stimulus_onset < 0 || stimulus_onset >= trajectory.rows())
        throw std::out_of_range{fmt::format(
          "stimulus onset {} outside trajectory of {} steps", stimulus_onset, trajectory.rows())};
    SpikeDetector detector{static_cast<int>(trajectory.cols()), stimulus_onset, spike_threshold};
    const auto n = static_cast<std::size_t>(trajectory.cols());
    for (Eigen::Index t = stimulus_onset; t < trajectory.rows(); ++t)
        detector.observe(static_cast<int>(t), {trajectory.row(t).data(), n});
    return detector.record();
}

std::vector<int> spike_times(std::span<const double> series, double threshold)
{
    std::vector<int> out;
    bool armed = true;
    for (std::size_t t = 0; t < series.size(); ++t) {
        if (armed && series[t] > threshold) {
            out.push_back(static_cast<int>(t));
            armed = false;
        } else if (!armed && series[t] <= threshold) {
            armed = true;
        }
    }
    return out;
}

std::string to_string(FeatureMode mode)
{
    switch (mode) {
    case FeatureMode::amplitude: return "amplitude";
    case FeatureMode::binary: return "binary";
    case FeatureMode::latency: return "latency";
    }
    return "?";
}

FeatureMode feature_mode_from_string(const std::string& name)
{
    if (name == "amplitude") return FeatureMode::amplitude;
    if (name == "binary") return FeatureMode::binary;
    if (name == "latency") return FeatureMode::latency;
    throw std::invalid_argument{fmt::format("unknown feature mode '{}'", name)};
}

Vector SparseResponse::dense() const
{
    Vector v = Vector::Zero(n);
    for (std::size_t k = 0; k < index.size(); ++k) v[index[k]] = value[k];
    return v;
}

SparseResponse gate(const SpikeRecord& record, int delta_l, FeatureMode mode)
{
    if (delta_l < 0) throw std::invalid_argument{fmt::format("delta_l must be >= 0, got {}", delta_l)};
    SparseResponse out;
    out.n = record.n();
    out.delta_l = delta_l;
    out.stimulus_onset = record.stimulus_onset;
    const auto t0 = record.t0();
    if (!t0) return out;
    out.t0 = *t0;
    // Compare offsets rather than t0 + delta_l so the unbounded window cannot overflow.
    for (int i = 0; i < record.n(); ++i) {
        const auto t = record.first_spike_time[static_cast<std::size_t>(i)];
        if (t == kNoSpike || t - *t0 > delta_l) continue;
        double v = record.amplitude[static_cast<std::size_t>(i)];
        if (mode == FeatureMode::binary) v = 1.0;
        if (mode == FeatureMode::latency) v = 1.0 / (1.0 + (t - *t0));
        out.index.push_back(i);
        out.value.push_back(v);
    }
    return out;
}

std::map<int, std::int64_t> latency_histogram(std::span<const SpikeRecord> records, int delta_l)
{
    std::map<int, std::int64_t> hist;
    for (const auto& r : records) {
        const auto g = gate(r, delta_l);
        for (auto i : g.index) ++hist[*r.latency(i)];
    }
    return hist;
}

std::vector<std::vector<SparseResponse>> rank_order_feature_series(
  std::span<const SpikeRecord> records,
  std::span<const int> delta_l_values,
  FeatureMode mode)
{
    if (!std::is_sorted(delta_l_values.begin(), delta_l_values.end()))
        throw std::invalid_argument{"delta_l values must be sorted ascending"};
    std::vector<std::vector<SparseResponse>> out;
    out.reserve(records.size());
    for (const auto& r : records) {
        auto& row = out.emplace_back();
        row.reserve(delta_l_values.size());
        for (int d : delta_l_values) row.push_back(gate(r, d, mode));
    }
    return out;
}

void write_csv(std::ostream& out, const SpikeRecord& record)
{
    out << "neuron_id,first_spike_time,latency,amplitude\n";
    for (int i = 0; i < record.n(); ++i) {
        if (record.spiked(i))
            out << fmt::format(
              "{},{},{},{:.17g}\n",
              i,
              record.first_spike_time[static_cast<std::size_t>(i)],
              *record.latency(i),
              record.amplitude[static_cast<std::size_t>(i)]);
        else
            out << i << ",,,\n";
    }
}

void write_csv(std::ostream& out, const SparseResponse& response)
{
    out << "neuron_id,feature\n";
    for (std::size_t k = 0; k < response.index.size(); ++k)
        out << fmt::format("{},{:.17g}\n", response.index[k], response.value[k]);
}

namespace {

constexpr std::array<char, 8> kRecordMagic{'E', 'X', 'S', 'N', 'S', 'P', 'K', '1'};

template <typename T>
void put(std::ostream& out, const T& v)
{
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& in, const std::filesystem::path& path)
{
    T v{};
    if (!in.read(reinterpret_cast<char*>(&v), sizeof(T)))
        throw FormatError{fmt::format("{}: truncated record cache", path.string())};
    return v;
}

}  // namespace

void save_records(const std::filesystem::path& path, std::span<const SpikeRecord> records, std::uint64_t config_hash)
{
    std::ofstream out{path, std::ios::binary | std::ios::trunc};
    if (!out) throw std::runtime_error{fmt::format("cannot write {}", path.string())};
    out.write(kRecordMagic.data(), kRecordMagic.size());
    put(out, config_hash);
    put(out, static_cast<std::uint64_t>(records.size()));
    for (const auto& r : records) {
        put(out, static_cast<std::int32_t>(r.stimulus_onset));
        put(out, static_cast<std::int32_t>(r.n()));
        out.write(reinterpret_cast<const char*>(r.first_spike_time.data()),
                  static_cast<std::streamsize>(r.first_spike_time.size() * sizeof(std::int32_t)));
        out.write(reinterpret_cast<const char*>(r.amplitude.data()),
                  static_cast<std::streamsize>(r.amplitude.size() * sizeof(double)));
    }
    if (!out) throw std::runtime_error{fmt::format("write failed for {}", path.string())};
}

std::vector<SpikeRecord> load_records(const std::filesystem::path& path, std::uint64_t expected_hash)
{
    std::ifstream in{path, std::ios::binary};
    if (!in) throw std::runtime_error{fmt::format("cannot open {}", path.string())};
    std::array<char, 8> magic{};
    if (!in.read(magic.data(), magic.size()) || magic != kRecordMagic)
        throw FormatError{fmt::format("{}: not a spike record cache", path.string())};
    const auto hash = get<std::uint64_t>(in, path);
    if (hash != expected_hash)
        throw StaleCacheError{fmt::format(
          "{}: cache built for config {:016x}, current config is {:016x}", path.string(), hash, expected_hash)};
    const auto count = get<std::uint64_t>(in, path);
    std::vector<SpikeRecord> records;
    records.reserve(static_cast<std::size_t>(std::min<std::uint64_t>(count, 1u << 20)));
    for (std::uint64_t k = 0; k < count; ++k) {
        const auto onset = get<std::int32_t>(in, path);
        const auto n = get<std::int32_t>(in, path);
        if (n < 0) throw FormatError{fmt::format("{}: negative neuron count", path.string())};
        auto r = SpikeRecord::silent(n, onset);
        if (!in.read(reinterpret_cast<char*>(r.first_spike_time.data()),
                     static_cast<std::streamsize>(r.first_spike_time.size() * sizeof(std::int32_t)))
            || !in.read(reinterpret_cast<char*>(r.amplitude.data()),
                        static_cast<std::streamsize>(r.amplitude.size() * sizeof(double))))
            throw FormatError{fmt::format("{}: truncated record cache", path.string())};
        records.push_back(std::move(r));
    }
    return records;
}

}  // namespace exsnn
