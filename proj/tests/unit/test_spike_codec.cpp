#include <exsnn/characterize.hpp>
#include <exsnn/errors.hpp>
#include <exsnn/spike_codec.hpp>

#include "helpers.hpp"

#include <doctest.h>

#include <set>
#include <sstream>

using namespace exsnn;

namespace {

SpikeRecord record_from(const std::vector<int>& times, int onset = 0)
{
    auto r = SpikeRecord::silent(static_cast<int>(times.size()), onset);
    for (std::size_t i = 0; i < times.size(); ++i) {
        r.first_spike_time[i] = times[i];
        r.amplitude[i] = times[i] == kNoSpike ? 0.0 : 0.61 + 0.01 * static_cast<double>(i);
    }
    return r;
}

SpikeRecord random_record(std::mt19937_64& rng, int n, int onset)
{
    std::uniform_int_distribution<int> t{onset, onset + 30};
    std::bernoulli_distribution fires{0.6};
    std::uniform_real_distribution<double> amp{0.61, 1.0};
    auto r = SpikeRecord::silent(n, onset);
    for (int i = 0; i < n; ++i)
        if (fires(rng)) {
            r.first_spike_time[static_cast<std::size_t>(i)] = t(rng);
            r.amplitude[static_cast<std::size_t>(i)] = amp(rng);
        }
    return r;
}

std::set<int> active_set(const SparseResponse& r) { return {r.index.begin(), r.index.end()}; }

}  // namespace

TEST_SUITE("spike_codec")
{
    TEST_CASE("quiescent trajectory has no spikes")
    {
        RowMatrix traj = RowMatrix::Constant(50, 8, 0.05);
        const auto r = detect_spikes(traj, 10, 0.6);
        CHECK(r.spike_count() == 0);
        CHECK_FALSE(r.t0().has_value());
        for (int i = 0; i < 8; ++i) {
            CHECK_FALSE(r.latency(i).has_value());
            CHECK(r.amplitude[static_cast<std::size_t>(i)] == 0.0);
        }
    }

    TEST_CASE("onset outside the trajectory is a range error")
    {
        RowMatrix traj = RowMatrix::Zero(10, 2);
        CHECK_THROWS_AS(detect_spikes(traj, 10, 0.6), std::out_of_range);
        CHECK_THROWS_AS(detect_spikes(traj, -1, 0.6), std::out_of_range);
    }

    TEST_CASE("planted crossings are recovered exactly")
    {
        std::mt19937_64 rng{21};
        std::uniform_real_distribution<double> low{0.0, 0.6};
        std::uniform_real_distribution<double> high{0.6000001, 1.0};
        const int T = 120;
        const int n = 40;
        const int onset = 15;
        RowMatrix traj(T, n);
        std::vector<int> planted(n);
        std::uniform_int_distribution<int> when{onset, T - 1};
        for (int i = 0; i < n; ++i) {
            planted[static_cast<std::size_t>(i)] = when(rng);
            for (int t = 0; t < T; ++t) traj(t, i) = low(rng);
            // A crossing before onset must be ignored.
            traj(onset / 2, i) = high(rng);
            traj(planted[static_cast<std::size_t>(i)], i) = high(rng);
        }
        const auto r = detect_spikes(traj, onset, 0.6);
        for (int i = 0; i < n; ++i) {
            CHECK(r.first_spike_time[static_cast<std::size_t>(i)] == planted[static_cast<std::size_t>(i)]);
            CHECK(*r.latency(i) == planted[static_cast<std::size_t>(i)] - onset);
            CHECK(r.amplitude[static_cast<std::size_t>(i)] == traj(planted[static_cast<std::size_t>(i)], i));
            CHECK(r.amplitude[static_cast<std::size_t>(i)] > 0.6);
        }
    }

    TEST_CASE("streaming detector equals batch detection")
    {
        RowMatrix traj = RowMatrix::Random(60, 12).cwiseAbs();
        SpikeDetector det{12, 5, 0.6};
        for (int t = 0; t < 60; ++t) det.observe(t, {traj.row(t).data(), 12});
        CHECK(det.record() == detect_spikes(traj, 5, 0.6));
        CHECK(det.t0() == det.record().t0());
    }

    TEST_CASE("rising edges with hysteresis")
    {
        const std::vector<double> s{0.1, 0.7, 0.8, 0.3, 0.65, 0.6, 0.61, 0.2, 0.9};
        CHECK(spike_times(s, 0.6) == std::vector<int>{1, 4, 6, 8});
        CHECK(spike_times(std::vector<double>{0.9, 0.95, 0.7}, 0.6) == std::vector<int>{0});
        CHECK(spike_times(std::vector<double>{}, 0.6).empty());
    }

    TEST_CASE("hand-built record: latencies 0, 1, 2, 5 with window 2 keep three")
    {
        const auto r = record_from({10, 11, 12, 15}, 10);
        const auto g = gate(r, 2);
        CHECK(g.t0 == 10);
        CHECK(g.active_count() == 3);
        CHECK(g.index == std::vector<std::int32_t>{0, 1, 2});
        CHECK(g.sparsity() == doctest::Approx(0.25));
        CHECK(g.dense()[3] == 0.0);
        CHECK(g.dense()[1] == r.amplitude[1]);
    }

    TEST_CASE("unbounded window keeps every spiking neuron")
    {
        const auto r = record_from({3, kNoSpike, 400, 9, kNoSpike});
        const auto g = gate(r, kUnboundedWindow);
        CHECK(g.active_count() == 3);
        CHECK(g.sparsity() == doctest::Approx(0.4));
    }

    TEST_CASE("silent record gives an empty response")
    {
        const auto g = gate(SpikeRecord::silent(6, 0), 3);
        CHECK(g.t0 == kNoSpike);
        CHECK(g.active_count() == 0);
        CHECK(g.sparsity() == 1.0);
        CHECK(g.dense() == Vector::Zero(6));
        CHECK_THROWS_AS(gate(SpikeRecord::silent(2, 0), -1), std::invalid_argument);
    }

    TEST_CASE("ties at t0 + window are included")
    {
        const auto g = gate(record_from({4, 7, 7, 8}), 3);
        CHECK(g.active_count() == 3);
    }

    TEST_CASE("feature modes")
    {
        const auto r = record_from({2, 3, 5});
        CHECK(gate(r, 10, FeatureMode::binary).value == std::vector<double>{1.0, 1.0, 1.0});
        const auto lat = gate(r, 10, FeatureMode::latency);
        CHECK(lat.value[0] == 1.0);
        CHECK(lat.value[1] == 0.5);
        CHECK(lat.value[2] == doctest::Approx(0.25));
        for (auto m : {FeatureMode::amplitude, FeatureMode::binary, FeatureMode::latency})
            CHECK(feature_mode_from_string(to_string(m)) == m);
    }

    TEST_CASE("gating is monotone, nested and idempotent on random records")
    {
        std::mt19937_64 rng{77};
        std::vector<SpikeRecord> records;
        for (int k = 0; k < 100; ++k) records.push_back(random_record(rng, 50, 5));
        const std::vector<int> windows{0, 1, 2, 3, 5, 8, 13, 23, kUnboundedWindow};
        const auto series = rank_order_feature_series(records, windows);
        REQUIRE(series.size() == 100);
        for (std::size_t r = 0; r < records.size(); ++r) {
            for (std::size_t k = 0; k < windows.size(); ++k) {
                const auto& g = series[r][k];
                CHECK(g == gate(records[r], windows[k]));
                if (k > 0) {
                    const auto small = active_set(series[r][k - 1]);
                    const auto big = active_set(g);
                    CHECK(std::includes(big.begin(), big.end(), small.begin(), small.end()));
                    CHECK(g.active_count() >= series[r][k - 1].active_count());
                    CHECK(g.sparsity() <= series[r][k - 1].sparsity());
                }
                for (auto i : g.index)
                    CHECK(records[r].first_spike_time[static_cast<std::size_t>(i)] - g.t0 <= windows[k]);
                // Restrict the record to the gated set and gate again.
                auto restricted = SpikeRecord::silent(records[r].n(), records[r].stimulus_onset);
                for (auto i : g.index) {
                    restricted.first_spike_time[static_cast<std::size_t>(i)] = records[r].first_spike_time[static_cast<std::size_t>(i)];
                    restricted.amplitude[static_cast<std::size_t>(i)] = records[r].amplitude[static_cast<std::size_t>(i)];
                }
                CHECK(gate(restricted, windows[k]).value == g.value);
            }
        }
    }

    TEST_CASE("single window reduces to gate; unsorted windows are rejected")
    {
        std::vector<SpikeRecord> records{record_from({1, 2, 9})};
        const std::vector<int> one{4};
        CHECK(rank_order_feature_series(records, one)[0][0] == gate(records[0], 4));
        const std::vector<int> bad{3, 1};
        CHECK_THROWS_AS(rank_order_feature_series(records, bad), std::invalid_argument);
    }

    TEST_CASE("latency histogram counts gated latencies")
    {
        std::vector<SpikeRecord> empty;
        CHECK(latency_histogram(empty, 3).empty());
        std::vector<SpikeRecord> records{record_from({10, 11, 11, 16}, 8), record_from({kNoSpike, 5, 6, 6}, 2)};
        const auto h = latency_histogram(records, 1);
        // First record: t0 = 10, keeps latencies 2, 3, 3. Second: t0 = 5, keeps 3, 4, 4.
        CHECK(h.at(2) == 1);
        CHECK(h.at(3) == 3);
        CHECK(h.at(4) == 2);
        std::int64_t total = 0;
        for (auto [k, v] : h) total += v;
        CHECK(total == gate(records[0], 1).active_count() + gate(records[1], 1).active_count());
    }

    TEST_CASE("CSV layout")
    {
        std::ostringstream out;
        write_csv(out, record_from({3, kNoSpike}, 1));
        CHECK(out.str() == "neuron_id,first_spike_time,latency,amplitude\n0,3,2,0.60999999999999999\n1,,,\n");
        std::ostringstream g;
        write_csv(g, gate(record_from({3, 4}), 0));
        CHECK(g.str() == "neuron_id,feature\n0,0.60999999999999999\n");
    }

    TEST_CASE("binary cache round trip and stale refusal")
    {
        testing::TempDir dir{"records"};
        std::mt19937_64 rng{3};
        std::vector<SpikeRecord> records;
        for (int k = 0; k < 7; ++k) records.push_back(random_record(rng, 33, k));
        const auto path = dir.path / "r.bin";
        save_records(path, records, 0xabcdef);
        CHECK(load_records(path, 0xabcdef) == records);
        CHECK_THROWS_AS(load_records(path, 0xabcdee), StaleCacheError);
        std::filesystem::resize_file(path, std::filesystem::file_size(path) - 5);
        CHECK_THROWS_AS(load_records(path, 0xabcdef), FormatError);
    }

    TEST_CASE("latency resolution over the single-neuron curve")
    {
        // Distinct latencies over (threshold, 1.5]; the oracle gives six values.
        const auto optics = OpticsModel::ideal({1, 1});
        const auto sweep = latency_curve(testing::section21(), optics, linspace(0.3, 1.5, 50));
        std::set<int> distinct;
        for (const auto& p : sweep.points)
            if (p.latency) distinct.insert(*p.latency);
        CHECK(distinct.size() == 6);
    }
}
