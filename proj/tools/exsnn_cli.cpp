// exsnn: characterize the excitable network, generate MNIST spike responses,
// train readouts and write reports.

#include <exsnn/errors.hpp>
#include <exsnn/experiment.hpp>
#include <exsnn/hashing.hpp>

#include <CLI11.hpp>
#include <fmt/format.h>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <optional>
#include <string>

namespace {

struct CommonOptions {
    std::string config;
    std::string profile;
    std::optional<std::uint64_t> seed;
    std::string out;
    std::string run_dir;
    int workers = -1;
    bool quiet = false;
};

void add_common(CLI::App* cmd, CommonOptions& o)
{
    cmd->add_option("-c,--config", o.config, "JSON config file (merged over the profile)")->check(CLI::ExistingFile);
    cmd->add_option("-p,--profile", o.profile, "scale profile")->check(CLI::IsMember({"desk", "paper"}));
    cmd->add_option("-s,--seed", o.seed, "master seed");
    cmd->add_option("-o,--out", o.out, "output root for run directories");
    cmd->add_option("--run-dir", o.run_dir, "write into this directory instead of a timestamped one");
    cmd->add_option("-j,--workers", o.workers, "worker threads (0 = all cores)");
    cmd->add_flag("-q,--quiet", o.quiet, "no progress output");
}

exsnn::ExperimentConfig resolve(const CommonOptions& o)
{
    auto cfg = exsnn::load_config(
      o.config.empty() ? std::nullopt : std::optional<std::filesystem::path>{o.config},
      o.profile.empty() ? std::nullopt : std::optional<std::string>{o.profile},
      o.seed);
    if (!o.out.empty()) cfg.output_dir = o.out;
    if (o.workers >= 0) {
        cfg.workers = static_cast<unsigned>(o.workers);
        cfg.resolve();
    }
    return cfg;
}

std::filesystem::path run_dir(const CommonOptions& o, const exsnn::ExperimentConfig& cfg, const std::string& command)
{
    if (o.run_dir.empty()) return exsnn::make_run_dir(cfg, command);
    exsnn::prepare_run_dir(o.run_dir, cfg);
    return o.run_dir;
}

exsnn::Progress progress(const CommonOptions& o)
{
    if (o.quiet) return {};
    return [](const std::string& msg) { fmt::print(stderr, "  {}\n", msg); };
}

template <typename Fn>
int timed(const std::filesystem::path& dir, const std::string& stage, Fn&& fn)
{
    const auto start = std::chrono::steady_clock::now();
    fn();
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    // Wall time lives in its own file so the reports stay byte-reproducible.
    exsnn::write_json(dir / fmt::format("timing_{}.json", stage), {{"stage", stage}, {"seconds", seconds}});
    fmt::print(stderr, "{} finished in {:.1f} s\n", stage, seconds);
    return 0;
}

}  // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Excitable slow-fast Ikeda-map spiking network simulator"};
    app.require_subcommand(1);

    CommonOptions o;
    bool resume = false;

    auto* characterize = app.add_subcommand("characterize", "excitability, spike-rate, refractory and latency sweeps");
    add_common(characterize, o);
    auto* respond = app.add_subcommand("respond", "simulate MNIST presentations and cache spike records");
    add_common(respond, o);
    auto* train = app.add_subcommand("train", "gate cached responses per delta_l and train readouts");
    add_common(train, o);
    train->add_flag("--resume", resume, "continue SPSA from checkpoints in --run-dir");
    auto* report = app.add_subcommand("report", "run every stage into one run directory");
    add_common(report, o);
    auto* show = app.add_subcommand("config", "print the resolved config");
    add_common(show, o);

    CLI11_PARSE(app, argc, argv);

    try {
        const auto cfg = resolve(o);
        if (show->parsed()) {
            fmt::print("{}\n", to_json(cfg).dump(2));
            return 0;
        }
        if (resume && o.run_dir.empty()) throw std::invalid_argument{"--resume needs --run-dir"};
        const std::string command = app.get_subcommands().front()->get_name();
        const auto dir = run_dir(o, cfg, command);
        const auto log = progress(o);
        fmt::print(stderr, "run directory: {}\n", dir.string());

        if (characterize->parsed() || report->parsed())
            timed(dir, "characterize", [&] {
                const auto s = exsnn::run_characterize(cfg, dir, log);
                fmt::print("threshold gamma* = {:.4f}\n", s["excitability"]["threshold"].get<double>());
            });
        if (respond->parsed() || report->parsed())
            timed(dir, "respond", [&] {
                const auto s = exsnn::run_respond(cfg, dir, log);
                fmt::print("mean spiking fraction = {:.4f}\n", s["mean_spiking_fraction"].get<double>());
            });
        if (train->parsed() || report->parsed())
            timed(dir, "train", [&] {
                const auto s = exsnn::run_train(cfg, dir, resume, log);
                for (const auto& r : s["results"]) {
                    std::string line = fmt::format(
                      "delta_l={:>4} active={:.4f}", r["delta_l"].get<std::string>(), r["active_fraction"].get<double>());
                    if (r.contains("spsa")) line += fmt::format(" spsa_test={:.4f}", r["spsa"]["test_accuracy"].get<double>());
                    if (r.contains("ridge")) line += fmt::format(" ridge_test={:.4f}", r["ridge"]["test_accuracy"].get<double>());
                    fmt::print("{}\n", line);
                }
            });
        return 0;
    } catch (const exsnn::StaleCacheError& e) {
        fmt::print(stderr, "stale cache: {}\n", e.what());
        return 3;
    } catch (const std::exception& e) {
        fmt::print(stderr, "error: {}\n", e.what());
        return 1;
    }
}
