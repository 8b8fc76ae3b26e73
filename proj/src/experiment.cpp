#include <exsnn/errors.hpp>
#include <exsnn/experiment.hpp>
#include <exsnn/hashing.hpp>
#include <exsnn/parallel.hpp>

#include <fmt/chrono.h>
#include <fmt/format.h>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <fstream>
#include <set>
#include <thread>

namespace exsnn {

using nlohmann::json;

namespace {

json grid_json(const GridSpec& g) { return {{"lo", g.lo}, {"hi", g.hi}, {"count", g.count}}; }

GridSpec grid_from(const json& j, GridSpec d)
{
    if (j.is_null()) return d;
    return {j.value("lo", d.lo), j.value("hi", d.hi), j.value("count", d.count)};
}

json optional_seed(const std::optional<std::uint64_t>& s) { return s ? json(*s) : json(nullptr); }

std::optional<std::uint64_t> seed_from(const json& j, const char* key)
{
    if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
    return j.at(key).get<std::uint64_t>();
}

json delta_l_json(const std::vector<int>& values)
{
    json a = json::array();
    for (int d : values) a.push_back(d == kUnboundedWindow ? json("inf") : json(d));
    return a;
}

std::vector<int> delta_l_from(const json& j)
{
    std::vector<int> out;
    for (const auto& v : j) {
        if (v.is_string()) {
            if (v.get<std::string>() != "inf") throw std::invalid_argument{"delta_l entries are integers or \"inf\""};
            out.push_back(kUnboundedWindow);
        } else {
            const int d = v.get<int>();
            if (d < 0) throw std::invalid_argument{fmt::format("delta_l must be >= 0, got {}", d)};
            out.push_back(d);
        }
    }
    return out;
}

std::string tag(int delta_l) { return "dl" + delta_l_name(delta_l); }

OpticsModel build_optics(const ExperimentConfig& c) { return OpticsModel{c.optics}; }

json histogram_json(const std::map<int, std::int64_t>& h)
{
    json o = json::object();
    for (auto [k, v] : h) o[std::to_string(k)] = v;
    return o;
}

double mean_active_fraction(const std::vector<SparseResponse>& rs)
{
    if (rs.empty()) return 0.0;
    double s = 0.0;
    for (const auto& r : rs) s += r.n ? static_cast<double>(r.active_count()) / r.n : 0.0;
    return s / static_cast<double>(rs.size());
}

std::vector<SparseResponse> gate_all(const std::vector<SpikeRecord>& records, int delta_l, FeatureMode mode)
{
    std::vector<SparseResponse> out;
    out.reserve(records.size());
    for (const auto& r : records) out.push_back(gate(r, delta_l, mode));
    return out;
}

void write_text(const std::filesystem::path& path, const std::function<void(std::ostream&)>& body)
{
    std::ofstream out{path, std::ios::trunc};
    if (!out) throw std::runtime_error{fmt::format("cannot write {}", path.string())};
    body(out);
    if (!out) throw std::runtime_error{fmt::format("write failed for {}", path.string())};
}

void emit(const Progress& progress, const std::string& msg)
{
    if (progress) progress(msg);
}

}  // namespace

std::string delta_l_name(int delta_l) { return delta_l == kUnboundedWindow ? "inf" : std::to_string(delta_l); }

std::uint64_t derive_seed(std::uint64_t master, const std::string& purpose)
{
    return fnv1a(fmt::format("{}:{}", purpose, master));
}

void ExperimentConfig::resolve()
{
    if (!seeds.optics) seeds.optics = derive_seed(seed, "optics");
    if (!seeds.projection) seeds.projection = derive_seed(seed, "projection");
    if (!seeds.split) seeds.split = derive_seed(seed, "split");
    if (!seeds.training) seeds.training = derive_seed(seed, "training");
    optics.seed = *seeds.optics;
    network.validate();
    training.spsa_config.validate();
    std::sort(delta_l.begin(), delta_l.end());
    delta_l.erase(std::unique(delta_l.begin(), delta_l.end()), delta_l.end());
    if (optics.grid.rows < 1 || optics.grid.cols < 1) throw std::invalid_argument{"optics grid must be at least 1x1"};
    if (data.n_train < 1 || data.n_test < 0) throw std::invalid_argument{"need n_train >= 1 and n_test >= 0"};
    if (workers == 0) workers = std::max(1u, std::thread::hardware_concurrency());
}

std::uint64_t ExperimentConfig::optics_seed() const { return seeds.optics.value_or(derive_seed(seed, "optics")); }
std::uint64_t ExperimentConfig::projection_seed() const { return seeds.projection.value_or(derive_seed(seed, "projection")); }
std::uint64_t ExperimentConfig::split_seed() const { return seeds.split.value_or(derive_seed(seed, "split")); }
std::uint64_t ExperimentConfig::training_seed() const { return seeds.training.value_or(derive_seed(seed, "training")); }

std::filesystem::path ExperimentConfig::cache_path() const
{
    if (cache_file) return *cache_file;
    const std::filesystem::path dir = cache_dir ? std::filesystem::path{*cache_dir} : std::filesystem::path{output_dir} / "cache";
    return dir / fmt::format("responses-{}.bin", hex64(response_hash(*this)));
}

json to_json(const ExperimentConfig& c)
{
    const auto& ch = c.characterize;
    json characterize{
      {"grid", ch.grid ? json{{"rows", ch.grid->rows}, {"cols", ch.grid->cols}} : json(nullptr)},
      {"probe_neuron", ch.probe_neuron},
      {"excitability_grid", grid_json(ch.excitability_grid)},
      {"pulse", {{"start", ch.pulse.start}, {"end", ch.pulse.end}, {"value", ch.pulse.value}}},
      {"rate_grid", grid_json(ch.rate_grid)},
      {"constant_from", ch.constant_from},
      {"rate_horizon", ch.rate_horizon},
      {"rate_transient", ch.rate_transient},
      {"refractory_gamma", ch.refractory_gamma},
      {"tau_min", ch.tau_min},
      {"tau_max", ch.tau_max},
      {"refractory_gains", ch.refractory_gains},
      {"refractory_window", ch.refractory_window},
      {"latency_grid", grid_json(ch.latency_grid)}};
    const auto& d = c.data;
    json data{
      {"train_images", d.train_images},
      {"train_labels", d.train_labels},
      {"test_images", d.test_images ? json(*d.test_images) : json(nullptr)},
      {"test_labels", d.test_labels ? json(*d.test_labels) : json(nullptr)},
      {"n_train", d.n_train},
      {"n_test", d.n_test}};
    const auto& r = c.response;
    json response{
      {"gamma", r.gamma},
      {"on_steps", r.schedule.on_steps},
      {"off_steps", r.schedule.off_steps},
      {"continuous", r.continuous},
      {"hard_cutoff", r.hard_cutoff ? json(*r.hard_cutoff) : json(nullptr)},
      {"feature_mode", to_string(r.feature_mode)},
      {"input_weight_range", {-1.0, 1.0}},
      {"projection_normalization", "largest singular value"}};
    const auto& t = c.training;
    json training{
      {"spsa", t.spsa},
      {"ridge", t.ridge},
      {"epsilon", t.spsa_config.epsilon},
      {"learning_rate", t.spsa_config.learning_rate},
      {"epochs", t.spsa_config.epochs},
      {"batch", t.spsa_config.batch},
      {"eval_interval", t.spsa_config.eval_interval},
      {"ridge_lambdas", t.ridge_lambdas},
      {"nmse", to_string(t.nmse)},
      {"targets", "one-hot"}};
    json optics = c.optics;
    return {
      {"profile", c.profile},
      {"seed", c.seed},
      {"seeds",
       {{"optics", optional_seed(c.seeds.optics)},
        {"projection", optional_seed(c.seeds.projection)},
        {"split", optional_seed(c.seeds.split)},
        {"training", optional_seed(c.seeds.training)}}},
      {"network", c.network},
      {"optics", optics},
      {"characterize", characterize},
      {"data", data},
      {"response", response},
      {"delta_l", delta_l_json(c.delta_l)},
      {"training", training},
      {"output_dir", c.output_dir},
      {"cache_dir", c.cache_dir ? json(*c.cache_dir) : json(nullptr)},
      {"cache_file", c.cache_file ? json(*c.cache_file) : json(nullptr)},
      {"workers", c.workers},
      {"conventions",
       {{"rest_tolerance", kRestTolerance},
        {"rest_cap", kRestCap},
        {"power_iteration_tolerance", kPowerTolerance},
        {"power_iteration_cap", kPowerMaxIterations},
        {"time_index", "row t holds s after applying input row t"},
        {"pulse_bounds", "inclusive"}}}};
}

ExperimentConfig config_from_json(const json& j)
{
    ExperimentConfig c;
    c.profile = j.value("profile", c.profile);
    c.seed = j.value("seed", c.seed);
    if (j.contains("seeds")) {
        const auto& s = j.at("seeds");
        c.seeds.optics = seed_from(s, "optics");
        c.seeds.projection = seed_from(s, "projection");
        c.seeds.split = seed_from(s, "split");
        c.seeds.training = seed_from(s, "training");
    }
    if (j.contains("network")) c.network = j.at("network").get<NetworkParams>();
    if (j.contains("optics")) c.optics = j.at("optics").get<OpticsSpec>();
    if (j.contains("characterize")) {
        const auto& ch = j.at("characterize");
        auto& o = c.characterize;
        if (ch.contains("grid") && !ch.at("grid").is_null())
            o.grid = GridShape{ch.at("grid").at("rows").get<int>(), ch.at("grid").at("cols").get<int>()};
        o.probe_neuron = ch.value("probe_neuron", o.probe_neuron);
        o.excitability_grid = grid_from(ch.value("excitability_grid", json()), o.excitability_grid);
        if (ch.contains("pulse")) {
            const auto& p = ch.at("pulse");
            o.pulse = {p.value("start", o.pulse.start), p.value("end", o.pulse.end), p.value("value", o.pulse.value)};
        }
        o.rate_grid = grid_from(ch.value("rate_grid", json()), o.rate_grid);
        o.constant_from = ch.value("constant_from", o.constant_from);
        o.rate_horizon = ch.value("rate_horizon", o.rate_horizon);
        o.rate_transient = ch.value("rate_transient", o.rate_transient);
        o.refractory_gamma = ch.value("refractory_gamma", o.refractory_gamma);
        o.tau_min = ch.value("tau_min", o.tau_min);
        o.tau_max = ch.value("tau_max", o.tau_max);
        o.refractory_gains = ch.value("refractory_gains", o.refractory_gains);
        o.refractory_window = ch.value("refractory_window", o.refractory_window);
        o.latency_grid = grid_from(ch.value("latency_grid", json()), o.latency_grid);
    }
    if (j.contains("data")) {
        const auto& d = j.at("data");
        auto& o = c.data;
        o.train_images = d.value("train_images", o.train_images);
        o.train_labels = d.value("train_labels", o.train_labels);
        if (d.contains("test_images") && !d.at("test_images").is_null()) o.test_images = d.at("test_images").get<std::string>();
        if (d.contains("test_labels") && !d.at("test_labels").is_null()) o.test_labels = d.at("test_labels").get<std::string>();
        if (o.test_images.has_value() != o.test_labels.has_value())
            throw std::invalid_argument{"test_images and test_labels must be given together"};
        o.n_train = d.value("n_train", o.n_train);
        o.n_test = d.value("n_test", o.n_test);
    }
    if (j.contains("response")) {
        const auto& r = j.at("response");
        auto& o = c.response;
        o.gamma = r.value("gamma", o.gamma);
        o.schedule.on_steps = r.value("on_steps", o.schedule.on_steps);
        o.schedule.off_steps = r.value("off_steps", o.schedule.off_steps);
        o.continuous = r.value("continuous", o.continuous);
        if (r.contains("hard_cutoff") && !r.at("hard_cutoff").is_null()) o.hard_cutoff = r.at("hard_cutoff").get<int>();
        o.feature_mode = feature_mode_from_string(r.value("feature_mode", to_string(o.feature_mode)));
    }
    if (j.contains("delta_l")) c.delta_l = delta_l_from(j.at("delta_l"));
    if (j.contains("training")) {
        const auto& t = j.at("training");
        auto& o = c.training;
        o.spsa = t.value("spsa", o.spsa);
        o.ridge = t.value("ridge", o.ridge);
        o.spsa_config.epsilon = t.value("epsilon", o.spsa_config.epsilon);
        o.spsa_config.learning_rate = t.value("learning_rate", o.spsa_config.learning_rate);
        o.spsa_config.epochs = t.value("epochs", o.spsa_config.epochs);
        o.spsa_config.batch = t.value("batch", o.spsa_config.batch);
        o.spsa_config.eval_interval = t.value("eval_interval", o.spsa_config.eval_interval);
        o.ridge_lambdas = t.value("ridge_lambdas", o.ridge_lambdas);
        o.nmse = nmse_mode_from_string(t.value("nmse", to_string(o.nmse)));
    }
    c.output_dir = j.value("output_dir", c.output_dir);
    if (j.contains("cache_dir") && !j.at("cache_dir").is_null()) c.cache_dir = j.at("cache_dir").get<std::string>();
    if (j.contains("cache_file") && !j.at("cache_file").is_null()) c.cache_file = j.at("cache_file").get<std::string>();
    c.workers = j.value("workers", c.workers);
    return c;
}

ExperimentConfig profile_defaults(const std::string& profile)
{
    ExperimentConfig c;
    c.profile = profile;
    if (profile == "desk") {
        c.optics.grid = {64, 64};
        c.data.n_train = 1000;
        c.data.n_test = 200;
        c.response.gamma = 6.0;
        c.training.spsa_config.learning_rate = 1e-5;
        c.training.spsa_config.epochs = 10000;
        c.delta_l = {1, 3, 7, kUnboundedWindow};
        return c;
    }
    if (profile == "paper") {
        c.optics.grid = {200, 200};
        c.optics.gaussian_width = 0.5;
        c.optics.phase_jitter = 0.02;
        c.optics.kappa_jitter = 0.02;
        c.data.train_images = "data/train-images-idx3-ubyte";
        c.data.train_labels = "data/train-labels-idx1-ubyte";
        c.data.test_images = "data/t10k-images-idx3-ubyte";
        c.data.test_labels = "data/t10k-labels-idx1-ubyte";
        c.data.n_train = 5000;
        c.data.n_test = 1060;
        c.response.gamma = 19.0;
        c.training.spsa_config.learning_rate = 1e-5;
        c.training.spsa_config.epochs = 100000;
        c.delta_l = {1, 3, 7, 11, 15, 19, 23, kUnboundedWindow};
        return c;
    }
    throw std::invalid_argument{fmt::format("unknown profile '{}' (expected desk or paper)", profile)};
}

ExperimentConfig load_config(
  const std::optional<std::filesystem::path>& file,
  const std::optional<std::string>& profile,
  const std::optional<std::uint64_t>& seed)
{
    json patch = json::object();
    if (file) {
        std::ifstream in{*file};
        if (!in) throw std::runtime_error{fmt::format("cannot open config {}", file->string())};
        try {
            patch = json::parse(in);
        } catch (const json::parse_error& e) {
            throw FormatError{fmt::format("{}: {}", file->string(), e.what())};
        }
    }
    const std::string name = profile ? *profile : patch.value("profile", std::string{"desk"});
    json base = to_json(profile_defaults(name));
    // The mode is derived; drop it so a patched jitter does not contradict it.
    base["optics"].erase("mode");
    base.erase("conventions");
    base.merge_patch(patch);
    base["profile"] = name;
    if (seed) base["seed"] = *seed;
    auto c = config_from_json(base);
    c.resolve();
    return c;
}

std::uint64_t response_hash(const ExperimentConfig& c)
{
    const json doc{
      {"network", c.network},
      {"optics", c.optics},
      {"optics_seed", c.optics_seed()},
      {"projection_seed", c.projection_seed()},
      {"split_seed", c.split_seed()},
      {"gamma", c.response.gamma},
      {"on_steps", c.response.schedule.on_steps},
      {"off_steps", c.response.schedule.off_steps},
      {"continuous", c.response.continuous},
      {"hard_cutoff", c.response.hard_cutoff ? json(*c.response.hard_cutoff) : json(nullptr)},
      {"data",
       {{"train_images", c.data.train_images},
        {"train_labels", c.data.train_labels},
        {"test_images", c.data.test_images ? json(*c.data.test_images) : json(nullptr)},
        {"test_labels", c.data.test_labels ? json(*c.data.test_labels) : json(nullptr)},
        {"n_train", c.data.n_train},
        {"n_test", c.data.n_test}}}};
    return hash_json(doc);
}

std::uint64_t training_hash(const ExperimentConfig& c, int delta_l)
{
    auto doc = to_json(c)["training"];
    doc["response_hash"] = response_hash(c);
    doc["delta_l"] = delta_l;
    doc["feature_mode"] = to_string(c.response.feature_mode);
    doc["seed"] = c.training_seed();
    return hash_json(doc);
}

Presentation present(Network& network, DriveStream& stream, int first_row, int period, std::optional<int> hard_cutoff)
{
    Presentation p;
    SpikeDetector detector{network.size(), 0, network.params().spike_threshold};
    network.optics().set_power(true);
    for (int k = 0; k < period; ++k) {
        network.advance(stream.row(first_row + k));
        detector.observe(k, as_span(network.state().s));
        if (network.optics().powered_on()) p.powered_steps += network.size();
        if (hard_cutoff && detector.t0() && k >= *detector.t0() + *hard_cutoff) network.optics().set_power(false);
    }
    network.optics().set_power(true);
    p.record = detector.record();
    return p;
}

LabeledSplit load_split(const ExperimentConfig& c)
{
    const auto train_file = load_idx(c.data.train_images, c.data.train_labels);
    LabeledSplit s;
    if (c.data.test_images) {
        const auto test_file = load_idx(*c.data.test_images, *c.data.test_labels);
        const auto a = split_indices(train_file.size(), c.data.n_train, 0, c.split_seed());
        const auto b = split_indices(test_file.size(), 0, c.data.n_test, derive_seed(c.split_seed(), "test"));
        s.train = train_file.subset(a.train);
        s.test = test_file.subset(b.test);
    } else {
        const auto a = split_indices(train_file.size(), c.data.n_train, c.data.n_test, c.split_seed());
        s.train = train_file.subset(a.train);
        s.test = train_file.subset(a.test);
    }
    return s;
}

namespace {

std::vector<SpikeRecord> respond_set(
  const ExperimentConfig& c,
  const OpticsModel& optics,
  const NeuronArrays& rest,
  const InputProjection& projection,
  const Dataset& images,
  long& powered,
  const Progress& progress,
  const std::string& label)
{
    const int count = images.size();
    const int period = c.response.schedule.period();
    std::vector<SpikeRecord> records(static_cast<std::size_t>(count));
    if (count == 0) return records;
    if (c.response.continuous) {
        Network net{c.network, optics, rest};
        DriveStream stream{projection, images.images, c.response.schedule, c.response.gamma};
        for (int i = 0; i < count; ++i) {
            auto p = present(net, stream, i * period, period, c.response.hard_cutoff);
            records[static_cast<std::size_t>(i)] = std::move(p.record);
            powered += p.powered_steps;
        }
        return records;
    }
    std::vector<long> powered_by_image(static_cast<std::size_t>(count), 0);
    std::atomic<int> done{0};
    parallel_for(static_cast<std::size_t>(count), c.workers, [&](std::size_t begin, std::size_t end) {
        Network net{c.network, optics, rest};
        DriveStream stream{projection, images.images, c.response.schedule, c.response.gamma};
        for (std::size_t i = begin; i < end; ++i) {
            net.set_state(rest);
            auto p = present(net, stream, static_cast<int>(i) * period, period, c.response.hard_cutoff);
            records[i] = std::move(p.record);
            powered_by_image[i] = p.powered_steps;
            const int n = ++done;
            if (progress && (n % 100 == 0 || n == count)) progress(fmt::format("{}: {}/{} presentations", label, n, count));
        }
    });
    for (auto v : powered_by_image) powered += v;
    return records;
}

}  // namespace

ResponseSet generate_responses(const ExperimentConfig& c, const LabeledSplit& split, const Progress& progress)
{
    const auto optics = build_optics(c);
    const int n = optics.size();
    const auto rest = rest_state(c.network, optics);
    if (!rest.converged)
        emit(progress, fmt::format("warning: rest state not converged after {} steps (change {:.3e})", rest.steps, rest.final_change));
    emit(progress, fmt::format("building {}x{} input projection", n, split.train.pixels()));
    const auto projection = build_projection(n, split.train.pixels(), c.projection_seed());
    ResponseSet out;
    long powered = 0;
    out.train = respond_set(c, optics, rest.state, projection, split.train, powered, progress, "train");
    out.test = respond_set(c, optics, rest.state, projection, split.test, powered, progress, "test");
    out.train_labels = split.train.labels;
    out.test_labels = split.test.labels;
    const double total = static_cast<double>(out.train.size() + out.test.size()) * n * c.response.schedule.period();
    out.powered_fraction = total > 0 ? powered / total : 1.0;
    return out;
}

ResponseSet load_or_generate_responses(const ExperimentConfig& c, const Progress& progress)
{
    const auto split = load_split(c);
    const auto path = c.cache_path();
    const auto hash = response_hash(c);
    if (std::filesystem::exists(path)) {
        auto records = load_records(path, hash);
        const auto n_train = split.train.size();
        if (records.size() != static_cast<std::size_t>(n_train + split.test.size()))
            throw StaleCacheError{fmt::format("{}: holds {} records, config needs {}", path.string(), records.size(),
                                              n_train + split.test.size())};
        ResponseSet out;
        out.train.assign(records.begin(), records.begin() + n_train);
        out.test.assign(records.begin() + n_train, records.end());
        out.train_labels = split.train.labels;
        out.test_labels = split.test.labels;
        out.powered_fraction = std::numeric_limits<double>::quiet_NaN();
        out.from_cache = true;
        emit(progress, fmt::format("loaded {} cached responses from {}", records.size(), path.string()));
        return out;
    }
    auto out = generate_responses(c, split, progress);
    std::vector<SpikeRecord> all = out.train;
    all.insert(all.end(), out.test.begin(), out.test.end());
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    save_records(path, all, hash);
    emit(progress, fmt::format("cached {} responses in {}", all.size(), path.string()));
    return out;
}

void write_json(const std::filesystem::path& path, const json& doc)
{
    write_text(path, [&](std::ostream& out) { out << doc.dump(2) << '\n'; });
}

void prepare_run_dir(const std::filesystem::path& dir, const ExperimentConfig& config)
{
    std::filesystem::create_directories(dir);
    write_json(dir / "config.json", to_json(config));
}

std::filesystem::path make_run_dir(const ExperimentConfig& config, const std::string& command)
{
    const auto now = std::chrono::system_clock::now();
    const std::string stamp = fmt::format("{:%Y%m%d-%H%M%S}", fmt::gmtime(std::chrono::system_clock::to_time_t(now)));
    const std::filesystem::path base = std::filesystem::path{config.output_dir} / fmt::format("{}-{}", stamp, command);
    auto dir = base;
    for (int k = 1; std::filesystem::exists(dir); ++k) dir = fmt::format("{}-{}", base.string(), k);
    prepare_run_dir(dir, config);
    return dir;
}

json run_characterize(const ExperimentConfig& c, const std::filesystem::path& dir, const Progress& progress)
{
    const auto& ch = c.characterize;
    auto spec = c.optics;
    if (ch.grid) spec.grid = *ch.grid;
    const OpticsModel optics{spec};
    ProtocolOptions opt;
    opt.probe_neuron = ch.probe_neuron;
    opt.workers = c.workers;
    opt.rate_horizon = ch.rate_horizon;
    opt.rate_transient = ch.rate_transient;
    opt.refractory_window = ch.refractory_window;

    auto save = [&](const SweepResult& r, const std::string& name) {
        write_text(dir / (name + ".csv"), [&](std::ostream& out) { write_csv(out, r); });
        write_json(dir / (name + ".json"), sidecar(r));
    };

    json summary;
    summary["neurons"] = optics.size();

    emit(progress, "excitability sweep");
    const auto ex = excitability_sweep(c.network, optics, ch.excitability_grid.values(), ch.pulse, opt);
    save(ex, "excitability");
    {
        const double thr = estimate_threshold(ex);
        double below = 0.0;
        double above = 1.0;
        for (const auto& p : ex.points) {
            if (p.value < thr) below = std::max(below, p.max_amplitude);
            else above = std::min(above, p.max_amplitude);
        }
        summary["excitability"] = {{"threshold", thr}, {"max_below", below}, {"min_above", above}};
    }

    emit(progress, "spike-rate sweep");
    const auto rate = spike_rate_sweep(c.network, optics, ch.rate_grid.values(), ch.constant_from, opt);
    save(rate, "spike_rate");
    {
        bool monotone = true;
        for (std::size_t k = 1; k < rate.points.size(); ++k)
            monotone = monotone && rate.points[k].spike_rate >= rate.points[k - 1].spike_rate;
        const auto onset = rate_onset(rate);
        summary["spike_rate"] = {
          {"onset_gamma", onset ? json(onset->gamma) : json(nullptr)},
          {"onset_rate", onset ? json(onset->rate) : json(nullptr)},
          {"max_rate", std::max_element(rate.points.begin(), rate.points.end(), [](auto& a, auto& b) {
                           return a.spike_rate < b.spike_rate;
                       })->spike_rate},
          {"monotone", monotone}};
    }

    emit(progress, "refractory probe");
    std::vector<int> taus;
    for (int t = ch.tau_min; t <= ch.tau_max; ++t) taus.push_back(t);
    json refractory = json::array();
    for (double gain : ch.refractory_gains) {
        const auto r = refractory_probe(c.network, optics, ch.refractory_gamma, taus, gain, opt);
        save(r, fmt::format("refractory_gain{}", gain));
        const bool all = std::all_of(r.points.begin(), r.points.end(), [](auto& p) { return p.reexcited; });
        const auto len = refractory_length(r);
        // Re-excitation can come and go; the cutoff only counts if every larger tau re-excites too.
        bool clean = len.has_value();
        for (const auto& p : r.points)
            if (len && p.value >= *len && !p.reexcited) clean = false;
        refractory.push_back({
          {"gain", gain},
          {"refractory_length", len ? json(*len) : json(nullptr)},
          {"reexcited_for_all_tau", all},
          {"clean_cutoff", clean}});
    }
    summary["refractory"] = {{"gamma", ch.refractory_gamma}, {"probes", refractory}};

    emit(progress, "latency curve");
    const auto lat = latency_curve(c.network, optics, ch.latency_grid.values(), ch.pulse, opt);
    save(lat, "latency");
    {
        const auto at042 = latency_curve(c.network, optics, {0.42}, ch.pulse, opt);
        std::set<int> distinct;
        std::set<int> above_one;
        bool monotone = true;
        std::optional<int> prev;
        for (const auto& p : lat.points) {
            if (p.latency) distinct.insert(*p.latency);
            if (p.value > 1.0 && p.latency) above_one.insert(*p.latency);
            if (p.value > 1.0 && !p.latency) above_one.insert(-1);
            if (prev && p.latency && *p.latency > *prev) monotone = false;
            if (p.latency) prev = p.latency;
        }
        const auto& l042 = at042.points.front().latency;
        summary["latency"] = {
          {"at_0_42", l042 ? json(*l042) : json(nullptr)},
          {"values_above_gamma_1", std::vector<int>(above_one.begin(), above_one.end())},
          {"distinct", distinct.size()},
          {"nonincreasing", monotone}};
    }
    summary["max_ensemble_deviation"] = std::max(
      {ex.max_ensemble_deviation(), rate.max_ensemble_deviation(), lat.max_ensemble_deviation()});
    write_json(dir / "characterize_summary.json", summary);
    return summary;
}

json run_respond(const ExperimentConfig& c, const std::filesystem::path& dir, const Progress& progress)
{
    const auto rs = load_or_generate_responses(c, progress);
    std::vector<SpikeRecord> all = rs.train;
    all.insert(all.end(), rs.test.begin(), rs.test.end());
    const int n = all.empty() ? 0 : all.front().n();

    json summary;
    summary["response_hash"] = hex64(response_hash(c));
    summary["neurons"] = n;
    summary["train_records"] = rs.train.size();
    summary["test_records"] = rs.test.size();
    double spiking = 0.0;
    std::map<int, std::int64_t> t0_hist;
    int silent = 0;
    for (const auto& r : all) {
        spiking += n ? static_cast<double>(r.spike_count()) / n : 0.0;
        if (auto t0 = r.t0()) ++t0_hist[*t0];
        else ++silent;
    }
    summary["mean_spiking_fraction"] = all.empty() ? 0.0 : spiking / static_cast<double>(all.size());
    summary["silent_records"] = silent;
    summary["t0_histogram"] = histogram_json(t0_hist);
    json per_dl = json::array();
    for (int d : c.delta_l) {
        const auto gated = gate_all(all, d, c.response.feature_mode);
        const double active = mean_active_fraction(gated);
        per_dl.push_back({
          {"delta_l", delta_l_name(d)},
          {"active_fraction", active},
          {"sparsity", 1.0 - active},
          {"latency_histogram", histogram_json(latency_histogram(all, d))}});
    }
    summary["delta_l"] = per_dl;
    write_json(dir / "respond_summary.json", summary);
    if (!all.empty()) write_text(dir / "example_record.csv", [&](std::ostream& out) { write_csv(out, all.front()); });
    return summary;
}

json run_train(const ExperimentConfig& c, const std::filesystem::path& dir, bool resume, const Progress& progress)
{
    const auto rs = load_or_generate_responses(c, progress);
    json rows = json::array();
    const auto ckpt_dir = dir / "checkpoints";
    std::filesystem::create_directories(ckpt_dir);

    write_text(dir / "accuracy_vs_sparsity.csv", [&](std::ostream& table) {
        table << "delta_l,active_fraction,sparsity,spsa_train_acc,spsa_test_acc,ridge_lambda,ridge_train_acc,ridge_test_acc\n";
        for (int d : c.delta_l) {
            const auto gtrain = gate_all(rs.train, d, c.response.feature_mode);
            const auto gtest = gate_all(rs.test, d, c.response.feature_mode);
            std::vector<SparseResponse> both = gtrain;
            both.insert(both.end(), gtest.begin(), gtest.end());
            const double active = mean_active_fraction(both);
            const Matrix ftrain = feature_matrix(gtrain);
            const Matrix ftest = feature_matrix(gtest);
            const Matrix ytrain = one_hot(rs.train_labels);
            json row{{"delta_l", delta_l_name(d)}, {"active_fraction", active}, {"sparsity", 1.0 - active}};
            std::string spsa_cols = ",";
            std::string ridge_cols = ",,";

            if (c.training.spsa) {
                emit(progress, fmt::format("SPSA, delta_l = {}", delta_l_name(d)));
                TrainOptions opt;
                opt.mode = c.training.nmse;
                opt.test_features = &ftest;
                opt.train_labels = rs.train_labels;
                opt.test_labels = rs.test_labels;
                opt.checkpoint = ckpt_dir / fmt::format("spsa_{}.ckpt", tag(d));
                opt.resume = resume;
                opt.config_hash = training_hash(c, d);
                const auto result = train_spsa(ftrain, ytrain, c.training.spsa_config, c.training_seed(), opt);
                const auto ev_train = evaluate(result.weights, ftrain, rs.train_labels);
                const auto ev_test = evaluate(result.weights, ftest, rs.test_labels);
                write_text(dir / fmt::format("history_{}.csv", tag(d)), [&](std::ostream& out) { write_history_csv(out, result.history); });
                write_text(dir / fmt::format("confusion_spsa_{}.csv", tag(d)), [&](std::ostream& out) { write_confusion_csv(out, ev_test.confusion); });
                save_weights(dir / fmt::format("weights_spsa_{}.bin", tag(d)), result.weights, opt.config_hash);
                row["spsa"] = {
                  {"epochs", result.weights.epoch},
                  {"final_loss", result.history.back().train_loss},
                  {"train_accuracy", ev_train.accuracy},
                  {"test_accuracy", ev_test.accuracy}};
                spsa_cols = fmt::format("{:.17g},{:.17g}", ev_train.accuracy, ev_test.accuracy);
            }
            if (c.training.ridge) {
                emit(progress, fmt::format("ridge, delta_l = {}", delta_l_name(d)));
                double lambda = c.training.ridge_lambdas.front();
                json validation = json::array();
                if (c.training.ridge_lambdas.size() > 1) {
                    // Hold out the last fifth of the (already shuffled) training set.
                    const Eigen::Index m = ftrain.rows();
                    const Eigen::Index fit = std::max<Eigen::Index>(1, m - m / 5);
                    const Matrix ffit = ftrain.topRows(fit);
                    const Matrix fval = ftrain.bottomRows(m - fit);
                    const std::span<const std::uint8_t> lval{rs.train_labels.data() + fit, static_cast<std::size_t>(m - fit)};
                    const auto sel = select_ridge(ffit, ytrain.topRows(fit), fval, lval, c.training.ridge_lambdas);
                    lambda = sel.lambda;
                    for (auto [l, a] : sel.validation_accuracy) validation.push_back({{"lambda", l}, {"accuracy", a}});
                }
                const auto w = train_ridge(ftrain, ytrain, lambda);
                const auto ev_train = evaluate(w, ftrain, rs.train_labels);
                const auto ev_test = evaluate(w, ftest, rs.test_labels);
                write_text(dir / fmt::format("confusion_ridge_{}.csv", tag(d)), [&](std::ostream& out) { write_confusion_csv(out, ev_test.confusion); });
                row["ridge"] = {
                  {"lambda", lambda},
                  {"validation", validation},
                  {"train_accuracy", ev_train.accuracy},
                  {"test_accuracy", ev_test.accuracy}};
                ridge_cols = fmt::format("{:.17g},{:.17g},{:.17g}", lambda, ev_train.accuracy, ev_test.accuracy);
            }
            table << fmt::format("{},{:.17g},{:.17g},{},{}\n", delta_l_name(d), active, 1.0 - active, spsa_cols, ridge_cols);
            rows.push_back(row);
        }
    });

    bool monotone = true;
    for (std::size_t k = 1; k < rows.size(); ++k)
        monotone = monotone && rows[k]["active_fraction"].get<double>() >= rows[k - 1]["active_fraction"].get<double>();
    json summary{
      {"response_hash", hex64(response_hash(c))},
      {"train_records", rs.train.size()},
      {"test_records", rs.test.size()},
      {"results", rows},
      {"gating_monotone", monotone}};
    write_json(dir / "train_summary.json", summary);
    return summary;
}

}  // namespace exsnn
