#include <exsnn/errors.hpp>
#include <exsnn/random.hpp>
#include <exsnn/readout.hpp>

#include <fmt/format.h>

#include <array>
#include <cmath>
#include <fstream>
#include <limits>
#include <ostream>
#include <sstream>

namespace exsnn {

namespace {

// Neumaier compensated sum.
struct CompensatedSum {
    double sum = 0.0;
    double carry = 0.0;

    void add(double v)
    {
        const double t = sum + v;
        if (std::abs(sum) >= std::abs(v))
            carry += (sum - t) + v;
        else
            carry += (v - t) + sum;
        sum = t;
    }
    double value() const { return sum + carry; }
};

void check_pair(const Matrix& predictions, const Matrix& targets)
{
    if (predictions.rows() != targets.rows() || predictions.cols() != targets.cols())
        throw DimensionError{fmt::format(
          "predictions are {}x{}, targets {}x{}", predictions.rows(), predictions.cols(), targets.rows(), targets.cols())};
    if (targets.rows() == 0) throw std::invalid_argument{"loss over an empty batch"};
}

double column_error(const Matrix& p, const Matrix& y, Eigen::Index c)
{
    CompensatedSum s;
    for (Eigen::Index m = 0; m < y.rows(); ++m) {
        const double d = p(m, c) - y(m, c);
        s.add(d * d);
    }
    return s.value();
}

double column_variance_sum(const Matrix& y, Eigen::Index c)
{
    CompensatedSum mean;
    for (Eigen::Index m = 0; m < y.rows(); ++m) mean.add(y(m, c));
    const double mu = mean.value() / static_cast<double>(y.rows());
    CompensatedSum s;
    for (Eigen::Index m = 0; m < y.rows(); ++m) {
        const double d = y(m, c) - mu;
        s.add(d * d);
    }
    return s.value();
}

std::vector<int> labels_from_targets(const Matrix& targets) { return predict(targets); }

double accuracy_of(const Matrix& scores, std::span<const std::uint8_t> labels)
{
    const auto pred = predict(scores);
    long hits = 0;
    for (std::size_t m = 0; m < pred.size(); ++m) hits += pred[m] == labels[m];
    return pred.empty() ? 0.0 : static_cast<double>(hits) / static_cast<double>(pred.size());
}

double accuracy_of(const Matrix& scores, const std::vector<int>& labels)
{
    const auto pred = predict(scores);
    long hits = 0;
    for (std::size_t m = 0; m < pred.size(); ++m) hits += pred[m] == labels[m];
    return pred.empty() ? 0.0 : static_cast<double>(hits) / static_cast<double>(pred.size());
}

constexpr std::array<char, 8> kCheckpointMagic{'E', 'X', 'S', 'N', 'C', 'K', 'P', '1'};
constexpr std::array<char, 8> kWeightsMagic{'E', 'X', 'S', 'N', 'W', 'O', 'U', 'T'};

template <typename T>
void put(std::ostream& out, const T& v)
{
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& in, const std::filesystem::path& path)
{
    T v{};
    if (!in.read(reinterpret_cast<char*>(&v), sizeof(T))) throw FormatError{fmt::format("{}: truncated", path.string())};
    return v;
}

void put_matrix(std::ostream& out, const Matrix& w)
{
    put(out, static_cast<std::int64_t>(w.rows()));
    put(out, static_cast<std::int64_t>(w.cols()));
    out.write(reinterpret_cast<const char*>(w.data()), static_cast<std::streamsize>(w.size() * sizeof(double)));
}

Matrix get_matrix(std::istream& in, const std::filesystem::path& path)
{
    const auto rows = get<std::int64_t>(in, path);
    const auto cols = get<std::int64_t>(in, path);
    if (rows < 0 || cols < 0 || rows * cols > (std::int64_t{1} << 32))
        throw FormatError{fmt::format("{}: implausible matrix shape {}x{}", path.string(), rows, cols)};
    Matrix w(rows, cols);
    if (!in.read(reinterpret_cast<char*>(w.data()), static_cast<std::streamsize>(w.size() * sizeof(double))))
        throw FormatError{fmt::format("{}: truncated", path.string())};
    return w;
}

void check_magic(std::istream& in, const std::array<char, 8>& magic, const std::filesystem::path& path)
{
    std::array<char, 8> got{};
    if (!in.read(got.data(), got.size()) || got != magic)
        throw FormatError{fmt::format("{}: unexpected file type", path.string())};
}

void check_hash(std::uint64_t got, std::uint64_t expected, const std::filesystem::path& path)
{
    if (got != expected)
        throw StaleCacheError{fmt::format(
          "{}: written for config {:016x}, current config is {:016x}", path.string(), got, expected)};
}

struct Checkpoint {
    ReadoutWeights weights;
    std::string rng_state;
    std::vector<HistoryRow> history;
};

void save_checkpoint(
  const std::filesystem::path& path,
  const ReadoutWeights& w,
  const std::mt19937_64& rng,
  const std::vector<HistoryRow>& history,
  std::uint64_t hash)
{
    // Write then rename so an interrupted save never leaves a torn checkpoint.
    const auto tmp = std::filesystem::path{path.string() + ".tmp"};
    {
        std::ofstream out{tmp, std::ios::binary | std::ios::trunc};
        if (!out) throw std::runtime_error{fmt::format("cannot write {}", tmp.string())};
        out.write(kCheckpointMagic.data(), kCheckpointMagic.size());
        put(out, hash);
        put(out, static_cast<std::int64_t>(w.epoch));
        put(out, w.rng_seed);
        put_matrix(out, w.w_out);
        std::ostringstream state;
        state << rng;
        const auto s = state.str();
        put(out, static_cast<std::uint64_t>(s.size()));
        out.write(s.data(), static_cast<std::streamsize>(s.size()));
        put(out, static_cast<std::uint64_t>(history.size()));
        for (const auto& h : history) {
            put(out, static_cast<std::int64_t>(h.epoch));
            put(out, h.train_loss);
            put(out, h.train_accuracy);
            put(out, h.test_accuracy);
        }
        if (!out) throw std::runtime_error{fmt::format("write failed for {}", tmp.string())};
    }
    std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path, std::uint64_t expected_hash)
{
    std::ifstream in{path, std::ios::binary};
    if (!in) throw std::runtime_error{fmt::format("cannot open {}", path.string())};
    check_magic(in, kCheckpointMagic, path);
    check_hash(get<std::uint64_t>(in, path), expected_hash, path);
    Checkpoint c;
    c.weights.epoch = static_cast<long>(get<std::int64_t>(in, path));
    c.weights.rng_seed = get<std::uint64_t>(in, path);
    c.weights.w_out = get_matrix(in, path);
    const auto len = get<std::uint64_t>(in, path);
    if (len > (1u << 20)) throw FormatError{fmt::format("{}: implausible rng state", path.string())};
    c.rng_state.resize(len);
    if (!in.read(c.rng_state.data(), static_cast<std::streamsize>(len)))
        throw FormatError{fmt::format("{}: truncated", path.string())};
    const auto rows = get<std::uint64_t>(in, path);
    for (std::uint64_t k = 0; k < rows; ++k) {
        HistoryRow h;
        h.epoch = static_cast<long>(get<std::int64_t>(in, path));
        h.train_loss = get<double>(in, path);
        h.train_accuracy = get<double>(in, path);
        h.test_accuracy = get<double>(in, path);
        c.history.push_back(h);
    }
    return c;
}

}  // namespace

ReadoutWeights ReadoutWeights::zeros(int classes, int n_features)
{
    ReadoutWeights w;
    w.w_out = Matrix::Zero(classes, n_features + 1);
    return w;
}

void SpsaConfig::validate() const
{
    if (!(epsilon > 0.0) || !std::isfinite(epsilon))
        throw std::invalid_argument{fmt::format("epsilon must be > 0, got {}", epsilon)};
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate))
        throw std::invalid_argument{fmt::format("learning_rate must be finite and >= 0, got {}", learning_rate)};
    if (epochs < 0) throw std::invalid_argument{"epochs must be >= 0"};
    if (batch < 0) throw std::invalid_argument{"batch must be >= 0"};
    if (eval_interval < 1) throw std::invalid_argument{"eval_interval must be >= 1"};
}

std::string to_string(NmseMode mode) { return mode == NmseMode::per_class ? "per_class" : "total_variance"; }

NmseMode nmse_mode_from_string(const std::string& name)
{
    if (name == "total_variance") return NmseMode::total_variance;
    if (name == "per_class") return NmseMode::per_class;
    throw std::invalid_argument{fmt::format("unknown NMSE mode '{}'", name)};
}

Matrix one_hot(std::span<const std::uint8_t> labels, int classes)
{
    Matrix y = Matrix::Zero(static_cast<Eigen::Index>(labels.size()), classes);
    for (std::size_t m = 0; m < labels.size(); ++m) {
        if (labels[m] >= classes) throw std::out_of_range{fmt::format("label {} >= {} classes", int{labels[m]}, classes)};
        y(static_cast<Eigen::Index>(m), labels[m]) = 1.0;
    }
    return y;
}

Matrix with_bias(const Matrix& features)
{
    Matrix f(features.rows(), features.cols() + 1);
    f.leftCols(features.cols()) = features;
    f.col(features.cols()).setOnes();
    return f;
}

Matrix feature_matrix(std::span<const SparseResponse> responses)
{
    if (responses.empty()) return Matrix(0, 1);
    const int n = responses.front().n;
    Matrix f = Matrix::Zero(static_cast<Eigen::Index>(responses.size()), n + 1);
    for (std::size_t m = 0; m < responses.size(); ++m) {
        const auto& r = responses[m];
        if (r.n != n) throw DimensionError{"responses disagree on neuron count"};
        for (std::size_t k = 0; k < r.index.size(); ++k) f(static_cast<Eigen::Index>(m), r.index[k]) = r.value[k];
    }
    f.col(n).setOnes();
    return f;
}

double nmse_from_predictions(const Matrix& predictions, const Matrix& targets, NmseMode mode)
{
    check_pair(predictions, targets);
    if (mode == NmseMode::total_variance) {
        CompensatedSum err;
        CompensatedSum var;
        for (Eigen::Index c = 0; c < targets.cols(); ++c) {
            err.add(column_error(predictions, targets, c));
            var.add(column_variance_sum(targets, c));
        }
        if (var.value() <= 0.0) throw std::invalid_argument{"targets have zero variance over the batch"};
        return err.value() / var.value();
    }
    CompensatedSum ratio;
    int used = 0;
    for (Eigen::Index c = 0; c < targets.cols(); ++c) {
        const double v = column_variance_sum(targets, c);
        if (v <= 0.0) continue;
        ratio.add(column_error(predictions, targets, c) / v);
        ++used;
    }
    if (used == 0) throw std::invalid_argument{"targets have zero variance over the batch"};
    return ratio.value() / used;
}

double nmse_loss(const ReadoutWeights& weights, const Matrix& features, const Matrix& targets, NmseMode mode)
{
    if (features.cols() != weights.w_out.cols())
        throw DimensionError{fmt::format(
          "features have {} columns, weights expect {}", features.cols(), weights.w_out.cols())};
    const Matrix p = features * weights.w_out.transpose();
    return nmse_from_predictions(p, targets, mode);
}

Matrix draw_rademacher(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng)
{
    Matrix l(rows, cols);
    for (Eigen::Index k = 0; k < l.size(); ++k) l.data()[k] = (rng() >> 63) ? 1.0 : -1.0;
    return l;
}

double lambda_variance(const Matrix& lambda)
{
    if (lambda.size() == 0) return 1.0;
    return lambda.squaredNorm() / static_cast<double>(lambda.size());
}

SpsaStep spsa_step(Matrix& w, const LossFn& loss, const SpsaConfig& config, std::mt19937_64& rng, Matrix* gradient)
{
    config.validate();
    const Matrix lambda = draw_rademacher(w.rows(), w.cols(), rng);
    SpsaStep st;
    st.lambda_variance = lambda_variance(lambda);
    // Perturbed copies; the base weights are never modified in place.
    st.loss_plus = loss(w + config.epsilon * lambda);
    st.loss_minus = loss(w - config.epsilon * lambda);
    if (!std::isfinite(st.loss_plus) || !std::isfinite(st.loss_minus))
        throw TrainingError{fmt::format("non-finite SPSA loss: L+ = {}, L- = {}", st.loss_plus, st.loss_minus)};
    st.scale = (st.loss_plus - st.loss_minus) / (2.0 * config.epsilon * st.lambda_variance);
    if (gradient) *gradient = st.scale * lambda;
    w -= (config.learning_rate * st.scale) * lambda;
    return st;
}

ReadoutWeights spsa_step(
  const ReadoutWeights& weights,
  const Matrix& features,
  const Matrix& targets,
  const SpsaConfig& config,
  std::mt19937_64& rng,
  NmseMode mode)
{
    ReadoutWeights next = weights;
    spsa_step(
      next.w_out,
      [&](const Matrix& w) { return nmse_from_predictions(features * w.transpose(), targets, mode); },
      config,
      rng);
    ++next.epoch;
    return next;
}

TrainResult train_spsa(
  const Matrix& features,
  const Matrix& targets,
  const SpsaConfig& config,
  std::uint64_t seed,
  const TrainOptions& options)
{
    config.validate();
    if (features.rows() != targets.rows())
        throw DimensionError{fmt::format("{} feature rows but {} target rows", features.rows(), targets.rows())};
    if (features.rows() == 0) throw std::invalid_argument{"training set is empty"};
    if (!options.train_labels.empty() && options.train_labels.size() != static_cast<std::size_t>(features.rows()))
        throw DimensionError{"train label count differs from feature rows"};
    const bool have_test = options.test_features != nullptr;
    if (have_test) {
        if (options.test_features->cols() != features.cols())
            throw DimensionError{"test features have a different width"};
        if (options.test_labels.size() != static_cast<std::size_t>(options.test_features->rows()))
            throw DimensionError{"test label count differs from test feature rows"};
    }
    const auto train_labels = options.train_labels.empty()
      ? labels_from_targets(targets)
      : std::vector<int>(options.train_labels.begin(), options.train_labels.end());

    const Eigen::Index m_total = features.rows();
    const bool full_batch = config.batch == 0 || config.batch >= m_total;

    TrainResult result;
    result.weights.w_out = Matrix::Zero(targets.cols(), features.cols());
    result.weights.rng_seed = seed;
    std::mt19937_64 rng{seed};

    if (options.resume && options.checkpoint && std::filesystem::exists(*options.checkpoint)) {
        auto c = load_checkpoint(*options.checkpoint, options.config_hash);
        if (c.weights.w_out.rows() != targets.cols() || c.weights.w_out.cols() != features.cols())
            throw DimensionError{"checkpoint weights do not match the training data"};
        if (c.weights.rng_seed != seed)
            throw StaleCacheError{fmt::format("checkpoint was trained with seed {}, not {}", c.weights.rng_seed, seed)};
        result.weights = std::move(c.weights);
        result.history = std::move(c.history);
        std::istringstream state{c.rng_state};
        state >> rng;
        if (!state) throw FormatError{"checkpoint rng state is unreadable"};
    }

    Matrix& w = result.weights.w_out;
    Matrix p = features * w.transpose();

    auto record = [&](long epoch) {
        HistoryRow h;
        h.epoch = epoch;
        h.train_loss = nmse_from_predictions(p, targets, options.mode);
        h.train_accuracy = accuracy_of(p, train_labels);
        h.test_accuracy = have_test ? accuracy_of(*options.test_features * w.transpose(), options.test_labels)
                                    : std::numeric_limits<double>::quiet_NaN();
        result.history.push_back(h);
    };
    if (result.history.empty()) record(result.weights.epoch);

    const long last = options.stop_after ? std::min(config.epochs, *options.stop_after) : config.epochs;
    std::vector<Eigen::Index> order;
    if (!full_batch) {
        order.resize(static_cast<std::size_t>(m_total));
        for (Eigen::Index m = 0; m < m_total; ++m) order[static_cast<std::size_t>(m)] = m;
    }

    Matrix d;
    for (long epoch = result.weights.epoch + 1; epoch <= last; ++epoch) {
        const Matrix lambda = draw_rademacher(w.rows(), w.cols(), rng);
        const double var = lambda_variance(lambda);
        double lp = 0.0;
        double lm = 0.0;
        if (full_batch) {
            d.noalias() = features * lambda.transpose();
            lp = nmse_from_predictions(p + config.epsilon * d, targets, options.mode);
            lm = nmse_from_predictions(p - config.epsilon * d, targets, options.mode);
        } else {
            // Partial Fisher-Yates: the first `batch` slots become the sample.
            for (int k = 0; k < config.batch; ++k) {
                const auto j = k + static_cast<Eigen::Index>(unit_uniform(rng) * static_cast<double>(m_total - k));
                std::swap(order[static_cast<std::size_t>(k)], order[static_cast<std::size_t>(j)]);
            }
            const std::vector<Eigen::Index> rows(order.begin(), order.begin() + config.batch);
            const Matrix fb = features(rows, Eigen::all);
            const Matrix yb = targets(rows, Eigen::all);
            const Matrix pb = fb * w.transpose();
            const Matrix db = fb * lambda.transpose();
            lp = nmse_from_predictions(pb + config.epsilon * db, yb, options.mode);
            lm = nmse_from_predictions(pb - config.epsilon * db, yb, options.mode);
        }
        if (!std::isfinite(lp) || !std::isfinite(lm))
            throw TrainingError{fmt::format(
              "non-finite loss at epoch {} (L+ = {}, L- = {}); lower the learning rate", epoch, lp, lm)};
        const double step = config.learning_rate * (lp - lm) / (2.0 * config.epsilon * var);
        w -= step * lambda;
        if (full_batch) p -= step * d;
        result.weights.epoch = epoch;

        if (epoch % config.eval_interval == 0 || epoch == config.epochs) {
            // Resync so accumulated rank-one drift never reaches the reported numbers.
            p.noalias() = features * w.transpose();
            record(epoch);
            if (!w.allFinite()) throw TrainingError{fmt::format("weights became non-finite at epoch {}", epoch)};
            if (options.checkpoint) save_checkpoint(*options.checkpoint, result.weights, rng, result.history, options.config_hash);
        }
    }
    return result;
}

ReadoutWeights train_ridge(const Matrix& features, const Matrix& targets, double lambda)
{
    if (!(lambda >= 0.0)) throw std::invalid_argument{fmt::format("ridge lambda must be >= 0, got {}", lambda)};
    if (features.rows() != targets.rows())
        throw DimensionError{fmt::format("{} feature rows but {} target rows", features.rows(), targets.rows())};
    const Eigen::Index m = features.rows();
    const Eigen::Index k = features.cols();
    const bool dual = m < k;
    const Eigen::Index dim = dual ? m : k;
    Matrix gram = dual ? Matrix(features * features.transpose()) : Matrix(features.transpose() * features);
    gram.diagonal().array() += lambda;
    Eigen::LDLT<Matrix> ldlt{gram};
    const auto dvec = ldlt.vectorD().cwiseAbs();
    const double scale = dvec.size() ? dvec.maxCoeff() : 0.0;
    if (ldlt.info() != Eigen::Success || dvec.size() == 0
        || dvec.minCoeff() <= static_cast<double>(dim) * std::numeric_limits<double>::epsilon() * scale)
        throw SingularSystemError{fmt::format(
          "ridge system is singular at lambda = {}; use a positive regularizer", lambda)};
    ReadoutWeights w;
    if (dual)
        w.w_out = (features.transpose() * ldlt.solve(targets)).transpose();
    else
        w.w_out = ldlt.solve(features.transpose() * targets).transpose();
    return w;
}

RidgeSelection select_ridge(
  const Matrix& train_features,
  const Matrix& train_targets,
  const Matrix& val_features,
  std::span<const std::uint8_t> val_labels,
  const std::vector<double>& lambdas)
{
    if (lambdas.empty()) throw std::invalid_argument{"ridge validation grid is empty"};
    RidgeSelection best;
    double best_acc = -1.0;
    for (double l : lambdas) {
        auto w = train_ridge(train_features, train_targets, l);
        const double acc = evaluate(w, val_features, val_labels).accuracy;
        best.validation_accuracy.emplace_back(l, acc);
        if (acc > best_acc || (acc == best_acc && l > best.lambda)) {
            best_acc = acc;
            best.lambda = l;
            best.weights = std::move(w);
        }
    }
    return best;
}

std::vector<int> predict(const Matrix& scores)
{
    std::vector<int> out(static_cast<std::size_t>(scores.rows()));
    for (Eigen::Index m = 0; m < scores.rows(); ++m) {
        Eigen::Index best = 0;
        for (Eigen::Index c = 1; c < scores.cols(); ++c)
            if (scores(m, c) > scores(m, best)) best = c;
        out[static_cast<std::size_t>(m)] = static_cast<int>(best);
    }
    return out;
}

Evaluation evaluate(const ReadoutWeights& weights, const Matrix& features, std::span<const std::uint8_t> labels)
{
    if (features.cols() != weights.w_out.cols())
        throw DimensionError{fmt::format(
          "features have {} columns, weights expect {}", features.cols(), weights.w_out.cols())};
    if (labels.size() != static_cast<std::size_t>(features.rows()))
        throw DimensionError{"label count differs from feature rows"};
    Evaluation e;
    e.predictions = predict(features * weights.w_out.transpose());
    const int c = weights.classes();
    e.confusion = Eigen::MatrixXi::Zero(c, c);
    long hits = 0;
    for (std::size_t m = 0; m < labels.size(); ++m) {
        if (labels[m] >= c) throw std::out_of_range{fmt::format("label {} >= {} classes", int{labels[m]}, c)};
        ++e.confusion(labels[m], e.predictions[m]);
        hits += e.predictions[m] == labels[m];
    }
    e.accuracy = labels.empty() ? 0.0 : static_cast<double>(hits) / static_cast<double>(labels.size());
    return e;
}

void write_history_csv(std::ostream& out, const std::vector<HistoryRow>& history)
{
    out << "epoch,train_loss,train_acc,test_acc\n";
    for (const auto& h : history) {
        out << fmt::format("{},{:.17g},{:.17g},", h.epoch, h.train_loss, h.train_accuracy);
        if (!std::isnan(h.test_accuracy)) out << fmt::format("{:.17g}", h.test_accuracy);
        out << '\n';
    }
}

void write_confusion_csv(std::ostream& out, const Eigen::MatrixXi& confusion)
{
    out << "true";
    for (Eigen::Index c = 0; c < confusion.cols(); ++c) out << ",pred_" << c;
    out << '\n';
    for (Eigen::Index r = 0; r < confusion.rows(); ++r) {
        out << r;
        for (Eigen::Index c = 0; c < confusion.cols(); ++c) out << ',' << confusion(r, c);
        out << '\n';
    }
}

void save_weights(const std::filesystem::path& path, const ReadoutWeights& weights, std::uint64_t config_hash)
{
    std::ofstream out{path, std::ios::binary | std::ios::trunc};
    if (!out) throw std::runtime_error{fmt::format("cannot write {}", path.string())};
    out.write(kWeightsMagic.data(), kWeightsMagic.size());
    put(out, config_hash);
    put(out, static_cast<std::int64_t>(weights.epoch));
    put(out, weights.rng_seed);
    put_matrix(out, weights.w_out);
}

ReadoutWeights load_weights(const std::filesystem::path& path, std::uint64_t expected_hash)
{
    std::ifstream in{path, std::ios::binary};
    if (!in) throw std::runtime_error{fmt::format("cannot open {}", path.string())};
    check_magic(in, kWeightsMagic, path);
    check_hash(get<std::uint64_t>(in, path), expected_hash, path);
    ReadoutWeights w;
    w.epoch = static_cast<long>(get<std::int64_t>(in, path));
    w.rng_seed = get<std::uint64_t>(in, path);
    w.w_out = get_matrix(in, path);
    return w;
}

}  // namespace exsnn
