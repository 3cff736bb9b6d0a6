#include "randla/train.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

namespace randla {

namespace {

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return std::string(s.substr(first, last - first + 1));
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  T value{};
  const char* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end) throw ValidationError("config: invalid value '" + text + "' for " + key);
  return value;
}

}  // namespace

void TrainConfig::validate() const {
  require(lr0 > 0 && std::isfinite(lr0), "config: lr0 must be positive");
  require(lr_decay > 0 && lr_decay < 1, "config: lr_decay must lie in (0, 1)");
  require(epochs >= 1, "config: epochs must be at least 1");
  require(beta1 >= 0 && beta1 < 1, "config: beta1 must lie in [0, 1)");
  require(beta2 >= 0 && beta2 < 1, "config: beta2 must lie in [0, 1)");
  require(epsilon > 0, "config: epsilon must be positive");
  require(points_per_crop >= 1, "config: points_per_crop must be positive");
  require(crops_per_epoch >= 1, "config: crops_per_epoch must be positive");
  require(batch_size >= 1, "config: batch_size must be positive");
  require(n_class >= 1, "config: n_class must be positive");
  require(k >= 1, "config: k must be positive");
  require(block_depth >= 1, "config: block_depth must be positive");
}

ModelConfig TrainConfig::model_config(int d_in) const {
  ModelConfig model;
  model.d_in = d_in;
  model.num_classes = n_class;
  model.k = k;
  model.block_depth = block_depth;
  model.locse = locse;
  model.pooling = pooling;
  model.norm = norm;
  return model;
}

const std::vector<std::string>& train_config_keys() {
  static const std::vector<std::string> keys{
      "lr0",        "lr_decay", "epochs", "beta1", "beta2", "epsilon",     "points_per_crop", "crops_per_epoch",
      "batch_size", "seed",     "n_class", "k",    "locse", "block_depth", "pooling", "norm"};
  return keys;
}

void set_train_config_value(TrainConfig& c, const std::string& key, const std::string& raw) {
  const std::string value = trim(raw);
  if (key == "lr0") c.lr0 = parse_number<Real>(key, value);
  else if (key == "lr_decay") c.lr_decay = parse_number<Real>(key, value);
  else if (key == "epochs") c.epochs = parse_number<int>(key, value);
  else if (key == "beta1") c.beta1 = parse_number<Real>(key, value);
  else if (key == "beta2") c.beta2 = parse_number<Real>(key, value);
  else if (key == "epsilon") c.epsilon = parse_number<Real>(key, value);
  else if (key == "points_per_crop") c.points_per_crop = parse_number<int>(key, value);
  else if (key == "crops_per_epoch") c.crops_per_epoch = parse_number<int>(key, value);
  else if (key == "batch_size") c.batch_size = parse_number<int>(key, value);
  else if (key == "seed") c.seed = parse_number<std::uint64_t>(key, value);
  else if (key == "n_class") c.n_class = parse_number<int>(key, value);
  else if (key == "k") c.k = parse_number<int>(key, value);
  else if (key == "block_depth") c.block_depth = parse_number<int>(key, value);
  else if (key == "locse") {
    const auto mode = parse_locse_mode(value);
    if (!mode) throw ValidationError("config: unknown locse mode '" + value + "'");
    c.locse = *mode;
  } else if (key == "pooling") {
    const auto pooling = parse_pooling(value);
    if (!pooling) throw ValidationError("config: unknown pooling '" + value + "'");
    c.pooling = *pooling;
  } else if (key == "norm") {
    const auto norm = parse_normalization(value);
    if (!norm) throw ValidationError("config: unknown norm '" + value + "'");
    c.norm = *norm;
  } else {
    throw ValidationError("config: unknown key '" + key + "'");
  }
}

TrainConfig parse_train_config(const std::string& text) {
  TrainConfig config;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const std::string content = trim(line);
    if (content.empty()) continue;
    const auto eq = content.find('=');
    if (eq == std::string::npos) throw ValidationError("config line " + std::to_string(line_no) + ": expected key = value");
    try {
      set_train_config_value(config, trim(content.substr(0, eq)), content.substr(eq + 1));
    } catch (const ValidationError& e) {
      throw ValidationError("config line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  config.validate();
  return config;
}

TrainConfig load_train_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open config " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_train_config(buffer.str());
}

std::string format_train_config(const TrainConfig& c) {
  std::ostringstream out;
  out << std::setprecision(17);
  out << "lr0 = " << c.lr0 << "\nlr_decay = " << c.lr_decay << "\nepochs = " << c.epochs << "\nbeta1 = " << c.beta1
      << "\nbeta2 = " << c.beta2 << "\nepsilon = " << c.epsilon << "\npoints_per_crop = " << c.points_per_crop
      << "\ncrops_per_epoch = " << c.crops_per_epoch << "\nbatch_size = " << c.batch_size << "\nseed = " << c.seed
      << "\nn_class = " << c.n_class << "\nk = " << c.k << "\nlocse = " << to_string(c.locse)
      << "\nblock_depth = " << c.block_depth << "\npooling = " << to_string(c.pooling)
      << "\nnorm = " << to_string(c.norm) << '\n';
  return out.str();
}

Real learning_rate(const TrainConfig& config, int completed_epochs) {
  return config.lr0 * std::pow(config.lr_decay, completed_epochs);
}

Vector class_weights(std::span<const std::int64_t> counts) {
  require(!counts.empty(), "class_weights: no classes");
  std::int64_t total = 0;
  for (auto c : counts) {
    require(c >= 0, "class_weights: counts must be non-negative");
    total += c;
  }
  require(total > 0, "class_weights: all class counts are zero");
  Vector w = Vector::Zero(static_cast<Index>(counts.size()));
  Index present = 0;
  for (std::size_t i = 0; i < counts.size(); ++i)
    if (counts[i] > 0) {
      w[static_cast<Index>(i)] = static_cast<Real>(total) / static_cast<Real>(counts[i]);
      ++present;
    }
  return w * (static_cast<Real>(present) / w.sum());
}

LossResult weighted_cross_entropy(const Matrix& logits, std::span<const std::int32_t> labels, const Vector& weights) {
  const Index n = logits.rows();
  const Index c = logits.cols();
  require(static_cast<Index>(labels.size()) == n, "cross_entropy: label count does not match logits");
  require(weights.size() == c, "cross_entropy: weight count does not match classes");
  LossResult result;
  result.grad = Matrix::Zero(n, c);
  Real total_weight = 0;
  for (Index i = 0; i < n; ++i) {
    const auto y = labels[static_cast<std::size_t>(i)];
    require(y >= 0 && y < c, "cross_entropy: label " + std::to_string(y) + " out of range");
    total_weight += weights[y];
  }
  if (total_weight <= 0) return result;
  for (Index i = 0; i < n; ++i) {
    const auto y = labels[static_cast<std::size_t>(i)];
    const Real w = weights[y];
    if (w == 0) continue;
    const auto row = logits.row(i);
    const Real peak = row.maxCoeff();
    const Eigen::RowVectorXd e = (row.array() - peak).exp();
    const Real z = e.sum();
    result.loss += w * (std::log(z) - (row(y) - peak));
    result.grad.row(i) = (w / total_weight) * (e / z);
    result.grad(i, y) -= w / total_weight;
  }
  result.loss /= total_weight;
  return result;
}

Var weighted_cross_entropy(Tape& tape, Var logits, std::span<const std::int32_t> labels, const Vector& weights) {
  require(tape.shape(logits).size() == 2, "cross_entropy: logits must be [N, C]");
  LossResult r = weighted_cross_entropy(tape.value(logits), labels, weights);
  Matrix value(1, 1);
  value(0, 0) = r.loss;
  return tape.record("weighted_cross_entropy", {1}, std::move(value), {logits},
                     [logits, grad = std::move(r.grad)](Tape& t, Var self) {
                       t.grad(logits) += t.grad(self)(0, 0) * grad;
                     });
}

void adam_step(std::map<std::string, Tensor>& params, const std::map<std::string, Matrix>& grads, AdamState& state,
               Real lr, const AdamOptions& options) {
  ++state.step;
  const Real correction1 = 1 - std::pow(options.beta1, static_cast<Real>(state.step));
  const Real correction2 = 1 - std::pow(options.beta2, static_cast<Real>(state.step));
  for (const auto& [name, g] : grads) {
    const auto it = params.find(name);
    require(it != params.end(), "adam: gradient for unknown parameter '" + name + "'");
    Matrix& p = it->second.values;
    require(g.rows() == p.rows() && g.cols() == p.cols(), "adam: gradient shape mismatch for '" + name + "'");
    auto [m_it, m_new] = state.m.try_emplace(name, Matrix::Zero(p.rows(), p.cols()));
    auto [v_it, v_new] = state.v.try_emplace(name, Matrix::Zero(p.rows(), p.cols()));
    Matrix& m = m_it->second;
    Matrix& v = v_it->second;
    m = options.beta1 * m + (1 - options.beta1) * g;
    v = options.beta2 * v + (1 - options.beta2) * g.cwiseAbs2();
    p.array() -= lr * (m.array() / correction1) / ((v.array() / correction2).sqrt() + options.epsilon);
  }
}

Coords centered_coords(const Coords& coords, const Eigen::RowVector3d& center) {
  const Eigen::RowVector3d shift(center.x(), center.y(), 0);
  return coords.rowwise() - shift;
}

Matrix network_features(const PointCloud& cloud, const Coords& centered) {
  Matrix f(cloud.size(), cloud.feature_dim());
  f.leftCols(3) = centered;
  if (cloud.has_colors()) f.rightCols(3) = *cloud.colors;
  return f;
}

TrainResult train_loop(const std::vector<PointCloud>& dataset, const TrainConfig& config,
                       const EpochCallback& on_epoch) {
  config.validate();
  require(!dataset.empty(), "train: empty dataset");
  const int d_in = dataset.front().feature_dim();
  std::vector<std::int64_t> counts(static_cast<std::size_t>(config.n_class), 0);
  std::vector<SpatialIndex> indices;
  for (std::size_t c = 0; c < dataset.size(); ++c) {
    const PointCloud& cloud = dataset[c];
    require(cloud.has_labels(), "train: cloud " + std::to_string(c) + " has no labels");
    require(cloud.feature_dim() == d_in, "train: clouds mix colored and uncolored inputs");
    cloud.validate(config.n_class);
    for (auto y : *cloud.labels) ++counts[static_cast<std::size_t>(y)];
    indices.push_back(build_index(cloud.coords));
  }
  const Vector weights = class_weights(counts);

  Rng rng(config.seed);
  Rng init_rng = rng.split();
  TrainResult result;
  result.params = ModelParams::initialize(config.model_config(d_in), init_rng);
  AdamState adam;
  const AdamOptions adam_options{config.beta1, config.beta2, config.epsilon};

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const Real lr = learning_rate(config, epoch);
    Real loss_sum = 0;
    Index correct = 0;
    Index seen = 0;
    std::map<std::string, Matrix> grads;
    int in_batch = 0;
    for (int step = 0; step < config.crops_per_epoch; ++step) {
      const auto cloud_id = static_cast<std::size_t>(rng.below(dataset.size()));
      const PointCloud& cloud = dataset[cloud_id];
      const auto center = static_cast<std::int32_t>(rng.below(static_cast<std::uint64_t>(cloud.size())));
      const Index count = std::min<Index>(config.points_per_crop, cloud.size());
      const IndexList crop_ids = crop_subcloud(cloud, center, count, indices[cloud_id]);
      const PointCloud crop = cloud.subset(crop_ids);
      const Coords coords = centered_coords(crop.coords, cloud.coords.row(center));
      Rng step_rng = rng.split();

      Tape tape;
      ParamBinder binder(tape, result.params);
      Real loss = 0;
      try {
        const ForwardResult out = forward(binder, coords, network_features(crop, coords), Mode::Train, step_rng);
        const Var l = weighted_cross_entropy(tape, out.logits, *crop.labels, weights);
        loss = tape.value(l)(0, 0);
        if (!std::isfinite(loss)) throw NumericError("loss is not finite");
        tape.backward(l);
        const Matrix& logits = tape.value(out.logits);
        for (Index i = 0; i < logits.rows(); ++i) {
          Index arg;
          logits.row(i).maxCoeff(&arg);
          correct += arg == (*crop.labels)[static_cast<std::size_t>(i)];
        }
        seen += logits.rows();
      } catch (const NumericError& e) {
        throw NumericError("training diverged at epoch " + std::to_string(epoch + 1) + ", step " +
                           std::to_string(step) + " (cloud " + std::to_string(cloud_id) + ", crop center " +
                           std::to_string(center) + "): " + e.what());
      }
      loss_sum += loss;
      for (const auto& [name, var] : binder.bound()) {
        if (!tape.has_grad(var)) continue;
        auto [it, inserted] = grads.try_emplace(name, tape.grad(var));
        if (!inserted) it->second += tape.grad(var);
      }
      if (++in_batch == config.batch_size || step + 1 == config.crops_per_epoch) {
        for (auto& [name, g] : grads) g /= static_cast<Real>(in_batch);
        adam_step(result.params.tensors, grads, adam, lr, adam_options);
        grads.clear();
        in_batch = 0;
      }
    }
    EpochMetrics metrics{epoch + 1, lr, loss_sum / config.crops_per_epoch,
                         seen ? static_cast<Real>(correct) / static_cast<Real>(seen) : 0.0};
    result.log.push_back(metrics);
    if (on_epoch) on_epoch(metrics);
  }
  return result;
}

void write_metrics_csv(const std::filesystem::path& path, const std::vector<EpochMetrics>& log) {
  std::ofstream out(path);
  if (!out) throw LoadError("cannot write " + path.string());
  out << "epoch,lr,loss,oa\n" << std::setprecision(10);
  for (const auto& m : log) out << m.epoch << ',' << m.lr << ',' << m.loss << ',' << m.oa << '\n';
  if (!out) throw LoadError("failed writing " + path.string());
}

ModelGradientCheck model_gradient_check(const ModelConfig& model, const PointCloud& cloud, const Vector& weights,
                                        std::uint64_t seed, const GradientCheckOptions& options) {
  require(cloud.has_labels(), "gradient check: cloud needs labels");
  Rng rng(seed);
  ModelParams params = ModelParams::initialize(model, rng);
  for (auto& [name, tensor] : params.tensors)
    if (tensor.shape.size() == 1)
      for (Index i = 0; i < tensor.values.size(); ++i) tensor.values.data()[i] = rng.uniform(-0.3, 0.3);
  std::vector<std::string> names;
  std::vector<Tensor> inputs;
  for (const auto& [name, tensor] : params.tensors) {
    names.push_back(name);
    inputs.push_back(tensor);
  }
  const Matrix features = cloud.features();
  const std::uint64_t forward_seed = rng();
  auto loss = [&](Tape& tape, std::span<const Var> vars) {
    ParamBinder binder(tape, params);
    for (std::size_t i = 0; i < names.size(); ++i) binder.bind(names[i], vars[i]);
    Rng forward_rng(forward_seed);
    const ForwardResult out = forward(binder, cloud.coords, features, Mode::Eval, forward_rng);
    return weighted_cross_entropy(tape, out.logits, *cloud.labels, weights);
  };
  ModelGradientCheck check;
  check.result = gradient_check(loss, inputs, options);
  check.worst_tensor = names.empty() ? std::string() : names[check.result.worst_input];
  return check;
}

}  // namespace randla
