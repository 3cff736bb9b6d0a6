#pragma once

#include "randla/core.hpp"
#include "randla/network.hpp"
#include "randla/numeric.hpp"
#include "randla/pointcloud.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace randla {

struct TrainConfig {
  Real lr0 = 0.01;
  Real lr_decay = 0.95;
  int epochs = 100;
  Real beta1 = 0.9;
  Real beta2 = 0.999;
  Real epsilon = 1e-8;
  int points_per_crop = 2048;
  int crops_per_epoch = 20;
  int batch_size = 1;
  std::uint64_t seed = 0;
  int n_class = 3;
  int k = 16;
  int block_depth = 2;
  LocseMode locse = LocseMode::Full;
  Pooling pooling = Pooling::Attentive;
  Normalization norm = Normalization::Channel;

  void validate() const;
  ModelConfig model_config(int d_in) const;
};

/// Keys accepted in a config file and on the command line.
const std::vector<std::string>& train_config_keys();
/// Sets one key from its text form; unknown keys and bad values throw ValidationError.
void set_train_config_value(TrainConfig& config, const std::string& key, const std::string& value);
/// `key = value` lines; `#` starts a comment.
TrainConfig parse_train_config(const std::string& text);
TrainConfig load_train_config(const std::filesystem::path& path);
std::string format_train_config(const TrainConfig& config);

/// lr0 * decay^completed_epochs.
Real learning_rate(const TrainConfig& config, int completed_epochs);

/// Inverse frequency normalized to mean 1 over present classes; absent classes get 0.
Vector class_weights(std::span<const std::int64_t> counts);

struct LossResult {
  Real loss = 0;
  Matrix grad;  // d loss / d logits
};

/// sum_i w[y_i] * -log softmax(logits_i)[y_i] / sum_i w[y_i].
LossResult weighted_cross_entropy(const Matrix& logits, std::span<const std::int32_t> labels, const Vector& weights);
/// Tape form returning a shape-{1} scalar.
Var weighted_cross_entropy(Tape& tape, Var logits, std::span<const std::int32_t> labels, const Vector& weights);

struct AdamOptions {
  Real beta1 = 0.9;
  Real beta2 = 0.999;
  Real epsilon = 1e-8;
};

struct AdamState {
  std::map<std::string, Matrix> m;
  std::map<std::string, Matrix> v;
  std::int64_t step = 0;
};

/// Bias-corrected Adam over every tensor that has an entry in `grads`.
void adam_step(std::map<std::string, Tensor>& params, const std::map<std::string, Matrix>& grads, AdamState& state,
               Real lr, const AdamOptions& options = {});

struct EpochMetrics {
  int epoch = 0;  // 1-based
  Real lr = 0;
  Real loss = 0;
  Real oa = 0;
};

struct TrainResult {
  ModelParams params;
  std::vector<EpochMetrics> log;
};

using EpochCallback = std::function<void(const EpochMetrics&)>;

/// Crops `points_per_crop` nearest points around a random center of a random
/// cloud, trains one Adam step per `batch_size` crops and decays the learning
/// rate after every epoch. Deterministic in (dataset, config).
TrainResult train_loop(const std::vector<PointCloud>& dataset, const TrainConfig& config,
                       const EpochCallback& on_epoch = {});

/// Network input for a crop: coordinates shifted so `center` sits at the
/// horizontal origin (height unchanged), followed by colors.
Coords centered_coords(const Coords& coords, const Eigen::RowVector3d& center);
Matrix network_features(const PointCloud& cloud, const Coords& centered);

struct ModelGradientCheck {
  GradientCheckResult result;
  std::string worst_tensor;
};

/// Finite-difference check of weighted cross-entropy through a full eval-mode
/// forward, taken with respect to every parameter tensor. Biases are
/// randomized first so that no bias gradient is trivially zero.
ModelGradientCheck model_gradient_check(const ModelConfig& model, const PointCloud& cloud, const Vector& weights,
                                        std::uint64_t seed, const GradientCheckOptions& options = {});

/// CSV `epoch,lr,loss,oa`.
void write_metrics_csv(const std::filesystem::path& path, const std::vector<EpochMetrics>& log);

}  // namespace randla
