#pragma once

#include "randla/core.hpp"
#include "randla/numeric.hpp"
#include "randla/pointcloud.hpp"
#include "randla/rng.hpp"
#include "randla/spatial.hpp"

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace randla {

/// Which parts of (p_i, p_k, p_i - p_k, |p_i - p_k|) enter the relative
/// position encoding.
enum class LocseMode { Full, POnly, PkOnly, RelOnly, DistOnly, PPk, PPkRel, PPkDist, RelDist };

/// Neighbor aggregation inside each unit of the residual block.
enum class Pooling { Attentive, Max, Mean, Sum };

/// Per-layer downsampler. Farthest starts from the lexicographically
/// smallest point, which makes the network independent of input order.
enum class LayerSampler { Random, Farthest };

/// Optional normalization after each shared MLP (before its activation).
/// Layer normalizes every point over its channels, so points never interact.
enum class Normalization { None, Layer, Channel };

enum class Mode { Train, Eval };

std::string_view to_string(LocseMode mode);
std::string_view to_string(Pooling pooling);
std::optional<LocseMode> parse_locse_mode(std::string_view name);
std::optional<Pooling> parse_pooling(std::string_view name);
std::string_view to_string(Normalization norm);
std::optional<Normalization> parse_normalization(std::string_view name);

int locse_encoding_width(LocseMode mode);

/// Encoding of one (center, neighbor) pair, before the shared MLP.
Eigen::RowVectorXd relative_position_encoding(const Eigen::RowVector3d& center, const Eigen::RowVector3d& neighbor,
                                              LocseMode mode);

/// [(N*K), g] encodings for every row of a neighbor table.
Matrix relative_position_encoding(const Coords& coords, const NeighborIndex& neighbors, LocseMode mode);

struct ModelConfig {
  int d_in = 6;
  int num_classes = 3;
  int k = 16;
  int input_width = 8;
  /// Per-encoder block width d_out; encoder i emits 2 * d_out channels.
  std::vector<int> block_widths{16, 64, 128, 256};
  /// Output width of each decoder layer; empty mirrors the skip widths.
  std::vector<int> decoder_widths;
  std::vector<int> head_widths{64, 32};
  int decimation = 4;
  int block_depth = 2;
  LocseMode locse = LocseMode::Full;
  Pooling pooling = Pooling::Attentive;
  LayerSampler sampler = LayerSampler::Random;
  Normalization norm = Normalization::None;
  Real dropout = 0.5;
  Real leaky_slope = 0.2;

  int num_layers() const { return static_cast<int>(block_widths.size()); }
  /// Feature width at each level: input MLP width, then 2 * d_out per encoder.
  std::vector<int> level_widths() const;
  std::vector<int> resolved_decoder_widths() const;
  void validate() const;
};

struct ParamSpec {
  std::string name;
  Shape shape;
  bool is_bias = false;
};

/// Every parameter the network reads, in initialization order.
std::vector<ParamSpec> parameter_layout(const ModelConfig& config);

struct ModelParams {
  ModelConfig config;
  std::map<std::string, Tensor> tensors;

  /// Weights uniform in +-sqrt(6 / (din + dout)), biases zero.
  static ModelParams initialize(const ModelConfig& config, Rng& rng);

  const Tensor& at(const std::string& name) const;
  Tensor& at(const std::string& name);
  Index parameter_count() const;
};

/// Registers parameters on a tape the first time the network asks for them.
class ParamBinder {
 public:
  ParamBinder(Tape& tape, const ModelParams& params, bool trainable = true)
      : tape_(tape), params_(params), trainable_(trainable) {}

  Var operator()(const std::string& name);
  /// Uses an existing tape variable for `name` instead of the stored tensor.
  void bind(const std::string& name, Var v) { bound_.insert_or_assign(name, v); }
  Tape& tape() { return tape_; }
  const ModelConfig& config() const { return params_.config; }
  const std::map<std::string, Var>& bound() const { return bound_; }

 private:
  Tape& tape_;
  const ModelParams& params_;
  bool trainable_;
  std::map<std::string, Var> bound_;
};

/// Points, features and neighborhoods at one resolution.
struct LayerState {
  Coords coords;
  Var features;
  NeighborIndex neighbors;
  /// Rows of the previous (finer) layer that survived sampling.
  IndexList kept_indices;
};

/// Attention score tensors [N, K, C] of each unit in a residual block.
struct BlockTrace {
  std::vector<Var> attention;
};

/// KNN among the given points with self included. Rows are padded by
/// repeating their first entry when fewer than K points exist.
NeighborIndex layer_neighbors(const Coords& coords, int k);

/// Relative position encoding through a shared MLP, concatenated with the
/// gathered neighbor features: [N, K, width + D]. Features of width other than
/// `width` are first mapped through `<prefix>.feat`.
Var locse(ParamBinder& params, const std::string& prefix, const Matrix& encoding, Var features,
          const NeighborIndex& neighbors, Index width);

/// Pools [N, K, C] to [N, C] (attention-weighted sum by default) and maps the
/// result through `<prefix>.pool` to `out_width`. Score tensor returned via
/// `scores` when attentive.
Var attentive_pool(ParamBinder& params, const std::string& prefix, Var neighborhood, Index out_width,
                   Var* scores = nullptr);

/// reduce -> (LocSE -> pool) x depth -> expand, plus shortcut, then leaky ReLU.
/// Output width 2 * d_out.
Var dilated_residual_block(ParamBinder& params, const std::string& prefix, const Coords& coords, Var features,
                           const NeighborIndex& neighbors, Index d_out, BlockTrace* trace = nullptr);

/// Residual block followed by decimation; the returned state holds the
/// surviving points, their block features and recomputed neighbors. The
/// undecimated block output is returned through `block_output`.
LayerState encoder_layer(ParamBinder& params, int layer, const LayerState& state, Rng& rng,
                         BlockTrace* trace = nullptr, Var* block_output = nullptr);

/// Nearest-neighbor upsampling of `state` onto `skip`, concatenation with the
/// skip features, shared MLP. Decoder j takes its skip from encoder level
/// L-1-j; at level 0 that is the first block's output before decimation.
LayerState decoder_layer(ParamBinder& params, int layer, const LayerState& state, const LayerState& skip);

struct ForwardResult {
  Var logits;
  /// encoder_states[0] is the input level; [i + 1] follows encoder i.
  std::vector<LayerState> encoder_states;
  /// Block outputs before decimation, one per encoder layer.
  std::vector<Var> block_outputs;
  std::vector<LayerState> decoder_states;
  std::vector<BlockTrace> traces;
};

ForwardResult forward(ParamBinder& params, const Coords& coords, const Matrix& features, Mode mode, Rng& rng);

/// Logits of a whole cloud, without keeping the tape.
Matrix predict_logits(const ModelParams& params, const PointCloud& cloud, Mode mode, Rng& rng);

/// One K x C score matrix per probed point of an encoder layer.
struct AttentionScores {
  std::int32_t point_id;  // index in the input cloud
  int layer;
  Matrix scores;
};

/// Attention of the first unit of encoder `layer` at the given points of that
/// layer (indices local to the layer; all points when empty).
std::vector<AttentionScores> export_attention(const ModelParams& params, const PointCloud& cloud, int layer,
                                              const IndexList& probe, Rng& rng);

/// CSV `point_id,layer,k,channel,score`.
void write_attention_csv(const std::filesystem::path& path, const std::vector<AttentionScores>& scores);

/// Parameters plus `hparam.*` entries describing the configuration, stored
/// with write_tensors.
void save_checkpoint(const std::filesystem::path& path, const ModelParams& params);
ModelParams load_checkpoint(const std::filesystem::path& path);

}  // namespace randla
