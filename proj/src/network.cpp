#include "randla/network.hpp"

#include "randla/sampling.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>

namespace randla {

namespace {

constexpr LocseMode kLocseModes[] = {LocseMode::Full,    LocseMode::POnly,  LocseMode::PkOnly,
                                     LocseMode::RelOnly, LocseMode::DistOnly, LocseMode::PPk,
                                     LocseMode::PPkRel,  LocseMode::PPkDist, LocseMode::RelDist};
constexpr Pooling kPoolings[] = {Pooling::Attentive, Pooling::Max, Pooling::Mean, Pooling::Sum};

// Parts of (p_i, p_k, p_i - p_k, |p_i - p_k|) used by each mode.
struct Parts {
  bool center, neighbor, rel, dist;
};

Parts parts_of(LocseMode mode) {
  switch (mode) {
    case LocseMode::Full: return {true, true, true, true};
    case LocseMode::POnly: return {true, false, false, false};
    case LocseMode::PkOnly: return {false, true, false, false};
    case LocseMode::RelOnly: return {false, false, true, false};
    case LocseMode::DistOnly: return {false, false, false, true};
    case LocseMode::PPk: return {true, true, false, false};
    case LocseMode::PPkRel: return {true, true, true, false};
    case LocseMode::PPkDist: return {true, true, false, true};
    case LocseMode::RelDist: return {false, false, true, true};
  }
  return {true, true, true, true};
}

template <typename Row>
void write_encoding(Row&& out, const Eigen::RowVector3d& pi, const Eigen::RowVector3d& pk, Parts parts) {
  Index c = 0;
  if (parts.center) out.segment(c, 3) = pi, c += 3;
  if (parts.neighbor) out.segment(c, 3) = pk, c += 3;
  const Eigen::RowVector3d rel = pi - pk;
  if (parts.rel) out.segment(c, 3) = rel, c += 3;
  if (parts.dist) out(c) = rel.norm();
}

std::string unit_prefix(const std::string& block, int unit) { return block + ".unit" + std::to_string(unit); }

Var linear(ParamBinder& params, const std::string& name, Var x, bool bias = true) {
  return affine(params.tape(), x, params(name + ".W"), bias ? params(name + ".b") : Var{});
}

// Shared layer without activation; normalized when the model asks for it.
Var dense(ParamBinder& params, const std::string& name, Var x) {
  const Var y = linear(params, name, x);
  switch (params.config().norm) {
    case Normalization::Layer: return layer_norm(params.tape(), y);
    case Normalization::Channel: return channel_norm(params.tape(), y);
    case Normalization::None: break;
  }
  return y;
}

Var mlp(ParamBinder& params, const std::string& name, Var x) {
  return leaky_relu(params.tape(), dense(params, name, x), params.config().leaky_slope);
}

Index lexicographic_min(const Coords& coords) {
  Index best = 0;
  for (Index i = 1; i < coords.rows(); ++i) {
    const auto a = coords.row(i);
    const auto b = coords.row(best);
    if (std::lexicographical_compare(a.begin(), a.end(), b.begin(), b.end())) best = i;
  }
  return best;
}

}  // namespace

std::string_view to_string(LocseMode mode) {
  switch (mode) {
    case LocseMode::Full: return "full";
    case LocseMode::POnly: return "p_only";
    case LocseMode::PkOnly: return "pk_only";
    case LocseMode::RelOnly: return "rel_only";
    case LocseMode::DistOnly: return "dist_only";
    case LocseMode::PPk: return "p_pk";
    case LocseMode::PPkRel: return "p_pk_rel";
    case LocseMode::PPkDist: return "p_pk_dist";
    case LocseMode::RelDist: return "rel_dist";
  }
  return "?";
}

std::string_view to_string(Pooling pooling) {
  switch (pooling) {
    case Pooling::Attentive: return "attentive";
    case Pooling::Max: return "max";
    case Pooling::Mean: return "mean";
    case Pooling::Sum: return "sum";
  }
  return "?";
}

std::string_view to_string(Normalization norm) {
  switch (norm) {
    case Normalization::Layer: return "layer";
    case Normalization::Channel: return "channel";
    case Normalization::None: break;
  }
  return "none";
}

std::optional<Normalization> parse_normalization(std::string_view name) {
  if (name == "none") return Normalization::None;
  if (name == "layer") return Normalization::Layer;
  if (name == "channel") return Normalization::Channel;
  return std::nullopt;
}

std::optional<LocseMode> parse_locse_mode(std::string_view name) {
  for (auto mode : kLocseModes)
    if (name == to_string(mode)) return mode;
  return std::nullopt;
}

std::optional<Pooling> parse_pooling(std::string_view name) {
  for (auto pooling : kPoolings)
    if (name == to_string(pooling)) return pooling;
  return std::nullopt;
}

int locse_encoding_width(LocseMode mode) {
  const Parts p = parts_of(mode);
  return 3 * (p.center + p.neighbor + p.rel) + p.dist;
}

Eigen::RowVectorXd relative_position_encoding(const Eigen::RowVector3d& center, const Eigen::RowVector3d& neighbor,
                                              LocseMode mode) {
  Eigen::RowVectorXd out(locse_encoding_width(mode));
  write_encoding(out, center, neighbor, parts_of(mode));
  return out;
}

Matrix relative_position_encoding(const Coords& coords, const NeighborIndex& neighbors, LocseMode mode) {
  const Parts parts = parts_of(mode);
  const Index n = neighbors.rows();
  const Index k = neighbors.k();
  require(n == coords.rows(), "locse: neighbor table has " + std::to_string(n) + " rows for " +
                                  std::to_string(coords.rows()) + " points");
  Matrix out(n * k, locse_encoding_width(mode));
  for (Index i = 0; i < n; ++i) {
    const Eigen::RowVector3d pi = coords.row(i);
    for (Index j = 0; j < k; ++j) {
      const auto nb = neighbors.indices(i, j);
      require(nb >= 0 && nb < coords.rows(), "locse: neighbor index out of range");
      write_encoding(out.row(i * k + j), pi, coords.row(nb), parts);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

std::vector<int> ModelConfig::level_widths() const {
  std::vector<int> widths{input_width};
  for (int w : block_widths) widths.push_back(2 * w);
  return widths;
}

std::vector<int> ModelConfig::resolved_decoder_widths() const {
  if (!decoder_widths.empty()) return decoder_widths;
  const auto levels = level_widths();
  std::vector<int> out;
  for (int j = 0; j < num_layers(); ++j) out.push_back(levels[num_layers() - 1 - j]);
  return out;
}

void ModelConfig::validate() const {
  require(d_in >= 1, "model: d_in must be positive");
  require(num_classes >= 1, "model: num_classes must be positive");
  require(k >= 1, "model: k must be positive");
  require(input_width >= 1, "model: input_width must be positive");
  require(!block_widths.empty(), "model: need at least one encoder layer");
  for (int w : block_widths) require(w >= 2 && w % 2 == 0, "model: block widths must be even and at least 2");
  require(decoder_widths.empty() || decoder_widths.size() == block_widths.size(),
          "model: decoder widths must match the number of encoder layers");
  for (int w : decoder_widths) require(w >= 1, "model: decoder widths must be positive");
  for (int w : head_widths) require(w >= 1, "model: head widths must be positive");
  require(decimation >= 1, "model: decimation must be at least 1");
  require(block_depth >= 1, "model: block depth must be at least 1");
  require(dropout >= 0 && dropout < 1, "model: dropout must lie in [0, 1)");
  require(leaky_slope >= 0 && leaky_slope < 1, "model: leaky slope must lie in [0, 1)");
}

std::vector<ParamSpec> parameter_layout(const ModelConfig& config) {
  config.validate();
  std::vector<ParamSpec> out;
  auto dense = [&](const std::string& name, Index din, Index dout, bool bias = true) {
    out.push_back({name + ".W", {din, dout}, false});
    if (bias) out.push_back({name + ".b", {dout}, true});
  };
  const auto levels = config.level_widths();
  const Index g = locse_encoding_width(config.locse);
  dense("input", config.d_in, config.input_width);
  for (int l = 0; l < config.num_layers(); ++l) {
    const std::string block = "enc" + std::to_string(l);
    const Index d_out = config.block_widths[l];
    const Index half = d_out / 2;
    dense(block + ".reduce", levels[l], half);
    for (int u = 0; u < config.block_depth; ++u) {
      const std::string unit = unit_prefix(block, u);
      const Index out_width = u + 1 == config.block_depth ? d_out : half;
      dense(unit + ".locse", g, half);
      if (config.pooling == Pooling::Attentive) dense(unit + ".score", d_out, d_out, false);
      dense(unit + ".pool", d_out, out_width);
    }
    dense(block + ".expand", d_out, 2 * d_out);
    dense(block + ".shortcut", levels[l], 2 * d_out);
  }
  const auto decoder = config.resolved_decoder_widths();
  Index width = levels.back();
  for (int j = 0; j < config.num_layers(); ++j) {
    // The full-resolution skip carries the first block's output, not the input features.
    const int level = config.num_layers() - 1 - j;
    const Index skip = levels[level == 0 ? 1 : level];
    dense("dec" + std::to_string(j), width + skip, decoder[j]);
    width = decoder[j];
  }
  for (std::size_t h = 0; h < config.head_widths.size(); ++h) {
    dense("head.fc" + std::to_string(h + 1), width, config.head_widths[h]);
    width = config.head_widths[h];
  }
  dense("head.logits", width, config.num_classes);
  return out;
}

ModelParams ModelParams::initialize(const ModelConfig& config, Rng& rng) {
  ModelParams params;
  params.config = config;
  for (const auto& spec : parameter_layout(config)) {
    Matrix values = spec.is_bias ? Matrix::Zero(1, spec.shape[0]) : glorot_uniform(spec.shape[0], spec.shape[1], rng);
    params.tensors.emplace(spec.name, Tensor(spec.shape, std::move(values)));
  }
  return params;
}

const Tensor& ModelParams::at(const std::string& name) const {
  const auto it = tensors.find(name);
  require(it != tensors.end(), "model: missing parameter '" + name + "'");
  return it->second;
}

Tensor& ModelParams::at(const std::string& name) {
  const auto it = tensors.find(name);
  require(it != tensors.end(), "model: missing parameter '" + name + "'");
  return it->second;
}

Index ModelParams::parameter_count() const {
  Index total = 0;
  for (const auto& [name, tensor] : tensors) total += tensor.numel();
  return total;
}

Var ParamBinder::operator()(const std::string& name) {
  if (const auto it = bound_.find(name); it != bound_.end()) return it->second;
  const Tensor& t = params_.at(name);
  const Var v = trainable_ ? tape_.parameter(t.values, t.shape) : tape_.constant(t.values, t.shape);
  bound_.emplace(name, v);
  return v;
}

// ---------------------------------------------------------------------------

NeighborIndex layer_neighbors(const Coords& coords, int k) {
  require(k >= 1, "layer_neighbors: k must be positive");
  require(coords.rows() >= 1, "layer_neighbors: empty layer");
  const SpatialIndex index = build_index(coords);
  const int available = static_cast<int>(std::min<Index>(k, coords.rows()));
  NeighborIndex found = knn_self(index, available, /*exclude_self=*/false);
  if (available == k) return found;
  NeighborIndex padded;
  padded.indices.resize(found.rows(), k);
  padded.distances.resize(found.rows(), k);
  padded.indices.leftCols(available) = found.indices;
  padded.distances.leftCols(available) = found.distances;
  for (Index j = available; j < k; ++j) {
    padded.indices.col(j) = found.indices.col(0);
    padded.distances.col(j) = found.distances.col(0);
  }
  return padded;
}

Var locse(ParamBinder& params, const std::string& prefix, const Matrix& encoding, Var features,
          const NeighborIndex& neighbors, Index width) {
  Tape& tape = params.tape();
  require(encoding.rows() == neighbors.rows() * neighbors.k(), "locse: encoding rows do not match the neighbor table");
  require(tape.value(features).rows() == neighbors.rows(), "locse: feature rows do not match the neighbor table");
  const Var enc = tape.constant(encoding, {neighbors.rows(), neighbors.k(), encoding.cols()});
  const Var r = mlp(params, prefix + ".locse", enc);
  Var f = features;
  if (tape.value(features).cols() != width) f = mlp(params, prefix + ".feat", features);
  const Var gathered = gather_rows(tape, f, neighbors.indices);
  return concat_last_axis(tape, {gathered, r});
}

Var attentive_pool(ParamBinder& params, const std::string& prefix, Var neighborhood, Index out_width, Var* scores) {
  Tape& tape = params.tape();
  const Shape& shape = tape.shape(neighborhood);
  require(shape.size() == 3, "attentive_pool: expects an [N, K, C] tensor");
  require(shape[1] >= 1, "attentive_pool: K must be at least 1");
  Var pooled;
  switch (params.config().pooling) {
    case Pooling::Attentive: {
      const Var s = softmax_over_axis(tape, linear(params, prefix + ".score", neighborhood, /*bias=*/false));
      if (scores) *scores = s;
      pooled = reduce_sum_axis(tape, elementwise_mul(tape, neighborhood, s));
      break;
    }
    case Pooling::Max: pooled = reduce_max_axis(tape, neighborhood); break;
    case Pooling::Mean:
      pooled = scale(tape, reduce_sum_axis(tape, neighborhood), 1.0 / static_cast<Real>(shape[1]));
      break;
    case Pooling::Sum: pooled = reduce_sum_axis(tape, neighborhood); break;
  }
  const Var out = mlp(params, prefix + ".pool", pooled);
  require(tape.value(out).cols() == out_width, "attentive_pool: pool MLP width does not match the requested output");
  return out;
}

Var dilated_residual_block(ParamBinder& params, const std::string& prefix, const Coords& coords, Var features,
                           const NeighborIndex& neighbors, Index d_out, BlockTrace* trace) {
  Tape& tape = params.tape();
  const ModelConfig& config = params.config();
  require(tape.value(features).rows() == coords.rows(), "block: feature rows do not match the points");
  const Index half = d_out / 2;
  const Matrix encoding = relative_position_encoding(coords, neighbors, config.locse);
  Var x = mlp(params, prefix + ".reduce", features);
  for (int u = 0; u < config.block_depth; ++u) {
    const std::string unit = unit_prefix(prefix, u);
    const Index out_width = u + 1 == config.block_depth ? d_out : half;
    const Var neighborhood = locse(params, unit, encoding, x, neighbors, half);
    Var scores;
    x = attentive_pool(params, unit, neighborhood, out_width, &scores);
    if (trace && scores.valid()) trace->attention.push_back(scores);
  }
  const Var main = dense(params, prefix + ".expand", x);
  const Var shortcut = dense(params, prefix + ".shortcut", features);
  return leaky_relu(tape, add(tape, main, shortcut), config.leaky_slope);
}

LayerState encoder_layer(ParamBinder& params, int layer, const LayerState& state, Rng& rng, BlockTrace* trace,
                         Var* block_output) {
  const ModelConfig& config = params.config();
  require(layer >= 0 && layer < config.num_layers(), "encoder_layer: layer out of range");
  const Var block = dilated_residual_block(params, "enc" + std::to_string(layer), state.coords, state.features,
                                           state.neighbors, config.block_widths[layer], trace);
  if (block_output) *block_output = block;
  const Index n = state.coords.rows();
  const Index m = (n + config.decimation - 1) / config.decimation;
  LayerState next;
  next.kept_indices = config.sampler == LayerSampler::Random
                          ? random_sample(n, m, rng)
                          : farthest_point_sample(state.coords, m, lexicographic_min(state.coords));
  next.coords.resize(m, 3);
  for (Index i = 0; i < m; ++i) next.coords.row(i) = state.coords.row(next.kept_indices[i]);
  next.features = select_rows(params.tape(), block, next.kept_indices);
  next.neighbors = layer_neighbors(next.coords, config.k);
  return next;
}

LayerState decoder_layer(ParamBinder& params, int layer, const LayerState& state, const LayerState& skip) {
  Tape& tape = params.tape();
  const SpatialIndex index = build_index(state.coords);
  const IndexList source = nearest(index, skip.coords);
  const Var upsampled = select_rows(tape, state.features, source);
  const Var joined = concat_last_axis(tape, {upsampled, skip.features});
  LayerState out;
  out.coords = skip.coords;
  out.neighbors = skip.neighbors;
  out.features = mlp(params, "dec" + std::to_string(layer), joined);
  return out;
}

ForwardResult forward(ParamBinder& params, const Coords& coords, const Matrix& features, Mode mode, Rng& rng) {
  const ModelConfig& config = params.config();
  Tape& tape = params.tape();
  require(coords.rows() >= 1, "forward: empty cloud");
  require(features.rows() == coords.rows(), "forward: feature rows do not match the points");
  require(features.cols() == config.d_in, "forward: model expects " + std::to_string(config.d_in) +
                                              " input features, got " + std::to_string(features.cols()));
  Rng sampling_rng = rng.split();
  Rng dropout_rng = rng.split();

  ForwardResult result;
  LayerState input;
  input.coords = coords;
  input.features = mlp(params, "input", tape.constant(features, {features.rows(), features.cols()}));
  input.neighbors = layer_neighbors(coords, config.k);
  result.encoder_states.push_back(std::move(input));
  for (int l = 0; l < config.num_layers(); ++l) {
    BlockTrace trace;
    Var block;
    LayerState next = encoder_layer(params, l, result.encoder_states.back(), sampling_rng, &trace, &block);
    result.traces.push_back(std::move(trace));
    result.block_outputs.push_back(block);
    result.encoder_states.push_back(std::move(next));
  }
  const LayerState* current = &result.encoder_states.back();
  for (int j = 0; j < config.num_layers(); ++j) {
    const int level = config.num_layers() - 1 - j;
    LayerState skip = result.encoder_states[level];
    if (level == 0) skip.features = result.block_outputs[0];
    result.decoder_states.push_back(decoder_layer(params, j, *current, skip));
    current = &result.decoder_states.back();
  }
  Var x = current->features;
  // Head layers are never normalized, which keeps untrained logits small.
  for (std::size_t h = 0; h < config.head_widths.size(); ++h)
    x = leaky_relu(tape, linear(params, "head.fc" + std::to_string(h + 1), x), config.leaky_slope);
  x = dropout(tape, x, config.dropout, mode == Mode::Train, dropout_rng);
  result.logits = linear(params, "head.logits", x);
  return result;
}

Matrix predict_logits(const ModelParams& params, const PointCloud& cloud, Mode mode, Rng& rng) {
  Tape tape;
  ParamBinder binder(tape, params, /*trainable=*/false);
  const ForwardResult result = forward(binder, cloud.coords, cloud.features(), mode, rng);
  return tape.value(result.logits);
}

std::vector<AttentionScores> export_attention(const ModelParams& params, const PointCloud& cloud, int layer,
                                              const IndexList& probe, Rng& rng) {
  require(params.config.pooling == Pooling::Attentive, "export_attention: model does not use attentive pooling");
  require(layer >= 0 && layer < params.config.num_layers(), "export_attention: layer out of range");
  Tape tape;
  ParamBinder binder(tape, params, /*trainable=*/false);
  const ForwardResult result = forward(binder, cloud.coords, cloud.features(), Mode::Eval, rng);

  // Map each layer's rows back to input-cloud indices.
  IndexList origin(static_cast<std::size_t>(cloud.size()));
  for (std::size_t i = 0; i < origin.size(); ++i) origin[i] = static_cast<std::int32_t>(i);
  for (int l = 1; l <= layer; ++l) {
    IndexList next;
    for (auto kept : result.encoder_states[l].kept_indices) next.push_back(origin[kept]);
    origin = std::move(next);
  }
  const Var scores = result.traces[layer].attention.front();
  const Matrix& values = tape.value(scores);
  const Index k = tape.shape(scores)[1];
  IndexList points = probe;
  if (points.empty()) {
    points.resize(origin.size());
    for (std::size_t i = 0; i < points.size(); ++i) points[i] = static_cast<std::int32_t>(i);
  }
  std::vector<AttentionScores> out;
  for (auto p : points) {
    require(p >= 0 && static_cast<std::size_t>(p) < origin.size(),
            "export_attention: probe " + std::to_string(p) + " outside layer " + std::to_string(layer));
    out.push_back({origin[p], layer, values.middleRows(static_cast<Index>(p) * k, k)});
  }
  return out;
}

void write_attention_csv(const std::filesystem::path& path, const std::vector<AttentionScores>& scores) {
  std::ofstream out(path);
  if (!out) throw LoadError("cannot write " + path.string());
  out << "point_id,layer,k,channel,score\n" << std::setprecision(17);
  for (const auto& entry : scores)
    for (Index k = 0; k < entry.scores.rows(); ++k)
      for (Index c = 0; c < entry.scores.cols(); ++c)
        out << entry.point_id << ',' << entry.layer << ',' << k << ',' << c << ',' << entry.scores(k, c) << '\n';
  if (!out) throw LoadError("failed writing " + path.string());
}

}  // namespace randla
