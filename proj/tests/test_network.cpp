#include "randla/network.hpp"
#include "randla/train.hpp"

#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <numeric>

using namespace randla;
namespace fs = std::filesystem;

namespace {

Coords uniform(Index n, Rng& rng, Real extent = 1) {
  Coords c(n, 3);
  for (Index i = 0; i < n; ++i)
    for (int d = 0; d < 3; ++d) c(i, d) = rng.uniform(0, extent);
  return c;
}

Matrix random_matrix(Index rows, Index cols, Rng& rng, Real lo = -1, Real hi = 1) {
  Matrix m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(lo, hi);
  return m;
}

ModelConfig small_config(int d_in = 3, int k = 4) {
  ModelConfig c;
  c.d_in = d_in;
  c.k = k;
  c.input_width = 4;
  c.block_widths = {4};
  c.head_widths = {4};
  c.dropout = 0;
  return c;
}

// Random biases so no unit sits at a flat spot by construction.
ModelParams random_params(const ModelConfig& config, Rng& rng) {
  ModelParams p = ModelParams::initialize(config, rng);
  for (auto& [name, t] : p.tensors)
    if (name.size() > 2 && name.ends_with(".b")) t.values = random_matrix(1, t.values.cols(), rng, -0.3, 0.3);
  return p;
}

// Gradient check over the block input and a list of named parameters.
GradientCheckResult check_module(const ModelParams& params, const std::vector<std::string>& names, const Tensor& x,
                                 const std::function<Var(ParamBinder&, Var)>& module) {
  std::vector<Tensor> inputs{x};
  for (const auto& n : names) inputs.push_back(params.at(n));
  const auto f = [&](Tape& t, std::span<const Var> v) {
    ParamBinder binder(t, params);
    for (std::size_t i = 0; i < names.size(); ++i) binder.bind(names[i], v[i + 1]);
    return sum_all(t, square(t, module(binder, v[0])));
  };
  GradientCheckOptions options;
  options.eps = 1e-6;
  return gradient_check(f, inputs, options);
}

Coords chain(Index n) {
  Coords c = Coords::Zero(n, 3);
  for (Index i = 0; i < n; ++i) c(i, 0) = static_cast<Real>(i);
  return c;
}

// Center row of one residual block over a chain where each point sees itself
// and its two chain neighbors.
Eigen::RowVectorXd chain_block_output(const ModelParams& params, const Coords& coords, const Matrix& features,
                                      Index center) {
  Tape tape;
  ParamBinder binder(tape, params, false);
  const NeighborIndex nb = layer_neighbors(coords, 3);
  const Var x = tape.constant(features, {features.rows(), features.cols()});
  const Var y = dilated_residual_block(binder, "enc0", coords, x, nb, params.config.block_widths[0]);
  return tape.value(y).row(center);
}

}  // namespace

TEST_CASE("relative position encoding examples") {
  const Eigen::RowVector3d pi(0, 0, 0), pk(1, 2, 2);
  Eigen::RowVectorXd full(10);
  full << 0, 0, 0, 1, 2, 2, -1, -2, -2, 3;
  CHECK(relative_position_encoding(pi, pk, LocseMode::Full) == full);
  CHECK(relative_position_encoding(pi, pk, LocseMode::RelOnly) == Eigen::RowVector3d(-1, -2, -2));
  CHECK(relative_position_encoding(pi, pk, LocseMode::DistOnly)(0) == 3);
  CHECK(relative_position_encoding(pi, pk, LocseMode::DistOnly).size() == 1);
  CHECK(relative_position_encoding(pk, pk, LocseMode::RelDist).isZero());
  CHECK(locse_encoding_width(LocseMode::Full) == 10);
  CHECK(locse_encoding_width(LocseMode::PPk) == 6);
  for (auto name : {"full", "rel_only", "dist_only", "p_pk_rel"}) CHECK(to_string(*parse_locse_mode(name)) == name);
  CHECK_FALSE(parse_locse_mode("bogus"));
  CHECK(parse_normalization("channel") == Normalization::Channel);
}

TEST_CASE("encoding table follows the neighbor table") {
  Rng rng(1);
  const Coords c = uniform(30, rng);
  const NeighborIndex nb = layer_neighbors(c, 5);
  const Matrix enc = relative_position_encoding(c, nb, LocseMode::Full);
  REQUIRE(enc.rows() == 150);
  for (Index i = 0; i < 30; ++i)
    for (Index j = 0; j < 5; ++j)
      CHECK(enc.row(i * 5 + j) == relative_position_encoding(c.row(i), c.row(nb.indices(i, j)), LocseMode::Full));
}

TEST_CASE("layer neighbors pad small layers") {
  Coords c(2, 3);
  c << 0, 0, 0, 1, 0, 0;
  const NeighborIndex nb = layer_neighbors(c, 4);
  CHECK(nb.indices.row(0) == Eigen::RowVector4i(0, 1, 0, 0));
  CHECK(nb.indices.row(1) == Eigen::RowVector4i(1, 0, 1, 1));
}

TEST_CASE("architecture shapes on 1024 points") {
  ModelConfig config;
  config.d_in = 6;
  Rng rng(2);
  const ModelParams params = ModelParams::initialize(config, rng);
  const Coords coords = uniform(1024, rng, 4);
  const Matrix features = random_matrix(1024, 6, rng, 0, 1);
  Tape tape;
  ParamBinder binder(tape, params, false);
  const ForwardResult r = forward(binder, coords, features, Mode::Eval, rng);

  const std::vector<Index> counts{1024, 256, 64, 16, 4};
  const std::vector<Index> widths{8, 32, 128, 256, 512};
  REQUIRE(r.encoder_states.size() == 5);
  for (std::size_t l = 0; l < 5; ++l) {
    CAPTURE(l);
    CHECK(r.encoder_states[l].coords.rows() == counts[l]);
    CHECK(tape.value(r.encoder_states[l].features).rows() == counts[l]);
    CHECK(tape.value(r.encoder_states[l].features).cols() == widths[l]);
  }
  for (std::size_t l = 0; l < 4; ++l) {
    CHECK(tape.value(r.block_outputs[l]).rows() == counts[l]);
    CHECK(tape.value(r.block_outputs[l]).cols() == widths[l + 1]);
    REQUIRE(r.traces[l].attention.size() == 2);
    CHECK(tape.shape(r.traces[l].attention[0]) == Shape{counts[l], 16, widths[l + 1] / 2});
  }
  const std::vector<Index> up{16, 64, 256, 1024};
  const std::vector<Index> dec{256, 128, 32, 8};
  for (std::size_t j = 0; j < 4; ++j) {
    CHECK(tape.value(r.decoder_states[j].features).rows() == up[j]);
    CHECK(tape.value(r.decoder_states[j].features).cols() == dec[j]);
  }
  CHECK(tape.value(r.logits).rows() == 1024);
  CHECK(tape.value(r.logits).cols() == 3);
}

TEST_CASE("encoder point counts round up") {
  ModelConfig config = small_config();
  config.block_widths = {4, 4, 4, 4};
  Rng rng(3);
  const ModelParams params = ModelParams::initialize(config, rng);
  const Coords coords = uniform(10, rng);
  Tape tape;
  ParamBinder binder(tape, params, false);
  const ForwardResult r = forward(binder, coords, random_matrix(10, 3, rng), Mode::Eval, rng);
  const std::vector<Index> counts{10, 3, 1, 1, 1};
  for (std::size_t l = 0; l < counts.size(); ++l) CHECK(r.encoder_states[l].coords.rows() == counts[l]);
  CHECK(tape.value(r.logits).rows() == 10);
}

TEST_CASE("kept points come from the previous layer") {
  ModelConfig config = small_config();
  config.block_widths = {4, 4};
  Rng rng(4);
  const ModelParams params = ModelParams::initialize(config, rng);
  const Coords coords = uniform(100, rng);
  Tape tape;
  ParamBinder binder(tape, params, false);
  const ForwardResult r = forward(binder, coords, random_matrix(100, 3, rng), Mode::Eval, rng);
  for (std::size_t l = 1; l < r.encoder_states.size(); ++l) {
    const auto& prev = r.encoder_states[l - 1];
    const auto& cur = r.encoder_states[l];
    for (Index i = 0; i < cur.coords.rows(); ++i) {
      const auto kept = cur.kept_indices[static_cast<std::size_t>(i)];
      CHECK(cur.coords.row(i) == prev.coords.row(kept));
      const Matrix& block = tape.value(r.block_outputs[l - 1]);
      CHECK(tape.value(cur.features).row(i) == block.row(kept));
    }
  }
}

TEST_CASE("forward is equivariant to input order with farthest sampling") {
  for (auto norm : {Normalization::None, Normalization::Channel}) {
    CAPTURE(to_string(norm));
    ModelConfig config = small_config(3, 6);
    config.block_widths = {4, 8};
    config.sampler = LayerSampler::Farthest;
    config.norm = norm;
    Rng rng(5);
    const ModelParams params = random_params(config, rng);
    const Index n = 150;
    const Coords coords = uniform(n, rng);
    const Matrix features = random_matrix(n, 3, rng);
    std::vector<std::int32_t> perm(static_cast<std::size_t>(n));
    std::iota(perm.begin(), perm.end(), 0);
    for (Index i = n - 1; i > 0; --i)
      std::swap(perm[static_cast<std::size_t>(i)], perm[rng.below(static_cast<std::uint64_t>(i) + 1)]);
    Coords pc(n, 3);
    Matrix pf(n, 3);
    for (Index i = 0; i < n; ++i) {
      pc.row(i) = coords.row(perm[static_cast<std::size_t>(i)]);
      pf.row(i) = features.row(perm[static_cast<std::size_t>(i)]);
    }
    Rng r1(9), r2(10);
    Tape t1, t2;
    ParamBinder b1(t1, params, false), b2(t2, params, false);
    const Matrix la = t1.value(forward(b1, coords, features, Mode::Eval, r1).logits);
    const Matrix lb = t2.value(forward(b2, pc, pf, Mode::Eval, r2).logits);
    for (Index i = 0; i < n; ++i)
      CHECK((lb.row(i) - la.row(perm[static_cast<std::size_t>(i)])).cwiseAbs().maxCoeff() < 1e-9);
  }
}

TEST_CASE("zero score weights give uniform attention") {
  for (int k : {1, 5}) {
    CAPTURE(k);
    ModelConfig config = small_config(3, k);
    Rng rng(6);
    ModelParams params = random_params(config, rng);
    for (int u = 0; u < config.block_depth; ++u) params.at("enc0.unit" + std::to_string(u) + ".score.W").values.setZero();
    PointCloud cloud;
    cloud.coords = uniform(20, rng);
    const auto scores = export_attention(params, cloud, 0, {}, rng);
    REQUIRE(scores.size() == 20);
    for (const auto& s : scores) {
      CHECK(s.scores.rows() == k);
      CHECK((s.scores.array() - 1.0 / k).abs().maxCoeff() < 1e-15);
    }
  }
}

TEST_CASE("attention scores sum to one over neighbors") {
  ModelConfig config = small_config(6, 8);
  config.block_widths = {4, 8};
  Rng rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    const ModelParams params = random_params(config, rng);
    PointCloud cloud;
    const Index n = 10 + static_cast<Index>(rng.below(60));
    cloud.coords = uniform(n, rng, rng.uniform(0.1, 10));
    cloud.colors = Coords(random_matrix(n, 3, rng, 0, 1));
    const int layer = static_cast<int>(rng.below(2));
    for (const auto& s : export_attention(params, cloud, layer, {}, rng)) {
      CHECK((s.scores.colwise().sum().array() - 1).abs().maxCoeff() <= 1e-9);
      CHECK(s.scores.minCoeff() >= 0);
      CHECK(s.point_id < n);
    }
  }
}

TEST_CASE("exported attention maps layer rows to input points") {
  ModelConfig config = small_config();
  config.block_widths = {4, 4};
  Rng rng(8);
  const ModelParams params = ModelParams::initialize(config, rng);
  PointCloud cloud;
  cloud.coords = uniform(40, rng);
  Rng a(1), b(1);
  const auto deep = export_attention(params, cloud, 1, {0, 2}, a);
  REQUIRE(deep.size() == 2);
  CHECK(deep[0].layer == 1);
  CHECK(deep[0].scores.rows() == 4);
  CHECK_THROWS_AS(export_attention(params, cloud, 1, {10}, b), ValidationError);
  CHECK_THROWS_AS(export_attention(params, cloud, 2, {}, b), ValidationError);
  fs::create_directories(fs::temp_directory_path() / "randla_test_network");
  const fs::path csv = fs::temp_directory_path() / "randla_test_network" / "att.csv";
  write_attention_csv(csv, deep);
  std::ifstream in(csv);
  std::string header;
  std::getline(in, header);
  CHECK(header == "point_id,layer,k,channel,score");
  Index rows = 0;
  for (std::string line; std::getline(in, line);) ++rows;
  CHECK(rows == 2 * 4 * 4);
}

TEST_CASE("receptive field grows one hop per unit") {
  const Index n = 21, center = 10;
  const Coords coords = chain(n);
  Rng rng(11);
  const Matrix features = random_matrix(n, 4, rng);
  for (int depth : {1, 2}) {
    CAPTURE(depth);
    ModelConfig config = small_config(4, 3);
    config.block_widths = {8};
    config.block_depth = depth;
    const ModelParams params = random_params(config, rng);
    const Eigen::RowVectorXd base = chain_block_output(params, coords, features, center);
    for (int hop = 1; hop <= depth + 2; ++hop) {
      CAPTURE(hop);
      for (int side : {-1, 1}) {
        Matrix f = features;
        f.row(center + side * hop).array() += 0.5;
        const Real feature_delta = (chain_block_output(params, coords, f, center) - base).cwiseAbs().maxCoeff();
        Coords c = coords;
        c(center + side * hop, 1) += 0.05;
        const Real coord_delta = (chain_block_output(params, c, features, center) - base).cwiseAbs().maxCoeff();
        if (hop <= depth) {
          CHECK(feature_delta > 1e-9);
          CHECK(coord_delta > 1e-9);
        } else {
          CHECK(feature_delta == 0);
          CHECK(coord_delta == 0);
        }
      }
    }
  }
}

TEST_CASE("locse and pooling gradients") {
  Rng rng(12);
  ModelConfig config = small_config(4, 4);
  config.block_widths = {6};
  const ModelParams params = random_params(config, rng);
  const Coords coords = uniform(12, rng);
  const NeighborIndex nb = layer_neighbors(coords, 4);
  const Matrix enc = relative_position_encoding(coords, nb, LocseMode::Full);

  SUBCASE("locse") {
    const Tensor x({12, 3}, random_matrix(12, 3, rng));
    const auto r = check_module(params, {"enc0.unit0.locse.W", "enc0.unit0.locse.b"}, x,
                                [&](ParamBinder& b, Var v) { return locse(b, "enc0.unit0", enc, v, nb, 3); });
    CHECK(r.max_relative_error < 1e-4);
  }
  SUBCASE("attentive pooling") {
    const Tensor x({12, 4, 6}, random_matrix(48, 6, rng));
    const auto r = check_module(params, {"enc0.unit0.score.W", "enc0.unit0.pool.W", "enc0.unit0.pool.b"}, x,
                                [&](ParamBinder& b, Var v) { return attentive_pool(b, "enc0.unit0", v, 3); });
    CHECK(r.max_relative_error < 1e-4);
  }
  SUBCASE("max pooling") {
    ModelConfig max_config = config;
    max_config.pooling = Pooling::Max;
    Rng r2(13);
    const ModelParams max_params = random_params(max_config, r2);
    const Tensor x({12, 4, 6}, random_matrix(48, 6, rng));
    const auto r = check_module(max_params, {"enc0.unit0.pool.W"}, x,
                                [&](ParamBinder& b, Var v) { return attentive_pool(b, "enc0.unit0", v, 3); });
    CHECK(r.max_relative_error < 1e-4);
  }
}

TEST_CASE("residual block gradients") {
  for (auto norm : {Normalization::None, Normalization::Layer, Normalization::Channel}) {
    CAPTURE(to_string(norm));
    Rng rng(14);
    ModelConfig config = small_config(5, 4);
    config.block_widths = {6};
    config.norm = norm;
    const ModelParams params = random_params(config, rng);
    const Coords coords = uniform(16, rng);
    const NeighborIndex nb = layer_neighbors(coords, 4);
    const Tensor x({16, 4}, random_matrix(16, 4, rng));
    std::vector<std::string> names;
    for (const auto& [name, t] : params.tensors)
      if (name.starts_with("enc0.")) names.push_back(name);
    const auto r = check_module(params, names, x, [&](ParamBinder& b, Var v) {
      return dilated_residual_block(b, "enc0", coords, v, nb, 6);
    });
    CHECK(r.max_relative_error < 1e-4);
  }
}

TEST_CASE("full forward and weighted cross-entropy gradients on 64 points") {
  Rng rng(15);
  PointCloud cloud;
  cloud.coords = uniform(64, rng, 2);
  cloud.colors = Coords(random_matrix(64, 3, rng, 0, 1));
  cloud.labels = IndexList(64);
  for (auto& l : *cloud.labels) l = static_cast<std::int32_t>(rng.below(3));
  ModelConfig config;
  config.d_in = 6;
  config.k = 8;
  config.block_widths = {4, 8};
  config.head_widths = {8};
  Vector weights(3);
  weights << 0.5, 1.0, 1.5;
  GradientCheckOptions options;
  options.eps = 1e-6;
  options.max_entries_per_input = 6;
  options.seed = 3;
  const ModelGradientCheck r = model_gradient_check(config, cloud, weights, 21, options);
  CAPTURE(r.worst_tensor);
  CHECK(r.result.max_relative_error < 1e-4);
  CHECK(r.result.entries_checked > 0);
}

TEST_CASE("parameter layout and initialization") {
  ModelConfig config;
  const auto layout = parameter_layout(config);
  Rng rng(16);
  const ModelParams params = ModelParams::initialize(config, rng);
  CHECK(params.tensors.size() == layout.size());
  for (const auto& spec : layout) {
    const Tensor& t = params.at(spec.name);
    CHECK(t.shape == spec.shape);
    if (spec.is_bias) CHECK(t.values.isZero());
    else CHECK(t.values.cwiseAbs().maxCoeff() <= std::sqrt(6.0 / static_cast<Real>(spec.shape[0] + spec.shape[1])));
  }
  CHECK(params.at("dec3.W").shape == Shape{32 + 32, 8});
  CHECK(params.at("enc0.shortcut.W").shape == Shape{8, 32});
  CHECK_THROWS_AS(params.at("missing"), ValidationError);

  ModelConfig bad = config;
  bad.block_widths = {3};
  CHECK_THROWS_AS(parameter_layout(bad), ValidationError);
  bad = config;
  bad.decoder_widths = {8};
  CHECK_THROWS_AS(bad.validate(), ValidationError);
}

TEST_CASE("checkpoints round-trip and reject mismatches") {
  const fs::path dir = fs::temp_directory_path() / "randla_test_network";
  fs::create_directories(dir);
  ModelConfig config = small_config(6, 5);
  config.block_widths = {4, 8};
  config.locse = LocseMode::RelDist;
  config.pooling = Pooling::Attentive;
  config.norm = Normalization::Channel;
  config.sampler = LayerSampler::Farthest;
  Rng rng(17);
  const ModelParams params = random_params(config, rng);
  const fs::path path = dir / "model.bin";
  save_checkpoint(path, params);
  const ModelParams back = load_checkpoint(path);
  CHECK(back.config.k == 5);
  CHECK(back.config.block_widths == config.block_widths);
  CHECK(back.config.locse == LocseMode::RelDist);
  CHECK(back.config.norm == Normalization::Channel);
  CHECK(back.config.sampler == LayerSampler::Farthest);
  REQUIRE(back.tensors.size() == params.tensors.size());
  for (const auto& [name, t] : params.tensors) {
    CHECK(back.at(name).shape == t.shape);
    CHECK(back.at(name).values == t.values);
  }

  auto rewrite = [&](const std::function<void(NamedTensors&)>& edit) {
    std::ifstream in(path, std::ios::binary);
    NamedTensors tensors = read_tensors(in);
    edit(tensors);
    const fs::path out_path = dir / "edited.bin";
    std::ofstream out(out_path, std::ios::binary);
    write_tensors(out, tensors);
    return out_path;
  };
  SUBCASE("wrong shape") {
    const auto p = rewrite([](NamedTensors& ts) {
      for (auto& [name, t] : ts)
        if (name == "head.logits.b") t = Tensor({4}, Matrix::Zero(1, 4));
    });
    CHECK_THROWS_AS(load_checkpoint(p), LoadError);
  }
  SUBCASE("missing tensor") {
    const auto p = rewrite([](NamedTensors& ts) { std::erase_if(ts, [](auto& e) { return e.first == "dec0.W"; }); });
    CHECK_THROWS_AS(load_checkpoint(p), LoadError);
  }
  SUBCASE("enum out of range") {
    const auto p = rewrite([](NamedTensors& ts) {
      for (auto& [name, t] : ts)
        if (name == "hparam.norm") t.values(0, 0) = 7;
    });
    CHECK_THROWS_AS(load_checkpoint(p), LoadError);
  }
  SUBCASE("invalid configuration") {
    const auto p = rewrite([](NamedTensors& ts) {
      for (auto& [name, t] : ts)
        if (name == "hparam.k") t.values(0, 0) = 0;
    });
    CHECK_THROWS_AS(load_checkpoint(p), LoadError);
  }
  CHECK_THROWS_AS(load_checkpoint(dir / "absent.bin"), LoadError);
}

TEST_CASE("predictions are deterministic in eval mode") {
  ModelConfig config = small_config(6, 4);
  Rng rng(18);
  const ModelParams params = random_params(config, rng);
  PointCloud cloud;
  cloud.coords = uniform(50, rng);
  cloud.colors = Coords(random_matrix(50, 3, rng, 0, 1));
  Rng a(3), b(3);
  CHECK(predict_logits(params, cloud, Mode::Eval, a) == predict_logits(params, cloud, Mode::Eval, b));
  PointCloud plain;
  plain.coords = cloud.coords;
  CHECK_THROWS_AS(predict_logits(params, plain, Mode::Eval, a), ValidationError);
}
