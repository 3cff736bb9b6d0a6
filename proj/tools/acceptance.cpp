// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fails.

#include "randla/bench.hpp"
#include "randla/eval.hpp"
#include "randla/network.hpp"
#include "randla/sampling.hpp"
#include "randla/spatial.hpp"
#include "randla/synth.hpp"
#include "randla/train.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <vector>

using namespace randla;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double since(Clock::time_point start) { return std::chrono::duration<double>(Clock::now() - start).count(); }

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* format, auto... args) {
  char buffer[512];
  std::snprintf(buffer, sizeof buffer, format, args...);
  return buffer;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return v[v.size() / 2];
}

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

ModelParams random_params(const ModelConfig& config, Rng& rng) {
  ModelParams p = ModelParams::initialize(config, rng);
  for (auto& [name, t] : p.tensors)
    if (name.ends_with(".b")) t.values = random_matrix(1, t.values.cols(), rng, -0.3, 0.3);
  return p;
}

// ---------------------------------------------------------------------------
// 1-3: sampling cost

Outcome sampling_ordering(const fs::path& dir) {
  Rng rng(101);
  const Index n = 1000000, m = n / 10;
  const Coords pts = uniform_cube(n, rng);
  std::vector<double> rs;
  for (int r = 0; r < 5; ++r) rs.push_back(time_sampler(SamplerKind::RS, pts, m, rng, 16, 0.1));
  const double t_rs = median(rs);
  const double t_pds = time_sampler(SamplerKind::PDS, pts, m, rng, 16, 0.1);
  const double t_idis = time_sampler(SamplerKind::IDIS, pts, m, rng, 16, 0.1);
  const double t_fps = time_sampler(SamplerKind::FPS, pts, m, rng, 16, 0.1);
  std::ofstream csv(dir / "sampling_1e6.csv");
  csv << "kind,seconds\nRS," << t_rs << "\nPDS," << t_pds << "\nIDIS," << t_idis << "\nFPS," << t_fps << '\n';
  const bool pass = t_rs < t_pds && t_rs < t_idis && t_rs < t_fps && t_rs <= t_fps / 100;
  return {pass, fmt("N=1e6 m=1e5: RS %.3gs PDS %.3gs IDIS %.3gs FPS %.3gs", t_rs, t_pds, t_idis, t_fps)};
}

Outcome rs_scale_independence() {
  Rng rng(102);
  const Index m = 10000;
  std::vector<double> small, large;
  const Coords p5 = uniform_cube(100000, rng);
  const Coords p6 = uniform_cube(1000000, rng);
  for (int r = 0; r < 31; ++r) {
    small.push_back(time_sampler(SamplerKind::RS, p5, m, rng, 16, 0.1));
    large.push_back(time_sampler(SamplerKind::RS, p6, m, rng, 16, 0.1));
  }
  const double a = median(small), b = median(large);
  return {b <= 3 * a, fmt("m=1e4: N=1e5 %.3gs, N=1e6 %.3gs, ratio %.2f", a, b, b / a)};
}

// Five soft-sampling steps; each output point mixes the inputs with fresh Gumbel noise.
double crs_cascade_seconds(const Coords& start, Rng& rng) {
  const auto t0 = Clock::now();
  Matrix pts = start;
  for (int step = 0; step < 5; ++step) {
    const Index keep = std::max<Index>(1, pts.rows() / 4);
    const Vector scores = Vector::Constant(pts.rows(), 1.0 / static_cast<Real>(pts.rows()));
    Matrix next(keep, 3);
    Vector gumbel(pts.rows());
    for (Index j = 0; j < keep; ++j) {
      for (Index i = 0; i < pts.rows(); ++i) gumbel[i] = rng.gumbel();
      next.row(j) = crs_soft_sample(pts, scores, gumbel, 0.5).transpose();
    }
    pts = std::move(next);
  }
  return since(t0);
}

Outcome small_scale_parity() {
  Rng rng(103);
  const Coords pts = uniform_cube(1000, rng);
  std::string detail = "N=1e3 cascade:";
  bool pass = true;
  for (auto kind : {SamplerKind::RS, SamplerKind::FPS, SamplerKind::IDIS, SamplerKind::PDS}) {
    const auto [seconds, left] = time_cascade(kind, pts, 5, 0.25, rng, 16, 0.1);
    pass = pass && seconds < 1;
    detail += fmt(" %s %.3gs", std::string(to_string(kind)).c_str(), seconds);
  }
  const double crs = crs_cascade_seconds(pts, rng);
  pass = pass && crs < 1;
  detail += fmt(" CRS %.3gs", crs);
  return {pass, detail};
}

// ---------------------------------------------------------------------------
// 4: gradients

GradientCheckOptions fine() {
  GradientCheckOptions o;
  o.eps = 1e-6;
  return o;
}

Outcome gradient_correctness() {
  Rng rng(104);
  std::string detail;
  bool pass = true;
  auto record = [&](const char* name, Real error, Real limit) {
    pass = pass && error < limit;
    detail += fmt("%s%s %.1e", detail.empty() ? "" : ", ", name, error);
  };

  const Tensor x({6, 4}, random_matrix(6, 4, rng));
  const Tensor w({4, 5}, random_matrix(4, 5, rng));
  const Tensor b({5}, random_matrix(1, 5, rng));
  record("affine", gradient_check([](Tape& t, std::span<const Var> v) { return sum_all(t, square(t, affine(t, v[0], v[1], v[2]))); },
                                  {x, w, b}).max_relative_error,
         1e-6);

  Matrix away = random_matrix(6, 4, rng, 1e-3, 1);
  for (Index i = 0; i < away.size(); i += 2) away.data()[i] = -away.data()[i];
  record("leaky_relu",
         gradient_check([](Tape& t, std::span<const Var> v) { return sum_all(t, square(t, leaky_relu(t, v[0], 0.2))); },
                        {Tensor({6, 4}, away)})
             .max_relative_error,
         1e-6);

  const Matrix probe = random_matrix(15, 3, rng);
  record("softmax",
         gradient_check(
             [&](Tape& t, std::span<const Var> v) {
               return sum_all(t, elementwise_mul(t, softmax_over_axis(t, v[0]), t.constant(probe, {5, 3, 3})));
             },
             {Tensor({5, 3, 3}, random_matrix(15, 3, rng, -2, 2))})
             .max_relative_error,
         1e-6);

  IndexMatrix idx(4, 3);
  idx << 0, 1, 1, 2, 3, 0, 5, 5, 5, 4, 2, 1;
  record("gather",
         gradient_check([&](Tape& t, std::span<const Var> v) { return sum_all(t, square(t, gather_rows(t, v[0], idx))); },
                        {Tensor({6, 4}, random_matrix(6, 4, rng))})
             .max_relative_error,
         1e-6);

  // Network modules on a small cloud.
  ModelConfig config;
  config.d_in = 4;
  config.k = 4;
  config.input_width = 4;
  config.block_widths = {6};
  config.head_widths = {4};
  const ModelParams params = random_params(config, rng);
  const Coords coords = uniform(16, rng);
  const NeighborIndex nb = layer_neighbors(coords, 4);
  const Matrix enc = relative_position_encoding(coords, nb, LocseMode::Full);
  auto module_check = [&](const std::vector<std::string>& names, const Tensor& input,
                          const std::function<Var(ParamBinder&, Var)>& module) {
    std::vector<Tensor> inputs{input};
    for (const auto& n : names) inputs.push_back(params.at(n));
    const auto f = [&](Tape& t, std::span<const Var> v) {
      ParamBinder binder(t, params);
      for (std::size_t i = 0; i < names.size(); ++i) binder.bind(names[i], v[i + 1]);
      return sum_all(t, square(t, module(binder, v[0])));
    };
    return gradient_check(f, inputs, fine()).max_relative_error;
  };
  record("locse",
         module_check({"enc0.unit0.locse.W", "enc0.unit0.locse.b"}, Tensor({16, 3}, random_matrix(16, 3, rng)),
                      [&](ParamBinder& p, Var v) { return locse(p, "enc0.unit0", enc, v, nb, 3); }),
         1e-4);
  record("attentive_pool",
         module_check({"enc0.unit0.score.W", "enc0.unit0.pool.W", "enc0.unit0.pool.b"},
                      Tensor({16, 4, 6}, random_matrix(64, 6, rng)),
                      [&](ParamBinder& p, Var v) { return attentive_pool(p, "enc0.unit0", v, 3); }),
         1e-4);
  std::vector<std::string> block_names;
  for (const auto& [name, t] : params.tensors)
    if (name.starts_with("enc0.")) block_names.push_back(name);
  record("dilated_residual_block",
         module_check(block_names, Tensor({16, 4}, random_matrix(16, 4, rng)),
                      [&](ParamBinder& p, Var v) { return dilated_residual_block(p, "enc0", coords, v, nb, 6); }),
         1e-4);

  PointCloud cloud;
  cloud.coords = uniform(64, rng, 2);
  cloud.colors = Coords(random_matrix(64, 3, rng, 0, 1));
  cloud.labels = IndexList(64);
  for (auto& l : *cloud.labels) l = static_cast<std::int32_t>(rng.below(3));
  ModelConfig full;
  full.d_in = 6;
  full.k = 8;
  full.block_widths = {4, 8};
  full.head_widths = {8};
  Vector weights(3);
  weights << 0.7, 1.0, 1.3;
  GradientCheckOptions sampled = fine();
  sampled.max_entries_per_input = 6;
  sampled.seed = 5;
  record("forward+weighted CE (N=64)", model_gradient_check(full, cloud, weights, 11, sampled).result.max_relative_error,
         1e-4);
  return {pass, detail};
}

// ---------------------------------------------------------------------------
// 5-6: attention

Outcome attention_normalization() {
  Rng rng(105);
  Real worst = 0;
  Index slices = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    ModelConfig config;
    config.d_in = 6;
    config.k = 1 + static_cast<int>(rng.below(16));
    config.input_width = 4;
    config.block_widths = {4, 8};
    config.head_widths = {4};
    config.block_depth = 1 + static_cast<int>(rng.below(2));
    const ModelParams params = random_params(config, rng);
    PointCloud cloud;
    const Index n = 8 + static_cast<Index>(rng.below(57));
    cloud.coords = uniform(n, rng, rng.uniform(0.01, 100));
    cloud.colors = Coords(random_matrix(n, 3, rng, 0, 1));
    const int layer = static_cast<int>(rng.below(2));
    for (const auto& s : export_attention(params, cloud, layer, {}, rng)) {
      worst = std::max(worst, (s.scores.colwise().sum().array() - 1).abs().maxCoeff());
      slices += s.scores.cols();
    }
  }
  return {worst <= 1e-9, fmt("1000 inputs, %lld slices, max |sum - 1| = %.2e", static_cast<long long>(slices), worst)};
}

Outcome receptive_field() {
  const Index n = 21, center = 10;
  Coords chain = Coords::Zero(n, 3);
  for (Index i = 0; i < n; ++i) chain(i, 0) = static_cast<Real>(i);
  Rng rng(106);
  ModelConfig config;
  config.d_in = 4;
  config.k = 3;  // each point sees itself and its two chain neighbors
  config.input_width = 4;
  config.block_widths = {8};
  config.block_depth = 2;
  const ModelParams params = random_params(config, rng);
  const Matrix features = random_matrix(n, 4, rng);
  auto center_output = [&](const Matrix& f) {
    Tape tape;
    ParamBinder binder(tape, params, false);
    LayerState state;
    state.coords = chain;
    state.features = tape.constant(f, {n, 4});
    state.neighbors = layer_neighbors(chain, config.k);
    Var block;
    Rng sampling(1);
    encoder_layer(binder, 0, state, sampling, nullptr, &block);
    return Eigen::RowVectorXd(tape.value(block).row(center));
  };
  const Eigen::RowVectorXd base = center_output(features);
  auto delta = [&](Index hop) {
    Matrix f = features;
    f.row(center + hop).array() += 0.5;
    return (center_output(f) - base).cwiseAbs().maxCoeff();
  };
  const Real two = delta(2), three = delta(3);
  return {two > 1e-9 && three == 0, fmt("2-hop |d| = %.3e, 3-hop |d| = %.3e", two, three)};
}

// ---------------------------------------------------------------------------
// 7-8: oracles

Outcome oracle_equivalence() {
  Rng rng(107);
  Index mismatches = 0;
  int cases = 0;

  for (int trial = 0; trial < 40; ++trial, ++cases) {
    const Index n = 1 + static_cast<Index>(rng.below(1000));
    Coords pts = uniform(n, rng);
    if (trial % 2) pts = (pts * 4).array().floor();  // exact ties
    const int k = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(std::min<Index>(32, n))));
    const NeighborIndex found = knn(build_index(pts), pts, k);
    for (Index q = 0; q < n; ++q) {
      std::vector<std::pair<Real, std::int32_t>> all;
      for (Index i = 0; i < n; ++i) all.emplace_back((pts.row(i) - pts.row(q)).squaredNorm(), static_cast<std::int32_t>(i));
      std::partial_sort(all.begin(), all.begin() + k, all.end());
      for (int j = 0; j < k; ++j) mismatches += found.indices(q, j) != all[static_cast<std::size_t>(j)].second;
    }
  }

  for (int trial = 0; trial < 40; ++trial, ++cases) {
    const Index n = 2 + static_cast<Index>(rng.below(255));
    Coords pts = uniform(n, rng);
    if (trial % 3 == 0) pts = (pts * 3).array().round();
    const Index m = 1 + static_cast<Index>(rng.below(static_cast<std::uint64_t>(n)));
    const Index start = static_cast<Index>(rng.below(static_cast<std::uint64_t>(n)));
    IndexList chosen{static_cast<std::int32_t>(start)};
    while (static_cast<Index>(chosen.size()) < m) {
      Real best = -1;
      std::int32_t pick = -1;
      for (Index i = 0; i < n; ++i) {
        if (std::find(chosen.begin(), chosen.end(), i) != chosen.end()) continue;
        Real d = std::numeric_limits<Real>::infinity();
        for (auto c : chosen) d = std::min(d, (pts.row(i) - pts.row(c)).squaredNorm());
        if (d > best) best = d, pick = static_cast<std::int32_t>(i);
      }
      chosen.push_back(pick);
    }
    mismatches += farthest_point_sample(pts, m, start) != chosen;
  }

  for (int trial = 0; trial < 40; ++trial, ++cases) {
    const Index n = 20 + static_cast<Index>(rng.below(237));
    const Coords pts = uniform(n, rng);
    const int t = 1 + static_cast<int>(rng.below(16));
    const Index m = 1 + static_cast<Index>(rng.below(static_cast<std::uint64_t>(n)));
    std::vector<Real> rho(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) {
      std::vector<Real> d;
      for (Index j = 0; j < n; ++j)
        if (j != i) d.push_back((pts.row(i) - pts.row(j)).squaredNorm());
      std::sort(d.begin(), d.end());
      for (int k = 0; k < t; ++k) rho[static_cast<std::size_t>(i)] += std::sqrt(d[static_cast<std::size_t>(k)]);
    }
    IndexList order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return rho[a] > rho[b]; });
    order.resize(static_cast<std::size_t>(m));
    mismatches += inverse_density_sample(pts, m, t, build_index(pts)) != order;
  }

  for (int trial = 0; trial < 200; ++trial, ++cases) {
    const int classes = 1 + static_cast<int>(rng.below(10));
    const std::size_t n = 1 + rng.below(500);
    std::vector<std::int32_t> gt(n), pred(n);
    for (std::size_t i = 0; i < n; ++i) {
      gt[i] = static_cast<std::int32_t>(rng.below(static_cast<std::uint64_t>(classes)));
      pred[i] = rng.uniform() < 0.5 ? gt[i] : static_cast<std::int32_t>(rng.below(static_cast<std::uint64_t>(classes)));
    }
    Index correct = 0;
    for (std::size_t i = 0; i < n; ++i) correct += pred[i] == gt[i];
    Real iou_sum = 0;
    int present = 0;
    for (int c = 0; c < classes; ++c) {
      Index inter = 0, uni = 0;
      for (std::size_t i = 0; i < n; ++i) {
        inter += pred[i] == c && gt[i] == c;
        uni += pred[i] == c || gt[i] == c;
      }
      if (uni > 0) iou_sum += static_cast<Real>(inter) / static_cast<Real>(uni), ++present;
    }
    const Metrics m = metrics(confusion_matrix(pred, gt, classes));
    mismatches += m.oa != static_cast<Real>(correct) / static_cast<Real>(n);
    mismatches += m.miou != iou_sum / present;
  }
  return {mismatches == 0, fmt("%d cases (KNN, FPS, IDIS, metrics), %lld mismatches", cases, static_cast<long long>(mismatches))};
}

Outcome pds_property() {
  Rng rng(108);
  Real worst = std::numeric_limits<Real>::infinity();
  for (int run = 0; run < 100; ++run) {
    Rng seeded(1000 + static_cast<std::uint64_t>(run));
    const Coords pts = uniform(1 + static_cast<Index>(seeded.below(2000)), seeded);
    const Real r = seeded.uniform(0.01, 0.4);
    const IndexList ids = poisson_disk_sample(pts, r, seeded);
    for (std::size_t i = 0; i < ids.size(); ++i)
      for (std::size_t j = i + 1; j < ids.size(); ++j)
        worst = std::min(worst, (pts.row(ids[i]) - pts.row(ids[j])).norm() - r);
  }
  return {worst >= -1e-9, fmt("100 runs, min(distance - r) = %.3e", worst)};
}

// ---------------------------------------------------------------------------
// 9-11: learning and shapes

struct ToyData {
  std::vector<PointCloud> train, test;
};

ToyData toy_data(const fs::path& dir) {
  SynthOptions options;  // 4096 points, planes, spheres and boxes
  const auto paths = synth_dataset("planes-spheres-boxes", options, 20, 12345, dir / "toy");
  ToyData data;
  for (std::size_t i = 0; i < paths.size(); ++i)
    (i < 15 ? data.train : data.test).push_back(load_cloud(paths[i], CloudFormat::XyzrgblText, 3));
  return data;
}

Metrics held_out(const ModelParams& params, const TrainConfig& config, const ToyData& data) {
  IndexList pred, gt;
  for (const auto& cloud : data.test) {
    Rng rng(config.seed + 77);
    VoteOptions vote;
    vote.crop_size = config.points_per_crop;
    const VoteResult v = vote_infer(params, cloud, vote, rng);
    pred.insert(pred.end(), v.labels.begin(), v.labels.end());
    gt.insert(gt.end(), cloud.labels->begin(), cloud.labels->end());
  }
  return metrics(confusion_matrix(pred, gt, 3));
}

TrainConfig toy_config(std::uint64_t seed) {
  TrainConfig config;
  config.epochs = 50;
  config.seed = seed;
  return config;
}

struct ToyRun {
  Metrics metrics;
  double seconds = 0;
};

ToyRun toy_run(const ToyData& data, const TrainConfig& config) {
  const auto t0 = Clock::now();
  const TrainResult trained = train_loop(data.train, config);
  ToyRun run{held_out(trained.params, config, data), 0};
  run.seconds = since(t0);
  std::printf("  %-10s %-9s seed %llu: held-out mIoU %.4f OA %.4f (%.0fs)\n", std::string(to_string(config.locse)).c_str(),
              std::string(to_string(config.pooling)).c_str(), static_cast<unsigned long long>(config.seed),
              run.metrics.miou, run.metrics.oa, run.seconds);
  std::fflush(stdout);
  return run;
}

constexpr std::uint64_t kToySeeds[] = {1, 2, 3};

Outcome toy_segmentation(const ToyData& data, std::vector<ToyRun>& full) {
  int good = 0;
  double total = 0;
  std::string detail;
  full.clear();
  for (std::uint64_t seed : kToySeeds) {
    const ToyRun run = toy_run(data, toy_config(seed));
    full.push_back(run);
    good += run.metrics.miou >= 0.90 && run.metrics.oa >= 0.95;
    total += run.seconds;
    detail += fmt("%sseed %llu mIoU %.3f OA %.3f", detail.empty() ? "" : ", ", static_cast<unsigned long long>(seed),
                  run.metrics.miou, run.metrics.oa);
  }
  detail += fmt("; %d/3 seeds meet the bar, %.0fs", good, total);
  return {good >= 2 && total < 900, detail};
}

// Variants are compared by mIoU averaged over the toy seeds.
Outcome ablation_direction(const ToyData& data, const std::vector<ToyRun>& full) {
  Real f = 0, r = 0, d = 0, mx = 0;
  for (std::size_t i = 0; i < full.size(); ++i) {
    const std::uint64_t seed = kToySeeds[i];
    TrainConfig rel = toy_config(seed);
    rel.locse = LocseMode::RelOnly;
    TrainConfig dist = toy_config(seed);
    dist.locse = LocseMode::DistOnly;
    TrainConfig max_pool = toy_config(seed);
    max_pool.pooling = Pooling::Max;
    f += full[i].metrics.miou;
    r += toy_run(data, rel).metrics.miou;
    d += toy_run(data, dist).metrics.miou;
    mx += toy_run(data, max_pool).metrics.miou;
  }
  const Real n = static_cast<Real>(full.size());
  f /= n, r /= n, d /= n, mx /= n;
  return {f >= r && r >= d && f >= mx,
          fmt("mean mIoU over %zu seeds: full %.3f, rel_only %.3f, dist_only %.3f; attentive %.3f, max %.3f",
              full.size(), f, r, d, f, mx)};
}

Outcome architecture_shape() {
  ModelConfig config;
  Rng rng(111);
  const ModelParams params = ModelParams::initialize(config, rng);
  const Coords coords = uniform(1024, rng, 4);
  Tape tape;
  ParamBinder binder(tape, params, false);
  const ForwardResult r = forward(binder, coords, random_matrix(1024, 6, rng, 0, 1), Mode::Eval, rng);
  const std::vector<Index> counts{1024, 256, 64, 16, 4};
  const std::vector<Index> widths{8, 32, 128, 256, 512};
  bool pass = r.encoder_states.size() == counts.size();
  std::string points = "points", channels = "widths";
  for (std::size_t l = 0; pass && l < counts.size(); ++l) {
    const Matrix& f = tape.value(r.encoder_states[l].features);
    pass = pass && r.encoder_states[l].coords.rows() == counts[l] && f.rows() == counts[l] && f.cols() == widths[l];
    points += fmt(" %lld", static_cast<long long>(f.rows()));
    channels += fmt(" %lld", static_cast<long long>(f.cols()));
  }
  pass = pass && tape.value(r.logits).rows() == 1024 && tape.value(r.logits).cols() == 3;
  return {pass, points + ", " + channels};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance suite"};
  std::string work_dir = "acceptance";
  std::vector<int> only;
  app.add_option("--work-dir", work_dir, "Directory for generated data and reports");
  app.add_option("--only", only, "Run only these criteria (1-11)")->check(CLI::Range(1, 11));
  CLI11_PARSE(app, argc, argv);

  const fs::path dir(work_dir);
  fs::create_directories(dir);
  auto wanted = [&](int id) { return only.empty() || std::find(only.begin(), only.end(), id) != only.end(); };

  std::optional<ToyData> data;
  std::vector<ToyRun> full_runs;
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"sampling ordering", [&] { return sampling_ordering(dir); }},
      {"RS scale independence", rs_scale_independence},
      {"small-scale parity", small_scale_parity},
      {"gradient correctness", gradient_correctness},
      {"attention normalization", attention_normalization},
      {"receptive field", receptive_field},
      {"oracle equivalence", oracle_equivalence},
      {"PDS minimum distance", pds_property},
      {"toy segmentation",
       [&] {
         if (!data) data = toy_data(dir);
         return toy_segmentation(*data, full_runs);
       }},
      {"ablation direction",
       [&] {
         if (!data) data = toy_data(dir);
         if (full_runs.empty())
           for (std::uint64_t seed : kToySeeds) full_runs.push_back(toy_run(*data, toy_config(seed)));
         return ablation_direction(*data, full_runs);
       }},
      {"architecture shape", architecture_shape},
  };

  int failed = 0;
  std::ofstream report(dir / "report.txt");
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!wanted(id)) continue;
    const auto t0 = Clock::now();
    Outcome outcome;
    try {
      outcome = criteria[i].second();
    } catch (const std::exception& e) {
      outcome = {false, std::string("error: ") + e.what()};
    }
    const std::string line = fmt("%s %2d %s: %s [%.1fs]", outcome.pass ? "PASS" : "FAIL", id, criteria[i].first,
                                 outcome.detail.c_str(), since(t0));
    std::printf("%s\n", line.c_str());
    std::fflush(stdout);
    report << line << '\n';
    failed += !outcome.pass;
  }
  return failed == 0 ? 0 : 1;
}
