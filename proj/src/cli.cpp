#include "randla/cli.hpp"

#include "randla/bench.hpp"
#include "randla/eval.hpp"
#include "randla/network.hpp"
#include "randla/pointcloud.hpp"
#include "randla/sampling.hpp"
#include "randla/synth.hpp"
#include "randla/train.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>

namespace randla {

namespace {

namespace fs = std::filesystem;

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> items;
  std::stringstream stream(text);
  std::string item;
  while (std::getline(stream, item, ','))
    if (!item.empty()) items.push_back(item);
  return items;
}

Index parse_count(const std::string& text, const std::string& what) {
  double value = 0;
  std::size_t used = 0;
  try {
    value = std::stod(text, &used);
  } catch (const std::exception&) {
    throw ValidationError(what + ": '" + text + "' is not a number");
  }
  require(used == text.size(), what + ": '" + text + "' is not a number");
  require(value >= 1 && value == std::floor(value) && value < 1e12, what + ": '" + text + "' is not a positive integer");
  return static_cast<Index>(value);
}

bool is_cloud_file(const fs::path& path) {
  const std::string ext = path.extension().string();
  return ext == ".ply" || ext == ".txt" || ext == ".xyzrgbl";
}

// Files are taken as given; directories contribute their cloud files in name order.
std::vector<fs::path> expand_inputs(const std::vector<std::string>& inputs) {
  std::vector<fs::path> paths;
  for (const auto& input : inputs) {
    const fs::path path(input);
    if (fs::is_directory(path)) {
      std::vector<fs::path> found;
      for (const auto& entry : fs::directory_iterator(path))
        if (entry.is_regular_file() && is_cloud_file(entry.path())) found.push_back(entry.path());
      std::sort(found.begin(), found.end());
      if (found.empty()) throw LoadError("no point-cloud files in " + path.string());
      paths.insert(paths.end(), found.begin(), found.end());
    } else {
      if (!fs::exists(path)) throw LoadError("no such file: " + path.string());
      paths.push_back(path);
    }
  }
  return paths;
}

CloudFormat output_format(const std::string& name, const fs::path& path) {
  if (name.empty()) {
    if (path.extension() == ".ply") return CloudFormat::PlyBinaryLE;
    return CloudFormat::XyzrgblText;
  }
  const auto format = parse_cloud_format(name);
  require(format.has_value(), "unknown format '" + name + "'");
  return *format;
}

PointCloud horizontally_centered(PointCloud cloud) {
  const Eigen::RowVector3d mean = cloud.coords.colwise().mean();
  cloud.coords = centered_coords(cloud.coords, mean);
  return cloud;
}

// ---------------------------------------------------------------------------

struct SynthArgs {
  std::string kind = "planes-spheres-boxes";
  SynthOptions options;
  int n_clouds = 20;
  std::uint64_t seed = 0;
  std::string out;
};

void add_synth(CLI::App& app, SynthArgs& a) {
  app.add_option("--kind", a.kind, "Scene family")->check(CLI::IsMember({"planes-spheres-boxes"}));
  app.add_option("--n-points", a.options.n_points, "Points per scene")->check(CLI::PositiveNumber);
  app.add_option("--n-clouds", a.n_clouds, "Number of scenes")->check(CLI::PositiveNumber);
  app.add_option("--spheres", a.options.spheres, "Spheres per scene")->check(CLI::NonNegativeNumber);
  app.add_option("--boxes", a.options.boxes, "Boxes per scene")->check(CLI::NonNegativeNumber);
  app.add_option("--extent", a.options.extent, "Side of the ground square in meters")->check(CLI::PositiveNumber);
  app.add_option("--noise", a.options.noise, "Gaussian coordinate noise in meters")->check(CLI::NonNegativeNumber);
  app.add_option("--seed", a.seed, "Random seed");
  app.add_option("--out", a.out, "Output directory")->required();
}

int run_synth(const SynthArgs& a, std::ostream& out) {
  const auto paths = synth_dataset(a.kind, a.options, a.n_clouds, a.seed, a.out);
  out << "wrote " << paths.size() << " scenes to " << a.out << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct BenchArgs {
  std::string scales = "1e3,1e4,1e5,1e6";
  std::string kinds = "rs,fps,idis,pds";
  double fraction = 0.1;
  int reps = 5;
  std::uint64_t seed = 0;
  bool no_cascade = false;
  bool no_single = false;
  int idis_t = 16;
  std::string out;
};

void add_bench(CLI::App& app, BenchArgs& a) {
  app.add_option("--scales", a.scales, "Comma-separated point counts (1e5 notation accepted)");
  app.add_option("--kinds", a.kinds, "Comma-separated samplers: rs, fps, idis, pds, crs");
  app.add_option("--fraction", a.fraction, "Fraction drawn in single-shot runs");
  app.add_option("--reps", a.reps, "Repetitions per measurement")->check(CLI::PositiveNumber);
  app.add_option("--seed", a.seed, "Random seed")->required();
  app.add_flag("--no-cascade", a.no_cascade, "Skip the five-step 25% cascade");
  app.add_flag("--no-single", a.no_single, "Skip the single-shot draws");
  app.add_option("--idis-t", a.idis_t, "Neighbors in the IDIS density")->check(CLI::PositiveNumber);
  app.add_option("--out", a.out, "CSV report path")->required();
}

int run_bench(const BenchArgs& a, std::ostream& out) {
  BenchOptions options;
  options.scales.clear();
  for (const auto& s : split_list(a.scales)) options.scales.push_back(parse_count(s, "--scales"));
  require(!options.scales.empty(), "--scales: empty list");
  options.kinds.clear();
  for (const auto& k : split_list(a.kinds)) {
    const auto kind = parse_sampler_kind(k);
    require(kind.has_value(), "--kinds: unknown sampler '" + k + "'");
    options.kinds.push_back(*kind);
  }
  require(!options.kinds.empty(), "--kinds: empty list");
  require(a.fraction > 0 && a.fraction <= 1, "--fraction must lie in (0, 1]");
  require(!(a.no_cascade && a.no_single), "--no-cascade and --no-single leave nothing to run");
  options.fraction = a.fraction;
  options.repetitions = a.reps;
  options.seed = a.seed;
  options.single_shot = !a.no_single;
  options.cascade = !a.no_cascade;
  options.idis_t = a.idis_t;

  const BenchReport report = benchmark_samplers(options);
  std::ofstream file(a.out);
  if (!file) throw LoadError("cannot write " + a.out);
  report.write_csv(file);
  if (!file) throw LoadError("failed writing " + a.out);

  std::map<std::pair<std::string, Index>, bool> seen;
  char line[128];
  for (const auto& row : report.rows) {
    if (!seen.emplace(std::pair{row.kind, row.n}, true).second) continue;
    std::snprintf(line, sizeof line, "%-14s n=%-9lld median %.6f s\n", row.kind.c_str(), static_cast<long long>(row.n),
                  report.median_seconds(row.kind, row.n));
    out << line;
  }
  for (const auto& failure : report.failures)
    out << "failed: " << failure.kind << " n=" << failure.n << ": " << failure.message << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct PreprocessArgs {
  std::string in;
  std::string out;
  double voxel_size = 0;
  std::string format;
  std::optional<int> n_class;
};

void add_preprocess(CLI::App& app, PreprocessArgs& a) {
  app.add_option("--in", a.in, "Input cloud (.ply or xyzrgbl text)")->required();
  app.add_option("--out", a.out, "Output cloud")->required();
  app.add_option("--voxel-size", a.voxel_size, "Grid cell side in meters")->required()->check(CLI::PositiveNumber);
  app.add_option("--format", a.format, "Output format: ply-ascii, ply-binary-le, xyzrgbl-text");
  app.add_option("--n-class", a.n_class, "Validate labels against this class count")->check(CLI::PositiveNumber);
}

int run_preprocess(const PreprocessArgs& a, std::ostream& out) {
  const CloudFormat format = output_format(a.format, a.out);
  const PointCloud cloud = load_cloud(a.in, a.n_class);
  const auto [sub, map] = grid_subsample(cloud, a.voxel_size);
  save_cloud(a.out, sub, format);
  out << cloud.size() << " points -> " << sub.size() << " points\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct TrainArgs {
  std::vector<std::string> data;
  std::string config;
  std::map<std::string, std::string> overrides;
  std::string out;
  std::string log;
};

void add_train(CLI::App& app, TrainArgs& a) {
  app.add_option("--data", a.data, "Training clouds or directories of clouds")->required();
  app.add_option("--config", a.config, "key = value config file");
  app.add_option("--out", a.out, "Checkpoint path")->required();
  app.add_option("--log", a.log, "Per-epoch metrics CSV");
  for (const auto& key : train_config_keys()) {
    auto* option = app.add_option_function<std::string>(
        "--" + key, [&a, key](const std::string& value) { a.overrides[key] = value; }, "TrainConfig " + key);
    if (key == "seed") option->required();
  }
}

int run_train(const TrainArgs& a, std::ostream& out) {
  TrainConfig config = a.config.empty() ? TrainConfig{} : load_train_config(a.config);
  for (const auto& [key, value] : a.overrides) set_train_config_value(config, key, value);
  config.validate();

  std::vector<PointCloud> dataset;
  for (const auto& path : expand_inputs(a.data)) {
    dataset.push_back(load_cloud(path, config.n_class));
    require(dataset.back().has_labels(), "training cloud " + path.string() + " has no labels");
    require(dataset.back().feature_dim() == dataset.front().feature_dim(),
            "training clouds disagree on colors: " + path.string());
  }
  out << "training on " << dataset.size() << " clouds\n" << format_train_config(config);
  out.flush();

  char line[128];
  const TrainResult result = train_loop(dataset, config, [&](const EpochMetrics& m) {
    std::snprintf(line, sizeof line, "epoch %d lr %.6g loss %.6f oa %.4f\n", m.epoch, m.lr, m.loss, m.oa);
    out << line;
    out.flush();
  });
  save_checkpoint(a.out, result.params);
  if (!a.log.empty()) write_metrics_csv(a.log, result.log);
  out << "saved " << a.out << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct InferArgs {
  std::string model;
  std::string in;
  std::string out;
  std::string probabilities;
  Index crop_size = 4096;
  int min_votes = 1;
  std::uint64_t seed = 0;
};

void add_infer(CLI::App& app, InferArgs& a) {
  app.add_option("--model", a.model, "Checkpoint")->required();
  app.add_option("--in", a.in, "Cloud to label")->required();
  app.add_option("--out", a.out, "Label file, one class per line")->required();
  app.add_option("--probabilities", a.probabilities, "Optional CSV of accumulated class probabilities");
  app.add_option("--crop-size", a.crop_size, "Points per inference crop")->check(CLI::PositiveNumber);
  app.add_option("--min-votes", a.min_votes, "Passes every point must receive")->check(CLI::PositiveNumber);
  app.add_option("--seed", a.seed, "Random seed for the in-network sampling");
}

int run_infer(const InferArgs& a, std::ostream& out) {
  const ModelParams params = load_checkpoint(a.model);
  const PointCloud cloud = load_cloud(a.in);
  require(cloud.feature_dim() == params.config.d_in,
          "cloud has " + std::to_string(cloud.feature_dim()) + " input features, model expects " +
              std::to_string(params.config.d_in));
  Rng rng(a.seed);
  const VoteResult votes = vote_infer(params, cloud, {a.crop_size, a.min_votes}, rng);
  save_labels(a.out, votes.labels);
  if (!a.probabilities.empty()) {
    std::ofstream file(a.probabilities);
    if (!file) throw LoadError("cannot write " + a.probabilities);
    file.precision(9);
    for (Index i = 0; i < votes.probabilities.rows(); ++i) {
      const Real visits = votes.visits[static_cast<std::size_t>(i)];
      for (Index c = 0; c < votes.probabilities.cols(); ++c)
        file << (c ? "," : "") << votes.probabilities(i, c) / visits;
      file << "\n";
    }
    if (!file) throw LoadError("failed writing " + a.probabilities);
  }
  out << "labeled " << cloud.size() << " points in " << votes.passes << " passes\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct EvalArgs {
  std::string pred;
  std::string gt;
  std::string gt_cloud;
  int classes = 0;
  std::string json;
};

void add_eval(CLI::App& app, EvalArgs& a) {
  app.add_option("--pred", a.pred, "Predicted label file")->required();
  auto* gt = app.add_option("--gt", a.gt, "Ground-truth label file");
  auto* gt_cloud = app.add_option("--gt-cloud", a.gt_cloud, "Labeled cloud holding the ground truth");
  gt->excludes(gt_cloud);
  app.add_option("--n-class", a.classes, "Number of classes")->required()->check(CLI::PositiveNumber);
  app.add_option("--json", a.json, "Also write metrics as JSON");
}

int run_eval(const EvalArgs& a, std::ostream& out) {
  require(!a.gt.empty() || !a.gt_cloud.empty(), "one of --gt or --gt-cloud is required");
  const IndexList pred = load_labels(a.pred, a.classes);
  IndexList gt;
  if (!a.gt.empty()) {
    gt = load_labels(a.gt, a.classes);
  } else {
    PointCloud cloud = load_cloud(a.gt_cloud, a.classes);
    require(cloud.has_labels(), "ground-truth cloud " + a.gt_cloud + " has no labels");
    gt = std::move(*cloud.labels);
  }
  require(pred.size() == gt.size(), "prediction has " + std::to_string(pred.size()) + " labels, ground truth " +
                                        std::to_string(gt.size()));
  const ConfusionMatrix cm = confusion_matrix(pred, gt, a.classes);
  const Metrics m = metrics(cm);
  out << format_metrics_table(m);
  if (!a.json.empty()) {
    std::ofstream file(a.json);
    if (!file) throw LoadError("cannot write " + a.json);
    file << metrics_json(m, cm);
    if (!file) throw LoadError("failed writing " + a.json);
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct GradcheckArgs {
  Index n_points = 64;
  std::uint64_t seed = 0;
  double eps = 1e-6;
  Index entries = 6;
  double tolerance = 1e-4;
  int k = 16;
  int block_depth = 2;
  std::string locse = "full";
  std::string pooling = "attentive";
  std::string norm = "none";
};

void add_gradcheck(CLI::App& app, GradcheckArgs& a) {
  app.add_option("--n-points", a.n_points, "Points in the synthetic cloud")->check(CLI::PositiveNumber);
  app.add_option("--seed", a.seed, "Random seed");
  app.add_option("--eps", a.eps, "Central-difference step")->check(CLI::PositiveNumber);
  app.add_option("--entries", a.entries, "Entries probed per tensor (0 = all)")->check(CLI::NonNegativeNumber);
  app.add_option("--tolerance", a.tolerance, "Largest accepted relative error")->check(CLI::PositiveNumber);
  app.add_option("--k", a.k, "Neighbors")->check(CLI::PositiveNumber);
  app.add_option("--block_depth", a.block_depth, "Units per residual block")->check(CLI::PositiveNumber);
  app.add_option("--locse", a.locse, "Relative-position encoding");
  app.add_option("--pooling", a.pooling, "attentive, max, mean or sum");
  app.add_option("--norm", a.norm, "none, layer or channel");
}

int run_gradcheck(const GradcheckArgs& a, std::ostream& out) {
  ModelConfig model;
  model.k = a.k;
  model.block_depth = a.block_depth;
  const auto locse = parse_locse_mode(a.locse);
  const auto pooling = parse_pooling(a.pooling);
  const auto norm = parse_normalization(a.norm);
  require(locse.has_value(), "unknown --locse '" + a.locse + "'");
  require(pooling.has_value(), "unknown --pooling '" + a.pooling + "'");
  require(norm.has_value(), "unknown --norm '" + a.norm + "'");
  model.locse = *locse;
  model.pooling = *pooling;
  model.norm = *norm;
  model.validate();

  SynthOptions synth;
  synth.n_points = a.n_points;
  Rng rng(a.seed);
  const PointCloud cloud = synth_scene(synth, rng);
  Vector weights(model.num_classes);
  for (Index c = 0; c < weights.size(); ++c) weights[c] = rng.uniform(0.5, 1.5);

  GradientCheckOptions options;
  options.eps = a.eps;
  options.max_entries_per_input = a.entries;
  options.seed = a.seed;
  const ModelGradientCheck check = model_gradient_check(model, cloud, weights, a.seed, options);
  char line[192];
  std::snprintf(line, sizeof line, "max relative error %.3e over %lld entries (worst: %s)\n",
                check.result.max_relative_error, static_cast<long long>(check.result.entries_checked),
                check.worst_tensor.c_str());
  out << line;
  if (!(check.result.max_relative_error < a.tolerance)) {
    out << "gradient check FAILED\n";
    return kExitFailure;
  }
  out << "gradient check passed\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct AttentionArgs {
  std::string model;
  std::string in;
  std::string out;
  int layer = 0;
  std::string points;
  std::uint64_t seed = 0;
};

void add_attention(CLI::App& app, AttentionArgs& a) {
  app.add_option("--model", a.model, "Checkpoint")->required();
  app.add_option("--in", a.in, "Input cloud")->required();
  app.add_option("--out", a.out, "CSV point_id,layer,k,channel,score")->required();
  app.add_option("--layer", a.layer, "Encoder layer, 0-based")->check(CLI::NonNegativeNumber);
  app.add_option("--points", a.points, "Comma-separated row indices within the layer (default: all)");
  app.add_option("--seed", a.seed, "Random seed for the in-network sampling");
}

int run_attention(const AttentionArgs& a, std::ostream& out) {
  const ModelParams params = load_checkpoint(a.model);
  const PointCloud cloud = horizontally_centered(load_cloud(a.in));
  require(cloud.feature_dim() == params.config.d_in, "cloud features do not match the model");
  IndexList probe;
  for (const auto& p : split_list(a.points)) {
    const auto [end, ec] = std::from_chars(p.data(), p.data() + p.size(), probe.emplace_back());
    require(ec == std::errc() && end == p.data() + p.size() && probe.back() >= 0,
            "--points: '" + p + "' is not a row index");
  }
  Rng rng(a.seed);
  const auto scores = export_attention(params, cloud, a.layer, probe, rng);
  write_attention_csv(a.out, scores);
  out << "wrote attention of " << scores.size() << " points\n";
  return kExitOk;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Point-cloud sampling and semantic segmentation toolkit", "randla"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "randla 0.1.0");

  SynthArgs synth;
  BenchArgs bench;
  PreprocessArgs preprocess;
  TrainArgs train;
  InferArgs infer;
  EvalArgs eval;
  GradcheckArgs gradcheck;
  AttentionArgs attention;
  auto* synth_cmd = app.add_subcommand("synth", "Generate labeled synthetic scenes");
  auto* bench_cmd = app.add_subcommand("bench-sampling", "Time the point samplers");
  auto* preprocess_cmd = app.add_subcommand("preprocess", "Grid-subsample a cloud");
  auto* train_cmd = app.add_subcommand("train", "Train a segmentation model");
  auto* infer_cmd = app.add_subcommand("infer", "Label a cloud by voting over crops");
  auto* eval_cmd = app.add_subcommand("eval", "Score predicted labels");
  auto* gradcheck_cmd = app.add_subcommand("gradcheck", "Check model gradients against finite differences");
  auto* attention_cmd = app.add_subcommand("export-attention", "Write attention scores of one encoder layer");
  add_synth(*synth_cmd, synth);
  add_bench(*bench_cmd, bench);
  add_preprocess(*preprocess_cmd, preprocess);
  add_train(*train_cmd, train);
  add_infer(*infer_cmd, infer);
  add_eval(*eval_cmd, eval);
  add_gradcheck(*gradcheck_cmd, gradcheck);
  add_attention(*attention_cmd, attention);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitInvalid;
  }

  try {
    if (*synth_cmd) return run_synth(synth, out);
    if (*bench_cmd) return run_bench(bench, out);
    if (*preprocess_cmd) return run_preprocess(preprocess, out);
    if (*train_cmd) return run_train(train, out);
    if (*infer_cmd) return run_infer(infer, out);
    if (*eval_cmd) return run_eval(eval, out);
    if (*gradcheck_cmd) return run_gradcheck(gradcheck, out);
    if (*attention_cmd) return run_attention(attention, out);
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << "\n";
    return kExitInvalid;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitInvalid;
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  std::vector<const char*> argv{"randla"};
  for (const auto& arg : args) argv.push_back(arg.c_str());
  return run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
}

}  // namespace randla
