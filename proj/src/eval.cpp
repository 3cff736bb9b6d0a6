#include "randla/eval.hpp"

#include "randla/train.hpp"

#include <json.hpp>

#include <algorithm>
#include <cstdio>
#include <limits>

namespace randla {

ConfusionMatrix confusion_matrix(std::span<const std::int32_t> pred, std::span<const std::int32_t> gt, int classes) {
  require(classes >= 1, "confusion_matrix: need at least one class");
  require(pred.size() == gt.size(), "confusion_matrix: prediction and ground truth differ in length");
  ConfusionMatrix cm;
  cm.counts.setZero(classes, classes);
  for (std::size_t i = 0; i < pred.size(); ++i) {
    require(gt[i] >= 0 && gt[i] < classes, "confusion_matrix: ground-truth label out of range at " + std::to_string(i));
    require(pred[i] >= 0 && pred[i] < classes, "confusion_matrix: predicted label out of range at " + std::to_string(i));
    ++cm.counts(gt[i], pred[i]);
  }
  return cm;
}

Metrics metrics(const ConfusionMatrix& cm) {
  const int c = cm.classes();
  Metrics m;
  m.iou = Vector::Zero(c);
  m.present.assign(static_cast<std::size_t>(c), false);
  const std::int64_t total = cm.total();
  std::int64_t diagonal = 0;
  Real iou_sum = 0, recall_sum = 0;
  int iou_classes = 0, recall_classes = 0;
  for (int k = 0; k < c; ++k) {
    const std::int64_t tp = cm.counts(k, k);
    const std::int64_t row = cm.counts.row(k).sum();
    const std::int64_t col = cm.counts.col(k).sum();
    diagonal += tp;
    if (row == 0 && col == 0) continue;
    m.present[static_cast<std::size_t>(k)] = true;
    m.iou[k] = static_cast<Real>(tp) / static_cast<Real>(row + col - tp);
    iou_sum += m.iou[k];
    ++iou_classes;
    if (row > 0) {
      recall_sum += static_cast<Real>(tp) / static_cast<Real>(row);
      ++recall_classes;
    }
  }
  m.oa = total > 0 ? static_cast<Real>(diagonal) / static_cast<Real>(total) : 0.0;
  m.miou = iou_classes > 0 ? iou_sum / iou_classes : 0.0;
  m.macc = recall_classes > 0 ? recall_sum / recall_classes : 0.0;
  return m;
}

IndexList argmax_rows(const Matrix& scores) {
  IndexList out(static_cast<std::size_t>(scores.rows()));
  for (Index i = 0; i < scores.rows(); ++i) {
    Index best = 0;
    for (Index j = 1; j < scores.cols(); ++j)
      if (scores(i, j) > scores(i, best)) best = j;
    out[static_cast<std::size_t>(i)] = static_cast<std::int32_t>(best);
  }
  return out;
}

VoteResult vote_infer(const ModelParams& params, const PointCloud& cloud, const VoteOptions& options, Rng& rng) {
  require(options.crop_size >= 1, "vote_infer: crop size must be positive");
  require(options.min_votes >= 1, "vote_infer: min_votes must be positive");
  require(cloud.size() >= 1, "vote_infer: empty cloud");
  const Index n = cloud.size();
  const Index crop = std::min(options.crop_size, n);
  VoteResult result;
  result.probabilities = Matrix::Zero(n, params.config.num_classes);
  result.visits.assign(static_cast<std::size_t>(n), 0);
  const SpatialIndex index = build_index(cloud.coords);
  for (;;) {
    const auto least = std::min_element(result.visits.begin(), result.visits.end());
    if (*least >= options.min_votes) break;
    const auto center = static_cast<std::int32_t>(least - result.visits.begin());
    IndexList ids;
    if (crop == n) {
      ids.resize(static_cast<std::size_t>(n));
      for (Index i = 0; i < n; ++i) ids[static_cast<std::size_t>(i)] = static_cast<std::int32_t>(i);
    } else {
      ids = crop_subcloud(cloud, center, crop, index);
    }
    const PointCloud part = cloud.subset(ids);
    const Coords coords = centered_coords(part.coords, cloud.coords.row(center));
    Rng pass_rng = rng.split();
    Tape tape;
    ParamBinder binder(tape, params, /*trainable=*/false);
    const Matrix& logits = tape.value(forward(binder, coords, network_features(part, coords), Mode::Eval, pass_rng).logits);
    for (Index i = 0; i < logits.rows(); ++i) {
      const Eigen::RowVectorXd e = (logits.row(i).array() - logits.row(i).maxCoeff()).exp();
      const auto id = ids[static_cast<std::size_t>(i)];
      result.probabilities.row(id) += e / e.sum();
      ++result.visits[static_cast<std::size_t>(id)];
    }
    ++result.passes;
  }
  result.labels = argmax_rows(result.probabilities);
  return result;
}

std::string format_metrics_table(const Metrics& m) {
  std::string out = "class  IoU\n";
  char line[96];
  for (Index c = 0; c < m.iou.size(); ++c) {
    if (m.present[static_cast<std::size_t>(c)])
      std::snprintf(line, sizeof line, "%5lld  %.2f\n", static_cast<long long>(c), 100 * m.iou[c]);
    else
      std::snprintf(line, sizeof line, "%5lld  -\n", static_cast<long long>(c));
    out += line;
  }
  std::snprintf(line, sizeof line, "OA    %.2f\nmAcc  %.2f\nmIoU  %.2f\n", 100 * m.oa, 100 * m.macc, 100 * m.miou);
  return out + line;
}

std::string metrics_json(const Metrics& m, const ConfusionMatrix& cm) {
  nlohmann::json j;
  j["oa"] = m.oa;
  j["macc"] = m.macc;
  j["miou"] = m.miou;
  j["iou"] = nlohmann::json::array();
  for (Index c = 0; c < m.iou.size(); ++c) {
    if (m.present[static_cast<std::size_t>(c)]) j["iou"].push_back(m.iou[c]);
    else j["iou"].push_back(nullptr);
  }
  j["confusion"] = nlohmann::json::array();
  for (Index r = 0; r < cm.counts.rows(); ++r) {
    nlohmann::json row = nlohmann::json::array();
    for (Index c = 0; c < cm.counts.cols(); ++c) row.push_back(cm.counts(r, c));
    j["confusion"].push_back(row);
  }
  return j.dump(2) + "\n";
}

}  // namespace randla
