#pragma once

#include "randla/core.hpp"
#include "randla/network.hpp"
#include "randla/pointcloud.hpp"
#include "randla/rng.hpp"

#include <span>
#include <string>
#include <vector>

namespace randla {

/// Rows are ground truth, columns predictions.
struct ConfusionMatrix {
  Eigen::Matrix<std::int64_t, Eigen::Dynamic, Eigen::Dynamic> counts;

  int classes() const { return static_cast<int>(counts.rows()); }
  std::int64_t total() const { return counts.sum(); }
};

ConfusionMatrix confusion_matrix(std::span<const std::int32_t> pred, std::span<const std::int32_t> gt, int classes);

struct Metrics {
  Real oa = 0;
  Real macc = 0;
  Real miou = 0;
  Vector iou;                 // per class; 0 where undefined
  std::vector<bool> present;  // class occurs in ground truth or prediction
};

/// IoU_c = tp / (row + col - tp). Classes with an empty row and column are
/// left out of mIoU; mAcc averages recall over classes present in ground truth.
Metrics metrics(const ConfusionMatrix& cm);

struct VoteOptions {
  Index crop_size = 4096;
  int min_votes = 1;
};

struct VoteResult {
  IndexList labels;
  Matrix probabilities;  // accumulated softmax sums, N x C
  std::vector<int> visits;
  int passes = 0;
};

/// Crops around the least-visited point until every point has min_votes,
/// summing softmax probabilities; argmax with ties to the smaller class.
VoteResult vote_infer(const ModelParams& params, const PointCloud& cloud, const VoteOptions& options, Rng& rng);

/// Row-wise argmax, ties to the smaller index.
IndexList argmax_rows(const Matrix& scores);

/// Per-class IoU lines then OA / mAcc / mIoU, percentages with two decimals.
std::string format_metrics_table(const Metrics& m);
std::string metrics_json(const Metrics& m, const ConfusionMatrix& cm);

}  // namespace randla
