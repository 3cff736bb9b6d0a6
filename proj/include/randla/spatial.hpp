#pragma once

#include "randla/core.hpp"
#include "randla/rng.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <vector>

namespace randla {

/// Q x K neighbor table. Rows are sorted by ascending distance, ties by
/// ascending source index. `distances` holds Euclidean distances.
struct NeighborIndex {
  IndexMatrix indices;
  Matrix distances;

  Index rows() const { return indices.rows(); }
  Index k() const { return indices.cols(); }
};

template <typename Scalar>
struct Neighbor {
  Scalar dist2;
  std::int32_t index;

  friend bool operator<(const Neighbor& a, const Neighbor& b) {
    return a.dist2 < b.dist2 || (a.dist2 == b.dist2 && a.index < b.index);
  }
};

/// Balanced KD-tree over 3D points answering exact KNN and radius queries.
/// Immutable after construction; concurrent queries are safe.
template <typename Scalar = Real>
class KdTree {
 public:
  struct Options {
    int leaf_size = 16;
  };

  template <typename Derived>
  explicit KdTree(const Eigen::MatrixBase<Derived>& points, Options options = {})
      : leaf_size_(std::max(1, options.leaf_size)) {
    require(points.cols() == 3, "KdTree: points must have 3 columns");
    require(points.rows() >= 1, "KdTree: cannot build an index over zero points");
    require(points.rows() <= std::numeric_limits<std::int32_t>::max(), "KdTree: too many points");
    require(points.allFinite(), "KdTree: coordinates must be finite");
    const Index n = points.rows();
    order_.resize(static_cast<std::size_t>(n));
    std::iota(order_.begin(), order_.end(), 0);
    Points3<Scalar> source = points.template cast<Scalar>();
    nodes_.reserve(static_cast<std::size_t>(2 * n / leaf_size_ + 2));
    build(source, 0, static_cast<std::int32_t>(n));
    points_.resize(n, 3);
    inverse_.resize(order_.size());
    for (Index slot = 0; slot < n; ++slot) {
      points_.row(slot) = source.row(order_[slot]);
      inverse_[order_[slot]] = static_cast<std::int32_t>(slot);
    }
  }

  Index size() const { return points_.rows(); }
  int leaf_size() const { return leaf_size_; }

  /// Coordinates of source point `index` (original numbering).
  Eigen::Matrix<Scalar, 1, 3> point(std::int32_t index) const {
    return points_.row(slot_of(index));
  }

  /// The k nearest source points to `q`, sorted; k is clamped to size().
  void knn(const Scalar* q, int k, std::vector<Neighbor<Scalar>>& out) const {
    out.clear();
    if (k <= 0) return;
    const auto limit = static_cast<std::size_t>(std::min<Index>(k, size()));
    out.reserve(limit);
    std::array<Scalar, 3> offsets{0, 0, 0};
    knn_node(0, q, limit, out, offsets, Scalar(0));
    std::sort_heap(out.begin(), out.end());
  }

  /// Every source point with squared distance <= radius^2, sorted.
  void radius(const Scalar* q, Scalar radius, std::vector<Neighbor<Scalar>>& out) const {
    out.clear();
    radius_node(0, q, radius * radius, out);
    std::sort(out.begin(), out.end());
  }

 private:
  struct Node {
    std::int32_t begin;
    std::int32_t end;
    std::int32_t left = -1;
    std::int32_t right = -1;
    int dim = 0;
    Scalar split = 0;
  };

  static Scalar dist2(const Scalar* q, const Scalar* p) {
    const Scalar dx = q[0] - p[0];
    const Scalar dy = q[1] - p[1];
    const Scalar dz = q[2] - p[2];
    return dx * dx + dy * dy + dz * dz;
  }

  Index slot_of(std::int32_t index) const { return inverse_[index]; }

  std::int32_t build(const Points3<Scalar>& source, std::int32_t begin, std::int32_t end) {
    const auto id = static_cast<std::int32_t>(nodes_.size());
    nodes_.push_back(Node{begin, end});
    if (end - begin <= leaf_size_) return id;

    Eigen::Matrix<Scalar, 1, 3> lo = source.row(order_[begin]);
    Eigen::Matrix<Scalar, 1, 3> hi = lo;
    for (std::int32_t i = begin + 1; i < end; ++i) {
      lo = lo.cwiseMin(source.row(order_[i]));
      hi = hi.cwiseMax(source.row(order_[i]));
    }
    int dim = 0;
    (hi - lo).maxCoeff(&dim);
    const std::int32_t mid = begin + (end - begin) / 2;
    std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                     [&](std::int32_t a, std::int32_t b) { return source(a, dim) < source(b, dim); });
    const Scalar split = source(order_[mid], dim);
    const std::int32_t left = build(source, begin, mid);
    const std::int32_t right = build(source, mid, end);
    Node& node = nodes_[id];
    node.left = left;
    node.right = right;
    node.dim = dim;
    node.split = split;
    return id;
  }

  void knn_node(std::int32_t id, const Scalar* q, std::size_t limit, std::vector<Neighbor<Scalar>>& heap,
                std::array<Scalar, 3>& offsets, Scalar min_dist2) const {
    const Node& node = nodes_[id];
    if (node.left < 0) {
      for (std::int32_t slot = node.begin; slot < node.end; ++slot) {
        const Neighbor<Scalar> candidate{dist2(q, points_.row(slot).data()), order_[slot]};
        if (heap.size() < limit) {
          heap.push_back(candidate);
          std::push_heap(heap.begin(), heap.end());
        } else if (candidate < heap.front()) {
          std::pop_heap(heap.begin(), heap.end());
          heap.back() = candidate;
          std::push_heap(heap.begin(), heap.end());
        }
      }
      return;
    }
    const Scalar diff = q[node.dim] - node.split;
    const std::int32_t near = diff < 0 ? node.left : node.right;
    const std::int32_t far = diff < 0 ? node.right : node.left;
    knn_node(near, q, limit, heap, offsets, min_dist2);

    const Scalar saved = offsets[node.dim];
    const Scalar cut = diff * diff;
    const Scalar far_min = min_dist2 - saved + cut;
    // Equal distances must still be visited: a farther subtree may hold a
    // smaller index at the same distance.
    if (heap.size() < limit || far_min <= heap.front().dist2) {
      offsets[node.dim] = cut;
      knn_node(far, q, limit, heap, offsets, far_min);
      offsets[node.dim] = saved;
    }
  }

  void radius_node(std::int32_t id, const Scalar* q, Scalar r2, std::vector<Neighbor<Scalar>>& out) const {
    const Node& node = nodes_[id];
    if (node.left < 0) {
      for (std::int32_t slot = node.begin; slot < node.end; ++slot) {
        const Scalar d2 = dist2(q, points_.row(slot).data());
        if (d2 <= r2) out.push_back({d2, order_[slot]});
      }
      return;
    }
    const Scalar diff = q[node.dim] - node.split;
    const std::int32_t near = diff < 0 ? node.left : node.right;
    const std::int32_t far = diff < 0 ? node.right : node.left;
    radius_node(near, q, r2, out);
    if (diff * diff <= r2) radius_node(far, q, r2, out);
  }

  int leaf_size_;
  std::vector<Node> nodes_;
  std::vector<std::int32_t> order_;
  std::vector<std::int32_t> inverse_;
  Points3<Scalar> points_;
};

using SpatialIndex = KdTree<Real>;

template <typename Derived>
SpatialIndex build_index(const Eigen::MatrixBase<Derived>& coords, int leaf_size = 16) {
  return SpatialIndex(coords, SpatialIndex::Options{leaf_size});
}

/// Exact K nearest neighbors for every query row. Requires 1 <= K <= N.
template <typename Derived>
NeighborIndex knn(const SpatialIndex& index, const Eigen::MatrixBase<Derived>& queries, int k) {
  require(queries.cols() == 3, "knn: queries must have 3 columns");
  require(k >= 1, "knn: K must be at least 1");
  require(k <= index.size(), "knn: K = " + std::to_string(k) + " exceeds the number of indexed points (" +
                                 std::to_string(index.size()) + ")");
  NeighborIndex result;
  result.indices.resize(queries.rows(), k);
  result.distances.resize(queries.rows(), k);
  std::vector<Neighbor<Real>> row;
  for (Index i = 0; i < queries.rows(); ++i) {
    const Eigen::Matrix<Real, 1, 3> q = queries.row(i).template cast<Real>();
    index.knn(q.data(), k, row);
    for (int j = 0; j < k; ++j) {
      result.indices(i, j) = row[j].index;
      result.distances(i, j) = std::sqrt(row[j].dist2);
    }
  }
  return result;
}

/// K nearest neighbors of every indexed point, queried against the index
/// itself. With `exclude_self`, row i never contains i and K < N is required.
inline NeighborIndex knn_self(const SpatialIndex& index, int k, bool exclude_self = false) {
  require(k >= 1, "knn: K must be at least 1");
  const Index n = index.size();
  const Index available = exclude_self ? n - 1 : n;
  require(k <= available, "knn: K = " + std::to_string(k) + " exceeds the number of candidate points (" +
                              std::to_string(available) + ")");
  NeighborIndex result;
  result.indices.resize(n, k);
  result.distances.resize(n, k);
  std::vector<Neighbor<Real>> row;
  const int fetch = exclude_self ? k + 1 : k;
  for (Index i = 0; i < n; ++i) {
    const Eigen::Matrix<Real, 1, 3> q = index.point(static_cast<std::int32_t>(i));
    index.knn(q.data(), fetch, row);
    int j = 0;
    for (const auto& nb : row) {
      if (exclude_self && nb.index == i) continue;
      if (j == k) break;
      result.indices(i, j) = nb.index;
      result.distances(i, j) = std::sqrt(nb.dist2);
      ++j;
    }
  }
  return result;
}

/// Fixed-radius neighbors resampled to exactly K per row: uniform
/// downsampling without replacement when more than K fall inside the radius,
/// padding with the nearest in-radius point when fewer.
template <typename Derived>
NeighborIndex radius_neighbors(const SpatialIndex& index, const Eigen::MatrixBase<Derived>& queries, Real radius,
                               int k, Rng& rng) {
  require(queries.cols() == 3, "radius_neighbors: queries must have 3 columns");
  require(radius > 0, "radius_neighbors: radius must be positive");
  require(k >= 1, "radius_neighbors: K must be at least 1");
  NeighborIndex result;
  result.indices.resize(queries.rows(), k);
  result.distances.resize(queries.rows(), k);
  std::vector<Neighbor<Real>> found;
  for (Index i = 0; i < queries.rows(); ++i) {
    const Eigen::Matrix<Real, 1, 3> q = queries.row(i).template cast<Real>();
    index.radius(q.data(), radius, found);
    if (found.empty())
      throw ValidationError("radius_neighbors: no point within radius of query " + std::to_string(i));
    if (static_cast<int>(found.size()) > k) {
      // Partial Fisher-Yates: the first k slots become a uniform k-subset.
      for (int j = 0; j < k; ++j) {
        const auto pick = j + static_cast<std::size_t>(rng.below(found.size() - j));
        std::swap(found[j], found[pick]);
      }
      found.resize(k);
      std::sort(found.begin(), found.end());
    }
    for (int j = 0; j < k; ++j) {
      const auto& n = j < static_cast<int>(found.size()) ? found[j] : found.front();
      result.indices(i, j) = n.index;
      result.distances(i, j) = std::sqrt(n.dist2);
    }
  }
  return result;
}

/// Index of the nearest source point for every query (K = 1, same tie-break).
template <typename Derived>
IndexList nearest(const SpatialIndex& index, const Eigen::MatrixBase<Derived>& queries) {
  require(queries.cols() == 3, "nearest: queries must have 3 columns");
  IndexList result(static_cast<std::size_t>(queries.rows()));
  std::vector<Neighbor<Real>> row;
  for (Index i = 0; i < queries.rows(); ++i) {
    const Eigen::Matrix<Real, 1, 3> q = queries.row(i).template cast<Real>();
    index.knn(q.data(), 1, row);
    result[i] = row.front().index;
  }
  return result;
}

}  // namespace randla
