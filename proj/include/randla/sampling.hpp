#pragma once

#include "randla/core.hpp"
#include "randla/numeric.hpp"
#include "randla/rng.hpp"
#include "randla/spatial.hpp"

#include <optional>
#include <string_view>

namespace randla {

enum class SamplerKind { RS, FPS, IDIS, PDS, CRS };

std::string_view to_string(SamplerKind kind);
/// Case-insensitive.
std::optional<SamplerKind> parse_sampler_kind(std::string_view name);

/// Per-kind parameters. Only the field matching the kind is consulted.
struct SamplerParams {
  Index fps_start = 0;
  int idis_t = 16;
  Real pds_radius = 0;
  Real crs_tau = 1;
};

/// m distinct indices drawn uniformly from [0, n) (Floyd's algorithm).
/// Work is proportional to m plus an n-bit membership mask.
IndexList random_sample(Index n, Index m, Rng& rng);

/// Greedy max-min sequence starting at `start`. Distances to the selected set
/// are maintained incrementally (O(mN)); ties go to the smallest index.
template <typename Derived>
IndexList farthest_point_sample(const Eigen::MatrixBase<Derived>& coords, Index m, Index start = 0);

/// Density rho_i = sum of distances to the t nearest other points; returns the
/// m points with the largest rho (sparsest first), ties by ascending index.
IndexList inverse_density_sample(const Coords& coords, Index m, int t, const SpatialIndex& index);

/// Per-point density rho used by inverse_density_sample.
Vector inverse_density(const SpatialIndex& index, int t);

/// Dart throwing over a seeded random permutation: a point is accepted when
/// no previously accepted point lies closer than r.
IndexList poisson_disk_sample(const Coords& coords, Real r, Rng& rng);

struct PdsFit {
  Real radius = 0;
  IndexList indices;
  int iterations = 0;
};

/// Bisection on the Poisson radius until the accepted count is within
/// `tolerance * target_m` of the target, or 32 iterations.
PdsFit pds_fit_radius(const Coords& coords, Index target_m, Rng& rng, Real tolerance = 0.1);

/// Gumbel-softmax weights softmax((log s + g) / tau).
Vector crs_weights(const Vector& scores, const Vector& gumbel, Real tau);

/// Soft sample y = sum_i w_i P_i with the weights above.
Vector crs_soft_sample(const Matrix& features, const Vector& scores, const Vector& gumbel, Real tau);

/// Differentiable form: `features` is [N, d+3], `scores` is [N] (or [1, N]);
/// returns a [d+3] vector. Gradients flow to both.
Var crs_soft_sample(Tape& tape, Var features, Var scores, const Vector& gumbel, Real tau);

// ---------------------------------------------------------------------------

template <typename Derived>
IndexList farthest_point_sample(const Eigen::MatrixBase<Derived>& coords, Index m, Index start) {
  const Index n = coords.rows();
  require(coords.cols() == 3, "farthest_point_sample: coords must have 3 columns");
  require(m >= 1, "farthest_point_sample: m must be at least 1");
  require(m <= n, "farthest_point_sample: m exceeds the number of points");
  require(start >= 0 && start < n, "farthest_point_sample: start index out of range");

  std::vector<double> xs(n), ys(n), zs(n);
  for (Index i = 0; i < n; ++i) {
    xs[i] = static_cast<double>(coords(i, 0));
    ys[i] = static_cast<double>(coords(i, 1));
    zs[i] = static_cast<double>(coords(i, 2));
  }
  std::vector<double> min_d2(n, std::numeric_limits<double>::infinity());
  IndexList selected;
  selected.reserve(static_cast<std::size_t>(m));
  auto last = static_cast<std::int32_t>(start);
  selected.push_back(last);
  min_d2[last] = -1;  // selected points never win again
  for (Index step = 1; step < m; ++step) {
    const double px = xs[last], py = ys[last], pz = zs[last];
    double best = -1;
    std::int32_t best_index = 0;
    for (Index i = 0; i < n; ++i) {
      const double dx = xs[i] - px;
      const double dy = ys[i] - py;
      const double dz = zs[i] - pz;
      const double d2 = std::min(min_d2[i], dx * dx + dy * dy + dz * dz);
      min_d2[i] = d2;
      if (d2 > best) {
        best = d2;
        best_index = static_cast<std::int32_t>(i);
      }
    }
    last = best_index;
    min_d2[last] = -1;
    selected.push_back(last);
  }
  return selected;
}

}  // namespace randla
