#include "randla/sampling.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numeric>
#include <unordered_map>

namespace randla {

std::string_view to_string(SamplerKind kind) {
  switch (kind) {
    case SamplerKind::RS: return "RS";
    case SamplerKind::FPS: return "FPS";
    case SamplerKind::IDIS: return "IDIS";
    case SamplerKind::PDS: return "PDS";
    case SamplerKind::CRS: return "CRS";
  }
  return "?";
}

std::optional<SamplerKind> parse_sampler_kind(std::string_view name) {
  const auto same = [](std::string_view a, std::string_view b) {
    return a.size() == b.size() && std::equal(a.begin(), a.end(), b.begin(), [](char x, char y) {
             return std::toupper(static_cast<unsigned char>(x)) == std::toupper(static_cast<unsigned char>(y));
           });
  };
  for (auto kind : {SamplerKind::RS, SamplerKind::FPS, SamplerKind::IDIS, SamplerKind::PDS, SamplerKind::CRS})
    if (same(name, to_string(kind))) return kind;
  return std::nullopt;
}

IndexList random_sample(Index n, Index m, Rng& rng) {
  require(n >= 0 && m >= 0, "random_sample: sizes must be non-negative");
  require(m <= n, "random_sample: m = " + std::to_string(m) + " exceeds n = " + std::to_string(n));
  IndexList out;
  out.reserve(static_cast<std::size_t>(m));
  std::vector<bool> taken(static_cast<std::size_t>(n), false);
  for (Index j = n - m; j < n; ++j) {
    auto t = static_cast<Index>(rng.below(static_cast<std::uint64_t>(j) + 1));
    if (taken[t]) t = j;
    taken[t] = true;
    out.push_back(static_cast<std::int32_t>(t));
  }
  return out;
}

Vector inverse_density(const SpatialIndex& index, int t) {
  require(t >= 1, "inverse_density: t must be at least 1");
  require(t < index.size(), "inverse_density: t = " + std::to_string(t) + " must be below N = " +
                                std::to_string(index.size()));
  const NeighborIndex neighbors = knn_self(index, t, /*exclude_self=*/true);
  return neighbors.distances.rowwise().sum();
}

IndexList inverse_density_sample(const Coords& coords, Index m, int t, const SpatialIndex& index) {
  const Index n = coords.rows();
  require(index.size() == n, "inverse_density_sample: index was built over a different cloud");
  require(m >= 0 && m <= n, "inverse_density_sample: m out of range");
  const Vector rho = inverse_density(index, t);
  IndexList order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::partial_sort(order.begin(), order.begin() + m, order.end(), [&](std::int32_t a, std::int32_t b) {
    return rho[a] > rho[b] || (rho[a] == rho[b] && a < b);
  });
  order.resize(static_cast<std::size_t>(m));
  return order;
}

namespace {

struct Cell {
  std::int64_t x, y, z;
  bool operator==(const Cell&) const = default;
};

struct CellHash {
  std::size_t operator()(const Cell& c) const {
    std::uint64_t h = static_cast<std::uint64_t>(c.x) * 0x9e3779b97f4a7c15ULL;
    h ^= static_cast<std::uint64_t>(c.y) * 0xc2b2ae3d27d4eb4fULL + (h << 6) + (h >> 2);
    h ^= static_cast<std::uint64_t>(c.z) * 0x165667b19e3779f9ULL + (h << 6) + (h >> 2);
    return static_cast<std::size_t>(h);
  }
};

Real bounding_diagonal(const Coords& coords) {
  return (coords.colwise().maxCoeff() - coords.colwise().minCoeff()).norm();
}

}  // namespace

IndexList poisson_disk_sample(const Coords& coords, Real r, Rng& rng) {
  require(r > 0 && std::isfinite(r), "poisson_disk_sample: radius must be positive");
  const Index n = coords.rows();
  IndexList order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  for (Index i = n - 1; i > 0; --i) {
    const auto j = static_cast<Index>(rng.below(static_cast<std::uint64_t>(i) + 1));
    std::swap(order[i], order[j]);
  }

  // Accepted points bucketed on a grid of cell size r; any conflict lies in
  // one of the 27 cells around the candidate.
  const Real r2 = r * r;
  std::unordered_map<Cell, std::int32_t, CellHash> head;
  std::vector<std::int32_t> next;
  IndexList accepted;
  auto cell_of = [&](Index i) {
    return Cell{static_cast<std::int64_t>(std::floor(coords(i, 0) / r)),
                static_cast<std::int64_t>(std::floor(coords(i, 1) / r)),
                static_cast<std::int64_t>(std::floor(coords(i, 2) / r))};
  };
  for (auto candidate : order) {
    const Cell c = cell_of(candidate);
    bool blocked = false;
    for (std::int64_t dx = -1; dx <= 1 && !blocked; ++dx)
      for (std::int64_t dy = -1; dy <= 1 && !blocked; ++dy)
        for (std::int64_t dz = -1; dz <= 1 && !blocked; ++dz) {
          const auto it = head.find(Cell{c.x + dx, c.y + dy, c.z + dz});
          if (it == head.end()) continue;
          for (std::int32_t a = it->second; a >= 0; a = next[a]) {
            if ((coords.row(accepted[a]) - coords.row(candidate)).squaredNorm() < r2) {
              blocked = true;
              break;
            }
          }
        }
    if (blocked) continue;
    const auto slot = static_cast<std::int32_t>(accepted.size());
    accepted.push_back(candidate);
    auto [it, inserted] = head.try_emplace(c, slot);
    next.push_back(inserted ? -1 : it->second);
    it->second = slot;
  }
  return accepted;
}

PdsFit pds_fit_radius(const Coords& coords, Index target_m, Rng& rng, Real tolerance) {
  const Index n = coords.rows();
  require(target_m >= 1 && target_m <= n, "pds_fit_radius: target must lie in [1, N]");
  require(tolerance >= 0, "pds_fit_radius: tolerance must be non-negative");
  const Real diagonal = bounding_diagonal(coords);
  PdsFit fit;

  if (target_m == n) {
    // Any radius at or below the closest pair keeps everything.
    const SpatialIndex index = build_index(coords);
    Real closest = diagonal;
    if (n > 1) closest = knn_self(index, 1, true).distances.minCoeff();
    fit.radius = closest > 0 ? closest * 0.5 : std::max(diagonal, 1.0) * 1e-12;
    fit.indices = poisson_disk_sample(coords, fit.radius, rng);
    fit.iterations = 1;
    return fit;
  }
  if (target_m == 1) {
    fit.radius = diagonal * 1.0001 + 1e-12;
    fit.indices = poisson_disk_sample(coords, fit.radius, rng);
    fit.iterations = 1;
    return fit;
  }

  const Rng start = rng;
  Real lo = 0;
  Real hi = diagonal * 1.0001 + 1e-12;
  const auto target = static_cast<Real>(target_m);
  Index best_gap = std::numeric_limits<Index>::max();
  for (int iter = 1; iter <= 32; ++iter) {
    const Real mid = 0.5 * (lo + hi);
    Rng trial = start;
    IndexList indices = poisson_disk_sample(coords, mid, trial);
    const auto count = static_cast<Index>(indices.size());
    const Index gap = std::abs(count - target_m);
    if (gap < best_gap) {
      best_gap = gap;
      fit.radius = mid;
      fit.indices = std::move(indices);
      rng = trial;
    }
    fit.iterations = iter;
    if (static_cast<Real>(gap) <= tolerance * target) break;
    if (count > target_m) lo = mid;
    else hi = mid;
  }
  return fit;
}

Vector crs_weights(const Vector& scores, const Vector& gumbel, Real tau) {
  require(tau > 0, "crs: temperature must be positive");
  require(scores.size() == gumbel.size(), "crs: scores and noise differ in length");
  require(scores.size() >= 1, "crs: need at least one point");
  require((scores.array() > 0).all(), "crs: scores must be strictly positive");
  require(gumbel.allFinite(), "crs: gumbel noise must be finite");
  const Vector logits = (scores.array().log() + gumbel.array()) / tau;
  const Vector e = (logits.array() - logits.maxCoeff()).exp();
  return e / e.sum();
}

Vector crs_soft_sample(const Matrix& features, const Vector& scores, const Vector& gumbel, Real tau) {
  require(features.rows() == scores.size(), "crs: feature rows must match scores");
  return features.transpose() * crs_weights(scores, gumbel, tau);
}

Var crs_soft_sample(Tape& tape, Var features, Var scores, const Vector& gumbel, Real tau) {
  const Matrix& p = tape.value(features);
  const Vector s = tape.value(scores).reshaped<Eigen::RowMajor>();
  require(p.rows() == s.size(), "crs: feature rows must match scores");
  const Vector w = crs_weights(s, gumbel, tau);
  Matrix y = (p.transpose() * w).transpose();
  return tape.record("crs_soft_sample", {p.cols()}, std::move(y), {features, scores},
                     [features, scores, w, tau](Tape& t, Var self) {
                       const Eigen::RowVectorXd gy = t.grad(self).row(0);
                       const Matrix& p = t.value(features);
                       if (t.requires_grad(features)) t.grad(features).noalias() += w * gy;
                       if (t.requires_grad(scores)) {
                         const Vector dw = p * gy.transpose();
                         const Vector dz = w.array() * (dw.array() - w.dot(dw));
                         const Vector s = t.value(scores).reshaped<Eigen::RowMajor>();
                         const Vector ds = dz.array() / (tau * s.array());
                         t.grad(scores) += ds.reshaped(t.value(scores).rows(), t.value(scores).cols());
                       }
                     });
}

}  // namespace randla
