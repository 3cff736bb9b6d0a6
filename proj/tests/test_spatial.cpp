#include "randla/spatial.hpp"
#include "randla/rng.hpp"

#include <doctest.h>

#include <algorithm>
#include <set>

using namespace randla;

namespace {

Coords uniform(Index n, Rng& rng) {
  Coords c(n, 3);
  for (Index i = 0; i < n; ++i)
    for (int d = 0; d < 3; ++d) c(i, d) = rng.uniform();
  return c;
}

// Integer lattice coordinates produce many exact distance ties.
Coords lattice(Index n, Rng& rng) {
  Coords c(n, 3);
  for (Index i = 0; i < n; ++i)
    for (int d = 0; d < 3; ++d) c(i, d) = static_cast<Real>(rng.below(4));
  return c;
}

// O(NQ) scan sorted by (squared distance, index).
std::vector<std::pair<Real, std::int32_t>> brute(const Coords& pts, const Eigen::RowVector3d& q) {
  std::vector<std::pair<Real, std::int32_t>> all;
  for (Index i = 0; i < pts.rows(); ++i)
    all.emplace_back((pts.row(i) - q).squaredNorm(), static_cast<std::int32_t>(i));
  std::sort(all.begin(), all.end());
  return all;
}

}  // namespace

TEST_CASE("knn matches brute force including tie order") {
  Rng rng(1);
  for (int trial = 0; trial < 30; ++trial) {
    const Index n = 1 + static_cast<Index>(rng.below(1000));
    const Coords pts = trial % 2 ? lattice(n, rng) : uniform(n, rng);
    const int k = 1 + static_cast<int>(rng.below(std::min<Index>(32, n)));
    const SpatialIndex index = build_index(pts, 1 + static_cast<int>(rng.below(20)));
    const Coords queries = trial % 3 ? pts : uniform(50, rng);
    const NeighborIndex found = knn(index, queries, k);
    for (Index q = 0; q < queries.rows(); ++q) {
      const auto expected = brute(pts, queries.row(q));
      for (int j = 0; j < k; ++j) {
        REQUIRE(found.indices(q, j) == expected[static_cast<std::size_t>(j)].second);
        REQUIRE(found.distances(q, j) == doctest::Approx(std::sqrt(expected[static_cast<std::size_t>(j)].first)));
      }
    }
  }
}

TEST_CASE("knn examples") {
  Coords line(4, 3);
  line << 0, 0, 0, 1, 0, 0, 2, 0, 0, 5, 0, 0;
  const SpatialIndex index = build_index(line);
  const NeighborIndex n = knn(index, line.topRows(1), 2);
  CHECK(n.indices(0, 0) == 0);
  CHECK(n.indices(0, 1) == 1);

  const Coords same = Coords::Ones(5, 3);
  const NeighborIndex s = knn(build_index(same), same, 3);
  for (Index r = 0; r < 5; ++r) CHECK(s.indices.row(r) == Eigen::RowVector3i(0, 1, 2));

  CHECK_THROWS_AS(knn(index, line, 5), ValidationError);
  CHECK_THROWS_AS(knn(index, line, 0), ValidationError);
  CHECK_THROWS_AS(build_index(Coords(0, 3)), ValidationError);

  const Coords one = Coords::Zero(1, 3);
  const SpatialIndex single = build_index(one);
  Coords far(1, 3);
  far << 9, 9, 9;
  CHECK(knn(single, far, 1).indices(0, 0) == 0);
}

TEST_CASE("every point is its own nearest neighbor") {
  Rng rng(2);
  const Coords pts = uniform(500, rng);
  const NeighborIndex n = knn_self(build_index(pts), 1);
  for (Index i = 0; i < pts.rows(); ++i) CHECK(n.indices(i, 0) == i);
}

TEST_CASE("knn_self can exclude the query point") {
  Rng rng(3);
  const Coords pts = uniform(200, rng);
  const SpatialIndex index = build_index(pts);
  const NeighborIndex n = knn_self(index, 8, true);
  for (Index i = 0; i < pts.rows(); ++i) {
    const auto expected = brute(pts, pts.row(i));
    std::vector<std::int32_t> others;
    for (const auto& e : expected)
      if (e.second != i) others.push_back(e.second);
    for (int j = 0; j < 8; ++j) CHECK(n.indices(i, j) == others[static_cast<std::size_t>(j)]);
  }
  CHECK_THROWS_AS(knn_self(index, 200, true), ValidationError);
}

TEST_CASE("neighbor rows are sorted and duplicate free") {
  Rng rng(4);
  const Coords pts = uniform(300, rng);
  const NeighborIndex n = knn_self(build_index(pts), 16);
  for (Index r = 0; r < n.rows(); ++r) {
    std::set<std::int32_t> unique;
    for (Index j = 0; j < n.k(); ++j) {
      unique.insert(n.indices(r, j));
      if (j > 0) CHECK(n.distances(r, j) >= n.distances(r, j - 1));
    }
    CHECK(unique.size() == 16);
  }
}

TEST_CASE("radius neighbors") {
  Rng rng(5);
  SUBCASE("exactly K inside") {
    Coords pts(4, 3);
    pts << 0, 0, 0, 0.1, 0, 0, 0.2, 0, 0, 5, 5, 5;
    const NeighborIndex n = radius_neighbors(build_index(pts), pts.topRows(1), 0.5, 3, rng);
    CHECK(n.indices.row(0) == Eigen::RowVector3i(0, 1, 2));
  }
  SUBCASE("padding repeats the nearest") {
    Coords pts(2, 3);
    pts << 0, 0, 0, 3, 0, 0;
    const NeighborIndex n = radius_neighbors(build_index(pts), pts.topRows(1), 1.0, 4, rng);
    CHECK((n.indices.row(0).array() == 0).all());
  }
  SUBCASE("downsampling keeps distinct in-radius points") {
    const Coords pts = uniform(2000, rng);
    const SpatialIndex index = build_index(pts);
    const Coords q = pts.topRows(20);
    const NeighborIndex n = radius_neighbors(index, q, 0.25, 16, rng);
    for (Index r = 0; r < q.rows(); ++r) {
      std::set<std::int32_t> unique;
      Index inside = 0;
      for (Index i = 0; i < pts.rows(); ++i) inside += (pts.row(i) - q.row(r)).norm() <= 0.25;
      for (Index j = 0; j < 16; ++j) {
        unique.insert(n.indices(r, j));
        CHECK((pts.row(n.indices(r, j)) - q.row(r)).norm() <= 0.25 + 1e-9);
      }
      if (inside >= 16) CHECK(unique.size() == 16);
    }
  }
  SUBCASE("empty neighborhood of a foreign query") {
    Coords pts = Coords::Zero(1, 3);
    Coords q(1, 3);
    q << 10, 0, 0;
    CHECK_THROWS_AS(radius_neighbors(build_index(pts), q, 1.0, 4, rng), ValidationError);
  }
}

TEST_CASE("nearest matches brute force and breaks ties low") {
  Rng rng(6);
  const Coords pts = uniform(400, rng);
  const Coords q = uniform(300, rng);
  const IndexList found = nearest(build_index(pts), q);
  for (Index i = 0; i < q.rows(); ++i) CHECK(found[static_cast<std::size_t>(i)] == brute(pts, q.row(i))[0].second);

  Coords two(2, 3);
  two << 1, 0, 0, -1, 0, 0;
  CHECK(nearest(build_index(two), Coords::Zero(1, 3))[0] == 0);
}
