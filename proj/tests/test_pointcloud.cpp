#include "randla/pointcloud.hpp"
#include "randla/rng.hpp"

#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>

using namespace randla;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "randla_test_pointcloud";
  fs::create_directories(dir);
  return dir / name;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
}

PointCloud random_cloud(Index n, Rng& rng, bool colors, bool labels, int classes = 4) {
  PointCloud c;
  c.coords.resize(n, 3);
  for (Index i = 0; i < n; ++i)
    for (int d = 0; d < 3; ++d) c.coords(i, d) = rng.uniform(-5, 5);
  if (colors) {
    c.colors = Coords(n, 3);
    for (Index i = 0; i < n; ++i)
      for (int d = 0; d < 3; ++d) (*c.colors)(i, d) = static_cast<Real>(rng.below(256)) / 255.0;
  }
  if (labels) {
    c.labels = IndexList(static_cast<std::size_t>(n));
    for (auto& l : *c.labels) l = static_cast<std::int32_t>(rng.below(classes));
  }
  return c;
}

}  // namespace

TEST_CASE("xyzrgbl text loads with colors scaled to [0,1]") {
  const auto path = scratch("three.txt");
  write_text(path, "0 0 0 255 0 0 1\n1 2 3 0 255 0 0\n-1 0.5 2 0 0 51 2\n");
  const PointCloud c = load_cloud(path, CloudFormat::XyzrgblText);
  REQUIRE(c.size() == 3);
  REQUIRE(c.has_colors());
  REQUIRE(c.has_labels());
  CHECK(c.feature_dim() == 6);
  CHECK((*c.colors)(0, 0) == doctest::Approx(1.0));
  CHECK((*c.colors)(2, 2) == doctest::Approx(0.2));
  CHECK(c.coords(1, 2) == 3.0);
  CHECK(*c.labels == IndexList{1, 0, 2});
}

TEST_CASE("ply ascii with only xyz has no colors") {
  const auto path = scratch("xyz.ply");
  write_text(path,
             "ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\nproperty float y\nproperty float z\n"
             "end_header\n0 0 0\n1 1 1\n");
  const PointCloud c = load_cloud(path);
  CHECK(c.size() == 2);
  CHECK_FALSE(c.has_colors());
  CHECK_FALSE(c.has_labels());
  CHECK(c.feature_dim() == 3);
}

TEST_CASE("malformed input is rejected") {
  SUBCASE("nan coordinate") {
    const auto path = scratch("nan.txt");
    write_text(path, "0 0 0 0 0 0 0\nnan 0 0 0 0 0 0\n");
    CHECK_THROWS_AS(load_cloud(path, CloudFormat::XyzrgblText), LoadError);
  }
  SUBCASE("label beyond class count") {
    const auto path = scratch("label.txt");
    write_text(path, "0 0 0 0 0 0 5\n");
    CHECK_THROWS_AS(load_cloud(path, CloudFormat::XyzrgblText, 3), LoadError);
  }
  SUBCASE("bad ply header") {
    const auto path = scratch("bad.ply");
    write_text(path, "ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\nend_header\n0\n1\n");
    CHECK_THROWS_AS(load_cloud(path), LoadError);
  }
  SUBCASE("missing file") { CHECK_THROWS_AS(load_cloud(scratch("absent.txt"), CloudFormat::XyzrgblText), LoadError); }
}

TEST_CASE("every format round-trips") {
  Rng rng(11);
  PointCloud c = random_cloud(50, rng, true, true);
  for (auto format : {CloudFormat::PlyAscii, CloudFormat::PlyBinaryLE, CloudFormat::XyzrgblText}) {
    CAPTURE(to_string(format));
    const auto path = scratch("round." + std::string(format == CloudFormat::XyzrgblText ? "txt" : "ply"));
    save_cloud(path, c, format);
    const PointCloud back = load_cloud(path, format);
    REQUIRE(back.size() == c.size());
    CHECK((back.coords - c.coords).cwiseAbs().maxCoeff() <= 5e-7);
    CHECK((*back.colors - *c.colors).cwiseAbs().maxCoeff() <= 1e-9);
    CHECK(*back.labels == *c.labels);
  }
}

TEST_CASE("labels round-trip and are validated") {
  const IndexList labels{0, 3, 1, 1, 2};
  const auto path = scratch("labels.txt");
  save_labels(path, labels);
  CHECK(load_labels(path) == labels);
  CHECK(load_labels(path, 4) == labels);
  CHECK_THROWS_AS(load_labels(path, 3), LoadError);

  save_labels(path, {});
  CHECK(fs::file_size(path) == 0);
  CHECK(load_labels(path).empty());

  write_text(path, "2147483648\n");
  CHECK_THROWS(load_labels(path, 3));
}

TEST_CASE("grid subsample uses centroids and majority labels") {
  PointCloud c;
  c.coords.resize(3, 3);
  c.coords << 0.01, 0, 0, 0.02, 0, 0, 0.99, 0, 0;
  c.labels = IndexList{0, 0, 1};
  const auto [sub, map] = grid_subsample(c, 0.5);
  REQUIRE(sub.size() == 2);
  CHECK(sub.coords(0, 0) == doctest::Approx(0.015));
  CHECK(sub.coords(1, 0) == doctest::Approx(0.99));
  CHECK(*sub.labels == IndexList{0, 1});
  CHECK(map.size() == 2);
  CHECK(map.members_of(0).size() == 2);

  SUBCASE("one voxel gives the global centroid and majority") {
    const auto [one, m1] = grid_subsample(c, 100.0);
    REQUIRE(one.size() == 1);
    CHECK(one.coords(0, 0) == doctest::Approx((0.01 + 0.02 + 0.99) / 3));
    CHECK((*one.labels)[0] == 0);
  }
  SUBCASE("label ties go to the smaller class") {
    PointCloud t = c;
    t.labels = IndexList{2, 1, 0};
    t.coords.col(0) << 0.1, 0.2, 0.3;
    const auto [one, m1] = grid_subsample(t, 1.0);
    CHECK((*one.labels)[0] == 0);
  }
  CHECK_THROWS_AS(grid_subsample(c, 0.0), ValidationError);
}

TEST_CASE("grid subsample properties on random clouds") {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const PointCloud c = random_cloud(300, rng, true, true);
    const Real voxel = rng.uniform(0.3, 2.0);
    const auto [sub, map] = grid_subsample(c, voxel);
    CHECK(sub.size() <= c.size());
    // Each output point is the centroid of its members, all in one voxel.
    std::vector<int> seen(static_cast<std::size_t>(c.size()), 0);
    for (Index i = 0; i < sub.size(); ++i) {
      Eigen::RowVector3d sum = Eigen::RowVector3d::Zero();
      const auto members = map.members_of(i);
      REQUIRE(!members.empty());
      const Eigen::RowVector3d cell = (c.coords.row(members[0]) / voxel).array().floor();
      for (auto m : members) {
        ++seen[static_cast<std::size_t>(m)];
        sum += c.coords.row(m);
        CHECK(((c.coords.row(m) / voxel).array().floor() == cell.array()).all());
      }
      const Eigen::RowVector3d centroid = sum / static_cast<Real>(members.size());
      CHECK((centroid - sub.coords.row(i)).norm() <= 1e-9);
      CHECK((sub.coords.row(i).array() >= cell.array() * voxel - 1e-9).all());
      CHECK((sub.coords.row(i).array() <= (cell.array() + 1) * voxel + 1e-9).all());
    }
    CHECK(std::all_of(seen.begin(), seen.end(), [](int s) { return s == 1; }));
    // Re-subsampling keeps the count.
    CHECK(grid_subsample(sub, voxel).first.size() == sub.size());
  }
}

TEST_CASE("crop_subcloud returns the nearest points") {
  PointCloud line;
  line.coords.resize(4, 3);
  line.coords << 0, 0, 0, 1, 0, 0, 2, 0, 0, 5, 0, 0;
  const SpatialIndex index = build_index(line.coords);
  IndexList two = crop_subcloud(line, 0, 2, index);
  std::sort(two.begin(), two.end());
  CHECK(two == IndexList{0, 1});
  CHECK(crop_subcloud(line, 3, 1, index) == IndexList{3});
  IndexList all = crop_subcloud(line, 2, 4, index);
  std::sort(all.begin(), all.end());
  CHECK(all == IndexList{0, 1, 2, 3});
  CHECK_THROWS_AS(crop_subcloud(line, 0, 5, index), ValidationError);
  CHECK_THROWS_AS(crop_subcloud(line, 4, 1, index), ValidationError);
}

TEST_CASE("subset keeps attributes aligned") {
  Rng rng(3);
  const PointCloud c = random_cloud(20, rng, true, true);
  const IndexList ids{7, 3, 19};
  const PointCloud s = c.subset(ids);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    CHECK(s.coords.row(static_cast<Index>(i)) == c.coords.row(ids[i]));
    CHECK(s.colors->row(static_cast<Index>(i)) == c.colors->row(ids[i]));
    CHECK((*s.labels)[i] == (*c.labels)[static_cast<std::size_t>(ids[i])]);
  }
}

TEST_CASE("validate enforces invariants") {
  PointCloud c;
  c.coords = Coords::Zero(2, 3);
  CHECK_NOTHROW(c.validate());
  c.colors = Coords::Constant(2, 3, 1.5);
  CHECK_THROWS_AS(c.validate(), ValidationError);
  c.colors.reset();
  c.labels = IndexList{0, 3};
  CHECK_THROWS_AS(c.validate(3), ValidationError);
  CHECK_NOTHROW(c.validate(4));
  PointCloud empty;
  CHECK_THROWS_AS(empty.validate(), ValidationError);
}
