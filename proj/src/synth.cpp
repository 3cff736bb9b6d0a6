#include "randla/synth.hpp"

#include <cmath>
#include <cstdio>
#include <numbers>

namespace randla {

namespace {

struct Sphere {
  Eigen::RowVector3d center;
  Real radius;
};

struct Box {
  Eigen::RowVector3d lo, hi;
};

// Footprint discs used to keep objects apart on the ground.
struct Footprint {
  Real x, y, r;
};

bool inside_footprint(const Box& b, Real x, Real y) { return x > b.lo.x() && x < b.hi.x() && y > b.lo.y() && y < b.hi.y(); }

Real box_area(const Box& b) {
  const Eigen::RowVector3d s = b.hi - b.lo;
  return s.x() * s.y() + 2 * s.z() * (s.x() + s.y());  // no bottom face
}

Eigen::RowVector3d sample_box(const Box& b, Rng& rng) {
  const Eigen::RowVector3d s = b.hi - b.lo;
  const Real top = s.x() * s.y();
  const Real xz = s.x() * s.z();
  const Real yz = s.y() * s.z();
  Real pick = rng.uniform(0, top + 2 * xz + 2 * yz);
  Eigen::RowVector3d p(rng.uniform(b.lo.x(), b.hi.x()), rng.uniform(b.lo.y(), b.hi.y()),
                       rng.uniform(b.lo.z(), b.hi.z()));
  if (pick < top) return {p.x(), p.y(), b.hi.z()};
  pick -= top;
  if (pick < 2 * xz) return {p.x(), pick < xz ? b.lo.y() : b.hi.y(), p.z()};
  pick -= 2 * xz;
  return {pick < yz ? b.lo.x() : b.hi.x(), p.y(), p.z()};
}

Eigen::RowVector3d sample_sphere(const Sphere& s, Rng& rng) {
  const Real z = rng.uniform(-1, 1);
  const Real phi = rng.uniform(0, 2 * std::numbers::pi);
  const Real rho = std::sqrt(std::max(0.0, 1 - z * z));
  return s.center + s.radius * Eigen::RowVector3d(rho * std::cos(phi), rho * std::sin(phi), z);
}

}  // namespace

PointCloud synth_scene(const SynthOptions& options, Rng& rng) {
  require(options.n_points >= 1, "synth: n_points must be positive");
  require(options.spheres >= 0 && options.boxes >= 0, "synth: object counts must be non-negative");
  require(options.extent > 0, "synth: extent must be positive");
  require(options.noise >= 0, "synth: noise must be non-negative");
  const Real half = options.extent / 2;

  std::vector<Footprint> placed;
  auto place = [&](Real r) {
    for (int attempt = 0; attempt < 1000; ++attempt) {
      const Real x = rng.uniform(-half + r, half - r);
      const Real y = rng.uniform(-half + r, half - r);
      bool clear = true;
      for (const auto& f : placed)
        if (std::hypot(f.x - x, f.y - y) < f.r + r + 0.1) clear = false;
      if (clear) {
        placed.push_back({x, y, r});
        return std::pair{x, y};
      }
    }
    throw ValidationError("synth: objects do not fit on the ground plane");
  };

  std::vector<Sphere> spheres;
  std::vector<Box> boxes;
  for (int i = 0; i < options.spheres; ++i) {
    const Real r = rng.uniform(0.3, 0.55);
    const auto [x, y] = place(r);
    spheres.push_back({Eigen::RowVector3d(x, y, r), r});
  }
  for (int i = 0; i < options.boxes; ++i) {
    const Real sx = rng.uniform(0.4, 0.9);
    const Real sy = rng.uniform(0.4, 0.9);
    const Real sz = rng.uniform(0.3, 0.9);
    const auto [x, y] = place(0.5 * std::hypot(sx, sy));
    boxes.push_back({Eigen::RowVector3d(x - sx / 2, y - sy / 2, 0), Eigen::RowVector3d(x + sx / 2, y + sy / 2, sz)});
  }

  std::vector<Real> areas{options.extent * options.extent};
  for (const auto& s : spheres) areas.push_back(4 * std::numbers::pi * s.radius * s.radius);
  for (const auto& b : boxes) areas.push_back(box_area(b));
  std::vector<Real> cumulative(areas.size());
  Real total = 0;
  for (std::size_t i = 0; i < areas.size(); ++i) cumulative[i] = total += areas[i];

  PointCloud cloud;
  cloud.coords.resize(options.n_points, 3);
  cloud.colors = Coords::Constant(options.n_points, 3, 0.5);
  cloud.labels = IndexList(static_cast<std::size_t>(options.n_points));
  for (Index i = 0; i < options.n_points; ++i) {
    const Real pick = rng.uniform(0, total);
    std::size_t surface = 0;
    while (surface + 1 < cumulative.size() && pick >= cumulative[surface]) ++surface;
    Eigen::RowVector3d p;
    std::int32_t label;
    if (surface == 0) {
      // Ground hidden under a box is rejected and redrawn.
      bool covered = true;
      while (covered) {
        p = {rng.uniform(-half, half), rng.uniform(-half, half), 0};
        covered = false;
        for (const auto& b : boxes) covered = covered || inside_footprint(b, p.x(), p.y());
      }
      label = 0;
    } else if (surface <= spheres.size()) {
      p = sample_sphere(spheres[surface - 1], rng);
      label = 1;
    } else {
      p = sample_box(boxes[surface - 1 - spheres.size()], rng);
      label = 2;
    }
    for (int d = 0; d < 3; ++d) p(d) += options.noise * rng.normal();
    cloud.coords.row(i) = p;
    (*cloud.labels)[static_cast<std::size_t>(i)] = label;
  }
  return cloud;
}

std::vector<std::filesystem::path> synth_dataset(std::string_view kind, const SynthOptions& options, int n_clouds,
                                                 std::uint64_t seed, const std::filesystem::path& out_dir) {
  require(kind == "planes-spheres-boxes", "synth: unknown kind '" + std::string(kind) + "'");
  require(n_clouds >= 1, "synth: n_clouds must be positive");
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw LoadError("cannot create " + out_dir.string() + ": " + ec.message());
  Rng root(seed);
  std::vector<std::filesystem::path> paths;
  for (int i = 0; i < n_clouds; ++i) {
    Rng rng = root.split();
    const PointCloud cloud = synth_scene(options, rng);
    char name[32];
    std::snprintf(name, sizeof name, "scene_%03d.txt", i);
    paths.push_back(out_dir / name);
    save_cloud(paths.back(), cloud, CloudFormat::XyzrgblText);
  }
  return paths;
}

}  // namespace randla
