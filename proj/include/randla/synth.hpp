#pragma once

#include "randla/core.hpp"
#include "randla/pointcloud.hpp"
#include "randla/rng.hpp"

#include <filesystem>
#include <string_view>
#include <vector>

namespace randla {

/// Ground plane (class 0) with spheres (class 1) and boxes (class 2) resting
/// on it. Points are spread over the visible surfaces in proportion to area.
struct SynthOptions {
  Index n_points = 4096;
  int spheres = 3;
  int boxes = 3;
  Real extent = 4.0;  // side of the square ground plane
  Real noise = 0.01;  // Gaussian coordinate noise, meters
};

PointCloud synth_scene(const SynthOptions& options, Rng& rng);

/// Writes `scene_000.txt`, ... (xyzrgbl) and returns the paths. Scene i uses
/// an independent stream split from `seed`.
std::vector<std::filesystem::path> synth_dataset(std::string_view kind, const SynthOptions& options, int n_clouds,
                                                 std::uint64_t seed, const std::filesystem::path& out_dir);

}  // namespace randla
