#pragma once

#include "randla/core.hpp"
#include "randla/spatial.hpp"

#include <filesystem>
#include <optional>
#include <span>
#include <string_view>
#include <utility>

namespace randla {

/// N points with coordinates (meters), optional colors in [0,1] and optional
/// integer class labels.
struct PointCloud {
  Coords coords;
  std::optional<Coords> colors;
  std::optional<IndexList> labels;

  Index size() const { return coords.rows(); }
  bool has_colors() const { return colors.has_value(); }
  bool has_labels() const { return labels.has_value(); }

  /// 3 (xyz) or 6 (xyz + rgb).
  int feature_dim() const { return has_colors() ? 6 : 3; }

  /// Per-point input features, xyz followed by rgb when present.
  Matrix features() const;

  /// Throws ValidationError when an invariant does not hold. Labels are
  /// checked against `num_classes` when given.
  void validate(std::optional<int> num_classes = std::nullopt) const;

  PointCloud subset(std::span<const std::int32_t> indices) const;
};

enum class CloudFormat { PlyAscii, PlyBinaryLE, XyzrgblText };

std::optional<CloudFormat> parse_cloud_format(std::string_view name);
std::string_view to_string(CloudFormat format);

/// Guess from the extension (.ply is inspected for ascii/binary).
CloudFormat detect_cloud_format(const std::filesystem::path& path);

PointCloud load_cloud(const std::filesystem::path& path, CloudFormat format,
                      std::optional<int> num_classes = std::nullopt);
PointCloud load_cloud(const std::filesystem::path& path, std::optional<int> num_classes = std::nullopt);

/// Text output writes coordinates with six decimals and colors as 0-255.
void save_cloud(const std::filesystem::path& path, const PointCloud& cloud, CloudFormat format);

/// Voxel membership produced by grid_subsample, in CSR layout: the source
/// points of output point i are members[offsets[i] .. offsets[i + 1]).
struct SubsampleMap {
  std::vector<std::int32_t> offsets;
  std::vector<std::int32_t> members;
  Real voxel_size = 0;

  Index size() const { return static_cast<Index>(offsets.empty() ? 0 : offsets.size() - 1); }
  std::span<const std::int32_t> members_of(Index i) const {
    return {members.data() + offsets[i], members.data() + offsets[i + 1]};
  }
};

/// One point per occupied voxel: centroid coordinates, mean color, majority
/// label (ties go to the smallest class id). Output order follows the first
/// appearance of each voxel in the input.
std::pair<PointCloud, SubsampleMap> grid_subsample(const PointCloud& cloud, Real voxel_size);

/// The `count` nearest points to the center point (center included), sorted
/// by distance.
IndexList crop_subcloud(const PointCloud& cloud, std::int32_t center_index, Index count,
                        const SpatialIndex& index);

void save_labels(const std::filesystem::path& path, std::span<const std::int32_t> labels);
IndexList load_labels(const std::filesystem::path& path, std::optional<int> num_classes = std::nullopt);

}  // namespace randla
