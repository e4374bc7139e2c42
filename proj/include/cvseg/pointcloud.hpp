#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include <Eigen/Core>

#include "cvseg/numerics/diff_array.hpp"

namespace cvseg {

template <typename Scalar>
using Points3 = Eigen::Matrix<Scalar, Eigen::Dynamic, 3, Eigen::RowMajor>;

/// Positions in metres, colours normalised to [0, 1], optional labels.
struct PointCloud {
  Points3<double> positions;
  Points3<double> colors;
  std::optional<std::vector<int>> labels;
  int class_count = 0;

  Index size() const { return positions.rows(); }
  bool has_labels() const { return labels.has_value(); }

  // Throws ValidationError on: empty cloud, row-count mismatch, non-finite
  // position, colour outside [0, 1], label outside [0, class_count).
  void validate() const;

  PointCloud subset(const std::vector<Index>& rows) const;
};

// One "x y z r g b [label]" record per line. Colours are divided by 255 when
// any colour value in the file exceeds 1. With class_count == 0 the class
// count is inferred as max(label) + 1.
PointCloud read_ascii_cloud(const std::filesystem::path& path, bool has_labels, int class_count = 0);
void write_ascii_cloud(const PointCloud& cloud, const std::filesystem::path& path);

enum class PrimitiveKind { kPlane, kBox, kBlob };

struct ScenePrimitive {
  PrimitiveKind kind = PrimitiveKind::kPlane;
  // Plane: origin + two spanning edge vectors. Box: min corner + extents
  // (surface samples, bottom face omitted). Blob: centre + per-axis sigma.
  Eigen::Vector3d origin = Eigen::Vector3d::Zero();
  Eigen::Vector3d u = Eigen::Vector3d::Zero();
  Eigen::Vector3d v = Eigen::Vector3d::Zero();
  Eigen::Vector3d color_mean = Eigen::Vector3d::Constant(0.5);
  double color_sigma = 0.05;
};

struct SyntheticSceneSpec {
  std::vector<ScenePrimitive> classes;  // one primitive per class label
  Index points = 16384;
  double noise_sigma = 0.005;
  std::uint64_t seed = 7;

  // Indoor-style room: floor, wall, then boxes and clutter blobs.
  static SyntheticSceneSpec room(int class_count, Index points, std::uint64_t seed);
};

PointCloud generate_synthetic_scene(const SyntheticSceneSpec& spec);

struct Crop {
  PointCloud cloud;
  std::vector<Index> source;  // row in the parent cloud for each crop row
};

// Seeded random centre, then its n nearest points (distance, then index),
// nearest first. Clouds smaller than n are padded by uniform draws with
// replacement.
Crop crop_batch(const PointCloud& cloud, Index n_points, std::uint64_t seed);
Crop crop_around(const PointCloud& cloud, Index center, Index n_points, std::uint64_t seed);

}  // namespace cvseg
