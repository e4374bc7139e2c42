#include "cvseg/pointcloud.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>

#include "cvseg/errors.hpp"
#include "cvseg/random.hpp"

namespace cvseg {

void PointCloud::validate() const {
  const Index n = positions.rows();
  if (n < 1) throw ValidationError("point cloud is empty");
  if (colors.rows() != n) throw ValidationError("colour rows do not match position rows");
  if (!positions.allFinite()) throw ValidationError("point cloud has non-finite positions");
  if ((colors.array() < 0.0).any() || (colors.array() > 1.0).any() || !colors.allFinite()) {
    throw ValidationError("colours must lie in [0, 1]");
  }
  if (labels) {
    if (static_cast<Index>(labels->size()) != n) throw ValidationError("label count does not match points");
    for (std::size_t i = 0; i < labels->size(); ++i) {
      const int y = (*labels)[i];
      if (y < 0 || y >= class_count) {
        throw ValidationError("label " + std::to_string(y) + " at point " + std::to_string(i) +
                              " outside [0," + std::to_string(class_count) + ")");
      }
    }
  }
}

PointCloud PointCloud::subset(const std::vector<Index>& rows) const {
  PointCloud out;
  out.class_count = class_count;
  out.positions.resize(static_cast<Index>(rows.size()), 3);
  out.colors.resize(static_cast<Index>(rows.size()), 3);
  if (labels) out.labels.emplace(rows.size());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const Index src = rows[r];
    out.positions.row(static_cast<Index>(r)) = positions.row(src);
    out.colors.row(static_cast<Index>(r)) = colors.row(src);
    if (labels) (*out.labels)[r] = (*labels)[static_cast<std::size_t>(src)];
  }
  return out;
}

PointCloud read_ascii_cloud(const std::filesystem::path& path, bool has_labels, int class_count) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open point cloud: " + path.string());
  const int fields = has_labels ? 7 : 6;
  std::vector<double> values;
  std::vector<int> labels;
  std::string line;
  Index line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream ls(line);
    double f[7];
    int got = 0;
    std::string tok;
    bool ok = true;
    while (ls >> tok) {
      if (got == fields) {
        ok = false;
        break;
      }
      const auto [end, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), f[got]);
      if (ec != std::errc() || end != tok.data() + tok.size()) {
        ok = false;
        break;
      }
      ++got;
    }
    if (!ok || got != fields) {
      throw ParseError(path.string() + ":" + std::to_string(line_no) + ": expected " + std::to_string(fields) +
                       " numeric fields");
    }
    values.insert(values.end(), f, f + 6);
    if (has_labels) {
      if (f[6] != std::floor(f[6]) || f[6] < 0) {
        throw ParseError(path.string() + ":" + std::to_string(line_no) + ": label must be a non-negative integer");
      }
      labels.push_back(static_cast<int>(f[6]));
    }
  }
  const Index n = static_cast<Index>(values.size() / 6);
  if (n == 0) throw ValidationError("point cloud file has no points: " + path.string());

  PointCloud cloud;
  cloud.positions.resize(n, 3);
  cloud.colors.resize(n, 3);
  bool byte_colors = false;
  for (Index i = 0; i < n; ++i) {
    for (int d = 0; d < 3; ++d) {
      cloud.positions(i, d) = values[static_cast<std::size_t>(6 * i + d)];
      cloud.colors(i, d) = values[static_cast<std::size_t>(6 * i + 3 + d)];
      byte_colors = byte_colors || cloud.colors(i, d) > 1.0;
    }
  }
  if (byte_colors) cloud.colors /= 255.0;
  if (has_labels) {
    cloud.class_count = class_count > 0 ? class_count : *std::max_element(labels.begin(), labels.end()) + 1;
    cloud.labels = std::move(labels);
  } else {
    cloud.class_count = class_count;
  }
  cloud.validate();
  return cloud;
}

void write_ascii_cloud(const PointCloud& cloud, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write point cloud: " + path.string());
  out << std::setprecision(17);
  for (Index i = 0; i < cloud.size(); ++i) {
    out << cloud.positions(i, 0) << ' ' << cloud.positions(i, 1) << ' ' << cloud.positions(i, 2) << ' '
        << cloud.colors(i, 0) << ' ' << cloud.colors(i, 1) << ' ' << cloud.colors(i, 2);
    if (cloud.labels) out << ' ' << (*cloud.labels)[static_cast<std::size_t>(i)];
    out << '\n';
  }
  if (!out) throw IoError("failed writing point cloud: " + path.string());
}

namespace {

Eigen::Vector3d hue_color(double h) {
  // HSV with s = 0.8, v = 0.9
  const double s = 0.8, v = 0.9;
  const double c = v * s;
  const double hp = std::fmod(h, 1.0) * 6.0;
  const double x = c * (1.0 - std::abs(std::fmod(hp, 2.0) - 1.0));
  Eigen::Vector3d rgb;
  if (hp < 1) rgb = {c, x, 0};
  else if (hp < 2) rgb = {x, c, 0};
  else if (hp < 3) rgb = {0, c, x};
  else if (hp < 4) rgb = {0, x, c};
  else if (hp < 5) rgb = {x, 0, c};
  else rgb = {c, 0, x};
  return rgb.array() + (v - c);
}

Eigen::Vector3d sample_box_surface(const ScenePrimitive& p, Rng& rng) {
  const Eigen::Vector3d& e = p.u;
  // Faces: top, -x, +x, -y, +y. Bottom rests on the floor and is skipped.
  const double areas[5] = {e.x() * e.y(), e.y() * e.z(), e.y() * e.z(), e.x() * e.z(), e.x() * e.z()};
  double total = 0;
  for (double a : areas) total += a;
  double pick = rng.uniform() * total;
  int face = 0;
  while (face < 4 && pick >= areas[face]) pick -= areas[face++];
  const double a = rng.uniform(), b = rng.uniform();
  Eigen::Vector3d q;
  switch (face) {
    case 0: q = {a * e.x(), b * e.y(), e.z()}; break;
    case 1: q = {0.0, a * e.y(), b * e.z()}; break;
    case 2: q = {e.x(), a * e.y(), b * e.z()}; break;
    case 3: q = {a * e.x(), 0.0, b * e.z()}; break;
    default: q = {a * e.x(), e.y(), b * e.z()}; break;
  }
  return p.origin + q;
}

}  // namespace

SyntheticSceneSpec SyntheticSceneSpec::room(int class_count, Index points, std::uint64_t seed) {
  if (class_count < 1) throw ValidationError("synthetic scene needs at least one class");
  SyntheticSceneSpec spec;
  spec.points = points;
  spec.seed = seed;
  for (int c = 0; c < class_count; ++c) {
    ScenePrimitive p;
    switch (c) {
      case 0:  // floor
        p.kind = PrimitiveKind::kPlane;
        p.origin = {0, 0, 0};
        p.u = {4, 0, 0};
        p.v = {0, 4, 0};
        p.color_mean = {0.55, 0.45, 0.35};
        break;
      case 1:  // wall along x = 0
        p.kind = PrimitiveKind::kPlane;
        p.origin = {0, 0, 0.05};
        p.u = {0, 4, 0};
        p.v = {0, 0, 2.95};
        p.color_mean = {0.85, 0.85, 0.80};
        break;
      case 2:  // table-sized box
        p.kind = PrimitiveKind::kBox;
        p.origin = {1.6, 1.6, 0};
        p.u = {0.8, 0.8, 0.8};
        p.color_mean = {0.80, 0.20, 0.20};
        break;
      case 3:  // wall along y = 0
        p.kind = PrimitiveKind::kPlane;
        p.origin = {0.05, 0, 0.05};
        p.u = {3.95, 0, 0};
        p.v = {0, 0, 2.95};
        p.color_mean = {0.30, 0.50, 0.80};
        break;
      default: {
        const int slot = c - 4;
        const double x = 0.8 + 1.1 * (slot % 3);
        const double y = 2.9 - 0.9 * ((slot / 3) % 3);
        p.color_mean = hue_color(0.13 + 0.61803398875 * slot);
        if (slot % 2 == 0) {
          p.kind = PrimitiveKind::kBox;
          p.origin = {x, y, 0};
          p.u = {0.5, 0.5, 0.6};
        } else {
          p.kind = PrimitiveKind::kBlob;
          p.origin = {x + 0.25, y + 0.25, 0.9};
          p.u = {0.12, 0.12, 0.12};
        }
        break;
      }
    }
    spec.classes.push_back(p);
  }
  return spec;
}

PointCloud generate_synthetic_scene(const SyntheticSceneSpec& spec) {
  const Index classes = static_cast<Index>(spec.classes.size());
  if (spec.points < 1) throw ValidationError("synthetic scene point budget must be positive");
  if (classes < 1) throw ValidationError("synthetic scene has no classes");
  if (spec.points < classes) throw ValidationError("point budget smaller than class count");
  Rng rng(spec.seed);
  PointCloud cloud;
  cloud.class_count = static_cast<int>(classes);
  cloud.positions.resize(spec.points, 3);
  cloud.colors.resize(spec.points, 3);
  cloud.labels.emplace(static_cast<std::size_t>(spec.points));
  Index row = 0;
  for (Index c = 0; c < classes; ++c) {
    const ScenePrimitive& p = spec.classes[static_cast<std::size_t>(c)];
    const Index count = spec.points / classes + (c < spec.points % classes ? 1 : 0);
    for (Index i = 0; i < count; ++i, ++row) {
      Eigen::Vector3d q;
      switch (p.kind) {
        case PrimitiveKind::kPlane: {
          const double a = rng.uniform(), b = rng.uniform();
          q = p.origin + a * p.u + b * p.v;
          break;
        }
        case PrimitiveKind::kBox:
          q = sample_box_surface(p, rng);
          break;
        case PrimitiveKind::kBlob:
          q = p.origin + Eigen::Vector3d(rng.normal(0, p.u.x()), rng.normal(0, p.u.y()), rng.normal(0, p.u.z()));
          break;
      }
      for (int d = 0; d < 3; ++d) {
        cloud.positions(row, d) = q[d] + rng.normal(0.0, spec.noise_sigma);
        cloud.colors(row, d) = std::clamp(rng.normal(p.color_mean[d], p.color_sigma), 0.0, 1.0);
      }
      (*cloud.labels)[static_cast<std::size_t>(row)] = static_cast<int>(c);
    }
  }
  return cloud;
}

Crop crop_around(const PointCloud& cloud, Index center, Index n_points, std::uint64_t seed) {
  if (n_points < 1) throw ValidationError("crop size must be at least 1");
  const Index n = cloud.size();
  if (n < 1) throw ValidationError("cannot crop an empty cloud");
  if (center < 0 || center >= n) throw IndexError("crop centre outside the cloud");
  const Eigen::RowVector3d c = cloud.positions.row(center);
  std::vector<std::pair<double, Index>> order(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    const double dx = cloud.positions(i, 0) - c[0];
    const double dy = cloud.positions(i, 1) - c[1];
    const double dz = cloud.positions(i, 2) - c[2];
    order[static_cast<std::size_t>(i)] = {dx * dx + dy * dy + dz * dz, i};
  }
  const Index take = std::min(n, n_points);
  std::partial_sort(order.begin(), order.begin() + take, order.end());
  Crop crop;
  crop.source.reserve(static_cast<std::size_t>(n_points));
  for (Index i = 0; i < take; ++i) crop.source.push_back(order[static_cast<std::size_t>(i)].second);
  Rng rng(mix_seed(seed, 1));
  while (static_cast<Index>(crop.source.size()) < n_points) {
    crop.source.push_back(static_cast<Index>(rng.below(static_cast<std::uint64_t>(n))));
  }
  crop.cloud = cloud.subset(crop.source);
  return crop;
}

Crop crop_batch(const PointCloud& cloud, Index n_points, std::uint64_t seed) {
  if (n_points < 1) throw ValidationError("crop size must be at least 1");
  if (cloud.size() < 1) throw ValidationError("cannot crop an empty cloud");
  Rng rng(seed);
  const Index center = static_cast<Index>(rng.below(static_cast<std::uint64_t>(cloud.size())));
  return crop_around(cloud, center, n_points, seed);
}

}  // namespace cvseg
