#pragma once

// Semantic priors per agent: the Doppler dynamic map, the height-filtered
// foreground density map and the heuristic confidence map.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

#include "slimcomm/bev.hpp"
#include "slimcomm/grid.hpp"
#include "slimcomm/sensors.hpp"

namespace slimcomm {

struct Thresholds {
  double v_th = 1.0;      // m/s
  double t_lower = -1.2;  // m, relative to the LiDAR reference plane
  double t_upper = 0.0;
  double t_max = 1.0;

  void validate() const {
    if (!(v_th >= 0.0)) throw std::invalid_argument("priors: v_th must be >= 0");
    if (!(t_lower < t_upper && t_upper < t_max))
      throw std::invalid_argument("priors: require t_lower < t_upper < t_max");
  }
};

struct RadialSample {
  std::size_t point = 0;  // index into the cloud
  double v_radial = 0.0;
};

struct RadialVelocities {
  std::vector<RadialSample> samples;
  std::size_t skipped = 0;  // radar points at the mount origin
};

/// Removes ego motion from each radar return: v_radial = doppler + (R_k v) . u,
/// with u the unit line of sight in the mount frame. LiDAR points are ignored.
inline RadialVelocities compensate_doppler(const SensorCloud& cloud, Vec2 v_vehicle,
                                           const std::vector<RadarMount>& mounts) {
  RadialVelocities out;
  for (std::size_t i = 0; i < cloud.points.size(); ++i) {
    const auto& p = cloud.points[i];
    if (p.kind != SensorKind::Radar || !p.doppler) continue;
    if (p.mount < 0 || p.mount >= static_cast<int>(mounts.size()))
      throw std::invalid_argument("compensate_doppler: radar point without a valid mount index");
    const RadarMount& m = mounts[p.mount];
    const Vec2 q = m.point_to_mount(p.position);
    const double r = norm(q);
    if (!(r > 0.0)) {
      ++out.skipped;
      continue;
    }
    const Vec2 u = q / r;
    out.samples.push_back({i, *p.doppler + dot(rotate_ego_velocity(v_vehicle, m), u)});
  }
  return out;
}

/// Marks a pillar dynamic when any radar point inside it moves faster than
/// v_th along its line of sight.
inline BevGrid<float> dynamic_map(const SensorCloud& cloud, const RadialVelocities& radial,
                                  const GridSpec& spec, double v_th) {
  auto d = BevGrid<float>::scalar(spec.rows, spec.cols);
  for (const auto& s : radial.samples) {
    if (!std::isfinite(s.v_radial)) throw std::invalid_argument("dynamic_map: non-finite radial velocity");
    if (std::abs(s.v_radial) <= v_th) continue;
    if (const auto cell = spec.pillar_of(cloud.points.at(s.point).position)) d.at(cell->first, cell->second) = 1.0f;
  }
  return d;
}

/// Height-based foreground test for one pillar's retained z values. Empty
/// pillars are background; any point above t_max makes the pillar background
/// before the in-band test is considered.
inline bool foreground_cell(std::span<const double> z, const Thresholds& th) {
  if (z.empty()) return false;
  bool in_band = false;
  for (double h : z) {
    if (h > th.t_max) return false;
    if (h >= th.t_lower && h <= th.t_upper) in_band = true;
  }
  return in_band;
}

inline BevGrid<float> foreground_mask(const PillarStats& stats, const Thresholds& th) {
  auto fg = BevGrid<float>::scalar(stats.rows(), stats.cols());
  for (int v = 0; v < stats.rows(); ++v)
    for (int u = 0; u < stats.cols(); ++u)
      if (foreground_cell(stats.z_values(u, v), th)) fg.at(u, v) = 1.0f;
  return fg;
}

/// Element-wise OR of two binary grids.
inline BevGrid<float> mask_union(const BevGrid<float>& a, const BevGrid<float>& b) {
  if (!a.same_shape(b)) throw std::invalid_argument("mask_union: shape mismatch");
  BevGrid<float> out = a;
  for (std::size_t i = 0; i < out.data().size(); ++i)
    out.data()[i] = (a.data()[i] != 0.0f || b.data()[i] != 0.0f) ? 1.0f : 0.0f;
  return out;
}

inline BevGrid<float> density_scale(const BevGrid<float>& counts, int n_max) {
  if (n_max < 1) throw std::invalid_argument("density_scale: n_max must be >= 1");
  BevGrid<float> ds = counts;
  for (float& x : ds.data()) {
    if (x < 0.0f) throw std::invalid_argument("density_scale: negative count");
    x = std::clamp(x / static_cast<float>(n_max), 0.0f, 1.0f);
  }
  return ds;
}

inline BevGrid<float> foreground_density_map(const BevGrid<float>& fg, const BevGrid<float>& ds) {
  if (!fg.same_shape(ds)) throw std::invalid_argument("foreground_density_map: shape mismatch");
  BevGrid<float> v = ds;
  for (std::size_t i = 0; i < v.data().size(); ++i) v.data()[i] = fg.data()[i] * ds.data()[i];
  return v;
}

inline constexpr int kBlurRadius = 3;

/// Normalised, truncated Gaussian blur of a scalar grid (zero padding).
inline BevGrid<float> gaussian_blur(const BevGrid<float>& in, double sigma = 1.0, int radius = kBlurRadius) {
  std::vector<double> k(2 * radius + 1);
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) sum += k[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
  for (double& w : k) w /= sum;
  const int rows = in.rows();
  const int cols = in.cols();
  std::vector<double> tmp(static_cast<std::size_t>(rows) * cols, 0.0);
  for (int v = 0; v < rows; ++v)
    for (int u = 0; u < cols; ++u) {
      const float x = in.at(u, v);
      if (x == 0.0f) continue;
      for (int d = -radius; d <= radius; ++d)
        if (u + d >= 0 && u + d < cols) tmp[static_cast<std::size_t>(v) * cols + u + d] += k[d + radius] * x;
    }
  BevGrid<float> out(1, rows, cols, in.level());
  for (int v = 0; v < rows; ++v)
    for (int u = 0; u < cols; ++u) {
      const double x = tmp[static_cast<std::size_t>(v) * cols + u];
      if (x == 0.0) continue;
      for (int d = -radius; d <= radius; ++d)
        if (v + d >= 0 && v + d < rows) out.at(u, v + d) += static_cast<float>(k[d + radius] * x);
    }
  return out;
}

/// Confidence surrogate: blurred foreground evidence from the returns the
/// agent actually received, clamped to [0, 1].
inline BevGrid<float> confidence_map(const BevGrid<float>& foreground) {
  BevGrid<float> c = gaussian_blur(foreground);
  for (float& x : c.data()) x = std::clamp(x, 0.0f, 1.0f);
  return c;
}

struct PriorMaps {
  BevGrid<float> dynamic;     // D, pillar resolution
  BevGrid<float> confidence;  // C
  BevGrid<float> density;     // V
  BevGrid<float> foreground;
  std::array<BevGrid<float>, kNumScales> dynamic_levels;
  std::array<BevGrid<float>, kNumScales> confidence_levels;
  std::size_t skipped_radar = 0;
};

struct AgentSensing {
  SensorCloud lidar;
  SensorCloud radar;
  PillarStats lidar_stats;
  PillarStats radar_stats;
};

inline PriorMaps compute_priors(const AgentSensing& s, Vec2 v_vehicle, const SensorRig& rig,
                                const Thresholds& th, const GridSpec& spec) {
  th.validate();
  PriorMaps p;
  const RadialVelocities radial = compensate_doppler(s.radar, v_vehicle, rig.radars);
  p.skipped_radar = radial.skipped;
  p.dynamic = dynamic_map(s.radar, radial, spec, th.v_th);
  p.foreground = mask_union(foreground_mask(s.lidar_stats, th), foreground_mask(s.radar_stats, th));
  BevGrid<float> counts = s.lidar_stats.counts();
  const BevGrid<float> radar_counts = s.radar_stats.counts();
  for (std::size_t i = 0; i < counts.data().size(); ++i) counts.data()[i] += radar_counts.data()[i];
  p.density = foreground_density_map(p.foreground, density_scale(counts, spec.n_max));
  p.confidence = confidence_map(p.foreground);
  for (int l = 0; l < kNumScales; ++l) {
    p.dynamic_levels[l] = downsample_max(p.dynamic, GridSpec::level_factor(l), l);
    p.confidence_levels[l] = downsample_avg(p.confidence, GridSpec::level_factor(l), l);
  }
  return p;
}

}  // namespace slimcomm
