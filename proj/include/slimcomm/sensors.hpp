#pragma once

// Planar LiDAR ray casting and the radar rig. Radar returns carry a Doppler
// velocity measured along the line of sight of the mount that produced them.

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <vector>

#include "slimcomm/geometry.hpp"
#include "slimcomm/scene.hpp"

namespace slimcomm {

enum class SensorKind : std::uint8_t { Lidar, Radar };

struct SensorPoint {
  Vec2 position;                  // vehicle frame, metres
  double z = 0.0;                 // height relative to the LiDAR reference plane
  std::optional<double> doppler;  // radar only, m/s
  SensorKind kind = SensorKind::Lidar;
  int mount = -1;                 // radar mount index
};

struct SensorCloud {
  std::vector<SensorPoint> points;
  bool empty() const { return points.empty(); }
  std::size_t size() const { return points.size(); }
};

struct RadarMount {
  double yaw = 0.0;  // radians, mount heading in the vehicle frame
  Vec2 translation;  // vehicle frame, metres
  double fov_deg = 120.0;
  double max_range = 150.0;

  /// Vehicle-frame vector expressed in the mount frame.
  Vec2 to_mount(Vec2 v) const { return rotate(v, -yaw); }
  /// Vehicle-frame point expressed in the mount frame.
  Vec2 point_to_mount(Vec2 p) const { return rotate(p - translation, -yaw); }
};

struct LidarSpec {
  int rays = 1440;         // azimuth steps over 360 degrees
  int channels = 8;        // height samples per azimuth hit
  double max_range = 120.0;
  double range_noise = 0.02;
  double mount_height = 1.8;  // reference plane above ground
};

struct SensorRig {
  std::vector<RadarMount> radars;
  LidarSpec lidar;
  double doppler_noise = 0.0;  // m/s, radar Doppler noise sigma

  /// Six radars (three front, one rear, two mirror-mounted looking back) and
  /// one roof LiDAR.
  static SensorRig default_rig() {
    SensorRig rig;
    rig.radars = {
        {deg_to_rad(0.0), {2.3, 0.0}},     {deg_to_rad(60.0), {2.2, 0.8}},
        {deg_to_rad(-60.0), {2.2, -0.8}},  {deg_to_rad(180.0), {-2.3, 0.0}},
        {deg_to_rad(150.0), {0.9, 1.0}},   {deg_to_rad(-150.0), {0.9, -1.0}},
    };
    return rig;
  }
};

/// Ego velocity (vehicle frame) expressed in the radar frame of `mount`.
inline Vec2 rotate_ego_velocity(Vec2 v_vehicle, const RadarMount& mount) {
  return mount.to_mount(v_vehicle);
}

namespace detail {

struct RayHit {
  double range = std::numeric_limits<double>::infinity();
  int body = -1;
};

inline RayHit cast_ray(Vec2 origin, Vec2 dir, const std::vector<SceneBody>& bodies, int skip,
                       double max_range) {
  RayHit best;
  for (int i = 0; i < static_cast<int>(bodies.size()); ++i) {
    if (i == skip) continue;
    const auto t = ray_box_distance(origin, dir, bodies[i].box, max_range);
    if (t && *t < best.range) {
      best.range = *t;
      best.body = i;
    }
  }
  return best;
}

inline double sample_height(const HeightProfile& h, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(h.z_base, h.z_top);
  return dist(rng);
}

}  // namespace detail

/// One radar's scan: rays every degree across the field of view, nearest hit
/// per ray, Doppler = (v_abs - v_ego) . u in the mount frame.
inline SensorCloud radar_scan(const Scene& scene, const VehicleState& agent, const RadarMount& mount,
                              int mount_index, std::uint64_t seed, double doppler_noise = 0.0,
                              double reference_height = 1.8) {
  SensorCloud cloud;
  const auto bodies = scene_bodies(scene);
  const int self = body_index_of(bodies, agent.id);
  const Pose2 pose = agent.pose();
  const Vec2 origin = pose.to_world(mount.translation);
  const double heading = agent.yaw + mount.yaw;
  const Vec2 v_ego_vehicle = pose.direction_to_local(agent.velocity);
  const Vec2 v_ego_mount = rotate_ego_velocity(v_ego_vehicle, mount);

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  const int n_rays = std::max(1, static_cast<int>(std::lround(mount.fov_deg)));
  const double step = deg_to_rad(mount.fov_deg) / n_rays;
  for (int k = 0; k < n_rays; ++k) {
    const double angle = heading - deg_to_rad(mount.fov_deg) / 2.0 + (k + 0.5) * step;
    const Vec2 dir{std::cos(angle), std::sin(angle)};
    const auto hit = detail::cast_ray(origin, dir, bodies, self, mount.max_range);
    if (hit.body < 0) continue;
    const SceneBody& body = bodies[hit.body];
    const Vec2 p_world = origin + dir * hit.range;
    const Vec2 p_mount = rotate(p_world - origin, -heading);
    const double r = norm(p_mount);
    if (r <= 0.0) continue;
    const Vec2 u = p_mount / r;
    const Vec2 v_abs_mount = rotate(body.velocity, -heading);
    double doppler = dot(v_abs_mount - v_ego_mount, u);
    const double z = detail::sample_height(body.height, rng) - reference_height;
    if (doppler_noise > 0.0) doppler += doppler_noise * noise(rng);
    cloud.points.push_back({pose.to_local(p_world), z, doppler, SensorKind::Radar, mount_index});
  }
  return cloud;
}

/// All radars of the rig merged into one cloud (mount order).
inline SensorCloud radar_scan_rig(const Scene& scene, const VehicleState& agent, const SensorRig& rig,
                                  std::uint64_t seed) {
  SensorCloud all;
  for (int k = 0; k < static_cast<int>(rig.radars.size()); ++k) {
    auto c = radar_scan(scene, agent, rig.radars[k], k, mix_seed(seed, 0xadu, k), rig.doppler_noise,
                        rig.lidar.mount_height);
    all.points.insert(all.points.end(), c.points.begin(), c.points.end());
  }
  return all;
}

/// Planar LiDAR sweep from the roof centre with Gaussian range noise and
/// per-hit height samples inside the struck body's height band.
inline SensorCloud lidar_scan(const Scene& scene, const VehicleState& agent, const LidarSpec& spec,
                              std::uint64_t seed) {
  SensorCloud cloud;
  const auto bodies = scene_bodies(scene);
  const int self = body_index_of(bodies, agent.id);
  const Pose2 pose = agent.pose();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  for (int k = 0; k < spec.rays; ++k) {
    const double angle = agent.yaw + 2.0 * std::numbers::pi * k / spec.rays;
    const Vec2 dir{std::cos(angle), std::sin(angle)};
    const auto hit = detail::cast_ray(pose.position, dir, bodies, self, spec.max_range);
    if (hit.body < 0) continue;
    const SceneBody& body = bodies[hit.body];
    for (int c = 0; c < spec.channels; ++c) {
      const double range = hit.range + spec.range_noise * noise(rng);
      const Vec2 p_world = pose.position + dir * range;
      const double z = detail::sample_height(body.height, rng) - spec.mount_height;
      cloud.points.push_back({pose.to_local(p_world), z, std::nullopt, SensorKind::Lidar, -1});
    }
  }
  return cloud;
}

}  // namespace slimcomm
