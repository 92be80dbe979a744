#pragma once

// Deterministic synthetic traffic scenes: constant-velocity vehicles, static
// obstacles and the subset of vehicles that act as connected agents.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "slimcomm/geometry.hpp"

namespace slimcomm {

class PlacementError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Height band of a body above ground, metres.
struct HeightProfile {
  double z_base = 0.3;
  double z_top = 1.6;
  bool operator==(const HeightProfile&) const = default;
};

struct VehicleState {
  int id = 0;
  Vec2 position;
  double yaw = 0.0;
  Vec2 velocity;  // world frame, m/s
  double length = 4.5;
  double width = 1.8;
  HeightProfile height;

  OrientedBox box() const { return {position, yaw, length, width}; }
  Pose2 pose() const { return {position, yaw}; }
  bool operator==(const VehicleState&) const = default;
};

struct Obstacle {
  OrientedBox box;
  HeightProfile height{0.0, 6.0};
  bool operator==(const Obstacle& o) const {
    return box.center == o.box.center && box.yaw == o.box.yaw && box.length == o.box.length &&
           box.width == o.box.width && height == o.height;
  }
};

struct Scene {
  std::int64_t frame_id = 0;
  std::vector<VehicleState> vehicles;
  std::vector<Obstacle> obstacles;
  std::vector<int> agents;  // vehicle ids carrying sensors; agents[0] is the ego
  std::uint64_t rng_seed = 0;

  const VehicleState* find_vehicle(int id) const {
    for (const auto& v : vehicles)
      if (v.id == id) return &v;
    return nullptr;
  }
  const VehicleState& vehicle(int id) const {
    const VehicleState* v = find_vehicle(id);
    if (!v) throw std::out_of_range("scene: no vehicle with id " + std::to_string(id));
    return *v;
  }
  bool operator==(const Scene&) const = default;
};

/// Everything that can block a ray: vehicles first (in scene order), then obstacles.
struct SceneBody {
  OrientedBox box;
  HeightProfile height;
  Vec2 velocity;
  int vehicle_id = -1;  // -1 for static obstacles
};

inline std::vector<SceneBody> scene_bodies(const Scene& scene) {
  std::vector<SceneBody> out;
  out.reserve(scene.vehicles.size() + scene.obstacles.size());
  for (const auto& v : scene.vehicles) out.push_back({v.box(), v.height, v.velocity, v.id});
  for (const auto& o : scene.obstacles) out.push_back({o.box, o.height, {}, -1});
  return out;
}

/// Ground-truth visibility: the segment from `from` to `target` is clear of
/// every body. The body the target lies on (index `own`) only blocks when the
/// segment passes through it before reaching the target.
inline bool point_visible(Vec2 from, Vec2 target, const std::vector<SceneBody>& bodies,
                          int own = -1, int skip = -1) {
  for (int i = 0; i < static_cast<int>(bodies.size()); ++i) {
    if (i == skip) continue;
    const auto t = segment_box_entry(from, target, bodies[i].box);
    if (!t) continue;
    if (i == own) {
      if (*t < 1.0 - 1e-6) return false;
      continue;
    }
    return false;
  }
  return true;
}

/// Samples on a box outline used by the object-level visibility oracle.
inline std::vector<Vec2> outline_samples(const OrientedBox& box, int per_side = 8) {
  std::vector<Vec2> pts;
  const auto c = box.corners();
  for (int s = 0; s < 4; ++s) {
    const Vec2 a = c[s];
    const Vec2 b = c[(s + 1) % 4];
    for (int k = 0; k < per_side; ++k) pts.push_back(a + (b - a) * ((k + 0.5) / per_side));
  }
  return pts;
}

/// Index of the body with the given vehicle id, or -1.
inline int body_index_of(const std::vector<SceneBody>& bodies, int vehicle_id) {
  for (int i = 0; i < static_cast<int>(bodies.size()); ++i)
    if (bodies[i].vehicle_id == vehicle_id) return i;
  return -1;
}

/// A vehicle is hidden from `viewer_id` when no outline sample is visible.
inline bool vehicle_hidden_from(const Scene& scene, int viewer_id, int target_id) {
  const auto bodies = scene_bodies(scene);
  const Vec2 eye = scene.vehicle(viewer_id).position;
  const int own = body_index_of(bodies, target_id);
  const int viewer = body_index_of(bodies, viewer_id);
  for (const Vec2& p : outline_samples(scene.vehicle(target_id).box()))
    if (point_visible(eye, p, bodies, own, viewer)) return false;
  return true;
}

struct ObstacleSpec {
  Vec2 center;
  double yaw = 0.0;
  double length = 10.0;
  double width = 10.0;
  HeightProfile height{0.0, 6.0};
};

/// Scene generator configuration (the scenario JSON's scene keys).
struct ScenarioConfig {
  std::string layout = "random";  // random | occlusion
  int vehicles = 10;               // non-agent vehicles
  int agents = 2;
  int obstacles = 0;               // randomly placed obstacles
  std::vector<ObstacleSpec> fixed_obstacles;
  double speed_min = 0.0;
  double speed_max = 15.0;
  std::uint64_t seed = 0;
  int frames = 1;
  double dt = 0.1;
  Vec2 area{120.0, 60.0};   // spawn region (length x width), centred on the ego
  double agent_radius = 40.0;  // other agents spawn within this distance of the ego
};

namespace detail {

inline bool placement_clear(const OrientedBox& box, const Scene& scene, double margin) {
  for (const auto& v : scene.vehicles)
    if (boxes_overlap(box, v.box(), margin)) return false;
  for (const auto& o : scene.obstacles)
    if (boxes_overlap(box, o.box, margin)) return false;
  return true;
}

inline Scene occlusion_layout(const ScenarioConfig& cfg) {
  // Ego at the origin, a parked van turned across the lane ahead, a vehicle
  // hidden directly behind it and a collaborator off to the side with a
  // clear view of the hidden vehicle.
  Scene s;
  s.rng_seed = cfg.seed;
  s.vehicles.push_back({0, {0.0, 0.0}, 0.0, {0.0, 0.0}, 4.5, 1.8, {0.3, 1.6}});
  s.vehicles.push_back({1, {14.75, 9.0}, 0.0, {0.0, 0.0}, 4.5, 1.8, {0.3, 1.6}});
  s.vehicles.push_back({2, {14.75, 0.0}, 0.0, {5.0, 0.0}, 4.5, 1.8, {0.3, 1.6}});
  s.obstacles.push_back({{{9.9, 0.0}, std::numbers::pi / 2.0, 5.0, 1.8}, {0.0, 2.0}});
  s.agents = {0, 1};
  return s;
}

}  // namespace detail

/// Builds a scene deterministically from (config, seed). Agent 0 is placed at
/// the origin facing +x; every other body is placed without overlap.
inline Scene generate_scene(const ScenarioConfig& cfg, std::uint64_t seed) {
  if (cfg.agents < 1) throw std::invalid_argument("scenario: at least one agent required");
  if (cfg.vehicles < 0 || cfg.obstacles < 0) throw std::invalid_argument("scenario: negative counts");
  if (cfg.speed_min < 0.0 || cfg.speed_max < cfg.speed_min || cfg.speed_max >= 60.0)
    throw std::invalid_argument("scenario: speed range must satisfy 0 <= min <= max < 60");

  ScenarioConfig local = cfg;
  local.seed = seed;
  if (cfg.layout == "occlusion") return detail::occlusion_layout(local);
  if (cfg.layout != "random") throw std::invalid_argument("scenario: unknown layout '" + cfg.layout + "'");

  constexpr int kMaxAttempts = 100;
  constexpr double kMargin = 0.5;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Scene s;
  s.rng_seed = seed;

  for (const auto& o : cfg.fixed_obstacles)
    s.obstacles.push_back({{o.center, o.yaw, o.length, o.width}, o.height});

  const auto speed = [&] { return cfg.speed_min + (cfg.speed_max - cfg.speed_min) * unit(rng); };
  const auto lane_yaw = [&] { return unit(rng) < 0.5 ? 0.0 : std::numbers::pi; };

  int next_id = 0;
  const auto place_vehicle = [&](bool is_agent, bool at_origin) {
    for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
      VehicleState v;
      v.id = next_id;
      if (at_origin) {
        v.position = {0.0, 0.0};
        v.yaw = 0.0;
      } else if (is_agent) {
        const double r = 8.0 + (cfg.agent_radius - 8.0) * unit(rng);
        const double a = 2.0 * std::numbers::pi * unit(rng);
        v.position = {r * std::cos(a), std::clamp(r * std::sin(a), -cfg.area.y / 2.0, cfg.area.y / 2.0)};
        v.yaw = lane_yaw();
      } else {
        v.position = {(unit(rng) - 0.5) * cfg.area.x, (unit(rng) - 0.5) * cfg.area.y};
        v.yaw = lane_yaw();
      }
      v.yaw = wrap_angle(v.yaw);
      v.velocity = rotate({speed(), 0.0}, v.yaw);
      if (!detail::placement_clear(v.box(), s, kMargin)) {
        if (at_origin) break;
        continue;
      }
      s.vehicles.push_back(v);
      if (is_agent) s.agents.push_back(v.id);
      ++next_id;
      return;
    }
    throw PlacementError("scenario: could not place vehicle " + std::to_string(next_id) + " after " +
                         std::to_string(kMaxAttempts) + " attempts");
  };

  place_vehicle(true, true);
  for (int i = 1; i < cfg.agents; ++i) place_vehicle(true, false);
  for (int i = 0; i < cfg.vehicles; ++i) place_vehicle(false, false);

  for (int i = 0; i < cfg.obstacles; ++i) {
    bool placed = false;
    for (int attempt = 0; attempt < kMaxAttempts && !placed; ++attempt) {
      Obstacle o;
      o.box.length = 3.0 + 9.0 * unit(rng);
      o.box.width = 3.0 + 9.0 * unit(rng);
      o.box.yaw = 0.0;
      o.box.center = {(unit(rng) - 0.5) * cfg.area.x, (unit(rng) - 0.5) * cfg.area.y};
      o.height = {0.0, 3.0 + 7.0 * unit(rng)};
      if (detail::placement_clear(o.box, s, kMargin)) {
        s.obstacles.push_back(o);
        placed = true;
      }
    }
    if (!placed)
      throw PlacementError("scenario: could not place obstacle " + std::to_string(i) + " after " +
                           std::to_string(kMaxAttempts) + " attempts");
  }
  return s;
}

/// Constant-velocity step; returns a new scene with frame_id incremented.
inline Scene step_scene(const Scene& scene, double dt) {
  if (!(dt > 0.0)) throw std::invalid_argument("step_scene: dt must be > 0");
  Scene next = scene;
  for (auto& v : next.vehicles) v.position += v.velocity * dt;
  ++next.frame_id;
  return next;
}

struct PoseNoise {
  double sigma_pos = 0.0;      // metres, per axis
  double sigma_yaw_deg = 0.0;  // degrees
  bool operator==(const PoseNoise&) const = default;
};

/// Pose an agent reports about itself; carries the noise record when
/// localisation noise has been injected.
struct AgentPose {
  Pose2 pose;
  std::optional<PoseNoise> noise;
  bool out_of_range = false;  // sigma outside the studied [0, 0.6] m / [0, 1] deg band
  bool operator==(const AgentPose&) const = default;
};

/// Adds zero-mean Gaussian noise to position (each axis) and yaw.
inline AgentPose inject_pose_noise(const AgentPose& in, double sigma_pos, double sigma_yaw_deg,
                                   std::uint64_t seed) {
  if (sigma_pos < 0.0 || sigma_yaw_deg < 0.0)
    throw std::invalid_argument("inject_pose_noise: standard deviations must be >= 0");
  AgentPose out = in;
  out.noise = PoseNoise{sigma_pos, sigma_yaw_deg};
  out.out_of_range = sigma_pos > 0.6 || sigma_yaw_deg > 1.0;
  if (sigma_pos == 0.0 && sigma_yaw_deg == 0.0) return out;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const double dx = gauss(rng);
  const double dy = gauss(rng);
  const double dyaw = gauss(rng);
  out.pose.position += Vec2{dx, dy} * sigma_pos;
  out.pose.yaw = wrap_angle(out.pose.yaw + deg_to_rad(sigma_yaw_deg) * dyaw);
  return out;
}

/// splitmix64 finaliser; derives independent stream seeds from a run seed.
inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b = 0, std::uint64_t c = 0) {
  auto mix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  return mix(mix(mix(a) ^ b) ^ c);
}

}  // namespace slimcomm
