// Scene, sensor, BEV and prior-map tests. Reference values come from small
// oracles written here independently of the library code.

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <set>
#include <numbers>
#include <random>

#include "slimcomm/slimcomm.hpp"

using namespace slimcomm;

namespace {

constexpr double kPi = std::numbers::pi;

// Brute-force segment/rectangle test by dense sampling along the segment.
bool sampled_segment_hits(Vec2 a, Vec2 b, const OrientedBox& box, int samples = 4000) {
  for (int i = 0; i <= samples; ++i) {
    const Vec2 p = a + (b - a) * (double(i) / samples);
    const double c = std::cos(box.yaw), s = std::sin(box.yaw);
    const Vec2 d = p - box.center;
    const double lx = c * d.x + s * d.y;
    const double ly = -s * d.x + c * d.y;
    if (std::abs(lx) <= box.length / 2 && std::abs(ly) <= box.width / 2) return true;
  }
  return false;
}

// Distance from p to the rectangle outline, via the four edges.
double outline_distance(Vec2 p, const OrientedBox& box) {
  const auto c = box.corners();
  double best = 1e300;
  for (int i = 0; i < 4; ++i) {
    const Vec2 a = c[i], b = c[(i + 1) % 4];
    const Vec2 ab = b - a;
    const double t = std::clamp(dot(p - a, ab) / dot(ab, ab), 0.0, 1.0);
    best = std::min(best, norm(p - (a + ab * t)));
  }
  return best;
}

Scene single_target(Vec2 ego_velocity, Vec2 target_pos, Vec2 target_velocity) {
  Scene s;
  s.vehicles.push_back({0, {0, 0}, 0.0, ego_velocity, 4.5, 1.8, {}});
  s.vehicles.push_back({1, target_pos, 0.0, target_velocity, 4.5, 1.8, {}});
  s.agents = {0};
  return s;
}

GridSpec small_grid() {
  GridSpec g;
  g.rows = 100;
  g.cols = 352;
  return g;
}

Scene occlusion_scene() {
  ScenarioConfig c;
  c.layout = "occlusion";
  return generate_scene(c, 1);
}

}  // namespace

// ---------------------------------------------------------------- geometry

TEST(Geometry, WrapAngleRange) {
  EXPECT_DOUBLE_EQ(wrap_angle(kPi), kPi);
  EXPECT_DOUBLE_EQ(wrap_angle(-kPi), kPi);
  EXPECT_NEAR(wrap_angle(3 * kPi / 2), -kPi / 2, 1e-12);
}

TEST(Geometry, SegmentBoxAgreesWithSampling) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-10, 10);
  int hits = 0;
  for (int i = 0; i < 300; ++i) {
    const OrientedBox box{{u(rng) / 2, u(rng) / 2}, u(rng), 3.0 + std::abs(u(rng)) / 3, 1.0 + std::abs(u(rng)) / 5};
    const Vec2 a{u(rng), u(rng)}, b{u(rng), u(rng)};
    const bool exact = segment_intersects_box(a, b, box);
    const bool sampled = sampled_segment_hits(a, b, box);
    // Sampling can only miss grazing contacts.
    if (sampled) {
      EXPECT_TRUE(exact);
    } else if (exact) {
      EXPECT_LT(box.boundary_distance(a + (b - a) * *segment_box_entry(a, b, box)), 1e-2);
    }
    hits += exact;
  }
  EXPECT_GT(hits, 30);
}

// ---------------------------------------------------------------- scene

TEST(Scene, SingleAgentNoTraffic) {
  ScenarioConfig c;
  c.agents = 1;
  c.vehicles = 0;
  const Scene s = generate_scene(c, 7);
  EXPECT_EQ(s.vehicles.size(), 1u);
  EXPECT_EQ(s.agents, std::vector<int>{0});
}

TEST(Scene, SameSeedSameScene) {
  ScenarioConfig c;
  c.vehicles = 15;
  c.obstacles = 3;
  EXPECT_EQ(generate_scene(c, 11), generate_scene(c, 11));
  EXPECT_NE(generate_scene(c, 11), generate_scene(c, 12));
}

TEST(Scene, SpawnedBodiesDoNotOverlap) {
  ScenarioConfig c;
  c.vehicles = 25;
  c.agents = 4;
  c.obstacles = 4;
  const Scene s = generate_scene(c, 3);
  const auto bodies = scene_bodies(s);
  for (std::size_t i = 0; i < bodies.size(); ++i)
    for (std::size_t j = i + 1; j < bodies.size(); ++j) EXPECT_FALSE(boxes_overlap(bodies[i].box, bodies[j].box));
  std::set<int> ids;
  for (const auto& v : s.vehicles) {
    EXPECT_TRUE(ids.insert(v.id).second);
    EXPECT_LT(norm(v.velocity), 60.0);
    EXPECT_GT(v.yaw, -kPi);
    EXPECT_LE(v.yaw, kPi);
  }
  for (int a : s.agents) EXPECT_NE(s.find_vehicle(a), nullptr);
}

TEST(Scene, OverDenseConfigFailsFast) {
  ScenarioConfig c;
  c.vehicles = 400;
  c.area = {30.0, 10.0};
  EXPECT_THROW(generate_scene(c, 1), PlacementError);
}

TEST(Scene, OcclusionTemplateHidesVehicle) {
  const Scene s = occlusion_scene();
  EXPECT_TRUE(vehicle_hidden_from(s, 0, 2));
  EXPECT_FALSE(vehicle_hidden_from(s, 1, 2));
  // Every sight line from the ego to the hidden vehicle's outline crosses the van.
  const OrientedBox van = s.obstacles.at(0).box;
  for (Vec2 p : outline_samples(s.vehicle(2).box())) EXPECT_TRUE(sampled_segment_hits({0, 0}, p, van));
}

TEST(Scene, StepKinematics) {
  Scene s;
  s.vehicles.push_back({0, {0, 0}, 0.0, {10, 0}, 4.5, 1.8, {}});
  s.agents = {0};
  const Scene n = step_scene(s, 0.1);
  EXPECT_NEAR(n.vehicles[0].position.x, 1.0, 1e-12);
  EXPECT_EQ(n.vehicles[0].position.y, 0.0);
  EXPECT_EQ(n.frame_id, 1);
  EXPECT_THROW(step_scene(s, 0.0), std::invalid_argument);
  const Scene two = step_scene(step_scene(s, 0.05), 0.05);
  EXPECT_NEAR(two.vehicles[0].position.x, n.vehicles[0].position.x, 1e-12);
}

TEST(Scene, SteppingPreservesSpeed) {
  ScenarioConfig c;
  c.vehicles = 10;
  Scene s = generate_scene(c, 9);
  const Scene start = s;
  for (int i = 0; i < 20; ++i) s = step_scene(s, 0.1);
  for (std::size_t i = 0; i < s.vehicles.size(); ++i) EXPECT_EQ(s.vehicles[i].velocity, start.vehicles[i].velocity);
}

TEST(Scene, PoseNoiseZeroIsIdentity) {
  const AgentPose p{{{3.0, -2.0}, 0.4}, std::nullopt, false};
  const AgentPose q = inject_pose_noise(p, 0.0, 0.0, 99);
  EXPECT_EQ(q.pose, p.pose);
  ASSERT_TRUE(q.noise.has_value());
}

TEST(Scene, PoseNoiseDeterministicAndValidated) {
  const AgentPose p{{{0.0, 0.0}, 0.0}, std::nullopt, false};
  EXPECT_EQ(inject_pose_noise(p, 0.6, 1.0, 4), inject_pose_noise(p, 0.6, 1.0, 4));
  EXPECT_THROW(inject_pose_noise(p, -0.1, 0.0, 4), std::invalid_argument);
  EXPECT_FALSE(inject_pose_noise(p, 0.6, 1.0, 4).out_of_range);
  EXPECT_TRUE(inject_pose_noise(p, 0.7, 0.0, 4).out_of_range);
}

TEST(Scene, PoseNoiseSampleStd) {
  const AgentPose p{{{0.0, 0.0}, 0.0}, std::nullopt, false};
  double sx = 0, sxx = 0;
  const int n = 10000;
  for (int i = 0; i < n; ++i) {
    const double x = inject_pose_noise(p, 0.3, 0.0, mix_seed(77, i)).pose.position.x;
    sx += x;
    sxx += x * x;
  }
  const double mean = sx / n;
  const double sd = std::sqrt(sxx / n - mean * mean);
  EXPECT_NEAR(sd, 0.3, 0.05 * 0.3);
}

// ---------------------------------------------------------------- sensors

TEST(Sensors, RotateEgoVelocity) {
  const RadarMount identity{};
  EXPECT_EQ(rotate_ego_velocity({10, 0}, identity), (Vec2{10, 0}));
  const RadarMount left{deg_to_rad(90.0), {}};
  const Vec2 r = rotate_ego_velocity({10, 0}, left);
  EXPECT_NEAR(r.x, 0.0, 1e-12);
  EXPECT_NEAR(r.y, -10.0, 1e-12);
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-30, 30);
  for (int i = 0; i < 100; ++i) {
    const Vec2 v{u(rng), u(rng)};
    EXPECT_NEAR(norm(rotate_ego_velocity(v, RadarMount{u(rng), {}})), norm(v), 1e-9);
  }
}

TEST(Sensors, HeadOnClosingDoppler) {
  const Scene s = single_target({10, 0}, {20, 0}, {0, 0});
  const RadarMount mount{0.0, {2.3, 0.0}, 1.0, 150.0};  // single ray straight ahead
  const auto cloud = radar_scan(s, s.vehicle(0), mount, 0, 1);
  ASSERT_EQ(cloud.size(), 1u);
  EXPECT_NEAR(*cloud.points[0].doppler, -10.0, 1e-12);
}

TEST(Sensors, RecedingTargetDoppler) {
  const Scene s = single_target({0, 0}, {20, 0}, {5, 0});
  const RadarMount mount{0.0, {2.3, 0.0}, 1.0, 150.0};
  const auto cloud = radar_scan(s, s.vehicle(0), mount, 0, 1);
  ASSERT_EQ(cloud.size(), 1u);
  EXPECT_NEAR(*cloud.points[0].doppler, 5.0, 1e-12);
}

TEST(Sensors, SixtyDegreeBearingDoppler) {
  const Vec2 target = rotate({20.0, 0.0}, deg_to_rad(60.0));
  Scene s = single_target({10, 0}, target, {0, 0});
  s.vehicles[1].yaw = deg_to_rad(60.0);
  const RadarMount mount{0.0, {0.0, 0.0}, 120.0, 150.0};
  const auto cloud = radar_scan(s, s.vehicle(0), mount, 0, 1);
  ASSERT_FALSE(cloud.empty());
  bool near_sixty = false;
  for (const auto& p : cloud.points) {
    const Vec2 u = mount.point_to_mount(p.position) / norm(mount.point_to_mount(p.position));
    EXPECT_NEAR(*p.doppler, -10.0 * u.x, 1e-9);
    if (std::abs(std::atan2(u.y, u.x) - deg_to_rad(60.0)) < deg_to_rad(0.6)) {
      near_sixty = true;
      EXPECT_NEAR(*p.doppler, -5.0, 0.1);
    }
  }
  EXPECT_TRUE(near_sixty);
  // The stated line of sight itself.
  EXPECT_NEAR(dot(Vec2{0, 0} - Vec2{10, 0}, Vec2{0.5, std::sqrt(3.0) / 2}), -5.0, 1e-12);
}

TEST(Sensors, DopplerMatchesRangeRate) {
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> u(-12, 12);
  for (int trial = 0; trial < 10; ++trial) {
    const Vec2 ev{u(rng), u(rng) / 4}, tv{u(rng), u(rng)};
    const Scene s = single_target(ev, {18.0 + u(rng) / 3, u(rng)}, tv);
    const auto rig = SensorRig::default_rig();
    const VehicleState& ego = s.vehicle(0);
    for (int k = 0; k < 6; ++k) {
      const auto& m = rig.radars[k];
      for (const auto& p : radar_scan(s, ego, m, k, 3).points) {
        const Vec2 origin = ego.pose().to_world(m.translation);
        const Vec2 hit = ego.pose().to_world(p.position);
        const double eps = 1e-6;
        const double r0 = norm(hit - origin);
        const double r1 = norm(hit + tv * eps - (origin + ev * eps));
        EXPECT_NEAR(*p.doppler, (r1 - r0) / eps, 1e-4);
      }
    }
  }
}

TEST(Sensors, DopplerBoundedByClosingSpeed) {
  ScenarioConfig c;
  c.vehicles = 20;
  c.speed_max = 20.0;
  const Scene s = generate_scene(c, 5);
  const auto cloud = radar_scan_rig(s, s.vehicle(0), SensorRig::default_rig(), 2);
  ASSERT_FALSE(cloud.empty());
  for (const auto& p : cloud.points) {
    ASSERT_TRUE(p.doppler.has_value());
    EXPECT_EQ(p.kind, SensorKind::Radar);
    EXPECT_LE(std::abs(*p.doppler), 40.0 + 1e-9);
  }
}

TEST(Sensors, LidarEmptyScene) {
  Scene s;
  s.vehicles.push_back({0, {0, 0}, 0.0, {}, 4.5, 1.8, {}});
  s.agents = {0};
  EXPECT_TRUE(lidar_scan(s, s.vehicle(0), LidarSpec{}, 1).empty());
}

TEST(Sensors, LidarPointsLieOnTargetBoundary) {
  Scene s = single_target({0, 0}, {15, 3}, {0, 0});
  s.vehicles[1].yaw = 0.3;
  LidarSpec exact;
  exact.range_noise = 0.0;
  const OrientedBox box = s.vehicle(1).box();
  for (const auto& p : lidar_scan(s, s.vehicle(0), exact, 1).points)
    EXPECT_LT(outline_distance(s.vehicle(0).pose().to_world(p.position), box), 1e-9);

  const LidarSpec noisy;
  const auto cloud = lidar_scan(s, s.vehicle(0), noisy, 1);
  ASSERT_GT(cloud.size(), 100u);
  std::size_t within3 = 0;
  for (const auto& p : cloud.points) {
    const double d = outline_distance(s.vehicle(0).pose().to_world(p.position), box);
    within3 += d <= 3 * noisy.range_noise;
    EXPECT_LE(d, 5 * noisy.range_noise);
  }
  // Gaussian range noise: about 0.3% of points fall beyond 3 sigma.
  EXPECT_GE(double(within3) / cloud.size(), 0.99);
}

TEST(Sensors, HiddenVehicleProducesNoReturns) {
  const Scene s = occlusion_scene();
  const VehicleState& ego = s.vehicle(0);
  OrientedBox hidden = s.vehicle(2).box();
  hidden.length += 0.2;
  hidden.width += 0.2;
  for (const auto& p : lidar_scan(s, ego, LidarSpec{}, 3).points)
    EXPECT_FALSE(hidden.contains(ego.pose().to_world(p.position)));
  for (const auto& p : radar_scan_rig(s, ego, SensorRig::default_rig(), 3).points)
    EXPECT_FALSE(hidden.contains(ego.pose().to_world(p.position)));
}

TEST(Sensors, ReturnsComeFromVisibleSurfaces) {
  ScenarioConfig c;
  c.vehicles = 12;
  c.obstacles = 2;
  const Scene s = generate_scene(c, 8);
  const VehicleState& ego = s.vehicle(0);
  LidarSpec spec;
  spec.range_noise = 0.0;
  spec.rays = 360;
  const auto bodies = scene_bodies(s);
  for (const auto& p : lidar_scan(s, ego, spec, 1).points) {
    const Vec2 hit = ego.pose().to_world(p.position);
    // Stop just short of the surface so the struck body itself does not count.
    const Vec2 before = ego.position + (hit - ego.position) * (1.0 - 1e-4);
    for (std::size_t b = 0; b < bodies.size(); ++b) {
      if (bodies[b].vehicle_id == ego.id) continue;
      EXPECT_FALSE(sampled_segment_hits(ego.position, before, bodies[b].box, 500));
    }
  }
}

TEST(Sensors, DeterministicPerSeed) {
  ScenarioConfig c;
  c.vehicles = 8;
  const Scene s = generate_scene(c, 2);
  const auto a = lidar_scan(s, s.vehicle(0), LidarSpec{}, 5);
  const auto b = lidar_scan(s, s.vehicle(0), LidarSpec{}, 5);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a.points[i].position, b.points[i].position);
    EXPECT_EQ(a.points[i].z, b.points[i].z);
  }
}

// ---------------------------------------------------------------- bev

TEST(Bev, PillarizeSinglePoint) {
  const GridSpec g = small_grid();
  SensorCloud c;
  const Vec2 centre = g.to_metric({10.0, 20.0});
  c.points.push_back({centre, -0.5, std::nullopt, SensorKind::Lidar, -1});
  const auto st = pillarize(c, g);
  EXPECT_EQ(st.count(10, 20), 1);
  EXPECT_DOUBLE_EQ(st.mean_z(10, 20), -0.5);
  int total = 0;
  for (int v = 0; v < g.rows; ++v)
    for (int u = 0; u < g.cols; ++u) total += st.count(u, v);
  EXPECT_EQ(total, 1);
}

TEST(Bev, PillarCapacity) {
  const GridSpec g = small_grid();
  SensorCloud c;
  for (int i = 0; i < 40; ++i) c.points.push_back({{1.0, 1.0}, -0.5 - 0.01 * i, std::nullopt, SensorKind::Lidar, -1});
  const auto st = pillarize(c, g);
  const auto cell = g.pillar_of({1.0, 1.0});
  EXPECT_EQ(st.count(cell->first, cell->second), 32);
  EXPECT_EQ(st.dropped(), 8u);
  // The earliest points are kept.
  EXPECT_DOUBLE_EQ(st.max_z(cell->first, cell->second), -0.5);
  EXPECT_NEAR(st.min_z(cell->first, cell->second), -0.5 - 0.31, 1e-12);
}

TEST(Bev, BoundaryPointUsesFloor) {
  const GridSpec g = small_grid();
  const auto a = g.pillar_of({0.4, -0.4});
  ASSERT_TRUE(a.has_value());
  EXPECT_EQ(a->first, g.cols / 2 + 1);
  EXPECT_EQ(a->second, g.rows / 2 - 1);
  EXPECT_EQ(g.pillar_of({0.4, -0.4}), a);
  EXPECT_FALSE(g.pillar_of({g.extent_x() / 2, 0.0}).has_value());
  EXPECT_TRUE(g.pillar_of({-g.extent_x() / 2, 0.0}).has_value());
}

TEST(Bev, PyramidShapes) {
  GridSpec g;  // 200 x 704
  const PillarStats empty(g);
  const auto p = encode_features(empty, empty, PyramidConfig{}, 3);
  EXPECT_EQ(p[0].channels(), 128);
  EXPECT_EQ(p[0].rows(), 100);
  EXPECT_EQ(p[0].cols(), 352);
  EXPECT_EQ(p[1].channels(), 256);
  EXPECT_EQ(p[1].rows(), 50);
  EXPECT_EQ(p[1].cols(), 176);
  EXPECT_EQ(p[2].channels(), 512);
  EXPECT_EQ(p[2].rows(), 25);
  EXPECT_EQ(p[2].cols(), 88);
  for (int l = 0; l < kNumScales; ++l) EXPECT_EQ(p[l].count_nonzero(), 0u);
}

TEST(Bev, EncoderDeterministic) {
  const Scene s = occlusion_scene();
  const GridSpec g = small_grid();
  const auto rig = SensorRig::default_rig();
  const auto l = pillarize(lidar_scan(s, s.vehicle(0), rig.lidar, 1), g);
  const auto r = pillarize(radar_scan_rig(s, s.vehicle(0), rig, 1), g);
  EXPECT_EQ(encode_features(l, r, PyramidConfig::small(), 9), encode_features(l, r, PyramidConfig::small(), 9));
  EXPECT_NE(encode_features(l, r, PyramidConfig::small(), 9), encode_features(l, r, PyramidConfig::small(), 10));
}

TEST(Bev, DeeperLevelsArePooledProjections) {
  const Scene s = occlusion_scene();
  const GridSpec g = small_grid();
  const auto rig = SensorRig::default_rig();
  const auto stats = pillar_statistics(pillarize(lidar_scan(s, s.vehicle(0), rig.lidar, 1), g),
                                       pillarize(radar_scan_rig(s, s.vehicle(0), rig, 1), g));
  const auto cfg = PyramidConfig::small();
  const auto pyr = encode_statistics(stats, cfg, 4);
  const auto w = EncoderWeights::make(cfg, 4);
  for (int l = 1; l < kNumScales; ++l) {
    const auto prev = downsample_avg(pyr[l - 1], 2, l);
    for (int v = 0; v < prev.rows(); ++v)
      for (int u = 0; u < prev.cols(); ++u)
        for (int c = 0; c < cfg.channels[l]; ++c) {
          double ref = 0.0;
          for (int k = 0; k < cfg.channels[l - 1]; ++k) ref += w.stage[l](c, k) * prev.at(u, v, k);
          ASSERT_NEAR(pyr[l].at(u, v, c), ref, 1e-4);
        }
  }
}

TEST(Bev, CountScalingTouchesOnlyCountChannels) {
  const GridSpec g = small_grid();
  BevGrid<float> stats(kStatDims, g.rows, g.cols);
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<float> u(0.05f, 0.5f);
  for (int k = 0; k < 50; ++k) {
    const int cu = int(rng() % g.cols), cv = int(rng() % g.rows);
    for (int c = 0; c < kStatDims; ++c) stats.at(cu, cv, c) = u(rng);
  }
  BevGrid<float> doubled = stats;
  for (int v = 0; v < g.rows; ++v)
    for (int cu = 0; cu < g.cols; ++cu) {
      doubled.at(cu, v, kLidarCount) *= 2.0f;
      doubled.at(cu, v, kRadarCount) *= 2.0f;
    }
  const auto cfg = PyramidConfig::small();
  const auto w = EncoderWeights::make(cfg, 6);
  const auto a = encode_statistics(stats, cfg, 6);
  const auto b = encode_statistics(doubled, cfg, 6);
  int untouched = 0, touched = 0;
  for (int c = 0; c < cfg.channels[0]; ++c) {
    const bool reads_count = w.composite[0](c, kLidarCount) != 0.0f || w.composite[0](c, kRadarCount) != 0.0f;
    bool same = true;
    for (int v = 0; v < a[0].rows(); ++v)
      for (int cu = 0; cu < a[0].cols(); ++cu) same = same && a[0].at(cu, v, c) == b[0].at(cu, v, c);
    EXPECT_EQ(same, !reads_count) << "channel " << c;
    (reads_count ? touched : untouched)++;
  }
  EXPECT_GT(untouched, 0);
  EXPECT_GT(touched, 0);
}

TEST(Bev, BilinearSampleBasics) {
  BevGrid<float> m(2, 6, 8);
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<float> u(-1, 1);
  for (float& x : m.data()) x = u(rng);
  const auto at = bilinear_sample(m, {3.0, 2.0});
  EXPECT_EQ(at[0], double(m.at(3, 2, 0)));
  EXPECT_EQ(at[1], double(m.at(3, 2, 1)));
  const auto mid = bilinear_sample(m, {3.5, 2.0});
  EXPECT_NEAR(mid[0], (double(m.at(3, 2, 0)) + m.at(4, 2, 0)) / 2, 1e-12);

  BevGrid<float> flat(1, 6, 8, kPillarLevel, 0.7f);
  for (int i = 0; i < 50; ++i) EXPECT_NEAR(bilinear_sample(flat, {u(rng) * 3 + 3.5, u(rng) * 2 + 2.5})[0], 0.7, 1e-6);
  // Outside the grid the missing neighbours contribute zero.
  EXPECT_NEAR(bilinear_sample(flat, {-0.5, 2.0})[0], 0.35, 1e-6);
}

TEST(Bev, BilinearSampleIsLinear) {
  BevGrid<float> a(3, 5, 7), b(3, 5, 7), ab(3, 5, 7);
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<float> u(-1, 1);
  for (float& x : a.data()) x = u(rng);
  for (float& x : b.data()) x = u(rng);
  const double alpha = 0.75, beta = -1.5;
  for (std::size_t i = 0; i < ab.data().size(); ++i) ab.data()[i] = float(alpha * a.data()[i] + beta * b.data()[i]);
  for (int t = 0; t < 40; ++t) {
    const Vec2 loc{u(rng) * 4 + 3, u(rng) * 3 + 2};
    const auto sa = bilinear_sample(a, loc), sb = bilinear_sample(b, loc), sab = bilinear_sample(ab, loc);
    for (int c = 0; c < 3; ++c) EXPECT_NEAR(sab[c], alpha * sa[c] + beta * sb[c], 1e-5);
  }
}

TEST(Bev, WarpIdentityAndShift) {
  GridSpec g;
  g.rows = 20;
  g.cols = 40;
  BevGrid<float> m(2, g.rows, g.cols);
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<float> u(0, 1);
  for (float& x : m.data()) x = u(rng);
  const Pose2 p{{3.0, -1.0}, 0.3};
  EXPECT_EQ(warp_to_frame(m, g, p, p, Interpolation::Nearest), m);

  const Pose2 src{{0, 0}, 0};
  const Pose2 dst{{g.cell, 0}, 0};
  const auto shifted = warp_to_frame(m, g, src, dst, Interpolation::Nearest);
  for (int v = 0; v < g.rows; ++v)
    for (int cu = 0; cu < g.cols; ++cu)
      for (int c = 0; c < 2; ++c) EXPECT_EQ(shifted.at(cu, v, c), cu + 1 < g.cols ? m.at(cu + 1, v, c) : 0.0f);
}

TEST(Bev, WarpRoundTripKeepsBlobPeak) {
  GridSpec g;
  g.rows = 60;
  g.cols = 80;
  auto blob = BevGrid<float>::scalar(g.rows, g.cols);
  const Vec2 c{45.0, 28.0};
  for (int v = 0; v < g.rows; ++v)
    for (int u = 0; u < g.cols; ++u)
      blob.at(u, v) = float(std::exp(-norm(Vec2{double(u), double(v)} - c) * norm(Vec2{double(u), double(v)} - c) / 18.0));
  const Pose2 a{{0, 0}, 0};
  const Pose2 b{{1.3, -0.7}, deg_to_rad(7.0)};
  const auto there = warp_to_frame(blob, g, a, b, Interpolation::Bilinear);
  const auto back = warp_to_frame(there, g, b, a, Interpolation::Bilinear);
  int bu = 0, bv = 0;
  for (int v = 0; v < g.rows; ++v)
    for (int u = 0; u < g.cols; ++u)
      if (back.at(u, v) > back.at(bu, bv)) bu = u, bv = v;
  EXPECT_LT(norm(Vec2{double(bu), double(bv)} - c), 1.0);
}

TEST(Bev, WarpZerosAndBounds) {
  GridSpec g;
  g.rows = 30;
  g.cols = 40;
  const BevGrid<float> zero(3, g.rows, g.cols);
  const Pose2 a{{0, 0}, 0};
  const Pose2 b{{2.1, 0.9}, 0.4};
  EXPECT_EQ(warp_to_frame(zero, g, a, b, Interpolation::Bilinear).count_nonzero(), 0u);
  BevGrid<float> m(1, g.rows, g.cols);
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<float> u(0.2f, 0.9f);
  for (float& x : m.data()) x = u(rng);
  const auto w = warp_to_frame(m, g, a, b, Interpolation::Bilinear);
  for (float x : w.data()) {
    EXPECT_GE(x, 0.0f);  // out-of-grid samples read as zero
    EXPECT_LE(x, 0.9f + 1e-6f);
  }
  EXPECT_THROW(warp_to_frame(m, g, a, Pose2{{std::nan(""), 0}, 0}, Interpolation::Nearest), std::invalid_argument);
}

// ---------------------------------------------------------------- priors

TEST(Priors, StaticTargetCancels) {
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> u(-25, 25);
  const auto rig = SensorRig::default_rig();
  for (int i = 0; i < 10; ++i) {
    const Vec2 ev{u(rng), u(rng) / 5};
    const Scene s = single_target(ev, {u(rng) > 0 ? 20.0 : -20.0, u(rng) / 3}, {0, 0});
    const auto cloud = radar_scan_rig(s, s.vehicle(0), rig, 1);
    const auto radial = compensate_doppler(cloud, ev, rig.radars);
    ASSERT_EQ(radial.samples.size(), cloud.size());
    for (const auto& r : radial.samples) EXPECT_NEAR(r.v_radial, 0.0, 1e-12);
  }
}

TEST(Priors, StationaryEgoKeepsDoppler) {
  const Scene s = single_target({0, 0}, {20, 1}, {-7, 2});
  const auto rig = SensorRig::default_rig();
  const auto cloud = radar_scan_rig(s, s.vehicle(0), rig, 1);
  const auto radial = compensate_doppler(cloud, {0, 0}, rig.radars);
  for (const auto& r : radial.samples) EXPECT_EQ(r.v_radial, *cloud.points[r.point].doppler);
}

TEST(Priors, SixtyDegreeCompensation) {
  SensorCloud c;
  const Vec2 u{std::cos(kPi / 3), std::sin(kPi / 3)};
  c.points.push_back({u * 20.0, -0.5, -5.0, SensorKind::Radar, 0});
  c.points.push_back({{0.0, 0.0}, -0.5, 1.0, SensorKind::Radar, 0});  // at the mount origin
  const auto r = compensate_doppler(c, {10, 0}, {RadarMount{}});
  ASSERT_EQ(r.samples.size(), 1u);
  EXPECT_NEAR(r.samples[0].v_radial, 0.0, 1e-12);
  EXPECT_EQ(r.skipped, 1u);
}

TEST(Priors, DynamicMapThreshold) {
  const GridSpec g = small_grid();
  SensorCloud c;
  c.points.push_back({{10.0, 2.0}, -0.5, 3.0, SensorKind::Radar, 0});
  c.points.push_back({{-8.0, -3.0}, -0.5, 0.5, SensorKind::Radar, 0});
  const auto r = compensate_doppler(c, {0, 0}, {RadarMount{}});
  const auto d = dynamic_map(c, r, g, 1.0);
  const auto fast = g.pillar_of({10.0, 2.0});
  EXPECT_EQ(d.count_nonzero(), 1u);
  EXPECT_EQ(d.at(fast->first, fast->second), 1.0f);
}

TEST(Priors, StaticSceneMovingEgoHasNoDynamicCells) {
  ScenarioConfig cfg;
  cfg.vehicles = 12;
  cfg.speed_min = cfg.speed_max = 0.0;
  Scene s = generate_scene(cfg, 4);
  ASSERT_EQ(s.vehicles[0].id, 0);
  s.vehicles[0].velocity = {14.0, 0.0};
  const auto rig = SensorRig::default_rig();
  const auto cloud = radar_scan_rig(s, s.vehicle(0), rig, 1);
  const auto d = dynamic_map(cloud, compensate_doppler(cloud, {14.0, 0.0}, rig.radars), GridSpec{}, 1.0);
  EXPECT_EQ(d.count_nonzero(), 0u);
}

TEST(Priors, TangentialMotionIsInvisible) {
  const Scene s = single_target({0, 0}, {20, 0}, {0, 5});
  const RadarMount mount{0.0, {0.0, 0.0}, 1.0, 150.0};
  const auto cloud = radar_scan(s, s.vehicle(0), mount, 0, 1);
  ASSERT_EQ(cloud.size(), 1u);
  const auto r = compensate_doppler(cloud, {0, 0}, {mount});
  EXPECT_NEAR(r.samples[0].v_radial, 0.0, 1e-12);
  EXPECT_EQ(dynamic_map(cloud, r, small_grid(), 1.0).count_nonzero(), 0u);
}

TEST(Priors, DynamicMapMonotone) {
  const GridSpec g = small_grid();
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(-15, 15);
  SensorCloud c;
  for (int i = 0; i < 60; ++i) c.points.push_back({{u(rng) * 2, u(rng)}, -0.5, u(rng) / 5, SensorKind::Radar, 0});
  const auto before = dynamic_map(c, compensate_doppler(c, {0, 0}, {RadarMount{}}), g, 1.0);
  c.points.push_back({{u(rng), u(rng)}, -0.5, 4.0, SensorKind::Radar, 0});
  const auto after = dynamic_map(c, compensate_doppler(c, {0, 0}, {RadarMount{}}), g, 1.0);
  for (std::size_t i = 0; i < before.data().size(); ++i) EXPECT_GE(after.data()[i], before.data()[i]);
  EXPECT_GT(after.count_nonzero(), 0u);
}

TEST(Priors, ForegroundRules) {
  const Thresholds th;
  const std::vector<double> tall{1.5}, low{-2.0, -1.5}, mixed{-0.5, 1.5}, in_band{-0.5}, none{};
  EXPECT_FALSE(foreground_cell(tall, th));
  EXPECT_FALSE(foreground_cell(low, th));
  EXPECT_FALSE(foreground_cell(mixed, th));
  EXPECT_TRUE(foreground_cell(in_band, th));
  EXPECT_FALSE(foreground_cell(none, th));
  const std::vector<double> edges{-1.2}, top{0.0}, at_max{1.0, -0.3};
  EXPECT_TRUE(foreground_cell(edges, th));
  EXPECT_TRUE(foreground_cell(top, th));
  EXPECT_TRUE(foreground_cell(at_max, th));
}

TEST(Priors, ForegroundMaskUnion) {
  const GridSpec g = small_grid();
  SensorCloud l, r;
  l.points.push_back({{5.0, 5.0}, -0.5, std::nullopt, SensorKind::Lidar, -1});
  r.points.push_back({{-5.0, 5.0}, -0.7, 0.0, SensorKind::Radar, 0});
  r.points.push_back({{5.0, -5.0}, 2.0, 0.0, SensorKind::Radar, 0});
  const Thresholds th;
  const auto fg = mask_union(foreground_mask(pillarize(l, g), th), foreground_mask(pillarize(r, g), th));
  EXPECT_EQ(fg.count_nonzero(), 2u);
}

TEST(Priors, DensityScale) {
  auto counts = BevGrid<float>::scalar(2, 2);
  counts.at(0, 0) = 16;
  counts.at(1, 0) = 32;
  const auto ds = density_scale(counts, 32);
  EXPECT_EQ(ds.at(0, 0), 0.5f);
  EXPECT_EQ(ds.at(1, 0), 1.0f);
  EXPECT_EQ(ds.at(0, 1), 0.0f);
}

TEST(Priors, ForegroundDensity) {
  auto fg = BevGrid<float>::scalar(2, 2), ds = BevGrid<float>::scalar(2, 2);
  fg.at(0, 0) = 1;
  ds.at(0, 0) = 0.5f;
  ds.at(1, 0) = 1.0f;
  const auto v = foreground_density_map(fg, ds);
  EXPECT_EQ(v.at(0, 0), 0.5f);
  EXPECT_EQ(v.at(1, 0), 0.0f);
  EXPECT_THROW(foreground_density_map(fg, BevGrid<float>::scalar(3, 2)), std::invalid_argument);
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<float> u(0, 1);
  auto f2 = BevGrid<float>::scalar(20, 20), d2 = BevGrid<float>::scalar(20, 20);
  for (std::size_t i = 0; i < f2.data().size(); ++i) f2.data()[i] = u(rng) > 0.5f, d2.data()[i] = u(rng);
  const auto v2 = foreground_density_map(f2, d2);
  for (std::size_t i = 0; i < v2.data().size(); ++i) {
    EXPECT_LE(v2.data()[i], d2.data()[i]);
    if (f2.data()[i] == 0.0f) {
      EXPECT_EQ(v2.data()[i], 0.0f);
    }
  }
}

TEST(Priors, EmptySceneMapsAreZero) {
  Scene s;
  s.vehicles.push_back({0, {0, 0}, 0.0, {5, 0}, 4.5, 1.8, {}});
  s.agents = {0};
  const GridSpec g = small_grid();
  const auto rig = SensorRig::default_rig();
  AgentSensing a{lidar_scan(s, s.vehicle(0), rig.lidar, 1), radar_scan_rig(s, s.vehicle(0), rig, 1), {}, {}};
  a.lidar_stats = pillarize(a.lidar, g);
  a.radar_stats = pillarize(a.radar, g);
  const auto p = compute_priors(a, {5, 0}, rig, Thresholds{}, g);
  EXPECT_EQ(p.dynamic.count_nonzero(), 0u);
  EXPECT_EQ(p.confidence.count_nonzero(), 0u);
  EXPECT_EQ(p.density.count_nonzero(), 0u);
}

TEST(Priors, ConfidenceIsBlurredEvidence) {
  const Scene s = single_target({0, 0}, {12, 2}, {0, 0});
  const GridSpec g = small_grid();
  const auto rig = SensorRig::default_rig();
  AgentSensing a{lidar_scan(s, s.vehicle(0), rig.lidar, 1), radar_scan_rig(s, s.vehicle(0), rig, 1), {}, {}};
  a.lidar_stats = pillarize(a.lidar, g);
  a.radar_stats = pillarize(a.radar, g);
  const auto p = compute_priors(a, {0, 0}, rig, Thresholds{}, g);
  // Direct 7x7 convolution with a normalised sigma = 1 kernel.
  double ksum = 0;
  for (int i = -3; i <= 3; ++i) ksum += std::exp(-0.5 * i * i);
  for (int v = 0; v < g.rows; ++v)
    for (int u = 0; u < g.cols; ++u) {
      double ref = 0;
      for (int dv = -3; dv <= 3; ++dv)
        for (int du = -3; du <= 3; ++du)
          if (p.foreground.in_bounds(u + du, v + dv))
            ref += std::exp(-0.5 * (du * du + dv * dv)) / (ksum * ksum) * p.foreground.at(u + du, v + dv);
      ASSERT_NEAR(p.confidence.at(u, v), std::min(ref, 1.0), 1e-6);
    }
  // The global maximum sits on the target's visible outline.
  int bu = 0, bv = 0;
  for (int v = 0; v < g.rows; ++v)
    for (int u = 0; u < g.cols; ++u)
      if (p.confidence.at(u, v) > p.confidence.at(bu, bv)) bu = u, bv = v;
  EXPECT_GT(p.confidence.at(bu, bv), 0.0f);
  EXPECT_LT(s.vehicle(1).box().boundary_distance(g.to_metric({double(bu), double(bv)})), 1.0);
}

TEST(Priors, HiddenVehicleHasNoConfidence) {
  const Scene s = occlusion_scene();
  const GridSpec g = small_grid();
  const auto rig = SensorRig::default_rig();
  AgentSensing a{lidar_scan(s, s.vehicle(0), rig.lidar, 1), radar_scan_rig(s, s.vehicle(0), rig, 1), {}, {}};
  a.lidar_stats = pillarize(a.lidar, g);
  a.radar_stats = pillarize(a.radar, g);
  const auto p = compute_priors(a, {0, 0}, rig, Thresholds{}, g);
  const OrientedBox hidden = s.vehicle(2).box();
  int cells = 0;
  for (int v = 0; v < g.rows; ++v)
    for (int u = 0; u < g.cols; ++u)
      if (hidden.contains(g.to_metric({double(u), double(v)}))) {
        ++cells;
        EXPECT_EQ(p.confidence.at(u, v), 0.0f);
      }
  EXPECT_GT(cells, 20);
}

TEST(Priors, DownsampledDynamicIsBlockMax) {
  const GridSpec g = small_grid();
  auto d = BevGrid<float>::scalar(g.rows, g.cols);
  std::mt19937_64 rng(6);
  for (int i = 0; i < 40; ++i) d.at(int(rng() % g.cols), int(rng() % g.rows)) = 1.0f;
  for (int l = 0; l < kNumScales; ++l) {
    const int f = GridSpec::level_factor(l);
    const auto dl = downsample_max(d, f, l);
    for (int v = 0; v < dl.rows(); ++v)
      for (int u = 0; u < dl.cols(); ++u) {
        float m = 0.0f;
        for (int dv = 0; dv < f; ++dv)
          for (int du = 0; du < f; ++du) m = std::max(m, d.at(u * f + du, v * f + dv));
        EXPECT_EQ(dl.at(u, v), m);
      }
  }
}
