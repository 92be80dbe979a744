#pragma once

// End-to-end runs: per-frame sensing, priors, query exchange, collaborator
// replies, fusion and the coverage / bandwidth metrics, plus the sweeps and
// mode comparison built on top.

#include <json.hpp>

#include <algorithm>
#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "slimcomm/bev.hpp"
#include "slimcomm/comm.hpp"
#include "slimcomm/config.hpp"
#include "slimcomm/fusion.hpp"
#include "slimcomm/priors.hpp"
#include "slimcomm/querygen.hpp"
#include "slimcomm/scene.hpp"
#include "slimcomm/sensors.hpp"

namespace slimcomm {

enum class Mode { SlimComm, FullMap, NoErp, NoHrp, NoHalo, NoComm };

inline constexpr std::array<Mode, 6> kAllModes{Mode::SlimComm, Mode::FullMap, Mode::NoErp,
                                               Mode::NoHrp,    Mode::NoHalo,  Mode::NoComm};

inline std::string to_string(Mode m) {
  switch (m) {
    case Mode::SlimComm: return "slimcomm";
    case Mode::FullMap: return "full-map";
    case Mode::NoErp: return "no-erp";
    case Mode::NoHrp: return "no-hrp";
    case Mode::NoHalo: return "no-halo";
    case Mode::NoComm: return "no-comm";
  }
  return "?";
}

inline Mode parse_mode(const std::string& s) {
  for (Mode m : kAllModes)
    if (to_string(m) == s) return m;
  throw std::invalid_argument("unknown mode '" + s + "'");
}

/// Frozen network tables shared by every agent in a run.
struct Model {
  std::uint64_t encoder_seed = 0;
  GeneratorParams generator;
  FusionParams fusion;

  static Model make(const Settings& s) {
    return {mix_seed(s.model_seed, 0xe4c), GeneratorParams::make(s.pyramid.channels, s.querygen, s.model_seed),
            FusionParams::make(s.pyramid.channels, s.querygen.heads, s.querygen.points, s.model_seed)};
  }
};

struct AgentView {
  int id = 0;
  AgentSensing sensing;
  FeaturePyramid features;
  PriorMaps priors;
  AgentPose reported;  // self-reported pose, possibly noisy
};

inline AgentView sense_agent(const Scene& scene, int id, const Settings& s, const Model& model,
                             std::uint64_t run_seed) {
  const VehicleState& v = scene.vehicle(id);
  const auto frame = static_cast<std::uint64_t>(scene.frame_id);
  const auto uid = static_cast<std::uint64_t>(id);
  AgentView a;
  a.id = id;
  a.sensing.lidar = lidar_scan(scene, v, s.rig.lidar, mix_seed(run_seed, frame, 0x11da0000u + uid));
  a.sensing.radar = radar_scan_rig(scene, v, s.rig, mix_seed(run_seed, frame, 0x4ada0000u + uid));
  a.sensing.lidar_stats = pillarize(a.sensing.lidar, s.grid);
  a.sensing.radar_stats = pillarize(a.sensing.radar, s.grid);
  a.features = encode_features(a.sensing.lidar_stats, a.sensing.radar_stats, s.pyramid, model.encoder_seed);
  a.priors = compute_priors(a.sensing, v.pose().direction_to_local(v.velocity), s.rig, s.priors, s.grid);
  a.reported.pose = v.pose();
  if (s.noise.enabled)
    a.reported = inject_pose_noise(a.reported, s.noise.sigma_pos, s.noise.sigma_yaw_deg,
                                   mix_seed(run_seed, frame, 0x9053000u + uid));
  return a;
}

struct Coverage {
  double visible = 0.0;
  double occluded = 0.0;
  int visible_cells = 0;
  int occluded_cells = 0;
  int occluded_vehicles = 0;
};

/// Level-0 cells (ego frame) whose centres fall inside a vehicle's box.
inline std::vector<Cell> vehicle_cells(const VehicleState& target, const Pose2& ego, const GridSpec& spec) {
  std::vector<Cell> out;
  const OrientedBox box{ego.to_local(target.position), wrap_angle(target.yaw - ego.yaw), target.length, target.width};
  const Vec2 lo = spec.to_cell_coords(box.center - Vec2{4.0, 4.0}, 0);
  const Vec2 hi = spec.to_cell_coords(box.center + Vec2{4.0, 4.0}, 0);
  for (int v = std::max(0, int(std::floor(lo.y))); v <= std::min(spec.rows_at(0) - 1, int(std::ceil(hi.y))); ++v)
    for (int u = std::max(0, int(std::floor(lo.x))); u <= std::min(spec.cols_at(0) - 1, int(std::ceil(hi.x))); ++u)
      if (box.contains(spec.to_metric({double(u), double(v)}, 0))) out.push_back({u, v});
  return out;
}

/// Fraction of ground-truth vehicle cells within one cell (Chebyshev) of the
/// evidence mask, split by whether the vehicle is hidden from the ego.
inline Coverage coverage(const Scene& scene, int ego_id, const BevGrid<float>& evidence, const GridSpec& spec) {
  Coverage c;
  int vis_hit = 0;
  int occ_hit = 0;
  const Pose2 ego = scene.vehicle(ego_id).pose();
  const auto near_evidence = [&](Cell x) {
    for (int dv = -1; dv <= 1; ++dv)
      for (int du = -1; du <= 1; ++du)
        if (evidence.in_bounds(x.u + du, x.v + dv) && evidence.at(x.u + du, x.v + dv) != 0.0f) return true;
    return false;
  };
  for (const auto& v : scene.vehicles) {
    if (v.id == ego_id) continue;
    const bool hidden = vehicle_hidden_from(scene, ego_id, v.id);
    if (hidden) ++c.occluded_vehicles;
    for (Cell x : vehicle_cells(v, ego, spec)) {
      const bool hit = near_evidence(x);
      if (hidden) {
        ++c.occluded_cells;
        occ_hit += hit;
      } else {
        ++c.visible_cells;
        vis_hit += hit;
      }
    }
  }
  c.visible = c.visible_cells ? double(vis_hit) / c.visible_cells : 0.0;
  c.occluded = c.occluded_cells ? double(occ_hit) / c.occluded_cells : 0.0;
  return c;
}

/// Union of the non-zero cells of two level-0 maps.
inline BevGrid<float> support_union(const BevGrid<float>& a, const BevGrid<float>& b) {
  auto out = BevGrid<float>::scalar(a.rows(), a.cols(), 0);
  for (int v = 0; v < a.rows(); ++v)
    for (int u = 0; u < a.cols(); ++u)
      if (!a.cell_is_zero(u, v) || !b.cell_is_zero(u, v)) out.at(u, v) = 1.0f;
  return out;
}

struct FrameOptions {
  std::optional<std::filesystem::path> dump_messages;
  std::optional<std::filesystem::path> dump_fused;
  bool ego_passthrough_gate = false;  // pin every gate shut
};

struct FrameResult {
  int frame = 0;
  Mode mode = Mode::SlimComm;
  BandwidthEntry ledger;
  int collaborators = 0;
  int in_range = 0;
  Coverage cov;
  std::array<int, kNumScales> anchors{};
  std::array<std::uint64_t, kNumScales> max_message_elements{};  // largest single reply per scale
  QuerySet queries;
  FusionResult fused;
  std::vector<double> collaborator_density;  // max warped density per in-range collaborator
};

inline void write_dense(const std::filesystem::path& dir, const std::string& stem, const BevGrid<float>& g, int frame) {
  std::filesystem::create_directories(dir);
  std::ofstream bin(dir / (stem + ".f32"), std::ios::binary);
  bin.write(reinterpret_cast<const char*>(g.data().data()), static_cast<std::streamsize>(g.data().size() * sizeof(float)));
  nlohmann::json meta{{"shape", {g.rows(), g.cols(), g.channels()}},
                      {"layout", "HWC"},
                      {"dtype", "float32"},
                      {"scale", g.level()},
                      {"frame", frame}};
  std::ofstream(dir / (stem + ".json")) << meta.dump(2) << "\n";
}

inline void write_bytes(const std::filesystem::path& dir, const std::string& name, const std::vector<std::uint8_t>& b) {
  std::filesystem::create_directories(dir);
  std::ofstream(dir / name, std::ios::binary).write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
}

/// One frame for the ego (agents[0]).
inline FrameResult run_frame(const Scene& scene, const Settings& s, const Model& model, Mode mode,
                             std::uint64_t run_seed, const FrameOptions& opt = {}) {
  FrameResult r;
  r.frame = static_cast<int>(scene.frame_id);
  r.mode = mode;
  const int ego_id = scene.agents.at(0);
  const auto frame = static_cast<std::uint32_t>(scene.frame_id);
  const AgentView ego = sense_agent(scene, ego_id, s, model, run_seed);

  QueryConfig qc = s.querygen;
  qc.use_erp = mode != Mode::NoErp;
  qc.use_hrp = mode != Mode::NoHrp;

  std::vector<AgentView> peers;
  if (mode != Mode::NoComm)
    for (std::size_t k = 1; k < scene.agents.size(); ++k) {
      const VehicleState& v = scene.vehicle(scene.agents[k]);
      if (norm(v.position - scene.vehicle(ego_id).position) > s.comm.range) continue;
      peers.push_back(sense_agent(scene, v.id, s, model, run_seed));
    }
  r.in_range = static_cast<int>(peers.size());

  FeaturePyramid cav;
  for (int l = 0; l < kNumScales; ++l) cav[l] = BevGrid<float>(ego.features[l].channels(), ego.features[l].rows(), ego.features[l].cols(), l);

  const Pose2 ego_pose = ego.reported.pose;
  if (mode == Mode::FullMap) {
    // Dense baseline: every in-range collaborator sends its whole pyramid; the
    // ego warps and averages them.
    std::vector<const FeaturePyramid*> sent;
    for (const auto& p : peers) sent.push_back(&p.features);
    r.ledger = full_map_payload(sent);
    r.ledger.metadata_bytes = (kHeaderBytes + kPoseBytes) * peers.size();
    r.collaborators = static_cast<int>(peers.size());
    for (const auto& p : peers)
      for (int l = 0; l < kNumScales; ++l) {
        const auto w = warp_to_frame(p.features[l], s.grid, p.reported.pose, ego_pose, Interpolation::Bilinear);
        for (std::size_t i = 0; i < w.data().size(); ++i) cav[l].data()[i] += w.data()[i] / static_cast<float>(peers.size());
      }
    r.fused = blend_and_aggregate(ego.features, std::move(cav), model.fusion);
  } else {
    if (mode != Mode::NoComm)
      r.queries = generate_queries(ego.features, ego.priors, s.grid, qc, model.generator, mix_seed(run_seed, frame, 0x9ae7));
    for (int l = 0; l < kNumScales; ++l) r.anchors[l] = static_cast<int>(r.queries.scales[l].anchors.size());
    std::vector<SparseFeatureMessage> received;
    std::uint64_t query_bytes = 0;
    if (mode != Mode::NoComm && !peers.empty()) {
      const QueryMessage query = build_query_message(r.queries, ego_pose, static_cast<std::uint32_t>(ego_id), frame, s.comm.query_cells);
      const auto query_wire = encode_query_message(query);
      query_bytes = query_wire.size();
      if (opt.dump_messages) write_bytes(*opt.dump_messages, "frame" + std::to_string(frame) + "_query.bin", query_wire);
      Mailbox<std::vector<std::uint8_t>> box;
      const bool halo = mode != Mode::NoHalo;
      for (const auto& p : peers) {
        const QueryMessage heard = decode_query_message(query_wire);
        const auto decision = should_collaborate(p.priors.density, heard, s.grid, p.reported.pose, s.comm.tau);
        r.collaborator_density.push_back(decision.max_density);
        if (!decision.collaborate) continue;
        FeaturePyramid warped;
        for (int l = 0; l < kNumScales; ++l)
          warped[l] = warp_to_frame(p.features[l], s.grid, p.reported.pose, heard.pose.pose(), Interpolation::Bilinear);
        const auto reply = build_feature_message(warped, heard, halo, static_cast<std::uint32_t>(p.id), frame, p.reported.pose);
        box.post(frame, reply.sender, encode_feature_message(reply));
      }
      for (auto& env : box.drain(frame)) {
        if (opt.dump_messages)
          write_bytes(*opt.dump_messages, "frame" + std::to_string(frame) + "_from" + std::to_string(env.sender) + ".bin", env.message);
        received.push_back(decode_feature_message(env.message, {s.pyramid.channels.begin(), s.pyramid.channels.end()}));
      }
    }
    r.collaborators = static_cast<int>(received.size());
    for (const auto& m : received)
      for (int l = 0; l < kNumScales; ++l) {
        const auto one = meter_payload({m});
        r.max_message_elements[l] = std::max(r.max_message_elements[l], one.elements[l]);
      }
    r.ledger = meter_payload(received, received.empty() ? 0 : query_bytes);
    const auto nb = average_collaborators(received, s.average);
    if (opt.ego_passthrough_gate) {
      FusionParams p = model.fusion;
      for (int l = 0; l < kNumScales; ++l) p.gate[l] = GateParams::ego_passthrough(s.pyramid.channels[l]);
      r.fused = fuse(ego.features, r.queries, nb, p);
    } else {
      r.fused = fuse(ego.features, r.queries, nb, model.fusion);
    }
  }
  r.cov = coverage(scene, ego_id, support_union(ego.features[0], r.fused.collaborator[0]), s.grid);
  if (opt.dump_fused) write_dense(*opt.dump_fused, "frame" + std::to_string(frame) + "_fused", r.fused.aggregated, r.frame);
  return r;
}

struct RunResult {
  Mode mode = Mode::SlimComm;
  std::uint64_t seed = 0;
  std::vector<FrameResult> frames;

  double mean_visible() const { return mean([](const FrameResult& f) { return f.cov.visible; }); }
  double mean_occluded() const { return mean([](const FrameResult& f) { return f.cov.occluded; }); }
  double mean_payload() const { return mean([](const FrameResult& f) { return double(f.ledger.payload_bytes); }); }
  double mean_cv() const { return mean([](const FrameResult& f) { return f.ledger.cv_log2; }); }
  int total_collaborators() const {
    int n = 0;
    for (const auto& f : frames) n += f.collaborators;
    return n;
  }
  std::uint64_t total_payload() const {
    std::uint64_t n = 0;
    for (const auto& f : frames) n += f.ledger.payload_bytes;
    return n;
  }

 private:
  template <typename F>
  double mean(F f) const {
    if (frames.empty()) return 0.0;
    double s = 0.0;
    for (const auto& fr : frames) s += f(fr);
    return s / static_cast<double>(frames.size());
  }
};

/// Runs every frame of the scenario for one mode and seed.
inline RunResult run_scenario(const Settings& s, Mode mode, std::uint64_t seed, const FrameOptions& opt = {}) {
  s.validate();
  const Model model = Model::make(s);
  RunResult out{mode, seed, {}};
  Scene scene = generate_scene(s.scene, seed);
  for (int f = 0; f < s.scene.frames; ++f) {
    if (f > 0) scene = step_scene(scene, s.scene.dt);
    out.frames.push_back(run_frame(scene, s, model, mode, seed, opt));
  }
  return out;
}

inline std::string fixed(double x, int digits = 6) {
  std::ostringstream ss;
  ss << std::fixed << std::setprecision(digits) << x;
  return ss.str();
}

inline std::string metrics_csv(const std::vector<RunResult>& runs) {
  std::ostringstream ss;
  ss << "frame,mode,elements_l0,elements_l1,elements_l2,payload_bytes,cv_log2,metadata_bytes,collaborators,"
        "visible_coverage,occluded_coverage\n";
  for (const auto& run : runs)
    for (const auto& f : run.frames) {
      ss << f.frame << ',' << to_string(f.mode);
      for (auto e : f.ledger.elements) ss << ',' << e;
      ss << ',' << f.ledger.payload_bytes << ',' << fixed(f.ledger.cv_log2) << ',' << f.ledger.metadata_bytes << ','
         << f.collaborators << ',' << fixed(f.cov.visible) << ',' << fixed(f.cov.occluded) << '\n';
    }
  return ss.str();
}

inline nlohmann::json summary_json(const RunResult& run, const Settings& s) {
  nlohmann::json frames = nlohmann::json::array();
  for (const auto& f : run.frames)
    frames.push_back({{"frame", f.frame},
                      {"payload_bytes", f.ledger.payload_bytes},
                      {"cv_log2", f.ledger.cv_log2},
                      {"cv_defined", f.ledger.cv_defined},
                      {"metadata_bytes", f.ledger.metadata_bytes},
                      {"collaborators", f.collaborators},
                      {"in_range", f.in_range},
                      {"anchors", f.anchors},
                      {"visible_coverage", f.cov.visible},
                      {"occluded_coverage", f.cov.occluded},
                      {"occluded_cells", f.cov.occluded_cells},
                      {"visible_cells", f.cov.visible_cells}});
  return {{"mode", to_string(run.mode)},
          {"seed", run.seed},
          {"frames", frames},
          {"mean_visible_coverage", run.mean_visible()},
          {"mean_occluded_coverage", run.mean_occluded()},
          {"mean_payload_bytes", run.mean_payload()},
          {"total_payload_bytes", run.total_payload()},
          {"grid", {{"rows", s.grid.rows}, {"cols", s.grid.cols}, {"cell", s.grid.cell}}},
          {"channels", s.pyramid.channels},
          {"budgets", s.querygen.budgets},
          {"tau", s.comm.tau},
          {"note", "payload bytes are desk-scale synthetic measurements, not comparable to dataset MB/frame"}};
}

/// Writes metrics.csv and summary.json into `out`.
inline void write_outputs(const std::filesystem::path& out, const RunResult& run, const Settings& s) {
  std::filesystem::create_directories(out);
  std::ofstream(out / "metrics.csv") << metrics_csv({run});
  std::ofstream(out / "summary.json") << summary_json(run, s).dump(2) << "\n";
}

struct GradientChecks {
  double offset_loss = 0.0;  // max relative error over probes
  double attention = 0.0;
  int probes = 0;
  bool finite = true;
};

/// Central-difference checks of the offset regularisation loss and of the
/// attention output (projected on a random direction) w.r.t. the logits, at
/// random probe points kept away from the hinge kink.
inline GradientChecks check_gradients(int probes, double eps, std::uint64_t seed, int channels = 8, int heads = 4,
                                      int points = 9, int offsets_per_branch = 6) {
  GradientChecks out;
  out.probes = probes;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> radius(0.5, 3.0);
  std::uniform_real_distribution<double> angle(-std::numbers::pi, std::numbers::pi);
  std::uniform_real_distribution<double> slack(0.5, 2.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const int n = offsets_per_branch;
  for (int k = 0; k < probes; ++k) {
    std::vector<ScaleOffsets> base(kNumScales);
    Eigen::VectorXd x(kNumScales * 2 * n * 2);
    int i = 0;
    for (auto& sc : base) {
      for (int b = 0; b < 2; ++b)
        for (int j = 0; j < n; ++j) {
          const Vec2 o = rotate({radius(rng), 0.0}, angle(rng));
          (b == 0 ? sc.hrp : sc.erp).push_back(o);
          x(i++) = o.x;
          x(i++) = o.y;
        }
      sc.delta = mean_norm(sc.erp) - mean_norm(sc.hrp) + slack(rng);
    }
    const auto unpack = [&](const Eigen::VectorXd& v) {
      auto sc = base;
      int t = 0;
      for (auto& s : sc) {
        for (auto& o : s.hrp) o = {v(t), v(t + 1)}, t += 2;
        for (auto& o : s.erp) o = {v(t), v(t + 1)}, t += 2;
      }
      return sc;
    };
    const auto loss = [&](const Eigen::VectorXd& v) { return offset_regularization_loss(unpack(v)).value; };
    const auto grad = [&](const Eigen::VectorXd& v) {
      const auto r = offset_regularization_loss(unpack(v));
      Eigen::VectorXd g(v.size());
      int t = 0;
      for (int l = 0; l < kNumScales; ++l) {
        for (Vec2 d : r.grad_hrp[l]) g(t++) = d.x, g(t++) = d.y;
        for (Vec2 d : r.grad_erp[l]) g(t++) = d.x, g(t++) = d.y;
      }
      return g;
    };
    const auto a = finite_difference_check(loss, grad, x, eps);
    out.offset_loss = std::max(out.offset_loss, a.max_relative_error);
    out.finite = out.finite && a.finite;

    const AttentionParams p = AttentionParams::make(channels, heads, points, rng);
    Eigen::MatrixXd samples(heads * points, channels);
    for (int r = 0; r < samples.rows(); ++r)
      for (int c = 0; c < channels; ++c) samples(r, c) = gauss(rng);
    Eigen::VectorXd z(heads * points);
    for (int r = 0; r < z.size(); ++r) z(r) = gauss(rng);
    Eigen::VectorXd dir(channels);
    for (int c = 0; c < channels; ++c) dir(c) = gauss(rng);
    const auto f = [&](const Eigen::VectorXd& logits) { return dir.dot(attend(samples, logits, p)); };
    const auto g = [&](const Eigen::VectorXd& logits) -> Eigen::VectorXd {
      return attend_logit_jacobian(samples, logits, p).transpose() * dir;
    };
    const auto b = finite_difference_check(f, g, z, eps);
    out.attention = std::max(out.attention, b.max_relative_error);
    out.finite = out.finite && b.finite;
  }
  return out;
}

struct TauRow {
  double tau = 0.0;
  int collaborators = 0;
  std::uint64_t payload_bytes = 0;
  double cv_log2 = 0.0;
  double visible = 0.0;
  double occluded = 0.0;
};

inline std::vector<TauRow> sweep_tau(Settings s, const std::vector<double>& taus, std::uint64_t seed,
                                     Mode mode = Mode::SlimComm) {
  if (taus.empty()) throw std::invalid_argument("sweep_tau: empty tau list");
  std::vector<TauRow> rows;
  for (double tau : taus) {
    if (!(tau >= 0.0 && tau <= 1.0)) throw std::invalid_argument("sweep_tau: tau outside [0, 1]");
    s.comm.tau = tau;
    const auto run = run_scenario(s, mode, seed);
    rows.push_back({tau, run.total_collaborators(), run.total_payload(), run.mean_cv(), run.mean_visible(), run.mean_occluded()});
  }
  return rows;
}

struct NoiseRow {
  double sigma_pos = 0.0;
  double sigma_yaw_deg = 0.0;
  bool out_of_range = false;
  double visible = 0.0;
  double occluded = 0.0;
  double payload_bytes = 0.0;
  std::vector<double> per_seed_occluded;
};

/// Mean coverage per (sigma_pos, sigma_yaw) cell over `seeds` consecutive seeds.
inline std::vector<NoiseRow> sweep_noise(Settings s, const std::vector<double>& sigma_pos,
                                         const std::vector<double>& sigma_yaw, std::uint64_t first_seed, int seeds,
                                         Mode mode = Mode::SlimComm) {
  if (sigma_pos.empty() || sigma_yaw.empty() || seeds < 1)
    throw std::invalid_argument("sweep_noise: need non-empty sigma lists and >= 1 seed");
  std::vector<NoiseRow> rows;
  for (double sp : sigma_pos)
    for (double sy : sigma_yaw) {
      NoiseRow row{sp, sy, sp > 0.6 || sy > 1.0, 0.0, 0.0, 0.0, {}};
      s.noise = {true, sp, sy};
      for (int k = 0; k < seeds; ++k) {
        const auto run = run_scenario(s, mode, first_seed + static_cast<std::uint64_t>(k));
        row.visible += run.mean_visible() / seeds;
        row.occluded += run.mean_occluded() / seeds;
        row.payload_bytes += run.mean_payload() / seeds;
        row.per_seed_occluded.push_back(run.mean_occluded());
      }
      rows.push_back(std::move(row));
    }
  return rows;
}

struct ModeRow {
  Mode mode = Mode::SlimComm;
  double visible = 0.0;
  double occluded = 0.0;
  double payload_bytes = 0.0;
  double cv_log2 = 0.0;
  double collaborators = 0.0;
};

/// Every mode over `seeds` consecutive seeds.
inline std::vector<ModeRow> compare_modes(const Settings& s, std::uint64_t first_seed, int seeds) {
  if (seeds < 1) throw std::invalid_argument("compare_modes: need >= 1 seed");
  std::vector<ModeRow> rows;
  for (Mode m : kAllModes) {
    ModeRow row{m};
    for (int k = 0; k < seeds; ++k) {
      const auto run = run_scenario(s, m, first_seed + static_cast<std::uint64_t>(k));
      row.visible += run.mean_visible() / seeds;
      row.occluded += run.mean_occluded() / seeds;
      row.payload_bytes += run.mean_payload() / seeds;
      row.cv_log2 += run.mean_cv() / seeds;
      row.collaborators += double(run.total_collaborators()) / run.frames.size() / seeds;
    }
    rows.push_back(row);
  }
  return rows;
}

inline std::string tau_csv(const std::vector<TauRow>& rows) {
  std::ostringstream ss;
  ss << "tau,collaborators,payload_bytes,cv_log2,visible_coverage,occluded_coverage\n";
  for (const auto& r : rows)
    ss << fixed(r.tau, 4) << ',' << r.collaborators << ',' << r.payload_bytes << ',' << fixed(r.cv_log2) << ','
       << fixed(r.visible) << ',' << fixed(r.occluded) << '\n';
  return ss.str();
}

inline std::string noise_csv(const std::vector<NoiseRow>& rows) {
  std::ostringstream ss;
  ss << "sigma_pos_m,sigma_yaw_deg,out_of_range,visible_coverage,occluded_coverage,payload_bytes\n";
  for (const auto& r : rows)
    ss << fixed(r.sigma_pos, 3) << ',' << fixed(r.sigma_yaw_deg, 3) << ',' << (r.out_of_range ? 1 : 0) << ','
       << fixed(r.visible) << ',' << fixed(r.occluded) << ',' << fixed(r.payload_bytes, 1) << '\n';
  return ss.str();
}

inline std::string modes_csv(const std::vector<ModeRow>& rows) {
  std::ostringstream ss;
  ss << "mode,visible_coverage,occluded_coverage,payload_bytes,cv_log2,collaborators\n";
  for (const auto& r : rows)
    ss << to_string(r.mode) << ',' << fixed(r.visible) << ',' << fixed(r.occluded) << ',' << fixed(r.payload_bytes, 1)
       << ',' << fixed(r.cv_log2) << ',' << fixed(r.collaborators, 3) << '\n';
  return ss.str();
}

inline std::string modes_markdown(const std::vector<ModeRow>& rows) {
  std::ostringstream ss;
  ss << "| mode | visible cov. | occluded cov. | payload B/frame | CV (log2) | collaborators |\n"
     << "|---|---|---|---|---|---|\n";
  double slim = 0.0;
  double no_erp = 0.0;
  for (const auto& r : rows) {
    ss << "| " << to_string(r.mode) << " | " << fixed(r.visible, 4) << " | " << fixed(r.occluded, 4) << " | "
       << fixed(r.payload_bytes, 1) << " | " << fixed(r.cv_log2, 3) << " | " << fixed(r.collaborators, 2) << " |\n";
    if (r.mode == Mode::SlimComm) slim = r.occluded;
    if (r.mode == Mode::NoErp) no_erp = r.occluded;
  }
  ss << "\nERP ablation delta (slimcomm - no-erp occluded coverage): " << fixed(slim - no_erp, 4) << "\n";
  return ss.str();
}

}  // namespace slimcomm
