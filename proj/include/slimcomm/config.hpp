#pragma once

// Scenario JSON loading. Errors name the file and, where the offending text
// can be located, the line.

#include <json.hpp>

#include <array>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "slimcomm/bev.hpp"
#include "slimcomm/comm.hpp"
#include "slimcomm/fusion.hpp"
#include "slimcomm/priors.hpp"
#include "slimcomm/querygen.hpp"
#include "slimcomm/scene.hpp"
#include "slimcomm/sensors.hpp"

namespace slimcomm {

class ConfigError : public std::runtime_error {
 public:
  ConfigError(const std::string& path, int line, const std::string& what)
      : std::runtime_error(path + (line > 0 ? ":" + std::to_string(line) : std::string()) + ": " + what),
        path_(path),
        line_(line) {}
  const std::string& path() const { return path_; }
  int line() const { return line_; }

 private:
  std::string path_;
  int line_;
};

struct CommConfig {
  double tau = 0.0;
  double range = 70.0;  // metres, V2X reach
  QueryCells query_cells = QueryCells::Anchors;
};

struct NoiseConfig {
  bool enabled = false;
  double sigma_pos = 0.0;
  double sigma_yaw_deg = 0.0;
};

/// Everything a run needs besides the mode and the seed.
struct Settings {
  ScenarioConfig scene;
  SensorRig rig = SensorRig::default_rig();
  GridSpec grid;
  PyramidConfig pyramid = PyramidConfig::small();
  Thresholds priors;
  QueryConfig querygen;
  CommConfig comm;
  AverageMode average = AverageMode::Present;
  NoiseConfig noise;
  std::uint64_t model_seed = 17;

  void validate() const {
    grid.validate();
    priors.validate();
    querygen.validate();
    if (scene.agents < 1) throw std::invalid_argument("settings: at least one agent");
    if (scene.frames < 1) throw std::invalid_argument("settings: frames must be >= 1");
    if (!(scene.dt > 0.0)) throw std::invalid_argument("settings: dt must be > 0");
    if (!(comm.tau >= 0.0 && comm.tau <= 1.0)) throw std::invalid_argument("settings: tau must lie in [0, 1]");
    if (!(comm.range > 0.0)) throw std::invalid_argument("settings: comm range must be > 0");
    for (int l = 0; l < kNumScales; ++l)
      if (pyramid.channels[l] < querygen.heads || pyramid.channels[l] % querygen.heads != 0)
        throw std::invalid_argument("settings: channels must be positive multiples of the head count");
  }
};

namespace detail {

inline int line_of_offset(const std::string& text, std::size_t offset) {
  int line = 1;
  for (std::size_t i = 0; i < offset && i < text.size(); ++i)
    if (text[i] == '\n') ++line;
  return line;
}

/// Best-effort line of the first occurrence of a key.
inline int line_of_key(const std::string& text, const std::string& key) {
  const auto at = text.find("\"" + key + "\"");
  return at == std::string::npos ? 0 : line_of_offset(text, at);
}

class Loader {
 public:
  Loader(std::string path, std::string text) : path_(std::move(path)), text_(std::move(text)) {}

  [[noreturn]] void fail(const std::string& key, const std::string& what) const {
    throw ConfigError(path_, line_of_key(text_, key), key + ": " + what);
  }

  template <typename T>
  T get(const nlohmann::json& j, const std::string& key, T fallback) const {
    if (!j.contains(key)) return fallback;
    try {
      return j.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
      fail(key, e.what());
    }
  }

  void allow_only(const nlohmann::json& j, const std::string& where, std::initializer_list<const char*> keys) const {
    if (!j.is_object()) fail(where, "expected an object");
    for (const auto& [k, v] : j.items()) {
      bool ok = false;
      for (const char* a : keys) ok = ok || k == a;
      if (!ok) fail(k, "unknown key in " + where);
    }
  }

  template <std::size_t N, typename T>
  std::array<T, N> array(const nlohmann::json& j, const std::string& key, std::array<T, N> fallback) const {
    if (!j.contains(key)) return fallback;
    const auto v = get<std::vector<T>>(j, key, {});
    if (v.size() != N) fail(key, "expected " + std::to_string(N) + " values");
    std::array<T, N> out{};
    std::copy(v.begin(), v.end(), out.begin());
    return out;
  }

  Vec2 vec2(const nlohmann::json& j, const std::string& key, Vec2 fallback) const {
    const auto a = array<2, double>(j, key, {fallback.x, fallback.y});
    return {a[0], a[1]};
  }

  const std::string& path() const { return path_; }

 private:
  std::string path_;
  std::string text_;
};

}  // namespace detail

/// Parses scenario JSON text; `path` is only used in error messages.
inline Settings parse_settings(const std::string& text, const std::string& path = "<config>") {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path, detail::line_of_offset(text, e.byte == 0 ? 0 : e.byte - 1), e.what());
  }
  const detail::Loader L(path, text);
  L.allow_only(j, "scenario",
               {"name", "description", "layout", "vehicles", "agents", "obstacles", "speed_range_mps", "seed",
                "frames", "dt", "area", "agent_radius", "rig", "grid", "pyramid", "priors", "querygen", "comm",
                "fusion", "noise", "model_seed"});
  Settings s;
  auto& sc = s.scene;
  sc.layout = L.get<std::string>(j, "layout", sc.layout);
  sc.vehicles = L.get<int>(j, "vehicles", sc.vehicles);
  sc.agents = L.get<int>(j, "agents", sc.agents);
  if (j.contains("obstacles")) {
    const auto& o = j["obstacles"];
    if (o.is_number_integer()) {
      sc.obstacles = o.get<int>();
    } else if (o.is_array()) {
      sc.obstacles = 0;
      for (const auto& b : o) {
        L.allow_only(b, "obstacles[]", {"center", "yaw_deg", "length", "width", "height"});
        ObstacleSpec spec;
        spec.center = L.vec2(b, "center", {});
        spec.yaw = deg_to_rad(L.get<double>(b, "yaw_deg", 0.0));
        spec.length = L.get<double>(b, "length", spec.length);
        spec.width = L.get<double>(b, "width", spec.width);
        const auto h = L.array<2, double>(b, "height", {spec.height.z_base, spec.height.z_top});
        spec.height = {h[0], h[1]};
        if (!(spec.length > 0.0 && spec.width > 0.0)) L.fail("obstacles", "extent must be > 0");
        sc.fixed_obstacles.push_back(spec);
      }
    } else {
      L.fail("obstacles", "expected a count or a list of boxes");
    }
  }
  const auto speeds = L.array<2, double>(j, "speed_range_mps", {sc.speed_min, sc.speed_max});
  sc.speed_min = speeds[0];
  sc.speed_max = speeds[1];
  sc.seed = L.get<std::uint64_t>(j, "seed", sc.seed);
  sc.frames = L.get<int>(j, "frames", sc.frames);
  sc.dt = L.get<double>(j, "dt", sc.dt);
  sc.area = L.vec2(j, "area", sc.area);
  sc.agent_radius = L.get<double>(j, "agent_radius", sc.agent_radius);

  if (j.contains("rig")) {
    const auto& r = j["rig"];
    L.allow_only(r, "rig", {"radars", "lidar", "doppler_noise"});
    if (r.contains("radars")) {
      s.rig.radars.clear();
      for (const auto& m : r["radars"]) {
        L.allow_only(m, "rig.radars[]", {"yaw_deg", "offset", "fov_deg", "range"});
        RadarMount mount;
        mount.yaw = deg_to_rad(L.get<double>(m, "yaw_deg", 0.0));
        mount.translation = L.vec2(m, "offset", {});
        mount.fov_deg = L.get<double>(m, "fov_deg", mount.fov_deg);
        mount.max_range = L.get<double>(m, "range", mount.max_range);
        if (!(mount.fov_deg > 0.0 && mount.fov_deg <= 360.0)) L.fail("fov_deg", "must lie in (0, 360]");
        if (!(mount.max_range > 0.0)) L.fail("range", "must be > 0");
        s.rig.radars.push_back(mount);
      }
    }
    if (r.contains("lidar")) {
      const auto& l = r["lidar"];
      L.allow_only(l, "rig.lidar", {"rays", "channels", "range", "noise", "height"});
      s.rig.lidar.rays = L.get<int>(l, "rays", s.rig.lidar.rays);
      s.rig.lidar.channels = L.get<int>(l, "channels", s.rig.lidar.channels);
      s.rig.lidar.max_range = L.get<double>(l, "range", s.rig.lidar.max_range);
      s.rig.lidar.range_noise = L.get<double>(l, "noise", s.rig.lidar.range_noise);
      s.rig.lidar.mount_height = L.get<double>(l, "height", s.rig.lidar.mount_height);
    }
    s.rig.doppler_noise = L.get<double>(r, "doppler_noise", s.rig.doppler_noise);
  }
  if (j.contains("grid")) {
    const auto& g = j["grid"];
    L.allow_only(g, "grid", {"cell", "rows", "cols", "z_band", "n_max"});
    s.grid.cell = L.get<double>(g, "cell", s.grid.cell);
    s.grid.rows = L.get<int>(g, "rows", s.grid.rows);
    s.grid.cols = L.get<int>(g, "cols", s.grid.cols);
    s.grid.z_band = L.get<double>(g, "z_band", s.grid.z_band);
    s.grid.n_max = L.get<int>(g, "n_max", s.grid.n_max);
  }
  if (j.contains("pyramid")) {
    const auto& p = j["pyramid"];
    if (p.is_string()) {
      const auto name = p.get<std::string>();
      if (name == "small")
        s.pyramid = PyramidConfig::small();
      else if (name == "paper")
        s.pyramid = PyramidConfig{};
      else
        L.fail("pyramid", "expected \"small\", \"paper\" or {\"channels\": [...]}");
    } else {
      L.allow_only(p, "pyramid", {"channels"});
      s.pyramid.channels = L.array<3, int>(p, "channels", s.pyramid.channels);
    }
  }
  if (j.contains("priors")) {
    const auto& p = j["priors"];
    L.allow_only(p, "priors", {"v_th", "t_lower", "t_upper", "t_max"});
    s.priors.v_th = L.get<double>(p, "v_th", s.priors.v_th);
    s.priors.t_lower = L.get<double>(p, "t_lower", s.priors.t_lower);
    s.priors.t_upper = L.get<double>(p, "t_upper", s.priors.t_upper);
    s.priors.t_max = L.get<double>(p, "t_max", s.priors.t_max);
  }
  if (j.contains("querygen")) {
    const auto& q = j["querygen"];
    L.allow_only(q, "querygen",
                 {"budgets", "percentiles", "heads", "points", "offset_bound", "r_min", "r_max", "sigma_lat",
                  "fallback_ring"});
    auto& qc = s.querygen;
    qc.budgets = L.array<3, int>(q, "budgets", qc.budgets);
    qc.percentiles = L.array<3, double>(q, "percentiles", qc.percentiles);
    qc.heads = L.get<int>(q, "heads", qc.heads);
    qc.points = L.get<int>(q, "points", qc.points);
    qc.offset_bound = L.get<double>(q, "offset_bound", qc.offset_bound);
    qc.shadow.r_min = L.get<double>(q, "r_min", qc.shadow.r_min);
    qc.shadow.r_max = L.get<double>(q, "r_max", qc.shadow.r_max);
    qc.shadow.sigma_lat = L.get<double>(q, "sigma_lat", qc.shadow.sigma_lat);
    qc.shadow.fallback_ring = L.get<double>(q, "fallback_ring", qc.shadow.fallback_ring);
  }
  if (j.contains("comm")) {
    const auto& c = j["comm"];
    L.allow_only(c, "comm", {"tau", "range_m", "query_cells"});
    s.comm.tau = L.get<double>(c, "tau", s.comm.tau);
    s.comm.range = L.get<double>(c, "range_m", s.comm.range);
    const auto cells = L.get<std::string>(c, "query_cells", "anchors");
    if (cells == "anchors")
      s.comm.query_cells = QueryCells::Anchors;
    else if (cells == "fine-points")
      s.comm.query_cells = QueryCells::FinePoints;
    else
      L.fail("query_cells", "expected \"anchors\" or \"fine-points\"");
  }
  if (j.contains("fusion")) {
    const auto& f = j["fusion"];
    L.allow_only(f, "fusion", {"average"});
    const auto avg = L.get<std::string>(f, "average", "present");
    if (avg == "present")
      s.average = AverageMode::Present;
    else if (avg == "all")
      s.average = AverageMode::All;
    else
      L.fail("average", "expected \"present\" or \"all\"");
  }
  if (j.contains("noise")) {
    const auto& n = j["noise"];
    L.allow_only(n, "noise", {"sigma_pos", "sigma_yaw_deg"});
    s.noise.enabled = true;
    s.noise.sigma_pos = L.get<double>(n, "sigma_pos", 0.0);
    s.noise.sigma_yaw_deg = L.get<double>(n, "sigma_yaw_deg", 0.0);
  }
  s.model_seed = L.get<std::uint64_t>(j, "model_seed", s.model_seed);
  // Range checks that can name their key; validate() catches the rest.
  if (!(s.comm.tau >= 0.0 && s.comm.tau <= 1.0)) L.fail("tau", "must lie in [0, 1]");
  if (!(s.comm.range > 0.0)) L.fail("range_m", "must be > 0");
  if (sc.agents < 1) L.fail("agents", "at least one agent required");
  if (sc.frames < 1) L.fail("frames", "must be >= 1");
  if (!(sc.dt > 0.0)) L.fail("dt", "must be > 0");
  for (int b : s.querygen.budgets)
    if (b < 1) L.fail("budgets", "must be >= 1");
  try {
    s.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(path, 0, e.what());
  }
  return s;
}

inline Settings load_settings(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path, 0, "cannot open file");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_settings(ss.str(), path);
}

}  // namespace slimcomm
