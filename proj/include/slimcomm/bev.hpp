#pragma once

// Pillarisation, the seeded toy feature encoder, rigid warping between agent
// frames and bilinear sampling of BEV grids.

#include <Eigen/Core>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <vector>

#include "slimcomm/grid.hpp"
#include "slimcomm/sensors.hpp"

namespace slimcomm {

/// Per-cell statistics over the points kept in each pillar (first n_max
/// points in arrival order).
class PillarStats {
 public:
  PillarStats() = default;
  explicit PillarStats(const GridSpec& spec)
      : spec_(spec),
        members_(static_cast<std::size_t>(spec.rows) * spec.cols),
        z_(members_.size()),
        abs_doppler_(members_.size()) {}

  const GridSpec& spec() const { return spec_; }
  int rows() const { return spec_.rows; }
  int cols() const { return spec_.cols; }

  int count(int u, int v) const { return static_cast<int>(members(u, v).size()); }
  const std::vector<std::uint32_t>& members(int u, int v) const { return members_[idx(u, v)]; }
  std::span<const double> z_values(int u, int v) const { return z_[idx(u, v)]; }

  double mean_z(int u, int v) const { return mean(z_[idx(u, v)]); }
  double max_z(int u, int v) const {
    const auto& z = z_[idx(u, v)];
    return z.empty() ? 0.0 : *std::max_element(z.begin(), z.end());
  }
  double min_z(int u, int v) const {
    const auto& z = z_[idx(u, v)];
    return z.empty() ? 0.0 : *std::min_element(z.begin(), z.end());
  }
  double mean_abs_doppler(int u, int v) const { return mean(abs_doppler_[idx(u, v)]); }

  std::size_t dropped() const { return dropped_; }
  std::size_t outside() const { return outside_; }

  /// Appends one point if its cell still has capacity.
  void add(int u, int v, std::uint32_t index, double z, double abs_doppler) {
    const std::size_t i = idx(u, v);
    if (members_[i].size() >= static_cast<std::size_t>(spec_.n_max)) {
      ++dropped_;
      return;
    }
    members_[i].push_back(index);
    z_[i].push_back(z);
    abs_doppler_[i].push_back(abs_doppler);
  }
  void note_outside() { ++outside_; }

  BevGrid<float> counts() const {
    auto g = BevGrid<float>::scalar(rows(), cols());
    for (int v = 0; v < rows(); ++v)
      for (int u = 0; u < cols(); ++u) g.at(u, v) = static_cast<float>(count(u, v));
    return g;
  }

 private:
  std::size_t idx(int u, int v) const {
    if (u < 0 || v < 0 || u >= spec_.cols || v >= spec_.rows) throw std::out_of_range("PillarStats: cell out of grid");
    return static_cast<std::size_t>(v) * spec_.cols + u;
  }
  static double mean(const std::vector<double>& xs) {
    if (xs.empty()) return 0.0;
    double s = 0.0;
    for (double x : xs) s += x;
    return s / static_cast<double>(xs.size());
  }

  GridSpec spec_;
  std::vector<std::vector<std::uint32_t>> members_;
  std::vector<std::vector<double>> z_;
  std::vector<std::vector<double>> abs_doppler_;
  std::size_t dropped_ = 0;
  std::size_t outside_ = 0;
};

/// Bins points into pillars; points outside the extent are dropped and
/// counted, overflowing pillars keep the earliest points.
inline PillarStats pillarize(const SensorCloud& cloud, const GridSpec& spec) {
  spec.validate();
  PillarStats stats(spec);
  for (std::size_t i = 0; i < cloud.points.size(); ++i) {
    const auto& p = cloud.points[i];
    const auto cell = spec.pillar_of(p.position);
    if (!cell) {
      stats.note_outside();
      continue;
    }
    stats.add(cell->first, cell->second, static_cast<std::uint32_t>(i), p.z,
              p.doppler ? std::abs(*p.doppler) : 0.0);
  }
  return stats;
}

inline constexpr int kStatsPerSensor = 5;
inline constexpr int kStatDims = 2 * kStatsPerSensor;
inline constexpr double kDopplerScale = 10.0;  // m/s, normalises the Doppler statistic

/// Column indices of the per-cell statistic vector.
enum StatColumn : int {
  kLidarCount = 0,
  kLidarMeanZ,
  kLidarMaxZ,
  kLidarMinZ,
  kLidarDoppler,
  kRadarCount,
  kRadarMeanZ,
  kRadarMaxZ,
  kRadarMinZ,
  kRadarDoppler,
};

/// Ten statistics per pillar: (count / n_max, mean z, max z, min z,
/// mean |doppler| / 10) for LiDAR then radar. Empty pillars are all zero.
inline BevGrid<float> pillar_statistics(const PillarStats& lidar, const PillarStats& radar) {
  if (lidar.rows() != radar.rows() || lidar.cols() != radar.cols())
    throw std::invalid_argument("pillar_statistics: grids differ");
  BevGrid<float> out(kStatDims, lidar.rows(), lidar.cols());
  const double n_max = lidar.spec().n_max;
  const auto fill = [&](const PillarStats& s, int u, int v, int base) {
    if (s.count(u, v) == 0) return;
    out.at(u, v, base + 0) = static_cast<float>(s.count(u, v) / n_max);
    out.at(u, v, base + 1) = static_cast<float>(s.mean_z(u, v));
    out.at(u, v, base + 2) = static_cast<float>(s.max_z(u, v));
    out.at(u, v, base + 3) = static_cast<float>(s.min_z(u, v));
    out.at(u, v, base + 4) = static_cast<float>(s.mean_abs_doppler(u, v) / kDopplerScale);
  };
  for (int v = 0; v < lidar.rows(); ++v)
    for (int u = 0; u < lidar.cols(); ++u) {
      fill(lidar, u, v, 0);
      fill(radar, u, v, kStatsPerSensor);
    }
  return out;
}

struct PyramidConfig {
  std::array<int, kNumScales> channels{128, 256, 512};
  static PyramidConfig small() { return {{8, 16, 32}}; }
};

struct FeaturePyramid {
  std::array<BevGrid<float>, kNumScales> levels;
  const BevGrid<float>& operator[](int l) const { return levels[l]; }
  BevGrid<float>& operator[](int l) { return levels[l]; }
  bool operator==(const FeaturePyramid&) const = default;
};

/// Frozen random projections of the toy encoder. Level 0 projects the
/// statistic vector through a sparse matrix (each channel reads a seeded
/// subset of statistics); level l > 0 composes a dense C_{l-1} -> C_l map.
struct EncoderWeights {
  std::array<Eigen::MatrixXf, kNumScales> composite;  // C_l x kStatDims
  std::array<Eigen::MatrixXf, kNumScales> stage;      // level-to-level projections

  static EncoderWeights make(const PyramidConfig& cfg, std::uint64_t seed) {
    EncoderWeights w;
    std::mt19937_64 rng(seed);
    std::normal_distribution<float> gauss(0.0f, 1.0f);
    std::bernoulli_distribution keep(0.5);
    Eigen::MatrixXf p0 = Eigen::MatrixXf::Zero(cfg.channels[0], kStatDims);
    for (int c = 0; c < cfg.channels[0]; ++c)
      for (int k = 0; k < kStatDims; ++k)
        if (k == c % kStatDims || keep(rng)) p0(c, k) = gauss(rng) / std::sqrt(float(kStatDims));
    w.stage[0] = p0;
    w.composite[0] = p0;
    for (int l = 1; l < kNumScales; ++l) {
      Eigen::MatrixXf p(cfg.channels[l], cfg.channels[l - 1]);
      for (int i = 0; i < p.rows(); ++i)
        for (int j = 0; j < p.cols(); ++j) p(i, j) = gauss(rng) / std::sqrt(float(cfg.channels[l - 1]));
      w.stage[l] = p;
      w.composite[l] = p * w.composite[l - 1];
    }
    return w;
  }
};

/// Toy multi-scale encoder. Level l averages the statistic vectors over
/// 2^(l+1) x 2^(l+1) pillar blocks and applies the composite projection, which
/// equals pooling the previous level and projecting it.
inline FeaturePyramid encode_statistics(const BevGrid<float>& stats, const PyramidConfig& cfg,
                                        std::uint64_t encoder_seed) {
  if (stats.channels() != kStatDims) throw std::invalid_argument("encode_statistics: expected 10 channels");
  const EncoderWeights weights = EncoderWeights::make(cfg, encoder_seed);
  FeaturePyramid pyr;
  for (int l = 0; l < kNumScales; ++l) {
    const BevGrid<float> pooled = downsample_avg(stats, GridSpec::level_factor(l), l);
    BevGrid<float> level(cfg.channels[l], pooled.rows(), pooled.cols(), l);
    const Eigen::Map<const Eigen::MatrixXf> in(pooled.data().data(), kStatDims,
                                               static_cast<Eigen::Index>(pooled.num_cells()));
    Eigen::Map<Eigen::MatrixXf> out(level.data().data(), cfg.channels[l],
                                    static_cast<Eigen::Index>(level.num_cells()));
    out.noalias() = weights.composite[l] * in;
    // Exact zeros for empty cells regardless of rounding in the product.
    for (Eigen::Index i = 0; i < in.cols(); ++i)
      if (in.col(i).isZero(0.0f)) out.col(i).setZero();
    pyr.levels[l] = std::move(level);
  }
  return pyr;
}

inline FeaturePyramid encode_features(const PillarStats& lidar, const PillarStats& radar,
                                      const PyramidConfig& cfg, std::uint64_t encoder_seed) {
  return encode_statistics(pillar_statistics(lidar, radar), cfg, encoder_seed);
}

/// Weighted sum of the four neighbouring cells around continuous coordinates
/// `loc` (integer = cell centre), accumulated into `out`. Neighbours outside
/// the grid contribute nothing.
template <typename T>
void bilinear_sample_into(const BevGrid<T>& map, Vec2 loc, std::span<double> out, double scale = 1.0) {
  const double fu = std::floor(loc.x);
  const double fv = std::floor(loc.y);
  if (!std::isfinite(fu) || !std::isfinite(fv)) return;
  const int u0 = static_cast<int>(fu);
  const int v0 = static_cast<int>(fv);
  const double au = loc.x - fu;
  const double av = loc.y - fv;
  const std::array<std::pair<int, int>, 4> nb{{{u0, v0}, {u0 + 1, v0}, {u0, v0 + 1}, {u0 + 1, v0 + 1}}};
  const std::array<double, 4> w{(1.0 - au) * (1.0 - av), au * (1.0 - av), (1.0 - au) * av, au * av};
  for (int k = 0; k < 4; ++k) {
    if (w[k] == 0.0 || !map.in_bounds(nb[k].first, nb[k].second)) continue;
    const auto cell = map.cell(nb[k].first, nb[k].second);
    for (int c = 0; c < map.channels(); ++c) out[c] += scale * w[k] * static_cast<double>(cell[c]);
  }
}

template <typename T>
std::vector<double> bilinear_sample(const BevGrid<T>& map, Vec2 loc) {
  std::vector<double> out(static_cast<std::size_t>(map.channels()), 0.0);
  bilinear_sample_into(map, loc, std::span<double>(out));
  return out;
}

enum class Interpolation { Nearest, Bilinear };

/// Resamples `grid` (expressed in the `src` agent frame) into the `dst` agent
/// frame: each output cell reads the source at the dst->src rigid transform of
/// its centre. Samples falling outside the source grid read as zero.
template <typename T>
BevGrid<T> warp_to_frame(const BevGrid<T>& grid, const GridSpec& spec, const Pose2& src, const Pose2& dst,
                         Interpolation interp) {
  if (!is_finite(src.position) || !is_finite(dst.position) || !std::isfinite(src.yaw) ||
      !std::isfinite(dst.yaw))
    throw std::invalid_argument("warp_to_frame: poses must be finite");
  const int level = grid.level();
  BevGrid<T> out(grid.channels(), grid.rows(), grid.cols(), level);
  std::vector<double> acc(static_cast<std::size_t>(grid.channels()));
  // dst cell centre -> metric (dst) -> world -> metric (src) -> src cell coords.
  for (int v = 0; v < grid.rows(); ++v) {
    for (int u = 0; u < grid.cols(); ++u) {
      const Vec2 metric_dst = spec.to_metric({double(u), double(v)}, level);
      const Vec2 metric_src = src.to_local(dst.to_world(metric_dst));
      const Vec2 uv = spec.to_cell_coords(metric_src, level);
      if (interp == Interpolation::Nearest) {
        const int su = static_cast<int>(std::lround(uv.x));
        const int sv = static_cast<int>(std::lround(uv.y));
        if (!grid.in_bounds(su, sv)) continue;
        const auto from = grid.cell(su, sv);
        std::copy(from.begin(), from.end(), out.cell(u, v).begin());
      } else {
        std::fill(acc.begin(), acc.end(), 0.0);
        bilinear_sample_into(grid, uv, std::span<double>(acc));
        auto to = out.cell(u, v);
        for (int c = 0; c < grid.channels(); ++c) to[c] = static_cast<T>(acc[c]);
      }
    }
  }
  return out;
}

}  // namespace slimcomm
