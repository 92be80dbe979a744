#pragma once

// Ego query generation: heuristic reference points from the dynamic and
// confidence maps, exploratory points cast into occlusion shadows, their
// embeddings, coarse and fine offsets, and the offset regularisation loss.

#include <Eigen/Core>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <random>
#include <stdexcept>
#include <vector>

#include "slimcomm/bev.hpp"
#include "slimcomm/grid.hpp"
#include "slimcomm/priors.hpp"

namespace slimcomm {

struct ShadowParams {
  double r_min = 2.0;      // cells at level 0
  double r_max = 8.0;
  double sigma_lat = 1.5;
  double fallback_ring = 0.75;  // range quantile beyond which fallback ERPs are drawn

  /// Distances shrink with the cell size: every length halves per level.
  ShadowParams at_level(int level) const {
    const double s = std::ldexp(1.0, -level);
    return {r_min * s, r_max * s, sigma_lat * s, fallback_ring};
  }
};

struct QueryConfig {
  std::array<int, kNumScales> budgets{200, 100, 50};
  std::array<double, kNumScales> percentiles{0.5, 0.5, 0.5};
  int heads = 4;
  int points = 9;
  double offset_bound = 4.0;  // cells
  ShadowParams shadow;
  bool use_hrp = true;
  bool use_erp = true;

  void validate() const {
    for (int b : budgets)
      if (b < 1) throw std::invalid_argument("querygen: budgets must be >= 1");
    for (double p : percentiles)
      if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("querygen: percentiles must lie in [0, 1]");
    if (heads < 1) throw std::invalid_argument("querygen: heads must be >= 1");
    if (points != 9) throw std::invalid_argument("querygen: n_points must be 9 (3x3 halo)");
    if (!(offset_bound > 0.0)) throw std::invalid_argument("querygen: offset bound must be > 0");
    if (!(shadow.r_min >= 0.0 && shadow.r_max >= shadow.r_min && shadow.sigma_lat >= 0.0))
      throw std::invalid_argument("querygen: shadow distribution requires 0 <= r_min <= r_max, sigma >= 0");
    if (!use_hrp && !use_erp) throw std::invalid_argument("querygen: at least one branch must be enabled");
  }
};

inline Vec2 to_vec(Cell c) { return {static_cast<double>(c.u), static_cast<double>(c.v)}; }

inline Vec2 clamp_to_grid(Vec2 p, int rows, int cols) {
  return {std::clamp(p.x, 0.0, static_cast<double>(cols - 1)), std::clamp(p.y, 0.0, static_cast<double>(rows - 1))};
}

/// Cells ranked by confidence, highest first; ties go to the lower row-major index.
inline void rank_by_confidence(std::vector<Cell>& cells, const BevGrid<float>& conf) {
  std::stable_sort(cells.begin(), cells.end(), [&](Cell a, Cell b) {
    const float ca = conf.at(a.u, a.v);
    const float cb = conf.at(b.u, b.v);
    if (ca != cb) return ca > cb;
    return a < b;
  });
}

/// Heuristic reference points: dynamic cells first, then positive-confidence
/// static cells, both by confidence. Short lists are padded with the first
/// ranked cell (or `fallback` when there is no candidate at all).
inline std::vector<Cell> select_hrp(const BevGrid<float>& dynamic, const BevGrid<float>& conf, int budget,
                                    Cell fallback) {
  if (!dynamic.same_shape(conf)) throw std::invalid_argument("select_hrp: map shapes differ");
  std::vector<Cell> dyn;
  std::vector<Cell> rest;
  for (int v = 0; v < conf.rows(); ++v)
    for (int u = 0; u < conf.cols(); ++u) {
      if (dynamic.at(u, v) != 0.0f)
        dyn.push_back({u, v});
      else if (conf.at(u, v) > 0.0f)
        rest.push_back({u, v});
    }
  rank_by_confidence(dyn, conf);
  rank_by_confidence(rest, conf);
  std::vector<Cell> out;
  out.reserve(budget);
  for (Cell c : dyn)
    if (static_cast<int>(out.size()) < budget) out.push_back(c);
  for (Cell c : rest)
    if (static_cast<int>(out.size()) < budget) out.push_back(c);
  if (out.empty()) out.push_back(fallback);
  while (static_cast<int>(out.size()) < budget) out.push_back(out.front());
  return out;
}

/// Linear-interpolated quantile of the strictly positive values.
inline std::optional<double> positive_quantile(const BevGrid<float>& map, double p) {
  std::vector<double> pos;
  for (float x : map.data())
    if (x > 0.0f) pos.push_back(x);
  if (pos.empty()) return std::nullopt;
  std::sort(pos.begin(), pos.end());
  const double h = p * static_cast<double>(pos.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, pos.size() - 1);
  return pos[lo] + (h - static_cast<double>(lo)) * (pos[hi] - pos[lo]);
}

/// Occluder centroids: interior cells that equal their 3x3 maximum, are
/// positive and reach the p-quantile of positive confidence. Plateaus keep
/// the first cell in row-major order.
inline std::vector<Cell> find_occluders(const BevGrid<float>& conf, double percentile) {
  std::vector<Cell> out;
  const auto q = positive_quantile(conf, percentile);
  if (!q) return out;
  for (int v = 1; v + 1 < conf.rows(); ++v)
    for (int u = 1; u + 1 < conf.cols(); ++u) {
      const float c = conf.at(u, v);
      if (c <= 0.0f || c < *q) continue;
      bool peak = true;
      for (int dv = -1; dv <= 1 && peak; ++dv)
        for (int du = -1; du <= 1 && peak; ++du) {
          if (du == 0 && dv == 0) continue;
          const float n = conf.at(u + du, v + dv);
          const bool earlier = dv < 0 || (dv == 0 && du < 0);
          if (n > c || (n == c && earlier)) peak = false;
        }
      if (peak) out.push_back({u, v});
    }
  return out;
}

struct ShadowSamples {
  std::vector<Vec2> erp;
  std::vector<int> origin;     // centroid index per ERP, -1 for fallback draws
  std::vector<Vec2> offsets;   // ERP minus its centroid (zero for fallback)
  double mean_distance = 0.0;  // over centroid-based ERPs
  bool fallback = false;
};

/// Casts one ERP per budget slot behind the centroids (round robin): along
/// the ray from the ego by r ~ U[r_min, r_max] with lateral N(0, sigma)
/// jitter. Without centroids, ERPs are drawn uniformly from the cells beyond
/// the `fallback_ring` quantile of ego distance.
inline ShadowSamples shadow_sample(const std::vector<Cell>& centroids, Vec2 ego_cell, int budget,
                                   const ShadowParams& sp, int rows, int cols, std::uint64_t seed) {
  ShadowSamples out;
  std::mt19937_64 rng(seed);
  if (budget <= 0) return out;
  if (centroids.empty()) {
    out.fallback = true;
    std::vector<double> dist;
    dist.reserve(static_cast<std::size_t>(rows) * cols);
    for (int v = 0; v < rows; ++v)
      for (int u = 0; u < cols; ++u) dist.push_back(norm(Vec2{double(u), double(v)} - ego_cell));
    const auto k = static_cast<std::size_t>(std::floor(sp.fallback_ring * static_cast<double>(dist.size() - 1)));
    std::vector<double> sorted = dist;
    std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(k), sorted.end());
    const double ring = sorted[k];
    std::vector<int> far;
    for (int i = 0; i < static_cast<int>(dist.size()); ++i)
      if (dist[i] >= ring) far.push_back(i);
    std::uniform_int_distribution<std::size_t> pick(0, far.size() - 1);
    for (int n = 0; n < budget; ++n) {
      const int i = far[pick(rng)];
      out.erp.push_back({double(i % cols), double(i / cols)});
      out.origin.push_back(-1);
      out.offsets.push_back({});
    }
    return out;
  }
  std::uniform_real_distribution<double> radius(sp.r_min, sp.r_max);
  std::normal_distribution<double> lateral(0.0, 1.0);
  double dist_sum = 0.0;
  for (int n = 0; n < budget; ++n) {
    const int ci = n % static_cast<int>(centroids.size());
    const Vec2 c = to_vec(centroids[ci]);
    const Vec2 away = c - ego_cell;
    const double len = norm(away);
    const Vec2 d = len > 0.0 ? away / len : Vec2{1.0, 0.0};
    const double r = radius(rng);
    const double s = sp.sigma_lat * lateral(rng);
    const Vec2 erp = clamp_to_grid(c + d * r + perp(d) * s, rows, cols);
    out.erp.push_back(erp);
    out.origin.push_back(ci);
    out.offsets.push_back(erp - c);
    dist_sum += norm(erp - c);
  }
  out.mean_distance = dist_sum / budget;
  return out;
}

/// Bilinear feature lookup for each point (one row per point).
inline Eigen::MatrixXd embed_hrp(const BevGrid<float>& features, const std::vector<Vec2>& points) {
  Eigen::MatrixXd e = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(points.size()), features.channels());
  std::vector<double> row(static_cast<std::size_t>(features.channels()));
  for (std::size_t n = 0; n < points.size(); ++n) {
    std::fill(row.begin(), row.end(), 0.0);
    bilinear_sample_into(features, points[n], std::span<double>(row));
    for (int c = 0; c < features.channels(); ++c) e(static_cast<Eigen::Index>(n), c) = row[c];
  }
  return e;
}

inline Eigen::MatrixXd xavier_normal(int rows, int cols, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, std::sqrt(2.0 / (rows + cols)));
  Eigen::MatrixXd m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = g(rng);
  return m;
}

/// Two-layer MLP [feature | offset | token] (2C + 2) -> C -> C with tanh.
struct ErpMlp {
  Eigen::MatrixXd w1;  // C x (2C + 2)
  Eigen::VectorXd b1;
  Eigen::MatrixXd w2;  // C x C
  Eigen::VectorXd b2;

  int channels() const { return static_cast<int>(w2.rows()); }

  static ErpMlp make(int c, std::mt19937_64& rng) {
    return {xavier_normal(c, 2 * c + 2, rng), Eigen::VectorXd::Zero(c), xavier_normal(c, c, rng),
            Eigen::VectorXd::Zero(c)};
  }

  Eigen::VectorXd input(const Eigen::VectorXd& feature, Vec2 offset, const Eigen::VectorXd& token) const {
    const int c = channels();
    if (feature.size() != c || token.size() != c || w1.cols() != 2 * c + 2)
      throw std::invalid_argument("ErpMlp: input shape mismatch");
    Eigen::VectorXd x(2 * c + 2);
    x << feature, offset.x, offset.y, token;
    return x;
  }

  Eigen::VectorXd forward(const Eigen::VectorXd& feature, Vec2 offset, const Eigen::VectorXd& token) const {
    const Eigen::VectorXd h = (w1 * input(feature, offset, token) + b1).array().tanh().matrix();
    return w2 * h + b2;
  }

  /// d output / d token (C x C).
  Eigen::MatrixXd jacobian_token(const Eigen::VectorXd& feature, Vec2 offset, const Eigen::VectorXd& token) const {
    const int c = channels();
    const Eigen::VectorXd h = (w1 * input(feature, offset, token) + b1).array().tanh().matrix();
    const Eigen::VectorXd dh = (1.0 - h.array().square()).matrix();
    return w2 * dh.asDiagonal() * w1.rightCols(c);
  }
};

/// Coarse per-anchor offset: bound * tanh(W e + b), in cells.
struct CoarseOffsetHead {
  Eigen::MatrixXd w;  // 2 x C
  Eigen::Vector2d b = Eigen::Vector2d::Zero();
  double bound = 4.0;

  Vec2 operator()(const Eigen::VectorXd& e) const {
    if (e.size() != w.cols()) throw std::invalid_argument("CoarseOffsetHead: embedding width mismatch");
    const Eigen::Vector2d o = bound * (w * e + b).array().tanh().matrix();
    return {o(0), o(1)};
  }
};

/// Fine offsets per (head, point): stencil bias plus a linear map of the
/// query embedding. The weights start at zero, so Q starts as the 3x3 stencil.
struct FineOffsetHead {
  int heads = 4;
  int points = 9;
  Eigen::MatrixXd w;  // (heads * points * 2) x C
  Eigen::VectorXd b;

  static FineOffsetHead make(int c, int heads, int points) {
    FineOffsetHead f{heads, points, Eigen::MatrixXd::Zero(heads * points * 2, c),
                     Eigen::VectorXd::Zero(heads * points * 2)};
    for (int h = 0; h < heads; ++h)
      for (int p = 0; p < points; ++p) {
        f.b((h * points + p) * 2 + 0) = p % 3 - 1;
        f.b((h * points + p) * 2 + 1) = p / 3 - 1;
      }
    return f;
  }

  std::vector<Vec2> offsets(const Eigen::VectorXd& e) const {
    const Eigen::VectorXd d = w * e + b;
    std::vector<Vec2> out(static_cast<std::size_t>(heads * points));
    for (int k = 0; k < heads * points; ++k) out[k] = {d(2 * k), d(2 * k + 1)};
    return out;
  }
};

struct ScaleParams {
  ErpMlp erp_mlp;
  Eigen::VectorXd token;
  CoarseOffsetHead coarse;
  FineOffsetHead fine;
};

struct GeneratorParams {
  std::array<ScaleParams, kNumScales> scales;

  static GeneratorParams make(const std::array<int, kNumScales>& channels, const QueryConfig& qc,
                              std::uint64_t seed) {
    GeneratorParams p;
    for (int l = 0; l < kNumScales; ++l) {
      std::mt19937_64 rng(mix_seed(seed, 0x9e7, l));
      const int c = channels[l];
      auto& s = p.scales[l];
      s.erp_mlp = ErpMlp::make(c, rng);
      s.token = xavier_normal(c, 1, rng);
      s.coarse = {xavier_normal(2, c, rng), Eigen::Vector2d::Zero(), qc.offset_bound};
      s.fine = FineOffsetHead::make(c, qc.heads, qc.points);
    }
    return p;
  }
};

/// Rows n: MLP([F(centroid_n) | offset_n | token]). Fallback ERPs (no centroid)
/// use a zero feature and zero offset.
inline Eigen::MatrixXd embed_erp(const BevGrid<float>& features, const std::vector<Cell>& centroids,
                                 const ShadowSamples& shadows, const Eigen::VectorXd& token, const ErpMlp& mlp) {
  const int c = features.channels();
  if (mlp.channels() != c || token.size() != c) throw std::invalid_argument("embed_erp: channel mismatch");
  Eigen::MatrixXd e(static_cast<Eigen::Index>(shadows.erp.size()), c);
  for (std::size_t n = 0; n < shadows.erp.size(); ++n) {
    Eigen::VectorXd f = Eigen::VectorXd::Zero(c);
    if (shadows.origin[n] >= 0) {
      const auto cell = features.cell(centroids[shadows.origin[n]].u, centroids[shadows.origin[n]].v);
      for (int k = 0; k < c; ++k) f(k) = cell[k];
    }
    e.row(static_cast<Eigen::Index>(n)) = mlp.forward(f, shadows.offsets[n], token).transpose();
  }
  return e;
}

struct ScaleQueries {
  int level = 0;
  int rows = 0;
  int cols = 0;
  std::vector<Vec2> hrp;
  std::vector<Vec2> erp;
  std::vector<Cell> centroids;
  ShadowSamples shadows;
  std::vector<Vec2> anchors;       // hrp then erp
  Eigen::MatrixXd embeddings;      // anchors x C
  std::vector<Vec2> coarse;        // O, one per anchor
  std::vector<Vec2> nudged;        // clamp(A + O)
  std::vector<std::vector<Vec2>> fine;  // per anchor: heads * points locations
  double delta = 0.0;

  int num_hrp() const { return static_cast<int>(hrp.size()); }
  int num_erp() const { return static_cast<int>(erp.size()); }

  /// Rounded nudged centres, one per anchor (duplicates kept).
  std::vector<Cell> anchor_cells() const {
    std::vector<Cell> out;
    out.reserve(nudged.size());
    for (Vec2 a : nudged) out.push_back({static_cast<int>(std::lround(a.x)), static_cast<int>(std::lround(a.y))});
    return out;
  }
  std::vector<Vec2> coarse_hrp() const { return {coarse.begin(), coarse.begin() + num_hrp()}; }
  std::vector<Vec2> coarse_erp() const { return {coarse.begin() + num_hrp(), coarse.end()}; }
};

struct QuerySet {
  std::array<ScaleQueries, kNumScales> scales;
  std::size_t total_anchors() const {
    std::size_t n = 0;
    for (const auto& s : scales) n += s.anchors.size();
    return n;
  }
};

/// Applies the coarse head to every embedding row and clamps A + O into the grid.
inline void coarse_offset(ScaleQueries& q, const CoarseOffsetHead& head) {
  q.coarse.clear();
  q.nudged.clear();
  for (std::size_t n = 0; n < q.anchors.size(); ++n) {
    const Vec2 o = head(q.embeddings.row(static_cast<Eigen::Index>(n)).transpose());
    q.coarse.push_back(o);
    q.nudged.push_back(clamp_to_grid(q.anchors[n] + o, q.rows, q.cols));
  }
}

/// Q = { nudged + fine offset (h, p) }, clamped into the grid.
inline std::vector<std::vector<Vec2>> fine_sampling_locations(const std::vector<Vec2>& nudged,
                                                              const Eigen::MatrixXd& embeddings,
                                                              const FineOffsetHead& head, int rows, int cols) {
  std::vector<std::vector<Vec2>> out;
  out.reserve(nudged.size());
  for (std::size_t n = 0; n < nudged.size(); ++n) {
    std::vector<Vec2> locs = head.offsets(embeddings.row(static_cast<Eigen::Index>(n)).transpose());
    for (Vec2& p : locs) p = clamp_to_grid(nudged[n] + p, rows, cols);
    out.push_back(std::move(locs));
  }
  return out;
}

/// Full per-scale generation for one agent.
inline QuerySet generate_queries(const FeaturePyramid& features, const PriorMaps& priors, const GridSpec& spec,
                                 const QueryConfig& qc, const GeneratorParams& params, std::uint64_t seed) {
  qc.validate();
  QuerySet qs;
  for (int l = 0; l < kNumScales; ++l) {
    auto& q = qs.scales[l];
    const BevGrid<float>& f = features[l];
    q.level = l;
    q.rows = f.rows();
    q.cols = f.cols();
    const Vec2 ego = spec.to_cell_coords({0.0, 0.0}, l);
    const Cell ego_cell{static_cast<int>(std::lround(ego.x)), static_cast<int>(std::lround(ego.y))};
    const int budget = qc.budgets[l];
    const auto& sp = params.scales[l];

    Eigen::MatrixXd e_h(0, f.channels());
    Eigen::MatrixXd e_e(0, f.channels());
    if (qc.use_hrp) {
      for (Cell c : select_hrp(priors.dynamic_levels[l], priors.confidence_levels[l], budget, ego_cell))
        q.hrp.push_back(to_vec(c));
      e_h = embed_hrp(f, q.hrp);
    }
    if (qc.use_erp) {
      q.centroids = find_occluders(priors.confidence_levels[l], qc.percentiles[l]);
      q.shadows = shadow_sample(q.centroids, ego, budget, qc.shadow.at_level(l), q.rows, q.cols,
                                mix_seed(seed, 0x5ad, l));
      q.erp = q.shadows.erp;
      q.delta = q.shadows.mean_distance;
      e_e = embed_erp(f, q.centroids, q.shadows, sp.token, sp.erp_mlp);
    }
    q.anchors = q.hrp;
    q.anchors.insert(q.anchors.end(), q.erp.begin(), q.erp.end());
    q.embeddings.resize(e_h.rows() + e_e.rows(), f.channels());
    q.embeddings << e_h, e_e;
    coarse_offset(q, sp.coarse);
    q.fine = fine_sampling_locations(q.nudged, q.embeddings, sp.fine, q.rows, q.cols);
  }
  return qs;
}

struct ScaleOffsets {
  std::vector<Vec2> hrp;  // O^H
  std::vector<Vec2> erp;  // O^E
  double delta = 0.0;
};

struct OffsetLoss {
  double value = 0.0;
  std::array<bool, kNumScales> skipped{};  // a branch had no offsets at that scale
  std::vector<std::vector<Vec2>> grad_hrp;
  std::vector<std::vector<Vec2>> grad_erp;
};

inline double mean_norm(const std::vector<Vec2>& v) {
  double s = 0.0;
  for (Vec2 o : v) s += norm(o);
  return s / static_cast<double>(v.size());
}

/// Sum over scales of [delta - (mean|O^E| - mean|O^H|)]_+, with the analytic
/// gradient for every offset (zero for zero-length offsets and inactive hinges).
inline OffsetLoss offset_regularization_loss(const std::vector<ScaleOffsets>& scales) {
  OffsetLoss out;
  for (std::size_t l = 0; l < scales.size(); ++l) {
    const auto& s = scales[l];
    out.grad_hrp.emplace_back(s.hrp.size());
    out.grad_erp.emplace_back(s.erp.size());
    if (s.hrp.empty() || s.erp.empty()) {
      if (l < out.skipped.size()) out.skipped[l] = true;
      continue;
    }
    const double margin = s.delta - (mean_norm(s.erp) - mean_norm(s.hrp));
    if (margin <= 0.0) continue;
    out.value += margin;
    const auto unit = [](Vec2 o) { const double n = norm(o); return n > 0.0 ? o / n : Vec2{}; };
    for (std::size_t n = 0; n < s.erp.size(); ++n)
      out.grad_erp[l][n] = unit(s.erp[n]) * (-1.0 / static_cast<double>(s.erp.size()));
    for (std::size_t n = 0; n < s.hrp.size(); ++n)
      out.grad_hrp[l][n] = unit(s.hrp[n]) * (1.0 / static_cast<double>(s.hrp.size()));
  }
  return out;
}

inline std::vector<ScaleOffsets> offsets_of(const QuerySet& qs) {
  std::vector<ScaleOffsets> out;
  for (const auto& s : qs.scales) out.push_back({s.coarse_hrp(), s.coarse_erp(), s.delta});
  return out;
}

}  // namespace slimcomm
