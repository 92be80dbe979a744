#pragma once

// Ego-side fusion: collaborator averaging over the received sparse
// neighbourhoods, multi-head deformable cross-attention at the fine sampling
// locations, scatter back to the grid, gated blending and scale aggregation.

#include <Eigen/Core>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <random>
#include <stdexcept>
#include <vector>

#include "slimcomm/comm.hpp"
#include "slimcomm/grid.hpp"
#include "slimcomm/querygen.hpp"

namespace slimcomm {

enum class AverageMode {
  Present,  // divide by the collaborators that sent the cell
  All,      // divide by every participating collaborator
};

struct NeighborhoodScale {
  int channels = 0;
  std::map<Cell, std::vector<double>> entries;  // cell -> 9C (halo) or C values
};

/// H^CAV: received features averaged over collaborators, per scale.
struct SparseNeighborhood {
  bool halo = true;
  std::vector<NeighborhoodScale> scales;
  std::size_t collaborators = 0;

  int width(int l) const { return (halo ? kHaloBlocks : 1) * scales.at(l).channels; }
  bool empty() const {
    return std::all_of(scales.begin(), scales.end(), [](const auto& s) { return s.entries.empty(); });
  }
};

/// Per-cell mean of the collaborators' entries. Messages are processed in
/// sender order so the result does not depend on arrival order.
inline SparseNeighborhood average_collaborators(std::vector<SparseFeatureMessage> messages,
                                                AverageMode mode = AverageMode::Present) {
  SparseNeighborhood nb;
  nb.collaborators = messages.size();
  if (messages.empty()) return nb;
  std::stable_sort(messages.begin(), messages.end(),
                   [](const auto& a, const auto& b) { return a.sender < b.sender; });
  nb.halo = messages.front().halo;
  const auto n_scales = messages.front().scales.size();
  nb.scales.resize(n_scales);
  for (std::size_t l = 0; l < n_scales; ++l) nb.scales[l].channels = messages.front().channels.at(l);
  std::vector<std::map<Cell, int>> counts(n_scales);
  for (const auto& m : messages) {
    if (m.halo != nb.halo || m.scales.size() != n_scales)
      throw std::invalid_argument("average_collaborators: inconsistent message layouts");
    for (std::size_t l = 0; l < n_scales; ++l) {
      if (m.channels.at(l) != nb.scales[l].channels)
        throw std::invalid_argument("average_collaborators: channel mismatch");
      for (std::size_t i = 0; i < m.scales[l].cells.size(); ++i) {
        const auto e = m.entry(static_cast<int>(l), i);
        auto& acc = nb.scales[l].entries[m.scales[l].cells[i]];
        if (acc.empty()) acc.assign(e.size(), 0.0);
        for (std::size_t k = 0; k < e.size(); ++k) acc[k] += e[k];
        ++counts[l][m.scales[l].cells[i]];
      }
    }
  }
  for (std::size_t l = 0; l < n_scales; ++l)
    for (auto& [cell, acc] : nb.scales[l].entries) {
      const double n = mode == AverageMode::Present ? counts[l][cell] : static_cast<double>(messages.size());
      for (double& x : acc) x /= n;
    }
  return nb;
}

/// Per-cell C-vectors the attention samples from. A cell with its own entry
/// uses that entry's centre block; otherwise the halo blocks of neighbouring
/// entries that land on it are averaged. Absent cells read as zero.
class ValueField {
 public:
  ValueField() = default;
  ValueField(const SparseNeighborhood& nb, int level) : channels_(nb.scales.at(level).channels) {
    const auto& s = nb.scales.at(level);
    const int c = channels_;
    std::map<Cell, int> halo_hits;
    for (const auto& [cell, values] : s.entries) {
      const auto centre = values.begin() + (nb.halo ? 4 * c : 0);
      values_[cell].assign(centre, centre + c);
    }
    if (!nb.halo) return;
    std::map<Cell, std::vector<double>> spill;
    for (const auto& [cell, values] : s.entries) {
      const auto ring = halo_of(cell);
      for (int k = 0; k < kHaloBlocks; ++k) {
        if (k == 4 || s.entries.count(ring[k])) continue;
        auto& acc = spill[ring[k]];
        if (acc.empty()) acc.assign(c, 0.0);
        for (int j = 0; j < c; ++j) acc[j] += values[static_cast<std::size_t>(k) * c + j];
        ++halo_hits[ring[k]];
      }
    }
    for (auto& [cell, acc] : spill) {
      for (double& x : acc) x /= halo_hits[cell];
      values_[cell] = std::move(acc);
    }
  }

  int channels() const { return channels_; }
  const std::vector<double>* find(Cell c) const {
    const auto it = values_.find(c);
    return it == values_.end() ? nullptr : &it->second;
  }

  /// Bilinear sample at continuous cell coordinates.
  Eigen::VectorXd sample(Vec2 loc) const {
    Eigen::VectorXd out = Eigen::VectorXd::Zero(channels_);
    const double fu = std::floor(loc.x);
    const double fv = std::floor(loc.y);
    const int u0 = static_cast<int>(fu);
    const int v0 = static_cast<int>(fv);
    const double au = loc.x - fu;
    const double av = loc.y - fv;
    const std::array<Cell, 4> nb{{{u0, v0}, {u0 + 1, v0}, {u0, v0 + 1}, {u0 + 1, v0 + 1}}};
    const std::array<double, 4> w{(1 - au) * (1 - av), au * (1 - av), (1 - au) * av, au * av};
    for (int k = 0; k < 4; ++k) {
      if (w[k] == 0.0) continue;
      if (const auto* v = find(nb[k]))
        for (int c = 0; c < channels_; ++c) out(c) += w[k] * (*v)[c];
    }
    return out;
  }

 private:
  int channels_ = 0;
  std::map<Cell, std::vector<double>> values_;
};

/// Per-scale attention tables: logits from the query embedding, a value
/// projection per head and the output projection. No biases.
struct AttentionParams {
  int heads = 4;
  int points = 9;
  Eigen::MatrixXd logit_w;             // (heads * points) x C
  std::vector<Eigen::MatrixXd> value;  // heads x [(C / heads) x C]
  Eigen::MatrixXd output;              // C x C

  int channels() const { return static_cast<int>(output.rows()); }

  static AttentionParams make(int c, int heads, int points, std::mt19937_64& rng) {
    if (c % heads != 0) throw std::invalid_argument("attention: channels must be divisible by heads");
    AttentionParams p{heads, points, xavier_normal(heads * points, c, rng), {}, {}};
    for (int h = 0; h < heads; ++h) p.value.push_back(xavier_normal(c / heads, c, rng));
    p.output = xavier_normal(c, c, rng);
    return p;
  }
};

inline Eigen::VectorXd softmax(const Eigen::VectorXd& z) {
  const double m = z.maxCoeff();
  Eigen::VectorXd e = (z.array() - m).exp().matrix();
  return e / e.sum();
}

/// Softmax weights per head over its points, laid out like the logits.
inline Eigen::VectorXd attention_weights(const Eigen::VectorXd& logits, int heads, int points) {
  Eigen::VectorXd w(logits.size());
  for (int h = 0; h < heads; ++h) w.segment(h * points, points) = softmax(logits.segment(h * points, points));
  return w;
}

/// One query: samples (heads * points rows, C columns) and logits in, fused
/// C-vector out.
inline Eigen::VectorXd attend(const Eigen::MatrixXd& samples, const Eigen::VectorXd& logits,
                              const AttentionParams& p) {
  const int c = p.channels();
  const int hc = c / p.heads;
  const Eigen::VectorXd w = attention_weights(logits, p.heads, p.points);
  Eigen::VectorXd concat(c);
  for (int h = 0; h < p.heads; ++h) {
    const Eigen::VectorXd mix = samples.middleRows(h * p.points, p.points).transpose() * w.segment(h * p.points, p.points);
    concat.segment(h * hc, hc) = p.value[h] * mix;
  }
  return p.output * concat;
}

/// d attend / d logits, C x (heads * points).
inline Eigen::MatrixXd attend_logit_jacobian(const Eigen::MatrixXd& samples, const Eigen::VectorXd& logits,
                                             const AttentionParams& p) {
  const int c = p.channels();
  const int hc = c / p.heads;
  const Eigen::VectorXd w = attention_weights(logits, p.heads, p.points);
  Eigen::MatrixXd jac(c, p.heads * p.points);
  for (int h = 0; h < p.heads; ++h) {
    const auto s = samples.middleRows(h * p.points, p.points);
    const Eigen::VectorXd mix = s.transpose() * w.segment(h * p.points, p.points);
    const Eigen::MatrixXd proj = p.output.middleCols(h * hc, hc) * p.value[h];  // C x C
    for (int q = 0; q < p.points; ++q) {
      const Eigen::VectorXd ds = w(h * p.points + q) * (s.row(q).transpose() - mix);
      jac.col(h * p.points + q) = proj * ds;
    }
  }
  return jac;
}

struct AttentionResult {
  Eigen::MatrixXd fused;    // queries x C
  Eigen::MatrixXd weights;  // queries x (heads * points)
};

/// Multi-head deformable cross-attention of every query over the sparse
/// value field at its fine sampling locations.
inline AttentionResult deformable_cross_attention(const Eigen::MatrixXd& embeddings,
                                                  const std::vector<std::vector<Vec2>>& locations,
                                                  const ValueField& field, const AttentionParams& p) {
  const auto n = static_cast<Eigen::Index>(locations.size());
  const int k = p.heads * p.points;
  if (embeddings.rows() != n || embeddings.cols() != p.channels() || field.channels() != p.channels())
    throw std::invalid_argument("deformable_cross_attention: shape mismatch");
  AttentionResult r{Eigen::MatrixXd::Zero(n, p.channels()), Eigen::MatrixXd::Zero(n, k)};
  Eigen::MatrixXd samples(k, p.channels());
  for (Eigen::Index q = 0; q < n; ++q) {
    if (static_cast<int>(locations[q].size()) != k)
      throw std::invalid_argument("deformable_cross_attention: expected heads * points locations per query");
    for (int j = 0; j < k; ++j) samples.row(j) = field.sample(locations[q][j]).transpose();
    const Eigen::VectorXd logits = p.logit_w * embeddings.row(q).transpose();
    r.weights.row(q) = attention_weights(logits, p.heads, p.points).transpose();
    r.fused.row(q) = attend(samples, logits, p).transpose();
  }
  return r;
}

/// Writes each query's vector at its cell; colliding queries are averaged and
/// every other cell stays zero.
inline BevGrid<float> scatter_to_grid(const Eigen::MatrixXd& fused, const std::vector<Cell>& cells, int rows,
                                      int cols, int level) {
  if (static_cast<std::size_t>(fused.rows()) != cells.size())
    throw std::invalid_argument("scatter_to_grid: one cell per query required");
  const int c = static_cast<int>(fused.cols());
  BevGrid<float> out(std::max(c, 1), rows, cols, level);
  std::map<Cell, std::pair<Eigen::VectorXd, int>> acc;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (!out.in_bounds(cells[i].u, cells[i].v)) throw std::out_of_range("scatter_to_grid: cell outside grid");
    auto [it, fresh] = acc.try_emplace(cells[i], Eigen::VectorXd::Zero(c), 0);
    it->second.first += fused.row(static_cast<Eigen::Index>(i)).transpose();
    ++it->second.second;
  }
  for (const auto& [cell, sum] : acc)
    for (int k = 0; k < c; ++k) out.at(cell.u, cell.v, k) = static_cast<float>(sum.first(k) / sum.second);
  return out;
}

/// 1x1 convolution over [F | F_cav] producing the per-channel gate logits.
struct GateParams {
  Eigen::MatrixXd w;  // C x 2C
  Eigen::VectorXd b;

  static GateParams make(int c, std::mt19937_64& rng) { return {xavier_normal(c, 2 * c, rng), Eigen::VectorXd::Zero(c)}; }
  /// Gate pinned shut: the blend returns the ego features unchanged.
  static GateParams ego_passthrough(int c) {
    return {Eigen::MatrixXd::Zero(c, 2 * c), Eigen::VectorXd::Constant(c, -std::numeric_limits<double>::infinity())};
  }
};

/// F~ = F + G (F_cav - F), G = sigmoid(W [F | F_cav] + b), kept inside the
/// interval spanned by the two operands.
inline BevGrid<float> gated_blend(const BevGrid<float>& f, const BevGrid<float>& fcav, const GateParams& gate) {
  if (!f.same_shape(fcav)) throw std::invalid_argument("gated_blend: shape mismatch");
  const int c = f.channels();
  if (gate.w.rows() != c || gate.w.cols() != 2 * c || gate.b.size() != c)
    throw std::invalid_argument("gated_blend: gate shape mismatch");
  BevGrid<float> out = f;
  const auto cells = static_cast<Eigen::Index>(f.num_cells());
  const Eigen::Map<const Eigen::MatrixXf> a(f.data().data(), c, cells);
  const Eigen::Map<const Eigen::MatrixXf> b(fcav.data().data(), c, cells);
  Eigen::MatrixXd x(2 * c, cells);
  x.topRows(c) = a.cast<double>();
  x.bottomRows(c) = b.cast<double>();
  Eigen::MatrixXd z = gate.w * x;
  z.colwise() += gate.b;
  for (Eigen::Index i = 0; i < cells; ++i)
    for (int k = 0; k < c; ++k) {
      const double g = 1.0 / (1.0 + std::exp(-z(k, i)));
      const double lo = std::min<double>(a(k, i), b(k, i));
      const double hi = std::max<double>(a(k, i), b(k, i));
      const double v = a(k, i) + g * (double(b(k, i)) - double(a(k, i)));
      out.data()[static_cast<std::size_t>(i) * c + k] = static_cast<float>(std::clamp(v, lo, hi));
    }
  return out;
}

/// Nearest upsampling of every level to level 0 plus a fixed projection to
/// C_0 channels, summed.
inline BevGrid<float> aggregate_scales(const FeaturePyramid& f, const std::array<Eigen::MatrixXd, kNumScales>& proj) {
  const BevGrid<float>& base = f[0];
  const int c0 = static_cast<int>(proj[0].rows());
  BevGrid<float> out(c0, base.rows(), base.cols(), 0);
  Eigen::VectorXd acc(c0);
  for (int v = 0; v < base.rows(); ++v)
    for (int u = 0; u < base.cols(); ++u) {
      acc.setZero();
      bool any = false;
      for (int l = 0; l < kNumScales; ++l) {
        const int su = u >> l;
        const int sv = v >> l;
        if (!f[l].in_bounds(su, sv) || f[l].cell_is_zero(su, sv)) continue;
        const auto cell = f[l].cell(su, sv);
        const Eigen::Map<const Eigen::VectorXf> x(cell.data(), f[l].channels());
        acc += proj[l] * x.cast<double>();
        any = true;
      }
      if (!any) continue;
      for (int k = 0; k < c0; ++k) out.at(u, v, k) = static_cast<float>(acc(k));
    }
  return out;
}

struct FusionParams {
  std::array<AttentionParams, kNumScales> attention;
  std::array<GateParams, kNumScales> gate;
  std::array<Eigen::MatrixXd, kNumScales> aggregation;  // C_0 x C_l

  static FusionParams make(const std::array<int, kNumScales>& channels, int heads, int points, std::uint64_t seed) {
    FusionParams p;
    for (int l = 0; l < kNumScales; ++l) {
      std::mt19937_64 rng(mix_seed(seed, 0xf05, l));
      p.attention[l] = AttentionParams::make(channels[l], heads, points, rng);
      p.gate[l] = GateParams::make(channels[l], rng);
      p.aggregation[l] = xavier_normal(channels[0], channels[l], rng);
    }
    return p;
  }
};

struct FusionResult {
  FeaturePyramid collaborator;  // F^CAV per scale
  FeaturePyramid blended;       // F~ per scale
  BevGrid<float> aggregated;    // S~
  std::array<Eigen::MatrixXd, kNumScales> weights;
};

/// Attention path for one scale: neighbourhood -> F^CAV_l on the ego grid.
inline BevGrid<float> collaborator_features(const ScaleQueries& q, const SparseNeighborhood& nb, const AttentionParams& p,
                                            Eigen::MatrixXd* weights = nullptr) {
  const int l = q.level;
  if (nb.scales.size() <= static_cast<std::size_t>(l) || q.anchors.empty())
    return BevGrid<float>(p.channels(), q.rows, q.cols, l);
  const ValueField field(nb, l);
  auto r = deformable_cross_attention(q.embeddings, q.fine, field, p);
  if (weights) *weights = r.weights;
  return scatter_to_grid(r.fused, q.anchor_cells(), q.rows, q.cols, l);
}

/// Blends and aggregates given per-scale collaborator features.
inline FusionResult blend_and_aggregate(const FeaturePyramid& ego, FeaturePyramid collaborator, const FusionParams& p) {
  FusionResult r;
  r.collaborator = std::move(collaborator);
  for (int l = 0; l < kNumScales; ++l) r.blended[l] = gated_blend(ego[l], r.collaborator[l], p.gate[l]);
  r.aggregated = aggregate_scales(r.blended, p.aggregation);
  return r;
}

/// Full sparse fusion for the ego.
inline FusionResult fuse(const FeaturePyramid& ego, const QuerySet& qs, const SparseNeighborhood& nb, const FusionParams& p) {
  FeaturePyramid cav;
  std::array<Eigen::MatrixXd, kNumScales> weights;
  for (int l = 0; l < kNumScales; ++l) {
    if (nb.empty())
      cav[l] = BevGrid<float>(ego[l].channels(), ego[l].rows(), ego[l].cols(), l);
    else
      cav[l] = collaborator_features(qs.scales[l], nb, p.attention[l], &weights[l]);
  }
  FusionResult r = blend_and_aggregate(ego, std::move(cav), p);
  r.weights = std::move(weights);
  return r;
}

struct GradientReport {
  double max_relative_error = 0.0;
  bool finite = true;
};

/// Central-difference check of `grad` against `f` at x. The relative error is
/// |a - n| / max(|a|, |n|, 1e-6) in the Euclidean norm over all coordinates.
inline GradientReport finite_difference_check(const std::function<double(const Eigen::VectorXd&)>& f,
                                              const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& grad,
                                              const Eigen::VectorXd& x, double eps) {
  GradientReport r;
  const Eigen::VectorXd a = grad(x);
  Eigen::VectorXd n(x.size());
  Eigen::VectorXd probe = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    probe(i) = x(i) + eps;
    const double fp = f(probe);
    probe(i) = x(i) - eps;
    const double fm = f(probe);
    probe(i) = x(i);
    n(i) = (fp - fm) / (2.0 * eps);
  }
  if (!a.allFinite() || !n.allFinite()) {
    r.finite = false;
    r.max_relative_error = std::numeric_limits<double>::infinity();
    return r;
  }
  r.max_relative_error = (a - n).norm() / std::max({a.norm(), n.norm(), 1e-6});
  return r;
}

}  // namespace slimcomm
