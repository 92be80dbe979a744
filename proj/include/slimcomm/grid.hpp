#pragma once

// BEV grid storage and the metric <-> cell conversions used at pillar
// resolution and at every pyramid level.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "slimcomm/geometry.hpp"

namespace slimcomm {

inline constexpr int kPillarLevel = -1;
inline constexpr int kNumScales = 3;

/// Pillar grid configuration. The agent sits at the grid centre with x
/// forward along the columns and y to the left along the rows.
struct GridSpec {
  double cell = 0.4;
  int rows = 200;  // H, across-track (80 m)
  int cols = 704;  // W, along-track (281.6 m)
  double z_band = 4.0;
  int n_max = 32;

  double extent_x() const { return cols * cell; }
  double extent_y() const { return rows * cell; }

  /// Downsampling factor from pillar cells to pyramid level `level`.
  static int level_factor(int level) { return level < 0 ? 1 : (1 << (level + 1)); }

  int rows_at(int level) const { return rows / level_factor(level); }
  int cols_at(int level) const { return cols / level_factor(level); }
  double cell_at(int level) const { return cell * level_factor(level); }

  /// Continuous cell coordinates (integer = cell centre) of a metric point.
  Vec2 to_cell_coords(Vec2 p, int level = kPillarLevel) const {
    const double c = cell_at(level);
    return {(p.x + extent_x() / 2.0) / c - 0.5, (p.y + extent_y() / 2.0) / c - 0.5};
  }

  /// Metric centre of continuous cell coordinates.
  Vec2 to_metric(Vec2 uv, int level = kPillarLevel) const {
    const double c = cell_at(level);
    return {(uv.x + 0.5) * c - extent_x() / 2.0, (uv.y + 0.5) * c - extent_y() / 2.0};
  }

  /// Pillar cell containing p under the half-open floor convention.
  std::optional<std::pair<int, int>> pillar_of(Vec2 p) const {
    if (!is_finite(p)) return std::nullopt;
    const double fu = std::floor(p.x / cell + cols / 2.0);
    const double fv = std::floor(p.y / cell + rows / 2.0);
    if (fu < 0.0 || fv < 0.0 || fu >= cols || fv >= rows) return std::nullopt;
    return std::pair{static_cast<int>(fu), static_cast<int>(fv)};
  }

  void validate() const {
    if (!(cell > 0.0) || rows < 8 || cols < 8 || n_max < 1)
      throw std::invalid_argument("grid: cell > 0, rows/cols >= 8 and n_max >= 1 required");
  }
};

/// Integer cell index on some grid (u = column, v = row).
struct Cell {
  int u = 0;
  int v = 0;
  bool operator==(const Cell&) const = default;
  auto operator<=>(const Cell& o) const {
    if (v != o.v) return v <=> o.v;
    return u <=> o.u;
  }
};

/// Dense (C, H, W) grid stored cell-major so a cell's channel vector is
/// contiguous. C = 1 for scalar maps.
template <typename T>
class BevGrid {
 public:
  BevGrid() = default;
  BevGrid(int channels, int rows, int cols, int level = kPillarLevel, T fill = T{})
      : channels_(channels), rows_(rows), cols_(cols), level_(level) {
    if (channels < 1 || rows < 0 || cols < 0) throw std::invalid_argument("BevGrid: bad shape");
    data_.assign(static_cast<std::size_t>(channels) * rows * cols, fill);
  }
  static BevGrid scalar(int rows, int cols, int level = kPillarLevel, T fill = T{}) {
    return BevGrid(1, rows, cols, level, fill);
  }

  int channels() const { return channels_; }
  int rows() const { return rows_; }
  int cols() const { return cols_; }
  int level() const { return level_; }
  std::size_t num_cells() const { return static_cast<std::size_t>(rows_) * cols_; }
  bool in_bounds(int u, int v) const { return u >= 0 && v >= 0 && u < cols_ && v < rows_; }
  bool same_shape(const BevGrid& o) const {
    return channels_ == o.channels_ && rows_ == o.rows_ && cols_ == o.cols_;
  }

  T& at(int u, int v, int c = 0) { return data_[index(u, v) + c]; }
  const T& at(int u, int v, int c = 0) const { return data_[index(u, v) + c]; }

  std::span<T> cell(int u, int v) { return {data_.data() + index(u, v), static_cast<std::size_t>(channels_)}; }
  std::span<const T> cell(int u, int v) const {
    return {data_.data() + index(u, v), static_cast<std::size_t>(channels_)};
  }

  std::vector<T>& data() { return data_; }
  const std::vector<T>& data() const { return data_; }

  bool cell_is_zero(int u, int v) const {
    const auto c = cell(u, v);
    return std::all_of(c.begin(), c.end(), [](T x) { return x == T{}; });
  }

  std::size_t count_nonzero() const {
    return static_cast<std::size_t>(
        std::count_if(data_.begin(), data_.end(), [](T x) { return x != T{}; }));
  }

  bool operator==(const BevGrid&) const = default;

 private:
  std::size_t index(int u, int v) const {
    return (static_cast<std::size_t>(v) * cols_ + u) * channels_;
  }

  int channels_ = 1;
  int rows_ = 0;
  int cols_ = 0;
  int level_ = kPillarLevel;
  std::vector<T> data_;
};

/// Block max-pool by `factor` (floor mode: a trailing partial block is dropped).
template <typename T>
BevGrid<T> downsample_max(const BevGrid<T>& in, int factor, int level) {
  const int rows = in.rows() / factor;
  const int cols = in.cols() / factor;
  BevGrid<T> out(in.channels(), rows, cols, level);
  for (int v = 0; v < rows; ++v)
    for (int u = 0; u < cols; ++u)
      for (int c = 0; c < in.channels(); ++c) {
        T m = in.at(u * factor, v * factor, c);
        for (int dv = 0; dv < factor; ++dv)
          for (int du = 0; du < factor; ++du) m = std::max(m, in.at(u * factor + du, v * factor + dv, c));
        out.at(u, v, c) = m;
      }
  return out;
}

/// Block average-pool by `factor` (floor mode).
template <typename T>
BevGrid<T> downsample_avg(const BevGrid<T>& in, int factor, int level) {
  const int rows = in.rows() / factor;
  const int cols = in.cols() / factor;
  BevGrid<T> out(in.channels(), rows, cols, level);
  const double inv = 1.0 / (static_cast<double>(factor) * factor);
  for (int v = 0; v < rows; ++v)
    for (int u = 0; u < cols; ++u)
      for (int c = 0; c < in.channels(); ++c) {
        double s = 0.0;
        for (int dv = 0; dv < factor; ++dv)
          for (int du = 0; du < factor; ++du) s += in.at(u * factor + du, v * factor + dv, c);
        out.at(u, v, c) = static_cast<T>(s * inv);
      }
  return out;
}

}  // namespace slimcomm
