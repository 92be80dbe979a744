#pragma once

// Query broadcast, collaborator selection, halo-enriched sparse feature
// messages, their little-endian wire format and payload metering.

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

#include "slimcomm/bev.hpp"
#include "slimcomm/grid.hpp"
#include "slimcomm/querygen.hpp"

namespace slimcomm {

inline constexpr std::array<char, 4> kMagic{'S', 'L', 'I', 'M'};
inline constexpr std::uint16_t kWireVersion = 1;
inline constexpr std::size_t kHeaderBytes = 17;  // magic, version, type, sender, frame, num_scales
inline constexpr std::size_t kPoseBytes = 12;
inline constexpr int kHaloBlocks = 9;

enum class MessageType : std::uint8_t { Query = 1, HaloFeatures = 2, CellFeatures = 3 };

class DecodeError : public std::runtime_error {
 public:
  DecodeError(const std::string& what, std::size_t offset)
      : std::runtime_error(what + " at byte " + std::to_string(offset)), offset_(offset) {}
  std::size_t offset() const { return offset_; }

 private:
  std::size_t offset_;
};

/// Pose as carried on the wire (float32).
struct WirePose {
  float x = 0.0f;
  float y = 0.0f;
  float yaw = 0.0f;
  static WirePose from(const Pose2& p) {
    return {static_cast<float>(p.position.x), static_cast<float>(p.position.y), static_cast<float>(p.yaw)};
  }
  Pose2 pose() const { return {{x, y}, yaw}; }
  bool operator==(const WirePose&) const = default;
};

struct QueryMessage {
  std::uint32_t sender = 0;
  std::uint32_t frame = 0;
  WirePose pose;
  std::vector<std::vector<Cell>> scales;  // ascending level
  bool operator==(const QueryMessage&) const = default;
};

struct FeatureBlock {
  std::vector<Cell> cells;
  std::vector<float> values;  // cells.size() * width, entry-major
  bool operator==(const FeatureBlock&) const = default;
};

struct SparseFeatureMessage {
  std::uint32_t sender = 0;
  std::uint32_t frame = 0;
  WirePose pose;
  bool halo = true;             // 9 * C values per entry, else C
  std::vector<int> channels;    // C_l per scale
  std::vector<FeatureBlock> scales;

  int width(int l) const { return (halo ? kHaloBlocks : 1) * channels.at(l); }
  std::span<const float> entry(int l, std::size_t i) const {
    const auto w = static_cast<std::size_t>(width(l));
    return {scales.at(l).values.data() + i * w, w};
  }
  bool operator==(const SparseFeatureMessage&) const = default;
};

/// Which cells a query message names: rounded nudged anchors, or every
/// rounded fine sampling location.
enum class QueryCells { Anchors, FinePoints };

/// First-occurrence order preserving deduplication.
inline std::vector<Cell> dedup_locations(const std::vector<Cell>& cells) {
  std::vector<Cell> out;
  std::set<Cell> seen;
  for (Cell c : cells)
    if (seen.insert(c).second) out.push_back(c);
  return out;
}

/// Query message for a finished query set. Cells are deduplicated and sorted
/// row-major per scale.
inline QueryMessage build_query_message(const QuerySet& qs, const Pose2& pose, std::uint32_t sender,
                                        std::uint32_t frame, QueryCells which = QueryCells::Anchors) {
  QueryMessage m{sender, frame, WirePose::from(pose), {}};
  for (const auto& s : qs.scales) {
    std::vector<Cell> cells;
    if (which == QueryCells::Anchors) {
      cells = s.anchor_cells();
    } else {
      for (const auto& locs : s.fine)
        for (Vec2 p : locs) cells.push_back({static_cast<int>(std::lround(p.x)), static_cast<int>(std::lround(p.y))});
    }
    cells = dedup_locations(cells);
    std::sort(cells.begin(), cells.end());
    m.scales.push_back(std::move(cells));
  }
  return m;
}

/// 3x3 neighbourhood of a cell in row-major (dv, du) order.
inline std::array<Cell, kHaloBlocks> halo_of(Cell c) {
  std::array<Cell, kHaloBlocks> out;
  for (int k = 0; k < kHaloBlocks; ++k) out[k] = {c.u + k % 3 - 1, c.v + k / 3 - 1};
  return out;
}

/// Distinct in-grid cells covered by the 3x3 halos of `cells`.
inline std::vector<Cell> halo_footprint(const std::vector<Cell>& cells, int rows, int cols) {
  std::vector<Cell> all;
  for (Cell c : cells)
    for (Cell n : halo_of(c))
      if (n.u >= 0 && n.v >= 0 && n.u < cols && n.v < rows) all.push_back(n);
  return dedup_locations(all);
}

/// Channel-concatenated 3x3 halo features per cell. Neighbours outside the
/// grid are zero.
inline std::vector<std::vector<float>> halo_extract(const BevGrid<float>& f, const std::vector<Cell>& cells) {
  std::vector<std::vector<float>> out;
  out.reserve(cells.size());
  const int c = f.channels();
  for (Cell cell : cells) {
    std::vector<float> v(static_cast<std::size_t>(kHaloBlocks) * c, 0.0f);
    const auto nb = halo_of(cell);
    for (int k = 0; k < kHaloBlocks; ++k) {
      if (!f.in_bounds(nb[k].u, nb[k].v)) continue;
      const auto src = f.cell(nb[k].u, nb[k].v);
      std::copy(src.begin(), src.end(), v.begin() + static_cast<std::ptrdiff_t>(k) * c);
    }
    out.push_back(std::move(v));
  }
  return out;
}

inline bool all_zero(std::span<const float> v) {
  return std::all_of(v.begin(), v.end(), [](float x) { return x == 0.0f; });
}

/// Collaborator reply: features already warped into the ego frame, sampled at
/// the queried cells (deduplicated); all-zero entries are not sent.
inline SparseFeatureMessage build_feature_message(const FeaturePyramid& warped, const QueryMessage& query,
                                                  bool halo, std::uint32_t sender, std::uint32_t frame,
                                                  const Pose2& pose) {
  SparseFeatureMessage m;
  m.sender = sender;
  m.frame = frame;
  m.pose = WirePose::from(pose);
  m.halo = halo;
  const auto n = std::min<std::size_t>(query.scales.size(), kNumScales);
  for (std::size_t l = 0; l < n; ++l) {
    const BevGrid<float>& f = warped[static_cast<int>(l)];
    m.channels.push_back(f.channels());
    FeatureBlock block;
    const auto cells = dedup_locations(query.scales[l]);
    if (halo) {
      const auto values = halo_extract(f, cells);
      for (std::size_t i = 0; i < cells.size(); ++i) {
        if (all_zero(values[i])) continue;
        block.cells.push_back(cells[i]);
        block.values.insert(block.values.end(), values[i].begin(), values[i].end());
      }
    } else {
      for (Cell c : cells) {
        if (!f.in_bounds(c.u, c.v)) continue;
        const auto v = f.cell(c.u, c.v);
        if (all_zero(v)) continue;
        block.cells.push_back(c);
        block.values.insert(block.values.end(), v.begin(), v.end());
      }
    }
    m.scales.push_back(std::move(block));
  }
  return m;
}

/// Copy without the all-zero entries (what survives a codec round trip).
inline SparseFeatureMessage retained(const SparseFeatureMessage& m) {
  SparseFeatureMessage out = m;
  for (std::size_t l = 0; l < m.scales.size(); ++l) {
    FeatureBlock b;
    for (std::size_t i = 0; i < m.scales[l].cells.size(); ++i) {
      const auto e = m.entry(static_cast<int>(l), i);
      if (all_zero(e)) continue;
      b.cells.push_back(m.scales[l].cells[i]);
      b.values.insert(b.values.end(), e.begin(), e.end());
    }
    out.scales[l] = std::move(b);
  }
  return out;
}

namespace wire {

class Writer {
 public:
  void u8(std::uint8_t x) { buf_.push_back(x); }
  void u16(std::uint16_t x) { le(x, 2); }
  void u32(std::uint32_t x) { le(x, 4); }
  void f32(float x) { le(std::bit_cast<std::uint32_t>(x), 4); }
  std::vector<std::uint8_t> take() { return std::move(buf_); }

 private:
  void le(std::uint32_t x, int n) {
    for (int i = 0; i < n; ++i) buf_.push_back(static_cast<std::uint8_t>(x >> (8 * i)));
  }
  std::vector<std::uint8_t> buf_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> b) : b_(b) {}
  std::uint8_t u8() { return static_cast<std::uint8_t>(le(1)); }
  std::uint16_t u16() { return static_cast<std::uint16_t>(le(2)); }
  std::uint32_t u32() { return le(4); }
  float f32() { return std::bit_cast<float>(le(4)); }
  std::size_t offset() const { return pos_; }
  std::size_t remaining() const { return b_.size() - pos_; }
  void need(std::size_t n, const char* what) const {
    if (remaining() < n) throw DecodeError(std::string("truncated ") + what, pos_);
  }

 private:
  std::uint32_t le(int n) {
    need(static_cast<std::size_t>(n), "field");
    std::uint32_t x = 0;
    for (int i = 0; i < n; ++i) x |= static_cast<std::uint32_t>(b_[pos_ + i]) << (8 * i);
    pos_ += static_cast<std::size_t>(n);
    return x;
  }
  std::span<const std::uint8_t> b_;
  std::size_t pos_ = 0;
};

inline void header(Writer& w, MessageType t, std::uint32_t sender, std::uint32_t frame, std::size_t scales,
                   const WirePose& pose) {
  for (char c : kMagic) w.u8(static_cast<std::uint8_t>(c));
  w.u16(kWireVersion);
  w.u8(static_cast<std::uint8_t>(t));
  w.u32(sender);
  w.u32(frame);
  w.u16(static_cast<std::uint16_t>(scales));
  w.f32(pose.x);
  w.f32(pose.y);
  w.f32(pose.yaw);
}

struct Header {
  MessageType type;
  std::uint32_t sender;
  std::uint32_t frame;
  std::uint16_t scales;
  WirePose pose;
};

inline Header read_header(Reader& r) {
  r.need(kHeaderBytes + kPoseBytes, "header");
  for (char c : kMagic)
    if (r.u8() != static_cast<std::uint8_t>(c)) throw DecodeError("bad magic", r.offset() - 1);
  if (r.u16() != kWireVersion) throw DecodeError("unsupported version", 4);
  const std::uint8_t t = r.u8();
  if (t < 1 || t > 3) throw DecodeError("unknown message type", 6);
  Header h{static_cast<MessageType>(t), 0, 0, 0, {}};
  h.sender = r.u32();
  h.frame = r.u32();
  h.scales = r.u16();
  h.pose.x = r.f32();
  h.pose.y = r.f32();
  h.pose.yaw = r.f32();
  return h;
}

inline std::uint16_t coord(int x) {
  if (x < 0 || x > 0xffff) throw std::invalid_argument("wire: coordinate outside u16 range");
  return static_cast<std::uint16_t>(x);
}

}  // namespace wire

inline std::vector<std::uint8_t> encode_query_message(const QueryMessage& m) {
  wire::Writer w;
  wire::header(w, MessageType::Query, m.sender, m.frame, m.scales.size(), m.pose);
  for (const auto& cells : m.scales) {
    w.u32(static_cast<std::uint32_t>(cells.size()));
    for (Cell c : cells) {
      w.u16(wire::coord(c.u));
      w.u16(wire::coord(c.v));
    }
  }
  return w.take();
}

inline QueryMessage decode_query_message(std::span<const std::uint8_t> bytes) {
  wire::Reader r(bytes);
  const auto h = wire::read_header(r);
  if (h.type != MessageType::Query) throw DecodeError("not a query message", 6);
  QueryMessage m{h.sender, h.frame, h.pose, {}};
  for (int l = 0; l < h.scales; ++l) {
    const std::size_t at = r.offset();
    const std::uint32_t n = r.u32();
    if (r.remaining() / 4 < n) throw DecodeError("entry count exceeds message", at);
    std::vector<Cell> cells(n);
    for (auto& c : cells) {
      c.u = r.u16();
      c.v = r.u16();
    }
    m.scales.push_back(std::move(cells));
  }
  if (r.remaining() != 0) throw DecodeError("trailing bytes", r.offset());
  return m;
}

inline std::vector<std::uint8_t> encode_feature_message(const SparseFeatureMessage& m) {
  if (m.channels.size() != m.scales.size()) throw std::invalid_argument("encode: channels/scales mismatch");
  wire::Writer w;
  wire::header(w, m.halo ? MessageType::HaloFeatures : MessageType::CellFeatures, m.sender, m.frame,
               m.scales.size(), m.pose);
  for (std::size_t l = 0; l < m.scales.size(); ++l) {
    const auto& b = m.scales[l];
    const auto width = static_cast<std::size_t>(m.width(static_cast<int>(l)));
    if (b.values.size() != b.cells.size() * width) throw std::invalid_argument("encode: value count mismatch");
    std::uint32_t kept = 0;
    for (std::size_t i = 0; i < b.cells.size(); ++i)
      if (!all_zero(m.entry(static_cast<int>(l), i))) ++kept;
    w.u32(kept);
    for (std::size_t i = 0; i < b.cells.size(); ++i) {
      const auto e = m.entry(static_cast<int>(l), i);
      if (all_zero(e)) continue;
      w.u16(wire::coord(b.cells[i].u));
      w.u16(wire::coord(b.cells[i].v));
      for (float x : e) w.f32(x);
    }
  }
  return w.take();
}

/// Decodes a feature message; the per-scale channel counts are agreed out of
/// band. The whole buffer must be consumed.
inline SparseFeatureMessage decode_feature_message(std::span<const std::uint8_t> bytes,
                                                   const std::vector<int>& channels) {
  wire::Reader r(bytes);
  const auto h = wire::read_header(r);
  if (h.type == MessageType::Query) throw DecodeError("not a feature message", 6);
  if (h.scales != channels.size()) throw DecodeError("scale count does not match channel layout", 15);
  SparseFeatureMessage m;
  m.sender = h.sender;
  m.frame = h.frame;
  m.pose = h.pose;
  m.halo = h.type == MessageType::HaloFeatures;
  m.channels = channels;
  for (int l = 0; l < h.scales; ++l) {
    const auto width = static_cast<std::size_t>(m.width(l));
    const std::size_t entry_bytes = 4 + 4 * width;
    const std::size_t at = r.offset();
    const std::uint32_t n = r.u32();
    if (r.remaining() / entry_bytes < n) throw DecodeError("entry count exceeds message", at);
    FeatureBlock b;
    b.cells.resize(n);
    b.values.resize(static_cast<std::size_t>(n) * width);
    for (std::uint32_t i = 0; i < n; ++i) {
      b.cells[i].u = r.u16();
      b.cells[i].v = r.u16();
      for (std::size_t k = 0; k < width; ++k) b.values[i * width + k] = r.f32();
    }
    m.scales.push_back(std::move(b));
  }
  if (r.remaining() != 0) throw DecodeError("trailing bytes", r.offset());
  return m;
}

/// Encoded size without encoding.
inline std::size_t encoded_size(const SparseFeatureMessage& m) {
  std::size_t n = kHeaderBytes + kPoseBytes;
  for (std::size_t l = 0; l < m.scales.size(); ++l) {
    n += 4;
    for (std::size_t i = 0; i < m.scales[l].cells.size(); ++i)
      if (!all_zero(m.entry(static_cast<int>(l), i))) n += 4 + 4 * static_cast<std::size_t>(m.width(static_cast<int>(l)));
  }
  return n;
}

inline std::size_t encoded_size(const QueryMessage& m) {
  std::size_t n = kHeaderBytes + kPoseBytes;
  for (const auto& s : m.scales) n += 4 + 4 * s.size();
  return n;
}

struct CollaborationDecision {
  bool collaborate = false;
  double max_density = 0.0;
  bool missing_queries = false;  // no level-0 cells to test
};

/// Warps the collaborator's density map into the ego frame (nearest), pools
/// it to level 0 and compares the maximum over the ego's level-0 query cells
/// against tau with strict inequality.
inline CollaborationDecision should_collaborate(const BevGrid<float>& density_j, const QueryMessage& query,
                                                const GridSpec& spec, const Pose2& pose_j, double tau) {
  CollaborationDecision d;
  if (query.scales.empty() || query.scales[0].empty()) {
    d.missing_queries = true;
    return d;
  }
  const auto warped = warp_to_frame(density_j, spec, pose_j, query.pose.pose(), Interpolation::Nearest);
  const auto level0 = downsample_max(warped, GridSpec::level_factor(0), 0);
  for (Cell c : query.scales[0])
    if (level0.in_bounds(c.u, c.v)) d.max_density = std::max(d.max_density, double(level0.at(c.u, c.v)));
  d.collaborate = d.max_density > tau;
  return d;
}

struct BandwidthEntry {
  std::array<std::uint64_t, kNumScales> elements{};
  std::uint64_t payload_bytes = 0;
  double cv_log2 = 0.0;
  bool cv_defined = false;
  std::uint64_t metadata_bytes = 0;

  std::uint64_t total_elements() const {
    std::uint64_t n = 0;
    for (auto e : elements) n += e;
    return n;
  }
};

inline void finish_entry(BandwidthEntry& e) {
  const std::uint64_t total = e.total_elements();
  e.payload_bytes = 4 * total;
  e.cv_defined = total > 0;
  e.cv_log2 = total > 0 ? std::log2(static_cast<double>(total)) : 0.0;
}

/// Feature elements actually on the wire (post dedup, post zero skip). Wire
/// bytes beyond the float payload are reported as metadata.
inline BandwidthEntry meter_payload(const std::vector<SparseFeatureMessage>& messages,
                                    std::uint64_t extra_metadata = 0) {
  BandwidthEntry e;
  std::uint64_t wire_bytes = 0;
  for (const auto& m : messages) {
    for (std::size_t l = 0; l < m.scales.size() && l < kNumScales; ++l)
      for (std::size_t i = 0; i < m.scales[l].cells.size(); ++i)
        if (!all_zero(m.entry(static_cast<int>(l), i))) e.elements[l] += static_cast<std::uint64_t>(m.width(static_cast<int>(l)));
    wire_bytes += encoded_size(m);
  }
  finish_entry(e);
  e.metadata_bytes = wire_bytes - e.payload_bytes + extra_metadata;
  return e;
}

/// Non-zero elements of a dense pyramid per level.
inline std::array<std::uint64_t, kNumScales> full_map_elements(const FeaturePyramid& p) {
  std::array<std::uint64_t, kNumScales> out{};
  for (int l = 0; l < kNumScales; ++l) out[l] = p[l].count_nonzero();
  return out;
}

inline BandwidthEntry full_map_payload(const std::vector<const FeaturePyramid*>& pyramids) {
  BandwidthEntry e;
  for (const auto* p : pyramids) {
    const auto n = full_map_elements(*p);
    for (int l = 0; l < kNumScales; ++l) e.elements[l] += n[l];
  }
  finish_entry(e);
  return e;
}

/// Ordered in-process delivery: messages come out sorted by (frame, sender),
/// then by posting order, whatever order they were posted in.
template <typename Msg>
class Mailbox {
 public:
  struct Envelope {
    std::uint32_t frame;
    std::uint32_t sender;
    Msg message;
  };

  void post(std::uint32_t frame, std::uint32_t sender, Msg m) {
    box_.emplace(std::tuple{frame, sender, seq_++}, std::move(m));
  }

  /// Removes and returns every message for `frame`.
  std::vector<Envelope> drain(std::uint32_t frame) {
    std::vector<Envelope> out;
    auto it = box_.lower_bound(std::tuple{frame, 0u, std::uint64_t{0}});
    while (it != box_.end() && std::get<0>(it->first) == frame) {
      out.push_back({frame, std::get<1>(it->first), std::move(it->second)});
      it = box_.erase(it);
    }
    return out;
  }

  std::size_t size() const { return box_.size(); }

 private:
  std::map<std::tuple<std::uint32_t, std::uint32_t, std::uint64_t>, Msg> box_;
  std::uint64_t seq_ = 0;
};

}  // namespace slimcomm
