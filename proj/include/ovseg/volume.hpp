#pragma once

// Dense 3D instance-label volumes, per-cell layer masks and the contact graph.

#include <algorithm>
#include <array>
#include <compare>
#include <iterator>
#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ovseg/error.hpp"

namespace ovseg {

using Label = std::uint32_t;
inline constexpr Label kBackground = 0;

struct Dims {
  std::size_t z = 0;
  std::size_t y = 0;
  std::size_t x = 0;

  std::size_t voxels() const { return z * y * x; }
  bool operator==(const Dims&) const = default;
};

/// Relative voxel pitch along (z, y, x). Defaults to the 4:1:1 confocal setup.
struct Anisotropy {
  double z = 4.0;
  double y = 1.0;
  double x = 1.0;

  bool operator==(const Anisotropy&) const = default;
};

class LabelVolume {
 public:
  LabelVolume() = default;

  explicit LabelVolume(Dims dims, Anisotropy anisotropy = {})
      : dims_(dims), anisotropy_(anisotropy), data_(dims.voxels(), kBackground) {
    check_anisotropy();
  }

  LabelVolume(Dims dims, std::vector<Label> data, Anisotropy anisotropy = {})
      : dims_(dims), anisotropy_(anisotropy), data_(std::move(data)) {
    if (data_.size() != dims_.voxels()) {
      throw FormatError("volume data length " + std::to_string(data_.size()) +
                        " does not match dims " + std::to_string(dims_.z) + "x" +
                        std::to_string(dims_.y) + "x" + std::to_string(dims_.x));
    }
    check_anisotropy();
  }

  const Dims& dims() const { return dims_; }
  const Anisotropy& anisotropy() const { return anisotropy_; }
  std::span<const Label> data() const { return data_; }
  std::span<Label> data() { return data_; }

  std::size_t offset(std::size_t z, std::size_t y, std::size_t x) const {
    return (z * dims_.y + y) * dims_.x + x;
  }
  Label at(std::size_t z, std::size_t y, std::size_t x) const { return data_[offset(z, y, x)]; }
  Label& at(std::size_t z, std::size_t y, std::size_t x) { return data_[offset(z, y, x)]; }

  bool contains(long z, long y, long x) const {
    return z >= 0 && y >= 0 && x >= 0 && static_cast<std::size_t>(z) < dims_.z &&
           static_cast<std::size_t>(y) < dims_.y && static_cast<std::size_t>(x) < dims_.x;
  }

  std::size_t nonzero_count() const {
    return static_cast<std::size_t>(
        std::count_if(data_.begin(), data_.end(), [](Label l) { return l != kBackground; }));
  }

  Label max_label() const {
    return data_.empty() ? kBackground : *std::max_element(data_.begin(), data_.end());
  }

  /// Relabel every voxel carrying `from` to `to`; returns the number changed.
  std::size_t relabel(Label from, Label to) {
    std::size_t n = 0;
    for (auto& v : data_) {
      if (v == from) {
        v = to;
        ++n;
      }
    }
    return n;
  }

  bool operator==(const LabelVolume&) const = default;

 private:
  void check_anisotropy() const {
    if (!(anisotropy_.z > 0.0 && anisotropy_.y > 0.0 && anisotropy_.x > 0.0)) {
      throw InvalidArgument("anisotropy components must be strictly positive");
    }
  }

  Dims dims_;
  Anisotropy anisotropy_;
  std::vector<Label> data_;
};

struct Pixel {
  int y = 0;
  int x = 0;

  auto operator<=>(const Pixel&) const = default;
};

/// One cell's pixels on one layer. Pixels are kept sorted (row-major) and unique.
struct Mask2D {
  int layer = 0;
  Label label = kBackground;
  std::vector<Pixel> pixels;

  std::size_t size() const { return pixels.size(); }
  bool empty() const { return pixels.empty(); }

  bool contains(Pixel p) const { return std::binary_search(pixels.begin(), pixels.end(), p); }

  void normalize() {
    std::sort(pixels.begin(), pixels.end());
    pixels.erase(std::unique(pixels.begin(), pixels.end()), pixels.end());
  }

  static Mask2D from_pixels(int layer, Label label, std::vector<Pixel> px) {
    Mask2D m{layer, label, std::move(px)};
    m.normalize();
    return m;
  }
};

/// |a ∩ b| in (y, x) projection; layers are ignored.
inline std::size_t mask_overlap(const Mask2D& a, const Mask2D& b) {
  std::size_t n = 0;
  auto i = a.pixels.begin();
  auto j = b.pixels.begin();
  while (i != a.pixels.end() && j != b.pixels.end()) {
    if (*i < *j) {
      ++i;
    } else if (*j < *i) {
      ++j;
    } else {
      ++n;
      ++i;
      ++j;
    }
  }
  return n;
}

inline Mask2D mask_intersection(const Mask2D& a, const Mask2D& b) {
  Mask2D out{a.layer, a.label, {}};
  std::set_intersection(a.pixels.begin(), a.pixels.end(), b.pixels.begin(), b.pixels.end(),
                        std::back_inserter(out.pixels));
  return out;
}

inline Mask2D mask_union(const Mask2D& a, const Mask2D& b) {
  Mask2D out{a.layer, a.label, {}};
  std::set_union(a.pixels.begin(), a.pixels.end(), b.pixels.begin(), b.pixels.end(),
                 std::back_inserter(out.pixels));
  return out;
}

struct CellRecord {
  Label label = kBackground;
  int top_layer = 0;     ///< smallest z carrying a mask
  int bottom_layer = 0;  ///< largest z carrying a mask
  std::vector<Mask2D> masks;  ///< ordered by increasing layer, only occupied layers
  std::size_t voxel_count = 0;

  int height() const { return bottom_layer - top_layer + 1; }

  const Mask2D* mask_at(int layer) const {
    auto it = std::lower_bound(masks.begin(), masks.end(), layer,
                               [](const Mask2D& m, int z) { return m.layer < z; });
    return (it != masks.end() && it->layer == layer) ? &*it : nullptr;
  }

  const Mask2D& top_mask() const { return masks.front(); }
  const Mask2D& bottom_mask() const { return masks.back(); }

  /// Layers in [top, bottom] without a mask.
  std::vector<int> holes() const {
    std::vector<int> out;
    for (std::size_t i = 1; i < masks.size(); ++i) {
      for (int z = masks[i - 1].layer + 1; z < masks[i].layer; ++z) out.push_back(z);
    }
    return out;
  }

  /// Assemble a record from masks (any order); empty masks are dropped.
  static CellRecord from_masks(Label label, std::vector<Mask2D> masks) {
    CellRecord rec;
    rec.label = label;
    std::erase_if(masks, [](const Mask2D& m) { return m.empty(); });
    std::sort(masks.begin(), masks.end(),
              [](const Mask2D& a, const Mask2D& b) { return a.layer < b.layer; });
    for (auto& m : masks) {
      m.label = label;
      rec.voxel_count += m.size();
    }
    rec.masks = std::move(masks);
    if (!rec.masks.empty()) {
      rec.top_layer = rec.masks.front().layer;
      rec.bottom_layer = rec.masks.back().layer;
    }
    return rec;
  }
};

/// label -> CellRecord, ordered by label. Immutable once built.
class CellIndex {
 public:
  using Map = std::map<Label, CellRecord>;

  CellIndex() = default;
  explicit CellIndex(Map cells) : cells_(std::move(cells)) {}

  std::size_t size() const { return cells_.size(); }
  bool empty() const { return cells_.empty(); }
  bool contains(Label l) const { return cells_.count(l) != 0; }

  const CellRecord& at(Label l) const {
    auto it = cells_.find(l);
    if (it == cells_.end()) throw InvalidArgument("label " + std::to_string(l) + " not in index");
    return it->second;
  }
  const CellRecord* find(Label l) const {
    auto it = cells_.find(l);
    return it == cells_.end() ? nullptr : &it->second;
  }

  Map::const_iterator begin() const { return cells_.begin(); }
  Map::const_iterator end() const { return cells_.end(); }

  std::size_t total_voxels() const {
    std::size_t n = 0;
    for (const auto& [_, rec] : cells_) n += rec.voxel_count;
    return n;
  }

 private:
  Map cells_;
};

inline CellIndex build_cell_index(const LabelVolume& volume) {
  CellIndex::Map cells;
  const Dims d = volume.dims();
  const auto data = volume.data();
  std::size_t off = 0;
  for (std::size_t z = 0; z < d.z; ++z) {
    Label last = kBackground;
    CellRecord* rec = nullptr;
    for (std::size_t y = 0; y < d.y; ++y) {
      for (std::size_t x = 0; x < d.x; ++x, ++off) {
        const Label l = data[off];
        if (l == kBackground) continue;
        if (l != last || rec == nullptr) {
          rec = &cells[l];
          last = l;
        }
        if (rec->masks.empty() || rec->masks.back().layer != static_cast<int>(z)) {
          if (rec->masks.empty()) {
            rec->label = l;
            rec->top_layer = static_cast<int>(z);
          }
          rec->masks.push_back(Mask2D{static_cast<int>(z), l, {}});
          rec->bottom_layer = static_cast<int>(z);
        }
        // Raster order keeps pixels sorted without an explicit sort.
        rec->masks.back().pixels.push_back(Pixel{static_cast<int>(y), static_cast<int>(x)});
        ++rec->voxel_count;
      }
    }
  }
  return CellIndex(std::move(cells));
}

/// Face-contact graph between labels (6-connectivity).
class AdjacencyGraph {
 public:
  using Edge = std::pair<Label, Label>;  // first < second

  static Edge key(Label a, Label b) { return a < b ? Edge{a, b} : Edge{b, a}; }

  void add_contact(Label a, Label b, std::size_t n = 1) {
    if (a == b) return;
    edges_[key(a, b)] += n;
  }

  bool has_edge(Label a, Label b) const { return a != b && edges_.count(key(a, b)) != 0; }

  std::size_t contact_count(Label a, Label b) const {
    auto it = edges_.find(key(a, b));
    return it == edges_.end() ? 0 : it->second;
  }

  std::vector<Label> neighbors(Label a) const {
    std::vector<Label> out;
    for (const auto& [e, _] : edges_) {
      if (e.first == a) out.push_back(e.second);
      if (e.second == a) out.push_back(e.first);
    }
    std::sort(out.begin(), out.end());
    return out;
  }

  const std::map<Edge, std::size_t>& edges() const { return edges_; }
  std::vector<Label> nodes() const {
    std::vector<Label> out;
    for (const auto& [e, _] : edges_) {
      out.push_back(e.first);
      out.push_back(e.second);
    }
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
  }

 private:
  std::map<Edge, std::size_t> edges_;
};

inline AdjacencyGraph build_adjacency(const LabelVolume& volume) {
  std::map<AdjacencyGraph::Edge, std::size_t> counts;
  const Dims d = volume.dims();
  const auto data = volume.data();
  const std::size_t sy = d.x;
  const std::size_t sz = d.y * d.x;
  auto visit = [&](Label a, Label b) {
    if (a != kBackground && b != kBackground && a != b) ++counts[AdjacencyGraph::key(a, b)];
  };
  for (std::size_t z = 0; z < d.z; ++z) {
    for (std::size_t y = 0; y < d.y; ++y) {
      for (std::size_t x = 0; x < d.x; ++x) {
        const std::size_t o = volume.offset(z, y, x);
        const Label a = data[o];
        if (a == kBackground) continue;
        if (x + 1 < d.x) visit(a, data[o + 1]);
        if (y + 1 < d.y) visit(a, data[o + sy]);
        if (z + 1 < d.z) visit(a, data[o + sz]);
      }
    }
  }
  AdjacencyGraph g;
  for (const auto& [e, n] : counts) g.add_contact(e.first, e.second, n);
  return g;
}

}  // namespace ovseg
