#pragma once

// Repair of axis-aligned oversegmentations: boundary interpolation of the
// missing gap layers by optimal transport, and the sequential merge pass.

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <limits>
#include <map>
#include <numeric>
#include <set>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "ovseg/error.hpp"
#include "ovseg/features.hpp"
#include "ovseg/ot.hpp"
#include "ovseg/volume.hpp"

namespace ovseg {

/// Mask pixels with at least one 8-neighbour outside the mask, row-major.
inline std::vector<Pixel> extract_boundary(const Mask2D& mask) {
  if (mask.empty()) throw InvalidArgument("boundary of an empty mask");
  std::vector<Pixel> out;
  for (const Pixel& p : mask.pixels) {
    bool edge = false;
    for (int dy = -1; dy <= 1 && !edge; ++dy) {
      for (int dx = -1; dx <= 1 && !edge; ++dx) {
        if ((dy || dx) && !mask.contains({p.y + dy, p.x + dx})) edge = true;
      }
    }
    if (edge) out.push_back(p);
  }
  return out;
}

namespace detail {

inline void bresenham(Pixel a, Pixel b, std::vector<Pixel>& out) {
  const int dx = std::abs(b.x - a.x), dy = -std::abs(b.y - a.y);
  const int sx = a.x < b.x ? 1 : -1, sy = a.y < b.y ? 1 : -1;
  int err = dx + dy;
  for (;;) {
    out.push_back(a);
    if (a == b) return;
    const int e2 = 2 * err;
    if (e2 >= dy) {
      err += dy;
      a.x += sx;
    }
    if (e2 <= dx) {
      err += dx;
      a.y += sy;
    }
  }
}

/// Everything not reachable from outside the bounding box through
/// 4-connected non-contour pixels.
inline std::vector<Pixel> fill_contour(const std::vector<Pixel>& contour) {
  int y0 = contour[0].y, y1 = y0, x0 = contour[0].x, x1 = x0;
  for (const Pixel& p : contour) {
    y0 = std::min(y0, p.y);
    y1 = std::max(y1, p.y);
    x0 = std::min(x0, p.x);
    x1 = std::max(x1, p.x);
  }
  const int h = y1 - y0 + 3, w = x1 - x0 + 3;
  enum : char { kFree, kWall, kOutside };
  std::vector<char> grid(std::size_t(h) * w, kFree);
  auto at = [&](int y, int x) -> char& { return grid[std::size_t(y) * w + x]; };
  for (const Pixel& p : contour) at(p.y - y0 + 1, p.x - x0 + 1) = kWall;
  std::vector<std::pair<int, int>> stack{{0, 0}};
  at(0, 0) = kOutside;
  while (!stack.empty()) {
    const auto [y, x] = stack.back();
    stack.pop_back();
    const int ny[4] = {y - 1, y + 1, y, y}, nx[4] = {x, x, x - 1, x + 1};
    for (int k = 0; k < 4; ++k) {
      if (ny[k] < 0 || ny[k] >= h || nx[k] < 0 || nx[k] >= w || at(ny[k], nx[k]) != kFree) continue;
      at(ny[k], nx[k]) = kOutside;
      stack.push_back({ny[k], nx[k]});
    }
  }
  std::vector<Pixel> out;
  for (int y = 1; y + 1 < h; ++y) {
    for (int x = 1; x + 1 < w; ++x) {
      if (at(y, x) != kOutside) out.push_back({y + y0 - 1, x + x0 - 1});
    }
  }
  return out;
}

inline Mask2D dilate(const Mask2D& m) {
  std::vector<Pixel> px;
  px.reserve(m.size() * 9);
  for (const Pixel& p : m.pixels) {
    for (int dy = -1; dy <= 1; ++dy)
      for (int dx = -1; dx <= 1; ++dx) px.push_back({p.y + dy, p.x + dx});
  }
  return Mask2D::from_pixels(m.layer, m.label, std::move(px));
}

}  // namespace detail

struct InterpolationResult {
  Mask2D mask;
  bool fallback = false;
};

/// Area below this fraction of the linearly expected area means the contour
/// could not be closed.
inline constexpr double kMinFillFraction = 0.5;

struct BoundaryPlan {
  std::vector<Pixel> source;
  std::vector<Pixel> target;
  TransportPlan plan;
};

/// Transport plan between the two boundary clouds with squared Euclidean
/// cost, so a rigid translation is matched by the unique shift plan.
inline BoundaryPlan boundary_plan(const Mask2D& src, const Mask2D& dst) {
  BoundaryPlan bp{extract_boundary(src), extract_boundary(dst), {}};
  auto cloud = [](const std::vector<Pixel>& b) {
    std::vector<Point2> pts;
    pts.reserve(b.size());
    for (const Pixel& p : b) pts.push_back({double(p.y), double(p.x)});
    return PointDistribution::uniform(std::move(pts));
  };
  bp.plan = solve_transport(
                cloud(bp.source), cloud(bp.target),
                [](Point2 a, Point2 b) { return (a.y - b.y) * (a.y - b.y) + (a.x - b.x) * (a.x - b.x); },
                std::numeric_limits<std::size_t>::max())
                .plan;
  return bp;
}

/// Cross-layer interpolation at fraction t from `src` (t=0) to `dst` (t=1).
inline InterpolationResult interpolate_mask_ex(const Mask2D& src, const Mask2D& dst, double t) {
  if (src.empty() || dst.empty()) throw InvalidArgument("interpolation needs two non-empty masks");
  if (!(t >= 0.0 && t <= 1.0)) throw InvalidArgument("interpolation fraction must lie in [0, 1]");
  const BoundaryPlan bp = boundary_plan(src, dst);
  const auto& bs = bp.source;
  const auto& bd = bp.target;
  const auto& entries = bp.plan.entries;

  // Coordinates exactly halfway between two pixels mark both of them.
  std::vector<Pixel> emitted(entries.size());
  std::vector<Pixel> contour;
  for (std::size_t e = 0; e < entries.size(); ++e) {
    const Pixel a = bs[entries[e].source], b = bd[entries[e].target];
    const double y = (1 - t) * a.y + t * b.y, x = (1 - t) * a.x + t * b.x;
    emitted[e] = {int(std::lround(y)), int(std::lround(x))};
    const bool ty = y - std::floor(y) == 0.5, tx = x - std::floor(x) == 0.5;
    for (int oy = 0; oy <= int(ty); ++oy)
      for (int ox = 0; ox <= int(tx); ++ox) contour.push_back({emitted[e].y - oy, emitted[e].x - ox});
  }

  // Bridge entries whose sources (t < 1) or targets (t > 0) are 8-neighbours.
  auto bridge_by = [&](const std::vector<Pixel>& cloud_px, auto end_of) {
    std::map<Pixel, std::vector<std::size_t>> by_pixel;
    for (std::size_t e = 0; e < entries.size(); ++e) by_pixel[cloud_px[end_of(entries[e])]].push_back(e);
    for (const auto& [p, list] : by_pixel) {
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          const Pixel q{p.y + dy, p.x + dx};
          if (q < p) continue;
          auto it = by_pixel.find(q);
          if (it == by_pixel.end()) continue;
          for (std::size_t e : list)
            for (std::size_t f : it->second)
              if (e != f) detail::bresenham(emitted[e], emitted[f], contour);
        }
      }
    }
  };
  if (t < 1.0) bridge_by(bs, [](const PlanEntry& e) { return e.source; });
  if (t > 0.0) bridge_by(bd, [](const PlanEntry& e) { return e.target; });

  InterpolationResult r;
  r.mask = Mask2D::from_pixels(src.layer, src.label, detail::fill_contour(contour));
  const double expected = (1 - t) * double(src.size()) + t * double(dst.size());
  if (double(r.mask.size()) < kMinFillFraction * expected) {
    Mask2D core = mask_intersection(src, dst);
    r.mask = core.empty() ? mask_union(src, dst) : detail::dilate(core);
    r.mask.layer = src.layer;
    r.mask.label = src.label;
    r.fallback = true;
  }
  return r;
}

inline Mask2D interpolate_mask(const Mask2D& src, const Mask2D& dst, double t) {
  return interpolate_mask_ex(src, dst, t).mask;
}

enum class Verdict { Merge, Keep };

inline std::string to_string(Verdict v) { return v == Verdict::Merge ? "merge" : "keep"; }

struct CorrectionDecision {
  Label label_a = kBackground;  ///< upper fragment
  Label label_b = kBackground;  ///< lower fragment
  Verdict verdict = Verdict::Keep;
  double probability = 0.0;
  int gap_first = 0;
  int gap_size = 0;
  std::vector<Mask2D> masks;  ///< one per gap layer when merging
  std::vector<bool> fallback;

  std::vector<int> gap_layers() const {
    std::vector<int> z(std::size_t(std::max(gap_size, 0)));
    std::iota(z.begin(), z.end(), gap_first);
    return z;
  }
};

/// Build a decision for a screened pair; merges carry one interpolated mask
/// per gap layer, between A's bottom mask and B's top mask.
inline CorrectionDecision make_decision(const CellIndex& index, const CandidatePair& pair, Verdict verdict,
                                        double probability) {
  CorrectionDecision d{pair.label_a, pair.label_b, verdict, probability, pair.gap_first, pair.gap_size, {}, {}};
  if (verdict != Verdict::Merge) return d;
  const Mask2D& upper = index.at(pair.label_a).bottom_mask();
  const Mask2D& lower = index.at(pair.label_b).top_mask();
  for (int k = 1; k <= pair.gap_size; ++k) {
    auto r = interpolate_mask_ex(upper, lower, double(k) / double(pair.gap_size + 1));
    r.mask.layer = pair.gap_first + k - 1;
    r.mask.label = pair.label_a;
    d.masks.push_back(std::move(r.mask));
    d.fallback.push_back(r.fallback);
  }
  return d;
}

struct ChangeEntry {
  Label label_a = kBackground;
  Label label_b = kBackground;
  Verdict verdict = Verdict::Keep;
  double probability = 0.0;
  std::vector<int> gap_layers;
  Label merged_into = kBackground;
  std::size_t pixels_written = 0;
  std::size_t pixels_blocked = 0;  ///< interpolated pixels already owned by another cell
  std::vector<bool> fallback;
  std::string status;  ///< "merged", "kept" or "already_merged"

  nlohmann::json to_json() const {
    return {{"label_a", label_a},
            {"label_b", label_b},
            {"verdict", to_string(verdict)},
            {"probability", probability},
            {"gap_layers", gap_layers},
            {"merged_into", merged_into},
            {"pixels_written", pixels_written},
            {"pixels_blocked", pixels_blocked},
            {"fallback", fallback},
            {"status", status}};
  }
};

struct CorrectionResult {
  LabelVolume volume;
  std::vector<ChangeEntry> log;

  nlohmann::json log_json() const {
    nlohmann::json j = nlohmann::json::array();
    for (const auto& e : log) j.push_back(e.to_json());
    return j;
  }
};

/// Apply merges top to bottom (gap z, then label pair). Merged cells keep the
/// upper label and stay eligible for later merges down the chain.
/// Interpolated pixels only ever claim background.
inline CorrectionResult apply_corrections(const LabelVolume& volume, std::vector<CorrectionDecision> decisions) {
  std::set<Label> live;
  for (Label l : volume.data())
    if (l != kBackground) live.insert(l);
  std::map<std::pair<Label, Label>, Verdict> seen;
  for (const auto& d : decisions) {
    if (!live.contains(d.label_a) || !live.contains(d.label_b)) {
      throw InvalidArgument("decision references a label absent from the volume: (" +
                            std::to_string(d.label_a) + ", " + std::to_string(d.label_b) + ")");
    }
    if (d.label_a == d.label_b) throw InvalidArgument("decision pairs a label with itself");
    auto [it, fresh] = seen.emplace(std::pair{d.label_a, d.label_b}, d.verdict);
    if (!fresh) {
      throw InvalidArgument("conflicting decisions on pair (" + std::to_string(d.label_a) + ", " +
                            std::to_string(d.label_b) + ")");
    }
    if (d.verdict == Verdict::Merge && d.masks.size() != std::size_t(d.gap_size)) {
      throw InvalidArgument("merge decision needs one mask per gap layer");
    }
  }
  std::stable_sort(decisions.begin(), decisions.end(), [](const auto& x, const auto& y) {
    return std::tie(x.gap_first, x.label_a, x.label_b) < std::tie(y.gap_first, y.label_a, y.label_b);
  });

  std::unordered_map<Label, Label> parent;
  auto find = [&](Label l) {
    Label r = l;
    for (auto it = parent.find(r); it != parent.end() && it->second != r; it = parent.find(r)) r = it->second;
    for (Label c = l; c != r;) {
      const Label next = parent[c];
      parent[c] = r;
      c = next;
    }
    return r;
  };

  CorrectionResult out{volume, {}};
  LabelVolume& v = out.volume;
  const Dims dims = v.dims();
  for (const auto& d : decisions) {
    ChangeEntry e{d.label_a, d.label_b, d.verdict, d.probability, d.gap_layers(), kBackground, 0, 0, d.fallback, ""};
    if (d.verdict == Verdict::Keep) {
      e.status = "kept";
      out.log.push_back(std::move(e));
      continue;
    }
    const Label ra = find(d.label_a), rb = find(d.label_b);
    e.merged_into = ra;
    if (ra == rb) {
      e.status = "already_merged";
      out.log.push_back(std::move(e));
      continue;
    }
    parent[rb] = ra;
    for (const Mask2D& m : d.masks) {
      if (m.layer < 0 || std::size_t(m.layer) >= dims.z) throw InvalidArgument("interpolated mask outside the volume");
      for (const Pixel& p : m.pixels) {
        if (!v.contains(m.layer, p.y, p.x)) continue;
        Label& cell = v.at(std::size_t(m.layer), std::size_t(p.y), std::size_t(p.x));
        if (cell == kBackground) {
          cell = ra;
          ++e.pixels_written;
        } else if (find(cell) != ra && find(cell) != rb) {
          ++e.pixels_blocked;
        }
      }
    }
    e.status = "merged";
    out.log.push_back(std::move(e));
  }

  if (!parent.empty()) {
    for (Label& l : v.data()) {
      if (l != kBackground && parent.contains(l)) l = find(l);
    }
  }
  return out;
}

}  // namespace ovseg
