#pragma once

// Segmentation quality (AP over IoU thresholds, Jaccard), classifier quality,
// and the per-correction review report.

#include <algorithm>
#include <array>
#include <cstdio>
#include <functional>
#include <limits>
#include <map>
#include <ostream>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include <nlohmann/json.hpp>

#include "ovseg/error.hpp"
#include "ovseg/interpolate.hpp"
#include "ovseg/volume.hpp"

namespace ovseg {

struct CellMatch {
  Label pred = kBackground;
  Label gt = kBackground;
  double iou = 0.0;
};

struct MatchResult {
  double threshold = 0.0;
  std::vector<CellMatch> matches;  ///< decreasing IoU
  std::vector<Label> unmatched_pred;
  std::vector<Label> unmatched_gt;

  std::size_t tp() const { return matches.size(); }
  std::size_t fp() const { return unmatched_pred.size(); }
  std::size_t fn() const { return unmatched_gt.size(); }
};

/// Voxel counts per label and per overlapping (pred, gt) pair.
struct OverlapTable {
  std::map<Label, std::size_t> pred_size;
  std::map<Label, std::size_t> gt_size;
  std::map<std::pair<Label, Label>, std::size_t> inter;

  double iou(Label p, Label g) const {
    auto it = inter.find({p, g});
    if (it == inter.end()) return 0.0;
    const double i = double(it->second);
    return i / (double(pred_size.at(p)) + double(gt_size.at(g)) - i);
  }
};

inline OverlapTable overlap_table(const LabelVolume& pred, const LabelVolume& gt) {
  if (!(pred.dims() == gt.dims())) throw InvalidArgument("prediction and ground truth differ in dimensions");
  OverlapTable t;
  const auto p = pred.data(), g = gt.data();
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] != kBackground) ++t.pred_size[p[i]];
    if (g[i] != kBackground) ++t.gt_size[g[i]];
    if (p[i] != kBackground && g[i] != kBackground) ++t.inter[{p[i], g[i]}];
  }
  return t;
}

/// What an optimal one-to-one matching maximizes.
enum class MatchObjective {
  MostPairs,  ///< number of pairs, then IoU sum
  IoUSum,
};

namespace detail {

/// Minimum-cost assignment of every row to a distinct column (rows <= cols).
/// Returns the column of each row.
inline std::vector<std::size_t> hungarian(const std::vector<std::vector<double>>& cost) {
  const std::size_t n = cost.size(), m = cost.empty() ? 0 : cost[0].size();
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
  std::vector<std::size_t> p(m + 1, 0), way(m + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(m + 1, inf);
    std::vector<bool> used(m + 1, false);
    do {
      used[j0] = true;
      const std::size_t i0 = p[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= m; ++j) {
        if (used[j]) continue;
        const double cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= m; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<std::size_t> col(n, 0);
  for (std::size_t j = 1; j <= m; ++j)
    if (p[j] != 0) col[p[j] - 1] = j - 1;
  return col;
}

}  // namespace detail

/// Optimal one-to-one matching over overlapping pairs with IoU >= t, solved
/// exactly per connected component of the overlap graph. For t > 0.5 every
/// label has at most one eligible partner, so this coincides with accepting
/// pairs greedily by decreasing IoU.
inline MatchResult match_cells(const OverlapTable& table, double t,
                               MatchObjective objective = MatchObjective::MostPairs) {
  std::vector<CellMatch> eligible;
  for (const auto& [key, n] : table.inter) {
    const double iou = table.iou(key.first, key.second);
    if (iou >= t) eligible.push_back({key.first, key.second, iou});
  }
  // Components via union-find over pred labels (even ids) and gt labels (odd ids).
  std::map<std::pair<Label, int>, std::pair<Label, int>> parent;
  std::function<std::pair<Label, int>(std::pair<Label, int>)> find = [&](std::pair<Label, int> k) {
    auto it = parent.find(k);
    if (it == parent.end() || it->second == k) return k;
    return it->second = find(it->second);
  };
  for (const auto& e : eligible) {
    const auto a = find({e.pred, 0}), b = find({e.gt, 1});
    if (a != b) parent[std::max(a, b)] = std::min(a, b);
  }
  std::map<std::pair<Label, int>, std::vector<const CellMatch*>> groups;
  for (const auto& e : eligible) groups[find({e.pred, 0})].push_back(&e);

  MatchResult r;
  r.threshold = t;
  for (const auto& [root, edges] : groups) {
    std::vector<Label> ps, gs;
    for (const auto* e : edges) {
      ps.push_back(e->pred);
      gs.push_back(e->gt);
    }
    std::sort(ps.begin(), ps.end());
    ps.erase(std::unique(ps.begin(), ps.end()), ps.end());
    std::sort(gs.begin(), gs.end());
    gs.erase(std::unique(gs.begin(), gs.end()), gs.end());
    const bool flip = ps.size() > gs.size();
    const auto& rows = flip ? gs : ps;
    const auto& cols = flip ? ps : gs;
    const double bonus = objective == MatchObjective::MostPairs ? double(rows.size() + 1) : 0.0;
    std::vector<std::vector<double>> cost(rows.size(), std::vector<double>(cols.size(), 0.0));
    std::map<std::pair<std::size_t, std::size_t>, const CellMatch*> at;
    for (const auto* e : edges) {
      const std::size_t pi = std::size_t(std::lower_bound(ps.begin(), ps.end(), e->pred) - ps.begin());
      const std::size_t gi = std::size_t(std::lower_bound(gs.begin(), gs.end(), e->gt) - gs.begin());
      const auto rc = flip ? std::pair{gi, pi} : std::pair{pi, gi};
      cost[rc.first][rc.second] = -(bonus + e->iou);
      at[rc] = e;
    }
    const auto col = detail::hungarian(cost);
    for (std::size_t i = 0; i < rows.size(); ++i)
      if (auto it = at.find({i, col[i]}); it != at.end()) r.matches.push_back(*it->second);
  }
  std::sort(r.matches.begin(), r.matches.end(), [](const CellMatch& a, const CellMatch& b) {
    return std::tie(b.iou, a.pred, a.gt) < std::tie(a.iou, b.pred, b.gt);
  });
  std::set<Label> used_p, used_g;
  for (const auto& m : r.matches) {
    used_p.insert(m.pred);
    used_g.insert(m.gt);
  }
  for (const auto& [l, _] : table.pred_size)
    if (!used_p.contains(l)) r.unmatched_pred.push_back(l);
  for (const auto& [l, _] : table.gt_size)
    if (!used_g.contains(l)) r.unmatched_gt.push_back(l);
  return r;
}

inline MatchResult match_cells(const LabelVolume& pred, const LabelVolume& gt, double t) {
  return match_cells(overlap_table(pred, gt), t);
}

/// TP / (TP + FN + FP); 1 when both volumes are empty.
inline double average_precision(const MatchResult& m) {
  const std::size_t denom = m.tp() + m.fp() + m.fn();
  return denom == 0 ? 1.0 : double(m.tp()) / double(denom);
}

inline double average_precision(const LabelVolume& pred, const LabelVolume& gt, double t) {
  return average_precision(match_cells(pred, gt, t));
}

inline constexpr std::array<double, 3> kApThresholds{0.25, 0.5, 0.75};

inline double mean_ap(const OverlapTable& table) {
  double s = 0.0;
  for (double t : kApThresholds) s += average_precision(match_cells(table, t));
  return s / double(kApThresholds.size());
}

inline double mean_ap(const LabelVolume& pred, const LabelVolume& gt) { return mean_ap(overlap_table(pred, gt)); }

struct JaccardScores {
  double matched = 0.0;    ///< mean IoU over matched pairs
  double penalized = 0.0;  ///< unmatched gt cells count as 0
};

/// Best-overlap matching: any overlap qualifies and the IoU sum is maximal.
inline JaccardScores jaccard_scores(const OverlapTable& table) {
  if (table.gt_size.empty()) throw InvalidArgument("jaccard is undefined for an empty ground truth");
  const MatchResult m = match_cells(table, 0.0, MatchObjective::IoUSum);
  double sum = 0.0;
  for (const auto& x : m.matches) sum += x.iou;
  JaccardScores j;
  j.matched = m.matches.empty() ? 0.0 : sum / double(m.matches.size());
  j.penalized = sum / double(table.gt_size.size());
  return j;
}

inline double jaccard(const LabelVolume& pred, const LabelVolume& gt) {
  return jaccard_scores(overlap_table(pred, gt)).penalized;
}

struct SegmentationMetrics {
  std::array<double, 3> ap{};
  double map = 0.0;
  JaccardScores jaccard;
  std::size_t n_pred = 0;
  std::size_t n_gt = 0;

  nlohmann::json to_json() const {
    return {{"ap_0.25", ap[0]},
            {"ap_0.50", ap[1]},
            {"ap_0.75", ap[2]},
            {"map", map},
            {"jaccard_matched", jaccard.matched},
            {"jaccard_penalized", jaccard.penalized},
            {"n_pred", n_pred},
            {"n_gt", n_gt}};
  }
};

inline SegmentationMetrics segmentation_metrics(const LabelVolume& pred, const LabelVolume& gt) {
  const OverlapTable table = overlap_table(pred, gt);
  SegmentationMetrics m;
  for (std::size_t i = 0; i < kApThresholds.size(); ++i) m.ap[i] = average_precision(match_cells(table, kApThresholds[i]));
  m.map = mean_ap(table);
  m.jaccard = jaccard_scores(table);
  m.n_pred = table.pred_size.size();
  m.n_gt = table.gt_size.size();
  return m;
}

/// Merge is the positive class. Ratios with a zero denominator are 1.
struct ClassificationReport {
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
  double recall = 1.0, precision = 1.0, f1 = 1.0;

  nlohmann::json to_json() const {
    return {{"tp", tp}, {"fp", fp}, {"fn", fn}, {"tn", tn},
            {"recall", recall}, {"precision", precision}, {"f1", f1}};
  }
};

inline ClassificationReport classification_report(const std::vector<bool>& decisions, const std::vector<bool>& truth) {
  if (decisions.size() != truth.size()) throw InvalidArgument("decisions and truth differ in length");
  ClassificationReport r;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (decisions[i] && truth[i]) ++r.tp;
    else if (decisions[i]) ++r.fp;
    else if (truth[i]) ++r.fn;
    else ++r.tn;
  }
  r.recall = r.tp + r.fn == 0 ? 1.0 : double(r.tp) / double(r.tp + r.fn);
  r.precision = r.tp + r.fp == 0 ? 1.0 : double(r.tp) / double(r.tp + r.fp);
  r.f1 = r.recall + r.precision == 0.0 ? 0.0 : 2 * r.recall * r.precision / (r.recall + r.precision);
  return r;
}

struct BoundingBox {
  std::array<long, 3> lo{0, 0, 0};  ///< z, y, x inclusive
  std::array<long, 3> hi{-1, -1, -1};

  bool empty() const { return hi[0] < lo[0]; }
  void add(long z, long y, long x) {
    if (empty()) {
      lo = hi = {z, y, x};
      return;
    }
    const long c[3] = {z, y, x};
    for (int k = 0; k < 3; ++k) {
      lo[k] = std::min(lo[k], c[k]);
      hi[k] = std::max(hi[k], c[k]);
    }
  }
  std::string str() const {
    if (empty()) return "";
    return std::to_string(lo[0]) + ":" + std::to_string(hi[0]) + " " + std::to_string(lo[1]) + ":" +
           std::to_string(hi[1]) + " " + std::to_string(lo[2]) + ":" + std::to_string(hi[2]);
  }
};

inline std::map<Label, BoundingBox> bounding_boxes(const LabelVolume& v) {
  std::map<Label, BoundingBox> out;
  const Dims d = v.dims();
  for (std::size_t z = 0; z < d.z; ++z)
    for (std::size_t y = 0; y < d.y; ++y)
      for (std::size_t x = 0; x < d.x; ++x)
        if (const Label l = v.at(z, y, x); l != kBackground) out[l].add(long(z), long(y), long(x));
  return out;
}

/// One row per logged decision: the crops to inspect before (both
/// fragments) and after (the merged cell), with blank expert columns.
inline void write_review_csv(std::ostream& os, const std::vector<ChangeEntry>& log, const LabelVolume& before,
                             const LabelVolume& after) {
  const auto bb_before = bounding_boxes(before), bb_after = bounding_boxes(after);
  auto box = [](const std::map<Label, BoundingBox>& m, Label l) {
    auto it = m.find(l);
    return it == m.end() ? BoundingBox{} : it->second;
  };
  os << "label_a,label_b,verdict,probability,status,gap_layers,merged_into,bbox_before_zyx,bbox_after_zyx,"
        "pixels_written,fallback,expert_verdict,expert_notes\n";
  for (const auto& e : log) {
    BoundingBox pre = box(bb_before, e.label_a);
    const BoundingBox b = box(bb_before, e.label_b);
    if (!b.empty()) {
      pre.add(b.lo[0], b.lo[1], b.lo[2]);
      pre.add(b.hi[0], b.hi[1], b.hi[2]);
    }
    std::string layers;
    for (int z : e.gap_layers) layers += (layers.empty() ? "" : " ") + std::to_string(z);
    const bool fell_back = std::find(e.fallback.begin(), e.fallback.end(), true) != e.fallback.end();
    char prob[32];
    std::snprintf(prob, sizeof prob, "%.6f", e.probability);
    os << e.label_a << ',' << e.label_b << ',' << to_string(e.verdict) << ',' << prob << ',' << e.status << ','
       << layers << ',' << (e.merged_into == kBackground ? std::string() : std::to_string(e.merged_into)) << ','
       << pre.str() << ',' << (e.merged_into == kBackground ? std::string() : box(bb_after, e.merged_into).str())
       << ',' << e.pixels_written << ',' << (fell_back ? 1 : 0) << ",,\n";
  }
}

}  // namespace ovseg
