#pragma once

// Candidate screening, per-cell EMD trajectories, overlap-trend shape
// classification and the classifier's fixed-order feature vector.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <ostream>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "ovseg/error.hpp"
#include "ovseg/ot.hpp"
#include "ovseg/volume.hpp"

namespace ovseg {

enum class FeatureVariant { Default, Incomplete, Extra, Perturbed };

inline std::string_view to_string(FeatureVariant v) {
  switch (v) {
    case FeatureVariant::Default: return "default";
    case FeatureVariant::Incomplete: return "incomplete";
    case FeatureVariant::Extra: return "extra";
    case FeatureVariant::Perturbed: return "perturbed";
  }
  return "default";
}

inline FeatureVariant parse_variant(std::string_view s) {
  if (s == "default") return FeatureVariant::Default;
  if (s == "incomplete") return FeatureVariant::Incomplete;
  if (s == "extra") return FeatureVariant::Extra;
  if (s == "perturbed") return FeatureVariant::Perturbed;
  throw InvalidArgument("unknown feature variant '" + std::string(s) + "'");
}

struct FeatureConfig {
  int max_gap = 1;
  FeatureVariant variant = FeatureVariant::Default;
  OtConfig ot{};
};

struct CandidatePair {
  Label label_a = kBackground;  ///< upper fragment (smaller z)
  Label label_b = kBackground;  ///< lower fragment
  int gap_first = 0;            ///< first layer strictly between the fragments
  int gap_size = 0;             ///< number of gap layers, possibly 0
  Mask2D contact_a;             ///< A's bottom mask
  Mask2D contact_b;             ///< B's top mask

  std::vector<int> gap_layers() const {
    std::vector<int> z(static_cast<std::size_t>(gap_size));
    for (int i = 0; i < gap_size; ++i) z[static_cast<std::size_t>(i)] = gap_first + i;
    return z;
  }

  bool operator<(const CandidatePair& o) const {
    return std::tie(label_a, label_b) < std::tie(o.label_a, o.label_b);
  }
};

/// Pairs (A, B) where A's bottom mask overlaps B's top mask, at most
/// `cfg.max_gap` layers separate them, and no cell lies entirely inside the
/// gap while touching the contact footprint.
inline std::vector<CandidatePair> screen_candidates(const CellIndex& index, const FeatureConfig& cfg) {
  if (cfg.max_gap < 0) throw InvalidArgument("max_gap must be >= 0");
  std::multimap<int, const CellRecord*> by_top;
  for (const auto& [_, rec] : index) {
    if (!rec.masks.empty()) by_top.emplace(rec.top_layer, &rec);
  }
  std::vector<CandidatePair> out;
  for (const auto& [la, a] : index) {
    if (a.masks.empty()) continue;
    const Mask2D& bottom = a.bottom_mask();
    auto lo = by_top.lower_bound(a.bottom_layer + 1);
    auto hi = by_top.upper_bound(a.bottom_layer + 1 + cfg.max_gap);
    for (auto it = lo; it != hi; ++it) {
      const CellRecord& b = *it->second;
      const Mask2D& top = b.top_mask();
      if (mask_overlap(bottom, top) == 0) continue;
      bool blocked = false;
      if (b.top_layer - a.bottom_layer > 1) {
        const Mask2D footprint = mask_intersection(bottom, top);
        for (auto c = by_top.upper_bound(a.bottom_layer); c != by_top.end() && !blocked; ++c) {
          const CellRecord& rec = *c->second;
          if (rec.top_layer >= b.top_layer) break;
          if (rec.bottom_layer >= b.top_layer || rec.label == la || rec.label == b.label) continue;
          for (const auto& m : rec.masks) {
            if (mask_overlap(m, footprint) > 0) {
              blocked = true;
              break;
            }
          }
        }
      }
      if (blocked) continue;
      out.push_back({la, b.label, a.bottom_layer + 1, b.top_layer - a.bottom_layer - 1, bottom, top});
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

struct EmdTrajectory {
  Label label = kBackground;
  std::vector<double> values;
  int holes = 0;  ///< adjacencies skipped because a layer had no mask
};

/// Geo-Wasserstein between every pair of masks on consecutive layers. Masks
/// must be ordered by layer; a jump over missing layers counts as a hole.
inline EmdTrajectory trajectory_from_masks(Label label, const std::vector<Mask2D>& masks,
                                           const OtConfig& ot) {
  EmdTrajectory t{label, {}, 0};
  for (std::size_t i = 1; i < masks.size(); ++i) {
    if (masks[i].layer != masks[i - 1].layer + 1) {
      ++t.holes;
      continue;
    }
    t.values.push_back(geo_wasserstein(masks[i - 1], masks[i], ot));
  }
  return t;
}

struct PairTrajectories {
  EmdTrajectory a;
  double emd_gap = 0.0;
  EmdTrajectory b;
};

inline PairTrajectories extract_emd_trajectories(const CandidatePair& pair, const CellIndex& index,
                                                 const FeatureConfig& cfg) {
  const CellRecord& a = index.at(pair.label_a);
  const CellRecord& b = index.at(pair.label_b);
  return {trajectory_from_masks(a.label, a.masks, cfg.ot),
          geo_wasserstein(a.bottom_mask(), b.top_mask(), cfg.ot),
          trajectory_from_masks(b.label, b.masks, cfg.ot)};
}

namespace detail {

/// Linear interpolation between order statistics of sorted data.
inline double quantile_sorted(const std::vector<double>& s, double p) {
  const double h = (static_cast<double>(s.size()) - 1.0) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, s.size() - 1);
  return s[lo] + (h - static_cast<double>(lo)) * (s[hi] - s[lo]);
}

inline std::vector<double> variant_levels(FeatureVariant v) {
  switch (v) {
    case FeatureVariant::Default: return {0.0, 0.25, 0.5, 0.75, 1.0};
    case FeatureVariant::Incomplete: return {0.25, 0.5, 0.75};
    case FeatureVariant::Extra: return {0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0};
    case FeatureVariant::Perturbed: return {0.1, 0.3, 0.5, 0.7, 0.9};
  }
  return {};
}

}  // namespace detail

inline std::size_t stats_width(FeatureVariant v) { return detail::variant_levels(v).size(); }

struct StatsBlock {
  std::vector<double> values;
  bool empty_input = false;
};

/// Quantile summary of a trajectory; an empty trajectory gives zeros.
inline StatsBlock summarize(const std::vector<double>& traj, FeatureVariant variant) {
  const auto levels = detail::variant_levels(variant);
  StatsBlock out{std::vector<double>(levels.size(), 0.0), traj.empty()};
  if (traj.empty()) return out;
  std::vector<double> s = traj;
  std::sort(s.begin(), s.end());
  for (std::size_t i = 0; i < levels.size(); ++i) out.values[i] = detail::quantile_sorted(s, levels[i]);
  return out;
}

enum class ShapeClass { Linear = 0, Quadratic = 1 };

/// Least-squares R² of overlap against layer ordinal for a polynomial of the
/// given degree. A constant series is fitted exactly and scores 1.
inline double polynomial_r2(const std::vector<double>& y, int degree) {
  const auto n = static_cast<Eigen::Index>(y.size());
  Eigen::MatrixXd X(n, degree + 1);
  Eigen::VectorXd Y(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    double p = 1.0;
    for (int d = 0; d <= degree; ++d, p *= static_cast<double>(i)) X(i, d) = p;
    Y(i) = y[static_cast<std::size_t>(i)];
  }
  const Eigen::VectorXd beta = X.colPivHouseholderQr().solve(Y);
  const double ss_res = (Y - X * beta).squaredNorm();
  const double ss_tot = (Y.array() - Y.mean()).square().sum();
  if (ss_tot <= 1e-12 * std::max(1.0, Y.squaredNorm())) return 1.0;
  return std::clamp(1.0 - ss_res / ss_tot, 0.0, 1.0);
}

inline bool strictly_monotone(const std::vector<double>& y) {
  bool inc = true, dec = true;
  for (std::size_t i = 1; i < y.size(); ++i) {
    inc = inc && y[i] > y[i - 1];
    dec = dec && y[i] < y[i - 1];
  }
  return inc || dec;
}

/// Strict rise to a single peak followed by a strict fall.
inline bool rise_then_fall(const std::vector<double>& y) {
  std::size_t i = 1;
  while (i < y.size() && y[i] > y[i - 1]) ++i;
  if (i == 1 || i == y.size()) return false;
  for (; i < y.size(); ++i) {
    if (!(y[i] < y[i - 1])) return false;
  }
  return true;
}

/// Per-class min-max rescaling of R², fitted on a training corpus.
struct ShapeNormalizer {
  std::array<double, 2> lo{0.0, 0.0};
  std::array<double, 2> hi{1.0, 1.0};

  double apply(ShapeClass c, double r2) const {
    const auto k = static_cast<std::size_t>(c);
    const double span = hi[k] - lo[k];
    if (span <= 1e-12) return std::clamp(r2, 0.0, 1.0);
    return std::clamp((r2 - lo[k]) / span, 0.0, 1.0);
  }

  static ShapeNormalizer fit(const std::vector<std::pair<ShapeClass, double>>& samples) {
    ShapeNormalizer n;
    std::array<bool, 2> seen{false, false};
    for (const auto& [c, r2] : samples) {
      const auto k = static_cast<std::size_t>(c);
      if (!seen[k]) {
        n.lo[k] = n.hi[k] = r2;
        seen[k] = true;
      } else {
        n.lo[k] = std::min(n.lo[k], r2);
        n.hi[k] = std::max(n.hi[k], r2);
      }
    }
    for (std::size_t k = 0; k < 2; ++k) {
      if (!seen[k]) {
        n.lo[k] = 0.0;
        n.hi[k] = 1.0;
      }
    }
    return n;
  }

  nlohmann::json to_json() const {
    return {{"linear", {lo[0], hi[0]}}, {"quadratic", {lo[1], hi[1]}}};
  }

  static ShapeNormalizer from_json(const nlohmann::json& j) {
    ShapeNormalizer n;
    n.lo[0] = j.at("linear").at(0).get<double>();
    n.hi[0] = j.at("linear").at(1).get<double>();
    n.lo[1] = j.at("quadratic").at(0).get<double>();
    n.hi[1] = j.at("quadratic").at(1).get<double>();
    return n;
  }
};

struct ShapeResult {
  ShapeClass shape_class = ShapeClass::Linear;
  double r2 = 1.0;           ///< raw, after the monotone override
  double shape_index = 1.0;  ///< normalized
  double r2_linear = 1.0;
  double r2_quadratic = 1.0;
  bool degenerate = false;   ///< fewer than three overlaps
};

inline ShapeResult shape_from_overlaps(const std::vector<double>& overlaps,
                                       const ShapeNormalizer& norm = {}) {
  ShapeResult r;
  if (overlaps.size() < 3) {
    r.degenerate = true;
    return r;
  }
  r.r2_linear = polynomial_r2(overlaps, 1);
  r.r2_quadratic = polynomial_r2(overlaps, 2);
  const bool quad = r.r2_quadratic > r.r2_linear + 1e-12;
  r.shape_class = quad ? ShapeClass::Quadratic : ShapeClass::Linear;
  r.r2 = quad ? r.r2_quadratic : r.r2_linear;
  if (strictly_monotone(overlaps) || rise_then_fall(overlaps)) r.r2 = 1.0;
  r.shape_index = norm.apply(r.shape_class, r.r2);
  return r;
}

/// Overlap between consecutive occupied layers of the two fragments stacked
/// as one cell, including the A-bottom / B-top contact.
inline std::vector<double> stacked_overlaps(const std::vector<Mask2D>& upper,
                                            const std::vector<Mask2D>& lower) {
  std::vector<const Mask2D*> seq;
  for (const auto& m : upper) seq.push_back(&m);
  for (const auto& m : lower) seq.push_back(&m);
  std::vector<double> out;
  for (std::size_t i = 1; i < seq.size(); ++i) {
    out.push_back(static_cast<double>(mask_overlap(*seq[i - 1], *seq[i])));
  }
  return out;
}

inline ShapeResult shape_classify(const CandidatePair& pair, const CellIndex& index,
                                  const ShapeNormalizer& norm = {}) {
  return shape_from_overlaps(
      stacked_overlaps(index.at(pair.label_a).masks, index.at(pair.label_b).masks), norm);
}

/// Everything the classifier sees for one pair, before layout.
struct PairFeatures {
  PairTrajectories traj;
  ShapeResult shape;
};

inline std::size_t feature_length(FeatureVariant v) {
  const std::size_t onehot = v == FeatureVariant::Incomplete ? 0 : 2;
  return 2 * stats_width(v) + 2 + onehot;
}

inline std::vector<std::string> feature_names(FeatureVariant v) {
  std::vector<std::string> stats;
  for (double p : detail::variant_levels(v)) {
    if (p == 0.0) {
      stats.push_back("min");
    } else if (p == 1.0) {
      stats.push_back("max");
    } else {
      stats.push_back("q" + std::to_string(static_cast<int>(std::lround(p * 100))));
    }
  }
  std::vector<std::string> names;
  for (const auto& s : stats) names.push_back("a_" + s);
  for (const auto& s : stats) names.push_back("b_" + s);
  names.push_back("emd_gap");
  names.push_back("shape_index");
  if (v != FeatureVariant::Incomplete) {
    names.push_back("class_linear");
    names.push_back("class_quadratic");
  }
  return names;
}

/// [stats A, stats B, emd_gap, shape_index, one-hot class]. The Incomplete
/// variant omits the one-hot block.
inline std::vector<double> assemble_features(const PairFeatures& f, FeatureVariant v) {
  std::vector<double> out;
  out.reserve(feature_length(v));
  for (double s : summarize(f.traj.a.values, v).values) out.push_back(s);
  for (double s : summarize(f.traj.b.values, v).values) out.push_back(s);
  out.push_back(f.traj.emd_gap);
  out.push_back(f.shape.shape_index);
  if (v != FeatureVariant::Incomplete) {
    out.push_back(f.shape.shape_class == ShapeClass::Linear ? 1.0 : 0.0);
    out.push_back(f.shape.shape_class == ShapeClass::Quadratic ? 1.0 : 0.0);
  }
  return out;
}

/// Features of two mask stacks treated as the upper and lower fragment.
inline PairFeatures features_from_stacks(const std::vector<Mask2D>& upper, Label label_a,
                                         const std::vector<Mask2D>& lower, Label label_b,
                                         const FeatureConfig& cfg, const ShapeNormalizer& norm = {}) {
  if (upper.empty() || lower.empty()) throw InvalidArgument("fragment stack is empty");
  PairFeatures f;
  f.traj.a = trajectory_from_masks(label_a, upper, cfg.ot);
  f.traj.b = trajectory_from_masks(label_b, lower, cfg.ot);
  f.traj.emd_gap = geo_wasserstein(upper.back(), lower.front(), cfg.ot);
  f.shape = shape_from_overlaps(stacked_overlaps(upper, lower), norm);
  return f;
}

/// Computes pair features over one CellIndex, reusing each cell's trajectory.
class FeatureExtractor {
 public:
  FeatureExtractor(const CellIndex& index, FeatureConfig cfg, ShapeNormalizer norm = {})
      : index_(index), cfg_(cfg), norm_(norm) {}

  const FeatureConfig& config() const { return cfg_; }

  const EmdTrajectory& trajectory(Label l) {
    auto it = cache_.find(l);
    if (it == cache_.end()) {
      it = cache_.emplace(l, trajectory_from_masks(l, index_.at(l).masks, cfg_.ot)).first;
    }
    return it->second;
  }

  PairFeatures extract(const CandidatePair& pair) {
    const CellRecord& a = index_.at(pair.label_a);
    const CellRecord& b = index_.at(pair.label_b);
    PairFeatures f;
    f.traj.a = trajectory(pair.label_a);
    f.traj.b = trajectory(pair.label_b);
    f.traj.emd_gap = geo_wasserstein(a.bottom_mask(), b.top_mask(), cfg_.ot);
    f.shape = shape_from_overlaps(stacked_overlaps(a.masks, b.masks), norm_);
    return f;
  }

  std::vector<double> vector(const CandidatePair& pair) {
    return assemble_features(extract(pair), cfg_.variant);
  }

 private:
  const CellIndex& index_;
  FeatureConfig cfg_;
  ShapeNormalizer norm_;
  std::map<Label, EmdTrajectory> cache_;
};

inline std::vector<double> build_feature_vector(const CandidatePair& pair, const CellIndex& index,
                                                const FeatureConfig& cfg,
                                                const ShapeNormalizer& norm = {}) {
  FeatureExtractor fx(index, cfg, norm);
  return fx.vector(pair);
}

/// One CSV row per candidate: labels, gap, features and audit columns.
inline void write_candidates_csv(std::ostream& os, const std::vector<CandidatePair>& pairs,
                                 const std::vector<PairFeatures>& features, FeatureVariant v) {
  if (!features.empty() && features.size() != pairs.size()) {
    throw InvalidArgument("feature rows do not match candidate rows");
  }
  os << "label_a,label_b,gap_first,gap_size,contact_overlap";
  if (!features.empty()) {
    for (const auto& n : feature_names(v)) os << ',' << n;
    os << ",r2_raw,shape_degenerate,holes_a,holes_b,empty_a,empty_b";
  }
  os << '\n';
  auto old_precision = os.precision(17);
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const auto& p = pairs[i];
    os << p.label_a << ',' << p.label_b << ',' << p.gap_first << ',' << p.gap_size << ','
       << mask_overlap(p.contact_a, p.contact_b);
    if (!features.empty()) {
      const auto& f = features[i];
      for (double x : assemble_features(f, v)) os << ',' << x;
      os << ',' << f.shape.r2 << ',' << int(f.shape.degenerate) << ',' << f.traj.a.holes << ','
         << f.traj.b.holes << ',' << int(f.traj.a.values.empty()) << ','
         << int(f.traj.b.values.empty());
    }
    os << '\n';
  }
  os.precision(old_precision);
}

}  // namespace ovseg
