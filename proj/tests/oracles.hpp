#pragma once

// Test-only reference computations. Nothing here calls into the code paths it
// is used to check.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <map>
#include <numeric>
#include <set>
#include <tuple>
#include <vector>

#include "ovseg/ot.hpp"
#include "ovseg/rng.hpp"
#include "ovseg/volume.hpp"

namespace ovseg::oracle {

/// 1-D W1 as the integral of |F^-1(u) - G^-1(u)| over u in [0, 1].
inline double quantile_w1(std::vector<std::pair<double, double>> a,
                          std::vector<std::pair<double, double>> b) {
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  std::size_t i = 0, j = 0;
  double ra = a[0].second, rb = b[0].second;  // mass left in the current atoms
  double total = 0.0;
  while (i < a.size() && j < b.size()) {
    const double step = std::min(ra, rb);
    total += step * std::abs(a[i].first - b[j].first);
    ra -= step;
    rb -= step;
    if (ra <= 1e-15 && ++i < a.size()) ra = a[i].second;
    if (rb <= 1e-15 && ++j < b.size()) rb = b[j].second;
  }
  return total;
}

/// Sliced W1 averaged over a dense, evenly spaced grid of directions on the
/// half circle (projected W1 is symmetric under θ -> θ + π).
inline double dense_sliced(const PointDistribution& p, const PointDistribution& q, int directions) {
  double sum = 0.0;
  for (int k = 0; k < directions; ++k) {
    const double th = std::numbers::pi * (k + 0.5) / directions;
    std::vector<std::pair<double, double>> pa, qa;
    for (std::size_t i = 0; i < p.size(); ++i)
      pa.emplace_back(p.points[i].y * std::sin(th) + p.points[i].x * std::cos(th), p.weights[i]);
    for (std::size_t i = 0; i < q.size(); ++i)
      qa.emplace_back(q.points[i].y * std::sin(th) + q.points[i].x * std::cos(th), q.weights[i]);
    sum += quantile_w1(pa, qa);
  }
  return sum / directions;
}

inline double sample_variance(const std::vector<double>& v) {
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / double(v.size());
  double s = 0.0;
  for (double x : v) s += (x - mean) * (x - mean);
  return s / double(v.size() - 1);
}

/// Star-shaped blob inside a side x side window at (y0, x0).
inline Mask2D random_blob(Rng& rng, int y0, int x0, int side) {
  const double c = (side - 1) / 2.0;
  const double r0 = side * rng.uniform(0.30, 0.45);
  double amp[3], phase[3];
  for (int k = 0; k < 3; ++k) {
    amp[k] = r0 * rng.uniform(0.0, 0.12);
    phase[k] = rng.uniform(0.0, 2 * std::numbers::pi);
  }
  const double cy = c + rng.uniform(-0.1, 0.1) * side, cx = c + rng.uniform(-0.1, 0.1) * side;
  std::vector<Pixel> px;
  for (int y = 0; y < side; ++y) {
    for (int x = 0; x < side; ++x) {
      const double dy = y - cy, dx = x - cx;
      const double phi = std::atan2(dy, dx);
      double r = r0;
      for (int k = 0; k < 3; ++k) r += amp[k] * std::cos((k + 2) * phi + phase[k]);
      if (std::hypot(dy, dx) <= r) px.push_back({y0 + y, x0 + x});
    }
  }
  return Mask2D::from_pixels(0, 1, px);
}

/// Uniform distribution over `n` pixels drawn without replacement.
inline PointDistribution subsample(const Mask2D& m, std::size_t n, std::uint64_t seed) {
  std::vector<Pixel> px = m.pixels;
  Rng rng(seed);
  rng.shuffle(px);
  px.resize(std::min(n, px.size()));
  std::vector<Point2> pts;
  for (auto p : px) pts.push_back({double(p.y), double(p.x)});
  return PointDistribution::uniform(pts);
}

/// Candidate pairs by exhaustive scan over every ordered cell pair, working
/// from raw voxels rather than a CellIndex.
inline std::set<std::tuple<Label, Label, int>> brute_force_screen(const LabelVolume& v, int max_gap) {
  using PixelSet = std::set<std::pair<int, int>>;
  std::map<Label, std::map<int, PixelSet>> layers;
  const Dims d = v.dims();
  for (std::size_t z = 0; z < d.z; ++z)
    for (std::size_t y = 0; y < d.y; ++y)
      for (std::size_t x = 0; x < d.x; ++x)
        if (Label l = v.at(z, y, x)) layers[l][int(z)].insert({int(y), int(x)});
  auto meets = [](const PixelSet& a, const PixelSet& b) {
    for (const auto& p : a)
      if (b.count(p)) return true;
    return false;
  };
  std::set<std::tuple<Label, Label, int>> out;
  for (const auto& [la, a] : layers) {
    for (const auto& [lb, b] : layers) {
      if (la == lb) continue;
      const int a_bottom = a.rbegin()->first, b_top = b.begin()->first;
      const int gap = b_top - a_bottom - 1;
      if (gap < 0 || gap > max_gap) continue;
      const PixelSet& ma = a.rbegin()->second;
      const PixelSet& mb = b.begin()->second;
      PixelSet footprint;
      for (const auto& p : ma)
        if (mb.count(p)) footprint.insert(p);
      if (footprint.empty()) continue;
      bool blocked = false;
      for (const auto& [lc, c] : layers) {
        if (lc == la || lc == lb) continue;
        if (c.begin()->first <= a_bottom || c.rbegin()->first >= b_top) continue;
        for (const auto& [z, m] : c) blocked = blocked || meets(m, footprint);
      }
      if (!blocked) out.insert({la, lb, gap});
    }
  }
  return out;
}

/// Type-7 quantile through nth_element on a copy.
inline double quantile(std::vector<double> v, double p) {
  const double h = p * double(v.size() - 1);
  const std::size_t k = std::size_t(h);
  std::nth_element(v.begin(), v.begin() + long(k), v.end());
  const double lo = v[k];
  if (k + 1 >= v.size()) return lo;
  const double hi = *std::min_element(v.begin() + long(k) + 1, v.end());
  return lo + (h - double(k)) * (hi - lo);
}

/// R² of a degree-1 or degree-2 fit of y against 0..n-1, solving the normal
/// equations by Gauss-Jordan elimination on centred abscissae.
inline double normal_equations_r2(const std::vector<double>& y, int degree) {
  const int k = degree + 1;
  const double n = double(y.size());
  const double xc = (n - 1) / 2.0;
  double A[3][4] = {};
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double t = double(i) - xc;
    const double basis[3] = {1.0, t, t * t};
    for (int r = 0; r < k; ++r) {
      for (int c = 0; c < k; ++c) A[r][c] += basis[r] * basis[c];
      A[r][k] += basis[r] * y[i];
    }
  }
  for (int c = 0; c < k; ++c) {
    int piv = c;
    for (int r = c + 1; r < k; ++r)
      if (std::abs(A[r][c]) > std::abs(A[piv][c])) piv = r;
    for (int j = 0; j <= k; ++j) std::swap(A[c][j], A[piv][j]);
    for (int r = 0; r < k; ++r) {
      if (r == c) continue;
      const double f = A[r][c] / A[c][c];
      for (int j = 0; j <= k; ++j) A[r][j] -= f * A[c][j];
    }
  }
  double beta[3] = {};
  for (int r = 0; r < k; ++r) beta[r] = A[r][k] / A[r][r];
  const double mean = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double ss_res = 0.0, ss_tot = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double t = double(i) - xc;
    const double fit = beta[0] + beta[1] * t + (k == 3 ? beta[2] * t * t : 0.0);
    ss_res += (y[i] - fit) * (y[i] - fit);
    ss_tot += (y[i] - mean) * (y[i] - mean);
  }
  return 1.0 - ss_res / ss_tot;
}

/// EMD between two masks straight from pixel lists.
inline double mask_emd(const Mask2D& a, const Mask2D& b) {
  return exact_emd(mask_to_distribution(a), mask_to_distribution(b)).cost;
}

/// Exhaustive one-to-one matching between label sets of two volumes. Among
/// all partial matchings using pairs with IoU >= t (and IoU > 0), picks the
/// one with the most pairs, then the largest IoU sum; with `by_sum` the IoU
/// sum alone decides.
struct ExhaustiveMatch {
  std::size_t n_pred = 0, n_gt = 0, tp = 0;
  double iou_sum = 0.0;
};

inline ExhaustiveMatch exhaustive_match(const LabelVolume& pred, const LabelVolume& gt, double t,
                                        bool by_sum = false) {
  std::vector<Label> pl, gl;
  for (Label l : pred.data())
    if (l != kBackground && std::find(pl.begin(), pl.end(), l) == pl.end()) pl.push_back(l);
  for (Label l : gt.data())
    if (l != kBackground && std::find(gl.begin(), gl.end(), l) == gl.end()) gl.push_back(l);
  std::vector<std::vector<double>> iou(gl.size(), std::vector<double>(pl.size(), 0.0));
  for (std::size_t g = 0; g < gl.size(); ++g)
    for (std::size_t p = 0; p < pl.size(); ++p) {
      std::size_t inter = 0, uni = 0;
      for (std::size_t i = 0; i < gt.data().size(); ++i) {
        const bool a = gt.data()[i] == gl[g], b = pred.data()[i] == pl[p];
        inter += a && b;
        uni += a || b;
      }
      iou[g][p] = double(inter) / double(uni);
    }
  ExhaustiveMatch best;
  std::vector<bool> used(pl.size(), false);
  auto rec = [&](auto&& self, std::size_t g, std::size_t n, double sum) -> void {
    if (g == gl.size()) {
      const bool better = by_sum ? sum > best.iou_sum + 1e-12
                                 : n > best.tp || (n == best.tp && sum > best.iou_sum + 1e-12);
      if (better) {
        best.tp = n;
        best.iou_sum = sum;
      }
      return;
    }
    self(self, g + 1, n, sum);
    for (std::size_t p = 0; p < pl.size(); ++p)
      if (!used[p] && iou[g][p] > 0.0 && iou[g][p] >= t) {
        used[p] = true;
        self(self, g + 1, n + 1, sum + iou[g][p]);
        used[p] = false;
      }
  };
  rec(rec, 0, 0, 0.0);
  best.n_pred = pl.size();
  best.n_gt = gl.size();
  return best;
}

inline double exhaustive_ap(const LabelVolume& pred, const LabelVolume& gt, double t) {
  const auto m = exhaustive_match(pred, gt, t);
  const std::size_t d = m.n_pred + m.n_gt - m.tp;
  return d == 0 ? 1.0 : double(m.tp) / double(d);
}

/// Jaccard from the matching that maximizes the IoU sum; unmatched gt count 0.
inline double exhaustive_jaccard(const LabelVolume& pred, const LabelVolume& gt) {
  const auto m = exhaustive_match(pred, gt, 0.0, true);
  return m.iou_sum / double(m.n_gt);
}

}  // namespace ovseg::oracle
