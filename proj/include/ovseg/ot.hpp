#pragma once

// Optimal-transport kernels on 2D point distributions: exact earthmover's
// distance, the sliced Wasserstein estimator, and the Geo-Wasserstein
// divergence between cell masks.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ovseg/error.hpp"
#include "ovseg/rng.hpp"
#include "ovseg/transport.hpp"
#include "ovseg/volume.hpp"

namespace ovseg {

struct Point2 {
  double y = 0.0;
  double x = 0.0;
};

inline double distance(Point2 a, Point2 b) { return std::hypot(a.y - b.y, a.x - b.x); }

struct PointDistribution {
  std::vector<Point2> points;
  std::vector<double> weights;

  std::size_t size() const { return points.size(); }

  void validate() const {
    if (points.empty()) throw InvalidArgument("distribution has no points");
    if (points.size() != weights.size()) {
      throw InvalidArgument("distribution points and weights differ in length");
    }
    double s = 0.0;
    for (double w : weights) {
      if (!(w >= 0.0)) throw InvalidArgument("distribution weights must be non-negative");
      s += w;
    }
    if (std::abs(s - 1.0) > 1e-9) throw InvalidArgument("distribution weights must sum to 1");
  }

  static PointDistribution uniform(std::vector<Point2> pts) {
    PointDistribution d;
    const double w = 1.0 / static_cast<double>(pts.size());
    d.weights.assign(pts.size(), w);
    d.points = std::move(pts);
    return d;
  }
};

using PlanEntry = FlowEntry;

struct TransportPlan {
  std::vector<PlanEntry> entries;
  double cost = 0.0;
};

struct EmdResult {
  double cost = 0.0;
  TransportPlan plan;
};

inline constexpr std::size_t kDefaultExactCap = 250'000;

/// Uniform mass over the mask's pixels, one atom per pixel.
inline PointDistribution mask_to_distribution(const Mask2D& mask) {
  if (mask.empty()) throw InvalidArgument("cannot build a distribution from an empty mask");
  std::vector<Point2> pts;
  pts.reserve(mask.size());
  for (const Pixel& p : mask.pixels) pts.push_back({double(p.y), double(p.x)});
  return PointDistribution::uniform(std::move(pts));
}

/// Solve the transport problem for an arbitrary ground cost c(p_i, q_j).
template <class CostFn>
EmdResult solve_transport(const PointDistribution& p, const PointDistribution& q, CostFn&& c,
                          std::size_t cap = kDefaultExactCap) {
  p.validate();
  q.validate();
  if (p.size() * q.size() > cap) {
    throw SizeCapExceeded("exact transport on " + std::to_string(p.size()) + "x" +
                          std::to_string(q.size()) + " exceeds cap " + std::to_string(cap));
  }
  std::vector<double> cost(p.size() * q.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    for (std::size_t j = 0; j < q.size(); ++j) cost[i * q.size() + j] = c(p.points[i], q.points[j]);
  }
  TransportSimplex solver(p.weights, q.weights, cost);
  auto sol = solver.solve();
  EmdResult r;
  r.cost = sol.cost;
  r.plan.cost = sol.cost;
  r.plan.entries = std::move(sol.flows);
  return r;
}

/// Earthmover's distance with Euclidean ground cost in pixel units.
inline EmdResult exact_emd(const PointDistribution& p, const PointDistribution& q,
                           std::size_t cap = kDefaultExactCap) {
  return solve_transport(p, q, [](Point2 a, Point2 b) { return distance(a, b); }, cap);
}

namespace detail {

struct Atom {
  double pos;
  double w;
};

/// W1 between two weighted 1-D atom sets, by integrating |F - G| over the
/// merged support. Both inputs are sorted in place.
inline double wasserstein_1d(std::vector<Atom>& a, std::vector<Atom>& b) {
  auto by_pos = [](const Atom& l, const Atom& r) { return l.pos < r.pos; };
  std::sort(a.begin(), a.end(), by_pos);
  std::sort(b.begin(), b.end(), by_pos);
  std::size_t i = 0, j = 0;
  double fa = 0.0, fb = 0.0, total = 0.0;
  double prev = std::min(a.front().pos, b.front().pos);
  while (i < a.size() || j < b.size()) {
    const double next = (j == b.size() || (i < a.size() && a[i].pos <= b[j].pos)) ? a[i].pos
                                                                                   : b[j].pos;
    total += std::abs(fa - fb) * (next - prev);
    while (i < a.size() && a[i].pos == next) fa += a[i++].w;
    while (j < b.size() && b[j].pos == next) fb += b[j++].w;
    prev = next;
  }
  return total;
}

inline void project(const PointDistribution& d, double cy, double cx, std::vector<Atom>& out) {
  out.resize(d.size());
  for (std::size_t i = 0; i < d.size(); ++i) {
    out[i] = {d.points[i].y * cy + d.points[i].x * cx, d.weights[i]};
  }
}

}  // namespace detail

/// Average, over `n_projections` seeded directions on the unit circle, of the
/// exact 1-D W1 between the projected distributions.
inline double sliced_wasserstein(const PointDistribution& p, const PointDistribution& q,
                                 std::size_t n_projections, std::uint64_t seed) {
  p.validate();
  q.validate();
  if (n_projections == 0) throw InvalidArgument("sliced_wasserstein needs at least one projection");
  Rng rng(seed);
  std::vector<detail::Atom> pa, qa;
  double sum = 0.0;
  for (std::size_t k = 0; k < n_projections; ++k) {
    const double theta = 2.0 * std::numbers::pi * rng.uniform();
    const double cy = std::sin(theta), cx = std::cos(theta);
    detail::project(p, cy, cx, pa);
    detail::project(q, cy, cx, qa);
    sum += detail::wasserstein_1d(pa, qa);
  }
  return sum / static_cast<double>(n_projections);
}

struct OtConfig {
  std::size_t exact_cap = kDefaultExactCap;  ///< |A|·|B| at or below this uses exact EMD
  std::size_t n_projections = 50;
  std::uint64_t seed = 0;
};

/// Factor mapping the mean projected W1 of a rigid shift back to the shift
/// length: the mean of |<v, θ>| over the circle is (2/π)|v|.
inline constexpr double kSlicedToPlanar = std::numbers::pi / 2.0;

/// Geo-Wasserstein divergence between two masks in their shared (y, x) frame.
/// Masks are not re-centred, so positional drift counts as divergence.
inline double geo_wasserstein(const Mask2D& a, const Mask2D& b, const OtConfig& cfg = {}) {
  if (a.empty() || b.empty()) throw InvalidArgument("geo_wasserstein: empty mask");
  const auto p = mask_to_distribution(a);
  const auto q = mask_to_distribution(b);
  if (a.size() * b.size() <= cfg.exact_cap) return exact_emd(p, q, cfg.exact_cap).cost;
  return kSlicedToPlanar * sliced_wasserstein(p, q, cfg.n_projections, cfg.seed);
}

}  // namespace ovseg
