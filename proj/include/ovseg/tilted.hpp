#pragma once

// Oversegmentations cut at arbitrary orientation: PCA reference plane on the
// contact surface, reslicing along it, and whole-body merges.

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "ovseg/classifier.hpp"
#include "ovseg/error.hpp"
#include "ovseg/features.hpp"
#include "ovseg/interpolate.hpp"
#include "ovseg/testkit.hpp"
#include "ovseg/volume.hpp"

namespace ovseg {

/// Midpoints of face-adjacent (A, B) voxel pairs, in physical (z, y, x).
struct CuttingSurface {
  Label label_a = kBackground;
  Label label_b = kBackground;
  std::vector<Vec3> points;
  Vec3 centroid_a = Vec3::Zero();
  Vec3 centroid_b = Vec3::Zero();
};

struct ReferencePlane {
  Vec3 centroid = Vec3::Zero();
  Vec3 u = Vec3::UnitY();
  Vec3 v = Vec3::UnitZ();
  Vec3 normal = Vec3::UnitX();
  double residual = 0.0;  ///< mean squared distance of the points to the plane
  Eigen::Vector3d eigenvalues = Eigen::Vector3d::Zero();

  nlohmann::json to_json() const {
    auto vec = [](const Vec3& p) { return std::vector<double>{p.x(), p.y(), p.z()}; };
    return {{"centroid", vec(centroid)}, {"u", vec(u)}, {"v", vec(v)}, {"normal", vec(normal)},
            {"residual", residual}, {"axis_order", "zyx"}};
  }
};

inline CuttingSurface extract_cutting_surface(const LabelVolume& volume, Label a, Label b) {
  if (a == b || a == kBackground || b == kBackground) throw InvalidArgument("cutting surface needs two distinct cells");
  CuttingSurface s{a, b, {}, Vec3::Zero(), Vec3::Zero()};
  const Dims d = volume.dims();
  const Anisotropy an = volume.anisotropy();
  std::size_t na = 0, nb = 0;
  for (std::size_t z = 0; z < d.z; ++z) {
    for (std::size_t y = 0; y < d.y; ++y) {
      for (std::size_t x = 0; x < d.x; ++x) {
        const Label l = volume.at(z, y, x);
        if (l != a && l != b) continue;
        const Vec3 p = physical(an, double(z), double(y), double(x));
        if (l == a) {
          s.centroid_a += p;
          ++na;
        } else {
          s.centroid_b += p;
          ++nb;
        }
        const Label want = l == a ? b : a;
        const std::size_t next[3][3] = {{z + 1, y, x}, {z, y + 1, x}, {z, y, x + 1}};
        for (const auto& q : next) {
          if (q[0] >= d.z || q[1] >= d.y || q[2] >= d.x) continue;
          if (volume.at(q[0], q[1], q[2]) != want) continue;
          s.points.push_back(0.5 * (p + physical(an, double(q[0]), double(q[1]), double(q[2]))));
        }
      }
    }
  }
  if (s.points.empty()) {
    throw InvalidArgument("labels " + std::to_string(a) + " and " + std::to_string(b) + " are not adjacent");
  }
  s.centroid_a /= double(na);
  s.centroid_b /= double(nb);
  return s;
}

namespace detail {

/// u: projection of the world axis least aligned with n (y, then x, then z on
/// ties), so an axis-aligned plane keeps the voxel grid's own axes. Vectors
/// are (z, y, x), so v = n x u points along +x when n = +z and u = +y.
inline std::pair<Vec3, Vec3> plane_basis(const Vec3& n) {
  const Vec3 order[3] = {Vec3{0, 1, 0}, Vec3{0, 0, 1}, Vec3{1, 0, 0}};
  std::size_t best = 0;
  for (std::size_t i = 1; i < 3; ++i) {
    if (std::abs(order[i].dot(n)) < std::abs(order[best].dot(n)) - 1e-12) best = i;
  }
  const Vec3 u = (order[best] - order[best].dot(n) * n).normalized();
  return {u, n.cross(u).normalized()};
}

}  // namespace detail

/// Best-fit plane through `points`; the normal is oriented along `toward`
/// when that is not perpendicular to it.
inline ReferencePlane fit_plane_pca(const std::vector<Vec3>& points, const Vec3& toward = Vec3::Zero()) {
  if (points.size() < 3) throw DegenerateGeometry("plane fit needs at least 3 points");
  Vec3 c = Vec3::Zero();
  for (const Vec3& p : points) c += p;
  c /= double(points.size());
  Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
  for (const Vec3& p : points) cov += (p - c) * (p - c).transpose();
  cov /= double(points.size());
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(cov);
  const Eigen::Vector3d ev = es.eigenvalues();
  if (!(ev(2) > 0.0) || ev(1) <= 1e-12 * ev(2)) throw DegenerateGeometry("contact points are collinear");
  ReferencePlane plane;
  plane.centroid = c;
  plane.normal = es.eigenvectors().col(0).normalized();
  if (plane.normal.dot(toward) < 0.0) plane.normal = -plane.normal;
  plane.residual = std::max(ev(0), 0.0);
  plane.eigenvalues = ev;
  std::tie(plane.u, plane.v) = detail::plane_basis(plane.normal);
  return plane;
}

inline ReferencePlane fit_plane_pca(const CuttingSurface& s) {
  return fit_plane_pca(s.points, s.centroid_b - s.centroid_a);
}

/// Masks of A and B on one resliced layer, in plane-grid pixels.
struct ReslicedLayer {
  int offset = 0;  ///< k: signed distance from the reference plane in slice spacings
  Mask2D a;
  Mask2D b;
};

struct ReslicedStack {
  Label label_a = kBackground;
  Label label_b = kBackground;
  ReferencePlane plane;
  double spacing = 1.0;
  double pitch = 1.0;
  long grid_u0 = 0;  ///< plane-grid index along u of pixel y = 0
  long grid_v0 = 0;  ///< plane-grid index along v of pixel x = 0
  std::vector<ReslicedLayer> layers;  ///< increasing offset

  const ReslicedLayer* at(int k) const {
    for (const auto& l : layers)
      if (l.offset == k) return &l;
    return nullptr;
  }
};

inline constexpr int kMaxResliceSteps = 64;

namespace detail {

inline long nearest(double q) { return long(std::floor(q + 0.5 + 1e-9)); }

/// Radius-1 closing of `m` that only claims pixels in `free`.
inline Mask2D close_into(const Mask2D& m, const std::set<Pixel>& free) {
  if (m.empty()) return m;
  const Mask2D grown = dilate(m);
  std::vector<Pixel> out = m.pixels;
  for (const Pixel& p : grown.pixels) {
    if (m.contains(p) || !free.contains(p)) continue;
    bool inside = true;
    for (int dy = -1; dy <= 1 && inside; ++dy)
      for (int dx = -1; dx <= 1 && inside; ++dx) inside = grown.contains({p.y + dy, p.x + dx});
    if (inside) out.push_back(p);
  }
  return Mask2D::from_pixels(m.layer, m.label, std::move(out));
}

}  // namespace detail

/// Sample the volume on planes parallel to the reference plane, `spacing`
/// apart, by nearest-voxel lookup. In-plane pixels sit at multiples of the
/// finest in-plane pitch along (u, v). Extends both ways until neither cell
/// appears, at most kMaxResliceSteps slices each way.
inline ReslicedStack reslice(const LabelVolume& volume, Label a, Label b, const ReferencePlane& plane,
                             double spacing = 1.0) {
  if (!(spacing > 0.0)) throw InvalidArgument("reslice spacing must be positive");
  const Anisotropy an = volume.anisotropy();
  const Dims d = volume.dims();
  ReslicedStack st{a, b, plane, spacing, std::min(an.y, an.x), 0, 0, {}};

  // In-plane extent: projections of both cells' voxels onto (u, v).
  double lo_u = 1e300, hi_u = -1e300, lo_v = 1e300, hi_v = -1e300;
  for (std::size_t z = 0; z < d.z; ++z) {
    for (std::size_t y = 0; y < d.y; ++y) {
      for (std::size_t x = 0; x < d.x; ++x) {
        const Label l = volume.at(z, y, x);
        if (l != a && l != b) continue;
        const Vec3 p = physical(an, double(z), double(y), double(x));
        lo_u = std::min(lo_u, p.dot(plane.u));
        hi_u = std::max(hi_u, p.dot(plane.u));
        lo_v = std::min(lo_v, p.dot(plane.v));
        hi_v = std::max(hi_v, p.dot(plane.v));
      }
    }
  }
  if (lo_u > hi_u) throw InvalidArgument("reslice: neither cell is present");
  const long i0 = long(std::floor(lo_u / st.pitch)) - 1, i1 = long(std::ceil(hi_u / st.pitch)) + 1;
  const long j0 = long(std::floor(lo_v / st.pitch)) - 1, j1 = long(std::ceil(hi_v / st.pitch)) + 1;
  st.grid_u0 = i0;
  st.grid_v0 = j0;
  const Vec3 base = plane.centroid - plane.centroid.dot(plane.u) * plane.u - plane.centroid.dot(plane.v) * plane.v;

  auto sample = [&](int k) {
    ReslicedLayer layer{k, Mask2D{k, a, {}}, Mask2D{k, b, {}}};
    std::set<Pixel> free;
    const Vec3 origin = base + double(k) * spacing * plane.normal;
    for (long i = i0; i <= i1; ++i) {
      for (long j = j0; j <= j1; ++j) {
        const Vec3 p = origin + double(i) * st.pitch * plane.u + double(j) * st.pitch * plane.v;
        const long z = detail::nearest(p.x() / an.z), y = detail::nearest(p.y() / an.y),
                   x = detail::nearest(p.z() / an.x);
        const Pixel px{int(i - i0), int(j - j0)};
        const Label l = volume.contains(z, y, x) ? volume.at(std::size_t(z), std::size_t(y), std::size_t(x))
                                                 : kBackground;
        if (l == a) layer.a.pixels.push_back(px);
        else if (l == b) layer.b.pixels.push_back(px);
        else if (l == kBackground) free.insert(px);
      }
    }
    layer.a.normalize();
    layer.b.normalize();
    // Closing one fragment must not claim the other's pixels, and claims only background.
    layer.a = detail::close_into(layer.a, free);
    std::set<Pixel> free_b;
    for (const Pixel& p : free)
      if (!layer.a.contains(p)) free_b.insert(p);
    layer.b = detail::close_into(layer.b, free_b);
    return layer;
  };

  std::vector<ReslicedLayer> below, above;
  for (int k = 0; k <= kMaxResliceSteps; ++k) {
    ReslicedLayer l = sample(k);
    if (l.a.empty() && l.b.empty()) break;
    above.push_back(std::move(l));
  }
  for (int k = -1; k >= -kMaxResliceSteps; --k) {
    ReslicedLayer l = sample(k);
    if (l.a.empty() && l.b.empty()) break;
    below.push_back(std::move(l));
  }
  if (above.empty() && below.empty()) throw InvalidArgument("reslice: plane misses both cells");
  st.layers.assign(std::make_move_iterator(below.rbegin()), std::make_move_iterator(below.rend()));
  for (auto& l : above) st.layers.push_back(std::move(l));
  return st;
}

struct TiltedConfig {
  FeatureConfig features{};
  double spacing = 1.0;
  std::size_t min_contact = 10;  ///< minimum shared voxel faces for a candidate edge
};

/// Adjacency edges with enough contact, as (A, B) with A the cell whose
/// centroid has the smaller z (then the smaller label).
inline std::vector<std::pair<Label, Label>> tilted_candidates(const LabelVolume& volume, std::size_t min_contact) {
  const CellIndex index = build_cell_index(volume);
  std::map<Label, double> zc;
  for (const auto& [l, rec] : index) {
    double s = 0.0;
    for (const auto& m : rec.masks) s += double(m.layer) * double(m.size());
    zc[l] = s / double(rec.voxel_count);
  }
  std::vector<std::pair<Label, Label>> out;
  const AdjacencyGraph graph = build_adjacency(volume);
  for (const auto& [e, n] : graph.edges()) {
    if (n < min_contact) continue;
    auto [a, b] = e;
    if (zc[b] < zc[a]) std::swap(a, b);
    out.emplace_back(a, b);
  }
  return out;
}

struct TiltedEvaluation {
  CorrectionDecision decision;
  ReferencePlane plane;
  std::vector<double> features;
};

/// Reslice the pair, remove both masks on the reference layer, and classify
/// A's slices before it against B's slices after it. A merge decision carries
/// no interpolated masks: the original bodies are joined as they are.
inline TiltedEvaluation evaluate_tilted_pair(const LabelVolume& volume, Label a, Label b, const MlpModel& model,
                                             const TiltedConfig& cfg = {}) {
  const CuttingSurface surface = extract_cutting_surface(volume, a, b);
  const ReferencePlane plane = fit_plane_pca(surface);
  const ReslicedStack st = reslice(volume, a, b, plane, cfg.spacing);
  std::vector<Mask2D> upper, lower;
  for (const auto& l : st.layers) {
    if (l.offset < 0 && !l.a.empty()) upper.push_back(l.a);
    if (l.offset > 0 && !l.b.empty()) lower.push_back(l.b);
  }
  if (upper.empty() || lower.empty()) throw InvalidArgument("resliced fragment is empty");
  FeatureConfig fc = cfg.features;
  fc.variant = model.variant;
  const PairFeatures f = features_from_stacks(upper, a, lower, b, fc, model.normalizer);
  TiltedEvaluation ev;
  ev.plane = plane;
  ev.features = assemble_features(f, fc.variant);
  const Prediction p = predict(model, ev.features);
  const int z = int(std::lround(plane.centroid.x() / volume.anisotropy().z));
  ev.decision = CorrectionDecision{a, b, p.decision ? Verdict::Merge : Verdict::Keep, p.probability, z, 0, {}, {}};
  return ev;
}

}  // namespace ovseg
