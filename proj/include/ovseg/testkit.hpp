#pragma once

// Deterministic synthetic label volumes: Voronoi tissue, injected axis gaps
// and tilted splits, and simple geometric phantoms.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "ovseg/error.hpp"
#include "ovseg/rng.hpp"
#include "ovseg/volume.hpp"

namespace ovseg {

using Vec3 = Eigen::Vector3d;

/// Physical coordinates (z·az, y·ay, x·ax) of a voxel centre.
inline Vec3 physical(const Anisotropy& a, double z, double y, double x) {
  return {z * a.z, y * a.y, x * a.x};
}

struct Plane3 {
  Vec3 point = Vec3::Zero();
  Vec3 normal = Vec3::UnitX();  ///< (z, y, x) order, physical units
};

namespace testkit {

struct SynthSpec {
  Dims dims{24, 48, 48};
  std::size_t n_cells = 40;
  std::uint64_t seed = 0;
  Anisotropy anisotropy{};
  int min_cell_height = 4;  ///< layers; cells shorter than this are not gap-eligible
};

/// Label each voxel with the nearest seed (1-based, lowest index on ties),
/// using anisotropy-scaled distances.
inline LabelVolume voronoi_from_seeds(const Dims& dims, const Anisotropy& aniso,
                                      const std::vector<Vec3>& seeds) {
  if (seeds.empty()) throw InvalidArgument("voronoi: at least one seed required");
  LabelVolume v(dims, aniso);
  auto data = v.data();
  std::size_t off = 0;
  for (std::size_t z = 0; z < dims.z; ++z) {
    for (std::size_t y = 0; y < dims.y; ++y) {
      for (std::size_t x = 0; x < dims.x; ++x, ++off) {
        const Vec3 p = physical(aniso, double(z), double(y), double(x));
        double best = std::numeric_limits<double>::infinity();
        std::size_t arg = 0;
        for (std::size_t s = 0; s < seeds.size(); ++s) {
          const double d = (seeds[s] - p).squaredNorm();
          if (d < best) {
            best = d;
            arg = s;
          }
        }
        data[off] = static_cast<Label>(arg + 1);
      }
    }
  }
  return v;
}

inline std::vector<Vec3> voronoi_seeds(const SynthSpec& spec) {
  Rng rng(spec.seed);
  const auto& a = spec.anisotropy;
  std::vector<Vec3> seeds;
  seeds.reserve(spec.n_cells);
  for (std::size_t i = 0; i < spec.n_cells; ++i) {
    const double z = rng.uniform(0.0, double(spec.dims.z - 1) * a.z);
    const double y = rng.uniform(0.0, double(spec.dims.y - 1) * a.y);
    const double x = rng.uniform(0.0, double(spec.dims.x - 1) * a.x);
    seeds.emplace_back(z, y, x);
  }
  return seeds;
}

inline LabelVolume generate_voronoi_volume(const SynthSpec& spec) {
  if (spec.n_cells == 0) throw InvalidArgument("SynthSpec.n_cells must be >= 1");
  if (spec.dims.voxels() == 0) throw InvalidArgument("SynthSpec.dims must be positive");
  return voronoi_from_seeds(spec.dims, spec.anisotropy, voronoi_seeds(spec));
}

/// Ground truth for one injected axis gap.
struct GapRecord {
  Label cell = kBackground;   ///< original label, keeps the upper fragment
  Label fresh = kBackground;  ///< new label of the lower fragment
  int layer = 0;              ///< deleted layer
  Mask2D deleted;             ///< pixels set to background

  nlohmann::json to_json() const {
    nlohmann::json px = nlohmann::json::array();
    for (const auto& p : deleted.pixels) px.push_back({p.y, p.x});
    return {{"cell", cell}, {"fresh", fresh}, {"layer", layer}, {"deleted_pixels", px}};
  }

  static GapRecord from_json(const nlohmann::json& j) {
    GapRecord g;
    g.cell = j.at("cell").get<Label>();
    g.fresh = j.at("fresh").get<Label>();
    g.layer = j.at("layer").get<int>();
    std::vector<Pixel> px;
    for (const auto& p : j.at("deleted_pixels")) px.push_back({p.at(0).get<int>(), p.at(1).get<int>()});
    g.deleted = Mask2D::from_pixels(g.layer, g.cell, std::move(px));
    return g;
  }
};

/// Delete `cell`'s mask on `layer` and relabel everything below to `fresh`.
inline GapRecord inject_axis_gap(LabelVolume& volume, Label cell, int layer, Label fresh) {
  if (cell == kBackground || fresh == kBackground) throw InvalidArgument("labels must be nonzero");
  const Dims d = volume.dims();
  int top = std::numeric_limits<int>::max(), bottom = -1;
  bool fresh_used = false;
  for (std::size_t z = 0; z < d.z; ++z) {
    for (std::size_t i = 0; i < d.y * d.x; ++i) {
      const Label l = volume.data()[z * d.y * d.x + i];
      if (l == cell) {
        top = std::min(top, int(z));
        bottom = std::max(bottom, int(z));
      }
      fresh_used |= l == fresh;
    }
  }
  if (bottom < 0) throw InvalidArgument("label " + std::to_string(cell) + " absent from volume");
  if (fresh_used) throw InvalidArgument("fresh label " + std::to_string(fresh) + " already in use");
  if (layer <= top || layer >= bottom) {
    throw InvalidArgument("gap layer must be strictly inside the cell's z-range");
  }
  GapRecord rec{cell, fresh, layer, Mask2D{layer, cell, {}}};
  for (std::size_t z = std::size_t(layer); z <= std::size_t(bottom); ++z) {
    for (std::size_t y = 0; y < d.y; ++y) {
      for (std::size_t x = 0; x < d.x; ++x) {
        Label& v = volume.at(z, y, x);
        if (v != cell) continue;
        if (int(z) == layer) {
          v = kBackground;
          rec.deleted.pixels.push_back({int(y), int(x)});
        } else {
          v = fresh;
        }
      }
    }
  }
  return rec;
}

/// Inject `count` gaps into distinct eligible cells, choosing cells and
/// interior layers uniformly with the seeded generator. Fresh labels start
/// above the current maximum label.
inline std::vector<GapRecord> inject_random_gaps(LabelVolume& volume, std::size_t count,
                                                 std::uint64_t seed, int min_height = 4) {
  const CellIndex index = build_cell_index(volume);
  std::vector<Label> eligible;
  for (const auto& [label, rec] : index) {
    if (rec.height() >= min_height && rec.holes().empty()) eligible.push_back(label);
  }
  if (eligible.empty()) throw InvalidArgument("no cells eligible for gap injection");
  Rng rng(seed);
  rng.shuffle(eligible);
  if (count > eligible.size()) count = eligible.size();
  Label next = volume.max_label() + 1;
  std::vector<GapRecord> out;
  for (std::size_t k = 0; k < count; ++k) {
    const CellRecord& rec = index.at(eligible[k]);
    const int interior = rec.height() - 2;
    const int layer = rec.top_layer + 1 + int(rng.below(std::uint64_t(interior)));
    out.push_back(inject_axis_gap(volume, rec.label, layer, next++));
  }
  return out;
}

/// Relabel the part of `cell` on the positive side of `plane` to `fresh`.
inline void inject_tilted_split(LabelVolume& volume, Label cell, const Plane3& plane, Label fresh) {
  const Dims d = volume.dims();
  const Anisotropy a = volume.anisotropy();
  std::size_t pos = 0, neg = 0;
  std::vector<std::size_t> flip;
  for (std::size_t z = 0; z < d.z; ++z) {
    for (std::size_t y = 0; y < d.y; ++y) {
      for (std::size_t x = 0; x < d.x; ++x) {
        if (volume.at(z, y, x) != cell) continue;
        const double s = (physical(a, double(z), double(y), double(x)) - plane.point).dot(plane.normal);
        if (s > 0.0) {
          ++pos;
          flip.push_back(volume.offset(z, y, x));
        } else {
          ++neg;
        }
      }
    }
  }
  if (pos == 0 || neg == 0) throw InvalidArgument("split plane does not intersect the cell");
  for (std::size_t o : flip) volume.data()[o] = fresh;
}

/// Solid ellipsoid with semi-axes (rz, ry, rx) in physical units.
inline void paint_ellipsoid(LabelVolume& volume, const Vec3& centre, const Vec3& radii, Label label) {
  const Dims d = volume.dims();
  const Anisotropy a = volume.anisotropy();
  for (std::size_t z = 0; z < d.z; ++z) {
    for (std::size_t y = 0; y < d.y; ++y) {
      for (std::size_t x = 0; x < d.x; ++x) {
        const Vec3 p = physical(a, double(z), double(y), double(x)) - centre;
        if ((p.array() / radii.array()).square().sum() <= 1.0) volume.at(z, y, x) = label;
      }
    }
  }
}

inline LabelVolume sphere_phantom(const Dims& dims, const Anisotropy& a, const Vec3& centre,
                                  double radius, Label label = 1) {
  LabelVolume v(dims, a);
  paint_ellipsoid(v, centre, Vec3::Constant(radius), label);
  return v;
}

/// Two equal spheres whose centres are `separation` apart along `axis`; voxels
/// inside both go to the nearer centre, which leaves a small flat contact disc.
inline LabelVolume touching_spheres_phantom(const Dims& dims, const Anisotropy& a,
                                            const Vec3& midpoint, const Vec3& axis, double radius,
                                            double separation) {
  LabelVolume v(dims, a);
  const Vec3 n = axis.normalized();
  const Vec3 ca = midpoint - 0.5 * separation * n;
  const Vec3 cb = midpoint + 0.5 * separation * n;
  for (std::size_t z = 0; z < dims.z; ++z) {
    for (std::size_t y = 0; y < dims.y; ++y) {
      for (std::size_t x = 0; x < dims.x; ++x) {
        const Vec3 p = physical(a, double(z), double(y), double(x));
        const double da = (p - ca).norm(), db = (p - cb).norm();
        if (da <= radius && da <= db) {
          v.at(z, y, x) = 1;
        } else if (db <= radius) {
          v.at(z, y, x) = 2;
        }
      }
    }
  }
  return v;
}

/// Seeded tilted-split case: one ellipsoid (semi-axes 8..14) in a 40^3
/// isotropic volume, cut by a random plane near its centre into labels 1, 2.
inline LabelVolume split_ellipsoid_case(std::uint64_t seed) {
  Rng rng(seed);
  const Vec3 c(20, 20, 20);
  LabelVolume v(Dims{40, 40, 40}, Anisotropy{1, 1, 1});
  const Vec3 radii(rng.uniform(8, 14), rng.uniform(8, 14), rng.uniform(8, 14));
  paint_ellipsoid(v, c, radii, 1);
  const Vec3 n = Vec3(rng.normal(), rng.normal(), rng.normal()).normalized();
  inject_tilted_split(v, 1, Plane3{c + rng.uniform(-2, 2) * n, n}, 2);
  return v;
}

/// Seeded natural-contact case: two spheres of radius 7..10 along a random
/// axis, overlapping by one unit so they share a small flat disc.
inline LabelVolume tangent_spheres_case(std::uint64_t seed) {
  Rng rng(seed);
  const Vec3 axis(rng.normal(), rng.normal(), rng.normal());
  const double r = rng.uniform(7, 10);
  return touching_spheres_phantom({40, 40, 40}, {1, 1, 1}, Vec3(20, 20, 20), axis, r, 2 * r - 1);
}

}  // namespace testkit
}  // namespace ovseg
