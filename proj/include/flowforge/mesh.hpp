#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "flowforge/core.hpp"

namespace flowforge {

// Unstructured tetrahedral mesh. Element-major connectivity, dimension-major
// point arrays. Instances are immutable after construction by convention.
struct Mesh {
  std::uint64_t num_elements = 0;
  std::uint64_t num_points = 0;
  std::vector<std::array<std::uint32_t, kNodesPerElem>> lnods;
  std::array<std::vector<double>, kNumDims> coord;
  std::array<std::vector<double>, kNumDims> veloc;
};

template <class R>
struct GlobalOutputsT {
  std::array<std::vector<R>, kNumDims> rhsid;
  std::vector<R> dt_rho_nsi;
  std::vector<R> mass_rho_nsi;

  GlobalOutputsT() = default;
  explicit GlobalOutputsT(std::uint64_t num_points) { resize(num_points); }
  void resize(std::uint64_t num_points) {
    for (auto& r : rhsid) r.assign(num_points, R(0.0));
    dt_rho_nsi.assign(num_points, R(0.0));
    mass_rho_nsi.assign(num_points, R(0.0));
  }
  std::uint64_t num_points() const { return dt_rho_nsi.size(); }
};

using GlobalOutputs = GlobalOutputsT<double>;

struct MeshPreset {
  const char* name;
  std::uint64_t elements;
  std::uint64_t points;
};

inline constexpr std::array<MeshPreset, 6> kMeshPresets{{
    {"cylinder2d", 1200, 1280},
    {"venturi2d", 4200, 4371},
    {"elbow", 26410, 5682},
    {"sphere100k", 100000, 15768},
    {"sphere16m", 16677400, 2876880},
    {"sphere32m", 32677400, 5753760},
}};

inline const MeshPreset* find_preset(const std::string& name) {
  for (const auto& p : kMeshPresets)
    if (name == p.name) return &p;
  return nullptr;
}

template <class R>
inline void gather_into(const Mesh& mesh, std::uint64_t e, Mat34<R>& elvel, Mat34<R>& elcod) {
  for (std::size_t i = 0; i < kNodesPerElem; ++i) {
    const std::uint32_t p = mesh.lnods[e][i];
    for (std::size_t j = 0; j < kNumDims; ++j) {
      elvel[j][i] = R(mesh.veloc[j][p]);
      elcod[j][i] = R(mesh.coord[j][p]);
    }
  }
}

inline ElementInput gather_element(const Mesh& mesh, std::uint64_t e) {
  ElementInput in;
  in.elem_id = e;
  gather_into(mesh, e, in.elvel, in.elcod);
  return in;
}

// 12 + 4 + 4 additions per element; nothing else touches the accumulators.
template <class R>
inline void scatter_add(GlobalOutputsT<R>& out, const Mesh& mesh, const ElementResultT<R>& r) {
  for (std::size_t i = 0; i < kNodesPerElem; ++i) {
    const std::uint32_t p = mesh.lnods[r.elem_id][i];
    for (std::size_t j = 0; j < kNumDims; ++j) out.rhsid[j][p] = out.rhsid[j][p] + r.elrbu[j][i];
    out.dt_rho_nsi[p] = out.dt_rho_nsi[p] + r.eldtrho[i];
    out.mass_rho_nsi[p] = out.mass_rho_nsi[p] + r.elmurho[i];
  }
}

inline double element_det_j(const Mesh& mesh, std::uint64_t e) {
  double j[3][3];
  const auto& n = mesh.lnods[e];
  for (int i = 0; i < 3; ++i)
    for (int k = 0; k < 3; ++k) j[i][k] = mesh.coord[i][n[k + 1]] - mesh.coord[i][n[0]];
  return j[0][0] * (j[1][1] * j[2][2] - j[1][2] * j[2][1]) -
         j[0][1] * (j[1][0] * j[2][2] - j[1][2] * j[2][0]) +
         j[0][2] * (j[1][0] * j[2][1] - j[1][1] * j[2][0]);
}

// Structural invariants: sizes, index range, node distinctness, finite values.
// Positive element volume is enforced by the generator and re-checked during
// assembly (DegenerateElementError), not here; see load_mesh notes.
inline void validate_mesh(const Mesh& mesh) {
  if (mesh.num_elements < 1) throw InvalidMeshError("mesh has no elements");
  if (mesh.num_points < kNodesPerElem) throw InvalidMeshError("mesh has fewer than 4 points");
  if (mesh.lnods.size() != mesh.num_elements) throw InvalidMeshError("lnods size mismatch");
  for (std::size_t d = 0; d < kNumDims; ++d) {
    if (mesh.coord[d].size() != mesh.num_points || mesh.veloc[d].size() != mesh.num_points)
      throw InvalidMeshError("point array size mismatch");
    for (double v : mesh.coord[d])
      if (!std::isfinite(v)) throw InvalidMeshError("non-finite coordinate");
    for (double v : mesh.veloc[d])
      if (!std::isfinite(v)) throw InvalidMeshError("non-finite velocity");
  }
  for (std::uint64_t e = 0; e < mesh.num_elements; ++e) {
    const auto& n = mesh.lnods[e];
    for (int i = 0; i < 4; ++i) {
      if (n[i] >= mesh.num_points)
        throw InvalidMeshError("lnods entry out of range in element " + std::to_string(e));
      for (int k = i + 1; k < 4; ++k)
        if (n[i] == n[k])
          throw InvalidMeshError("repeated node in element " + std::to_string(e));
    }
  }
}

namespace detail {

inline double rng_unit(std::mt19937_64& eng) {
  return static_cast<double>(eng() >> 11) * 0x1.0p-53;
}

inline std::array<double, kNumDims> velocity_field(double x, double y, double z) {
  return {std::sin(x) * std::cos(y), z * z, x * y};
}

// The 6 Kuhn tetrahedra of the unit cell along the (0,0,0)-(1,1,1) diagonal,
// plus the 6 of the x-reflected diagonal. Corners are bit-coded (x|y<<1|z<<2).
// Node order is arranged so every tet has positive volume on the unjittered grid.
inline const std::array<std::array<int, 4>, 12>& cell_tet_table() {
  static const std::array<std::array<int, 4>, 12> table = [] {
    std::array<std::array<int, 4>, 12> t{};
    constexpr int perms[6][3] = {{0, 1, 2}, {0, 2, 1}, {1, 0, 2}, {1, 2, 0}, {2, 0, 1}, {2, 1, 0}};
    constexpr int signs[6] = {+1, -1, -1, +1, +1, -1};
    for (int p = 0; p < 6; ++p) {
      const int a = 1 << perms[p][0];
      const int b = a | (1 << perms[p][1]);
      std::array<int, 4> tet{0, a, b, 7};
      if (signs[p] < 0) std::swap(tet[2], tet[3]);
      t[p] = tet;
      // Reflect x: corner c -> c ^ 1. Reflection flips orientation.
      std::array<int, 4> ref{tet[0] ^ 1, tet[1] ^ 1, tet[2] ^ 1, tet[3] ^ 1};
      std::swap(ref[2], ref[3]);
      t[p + 6] = ref;
    }
    return t;
  }();
  return table;
}

}  // namespace detail

// Deterministic synthetic mesh: a jittered structured tet grid whose vertex
// ids are scattered through [0, num_points) by a seeded permutation, so the
// gather/scatter access pattern is irregular. Element count may exceed the
// grid's distinct tets, in which case connectivity cycles.
inline Mesh generate_synthetic_mesh(std::uint64_t num_elements, std::uint64_t num_points,
                                    std::uint64_t seed) {
  if (num_points < kNodesPerElem)
    throw ConfigError("no valid connectivity exists for num_points < 4");
  if (num_elements < 1) throw ConfigError("num_elements must be >= 1");

  Mesh mesh;
  mesh.num_elements = num_elements;
  mesh.num_points = num_points;
  mesh.lnods.resize(num_elements);
  for (auto& c : mesh.coord) c.assign(num_points, 0.0);
  for (auto& v : mesh.veloc) v.assign(num_points, 0.0);

  std::mt19937_64 eng_coord(seed * 0x9e3779b97f4a7c15ULL + 1);
  std::mt19937_64 eng_perm(seed * 0x9e3779b97f4a7c15ULL + 2);
  std::mt19937_64 eng_vel(seed * 0x9e3779b97f4a7c15ULL + 3);

  if (num_points < 8) {
    // Too few points for a grid cell: fixed template, identity id mapping.
    static constexpr double tmpl[7][3] = {{0, 0, 0}, {1, 0, 0}, {0, 1, 0}, {0, 0, 1},
                                          {1, 1, 1}, {1, 1, 0}, {1, 0, 1}};
    const std::size_t k = static_cast<std::size_t>(num_points);
    for (std::size_t p = 0; p < k; ++p)
      for (std::size_t d = 0; d < kNumDims; ++d) {
        double c = tmpl[p][d] + (detail::rng_unit(eng_coord) * 2.0 - 1.0) * 0.01;
        mesh.coord[d][p] = std::min(1.0, std::max(0.0, c));
      }
    // Positively oriented 4-subsets of the template points, lexicographic.
    std::vector<std::array<std::uint32_t, 4>> tets;
    for (std::size_t a = 0; a + 3 < k; ++a)
      for (std::size_t b = a + 1; b + 2 < k; ++b)
        for (std::size_t c = b + 1; c + 1 < k; ++c)
          for (std::size_t d = c + 1; d < k; ++d) {
            Mesh probe;
            probe.coord = mesh.coord;
            probe.lnods = {{static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(b),
                            static_cast<std::uint32_t>(c), static_cast<std::uint32_t>(d)}};
            double det = element_det_j(probe, 0);
            auto tet = probe.lnods[0];
            if (det < 0) {
              std::swap(tet[2], tet[3]);
              det = -det;
            }
            if (det > 1e-9) tets.push_back(tet);
          }
    for (std::uint64_t e = 0; e < num_elements; ++e) mesh.lnods[e] = tets[e % tets.size()];
  } else {
    // Largest grid with (m+1)^3 vertices fitting the point budget.
    std::uint64_t m = static_cast<std::uint64_t>(std::cbrt(static_cast<double>(num_points))) + 1;
    while ((m + 1) * (m + 1) * (m + 1) > num_points) --m;
    const std::uint64_t nv = m + 1;
    const std::uint64_t nverts = nv * nv * nv;
    const std::uint64_t ncells = m * m * m;
    const double h = 1.0 / static_cast<double>(m);
    const double jit = 0.02 * h;

    std::vector<std::array<double, 3>> vcoord(nverts);
    std::uint64_t v = 0;
    for (std::uint64_t iz = 0; iz < nv; ++iz)
      for (std::uint64_t iy = 0; iy < nv; ++iy)
        for (std::uint64_t ix = 0; ix < nv; ++ix, ++v) {
          const double base[3] = {ix * h, iy * h, iz * h};
          for (int d = 0; d < 3; ++d) {
            double c = base[d] + (detail::rng_unit(eng_coord) * 2.0 - 1.0) * jit;
            vcoord[v][d] = std::min(1.0, std::max(0.0, c));
          }
        }

    std::vector<std::uint32_t> perm(num_points);
    for (std::uint64_t i = 0; i < num_points; ++i) perm[i] = static_cast<std::uint32_t>(i);
    for (std::uint64_t i = num_points - 1; i > 0; --i) {
      const std::uint64_t j = eng_perm() % (i + 1);
      std::swap(perm[i], perm[j]);
    }

    for (std::uint64_t gv = 0; gv < nverts; ++gv)
      for (int d = 0; d < 3; ++d) mesh.coord[d][perm[gv]] = vcoord[gv][d];
    for (std::uint64_t p = nverts; p < num_points; ++p)
      for (int d = 0; d < 3; ++d) mesh.coord[d][perm[p]] = detail::rng_unit(eng_coord);

    const auto& tets = detail::cell_tet_table();
    for (std::uint64_t e = 0; e < num_elements; ++e) {
      const std::uint64_t round = e / ncells;
      const std::uint64_t cell = e % ncells;
      const std::uint64_t cx = cell % m, cy = (cell / m) % m, cz = cell / (m * m);
      const auto& tet = tets[round % 12];
      for (int i = 0; i < 4; ++i) {
        const std::uint64_t dx = tet[i] & 1, dy = (tet[i] >> 1) & 1, dz = (tet[i] >> 2) & 1;
        const std::uint64_t gv = ((cz + dz) * nv + (cy + dy)) * nv + (cx + dx);
        mesh.lnods[e][i] = perm[gv];
      }
    }
  }

  for (std::uint64_t p = 0; p < num_points; ++p) {
    const auto u = detail::velocity_field(mesh.coord[0][p], mesh.coord[1][p], mesh.coord[2][p]);
    for (std::size_t d = 0; d < kNumDims; ++d)
      mesh.veloc[d][p] = u[d] + (detail::rng_unit(eng_vel) * 2.0 - 1.0) * 1e-3;
  }

  return mesh;
}

}  // namespace flowforge
