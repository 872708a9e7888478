#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "flowforge/core.hpp"
#include "flowforge/mesh.hpp"
#include "flowforge/quadrature.hpp"

namespace flowforge {

// Per-element stage kernels. Templated on the scalar so an instrumented
// arithmetic type can be substituted; templated on G so all state stays in
// fixed-size arrays. Floating-point evaluation order in these kernels is
// load-bearing: the staged pipeline replays them element by element and must
// produce bit-identical results to the sequential engine.

template <class R, std::size_t G>
struct CartesianBasis {
  // gpcar[d][n][g]: d shape_n / d x_d at Gauss point g.
  std::array<Mat34<R>, G> gpcar_g{};  // indexed [g][d][n]
  std::array<R, G> gpvol{};
  R detj{};

  const R& gpcar(std::size_t d, std::size_t n, std::size_t g) const { return gpcar_g[g][d][n]; }
  R& gpcar(std::size_t d, std::size_t n, std::size_t g) { return gpcar_g[g][d][n]; }
};

template <class R, std::size_t G>
struct GaussValues {
  std::array<std::array<R, G>, kNumDims> gpvel{};  // gpadv aliases gpvel
  std::array<std::array<std::array<R, G>, kNumDims>, kNumDims> gpgve{};  // [j][i][g]
  std::array<std::array<R, G>, kNumDims> gprhs{};
};

template <class R, std::size_t G>
struct TauTim {
  std::array<R, G> tau{};
  NodeVec<R> eldtrho{};
  NodeVec<R> elmurho{};
};

template <class R, std::size_t G>
struct StabMats {
  std::array<std::array<R, G>, kNodesPerElem> agrau{};                       // [n][g]
  std::array<std::array<std::array<R, G>, kNodesPerElem>, kNodesPerElem> wgrgr{};  // [i][j][g]
};

template <class R>
struct ElementMatrices {
  std::array<std::array<R, kDofPerElem>, kDofPerElem> elauu{};  // [jdof][idof]
  Mat34<R> elrbu{};
  void zero() {
    for (auto& row : elauu) row.fill(R(0.0));
    for (auto& row : elrbu) row.fill(R(0.0));
  }
};

// One Gauss point's contribution from the streamed convective form.
template <class R>
struct ConvectivePartial {
  std::array<std::array<R, kDofPerElem>, kDofPerElem> elauu{};
  Mat34<R> elrbu{};
};

// One Gauss point's viscous contribution, per node pair.
template <class R>
struct ViscousPartial {
  std::array<NodeVec<R>, kNodesPerElem> s{};  // [inode][jnode]
};

inline constexpr double kDegenerateDetFloor = 1e-14;

template <class R, std::size_t G>
CartesianBasis<R, G> cartesian_derivatives(const Mat34<R>& elcod, const Quadrature<G>& quad,
                                           std::uint64_t elem_id = static_cast<std::uint64_t>(-1)) {
  // J[i][k] = x_i(node k+1) - x_i(node 0)
  R j[3][3];
  for (int i = 0; i < 3; ++i)
    for (int k = 0; k < 3; ++k) j[i][k] = elcod[i][k + 1] - elcod[i][0];

  const R c00 = j[1][1] * j[2][2] - j[1][2] * j[2][1];
  const R c01 = j[1][0] * j[2][2] - j[1][2] * j[2][0];
  const R c02 = j[1][0] * j[2][1] - j[1][1] * j[2][0];
  const R detj = j[0][0] * c00 - j[0][1] * c01 + j[0][2] * c02;
  if (static_cast<double>(detj) <= kDegenerateDetFloor)
    throw DegenerateElementError(elem_id, static_cast<double>(detj));

  // invJ[k][d] via cofactors.
  R inv[3][3];
  inv[0][0] = c00 / detj;
  inv[1][0] = (R(0.0) - c01) / detj;
  inv[2][0] = c02 / detj;
  inv[0][1] = (j[0][2] * j[2][1] - j[0][1] * j[2][2]) / detj;
  inv[1][1] = (j[0][0] * j[2][2] - j[0][2] * j[2][0]) / detj;
  inv[2][1] = (j[0][1] * j[2][0] - j[0][0] * j[2][1]) / detj;
  inv[0][2] = (j[0][1] * j[1][2] - j[0][2] * j[1][1]) / detj;
  inv[1][2] = (j[0][2] * j[1][0] - j[0][0] * j[1][2]) / detj;
  inv[2][2] = (j[0][0] * j[1][1] - j[0][1] * j[1][0]) / detj;

  CartesianBasis<R, G> out;
  out.detj = detj;
  // P1 gradients are constant; stored per Gauss point to keep the streamed
  // layout of the downstream stages.
  Mat34<R> grad{};
  for (std::size_t d = 0; d < kNumDims; ++d)
    for (std::size_t n = 0; n < kNodesPerElem; ++n) {
      R acc = R(0.0);
      for (std::size_t k = 0; k < kNumDims; ++k)
        acc = acc + inv[k][d] * R(quad.refgrad[n][k]);
      grad[d][n] = acc;
    }
  for (std::size_t g = 0; g < G; ++g) {
    out.gpcar_g[g] = grad;
    out.gpvol[g] = R(quad.weights[g]) * detj;
  }
  return out;
}

template <class R, std::size_t G>
GaussValues<R, G> gauss_point_values(const Mat34<R>& elvel, const CartesianBasis<R, G>& cart,
                                     const Quadrature<G>& quad, const PhysParams& phys) {
  GaussValues<R, G> out;
  for (std::size_t g = 0; g < G; ++g) {
    for (std::size_t d = 0; d < kNumDims; ++d) {
      R acc = R(0.0);
      for (std::size_t n = 0; n < kNodesPerElem; ++n)
        acc = acc + R(quad.shape[n][g]) * elvel[d][n];
      out.gpvel[d][g] = acc;
    }
    for (std::size_t jd = 0; jd < kNumDims; ++jd)
      for (std::size_t id = 0; id < kNumDims; ++id) {
        R acc = R(0.0);
        for (std::size_t n = 0; n < kNodesPerElem; ++n)
          acc = acc + cart.gpcar(jd, n, g) * elvel[id][n];
        out.gpgve[jd][id][g] = acc;
      }
    for (std::size_t d = 0; d < kNumDims; ++d) out.gprhs[d][g] = R(phys.rho) * R(phys.grav[d]);
  }
  return out;
}

template <class R, std::size_t G>
TauTim<R, G> tau_and_tim(const CartesianBasis<R, G>& cart, const GaussValues<R, G>& gauss,
                         const Quadrature<G>& quad, const PhysParams& phys) {
  using std::cbrt;
  using std::sqrt;
  TauTim<R, G> out;
  const R h = cbrt(cart.detj);
  const R rho(phys.rho), mu(phys.mu), dt(phys.dt), c1(phys.c1), c2(phys.c2);
  for (std::size_t g = 0; g < G; ++g) {
    R vnorm2 = R(0.0);
    for (std::size_t d = 0; d < kNumDims; ++d)
      vnorm2 = vnorm2 + gauss.gpvel[d][g] * gauss.gpvel[d][g];
    const R vnorm = sqrt(vnorm2);
    out.tau[g] = R(1.0) / (c1 * mu / (h * h) + c2 * rho * vnorm / h + rho / dt);
  }
  for (std::size_t n = 0; n < kNodesPerElem; ++n) {
    R dacc = R(0.0), macc = R(0.0);
    for (std::size_t g = 0; g < G; ++g) {
      dacc = dacc + cart.gpvol[g] * R(quad.shape[n][g]) * rho / dt;
      macc = macc + cart.gpvol[g] * R(quad.shape[n][g]) * mu;
    }
    out.eldtrho[n] = dacc;
    out.elmurho[n] = macc;
  }
  return out;
}

template <class R, std::size_t G>
StabMats<R, G> element_matrices(const CartesianBasis<R, G>& cart, const GaussValues<R, G>& gauss,
                                const PhysParams& phys) {
  StabMats<R, G> out;
  const R rho(phys.rho);
  for (std::size_t g = 0; g < G; ++g) {
    for (std::size_t n = 0; n < kNodesPerElem; ++n) {
      R acc = R(0.0);
      for (std::size_t d = 0; d < kNumDims; ++d)
        acc = acc + gauss.gpvel[d][g] * cart.gpcar(d, n, g);
      out.agrau[n][g] = rho * acc;
    }
    for (std::size_t i = 0; i < kNodesPerElem; ++i)
      for (std::size_t jn = 0; jn < kNodesPerElem; ++jn) {
        R acc = R(0.0);
        for (std::size_t d = 0; d < kNumDims; ++d)
          acc = acc + cart.gpcar(d, i, g) * cart.gpcar(d, jn, g);
        out.wgrgr[i][jn][g] = acc;
      }
  }
  return out;
}

// Accumulating convective form: every (g, inode, idime, jnode, jdime) writes
// straight into elauu, with a second same-entry update on the diagonal-dof
// pass. Read-after-write on elauu within the Gauss loop is what caps II.
template <class R, std::size_t G>
void convective_accumulate(const CartesianBasis<R, G>& cart, const GaussValues<R, G>& gauss,
                           const TauTim<R, G>& tt, const StabMats<R, G>& stab,
                           const Quadrature<G>& quad, const PhysParams& phys,
                           ElementMatrices<R>& out) {
  const R rho(phys.rho);
  for (std::size_t g = 0; g < G; ++g)
    for (std::size_t inode = 0; inode < kNodesPerElem; ++inode)
      for (std::size_t idime = 0; idime < kNumDims; ++idime) {
        const std::size_t idofv = inode * kNumDims + idime;
        const R w = cart.gpvol[g] * (R(quad.shape[inode][g]) + tt.tau[g] * stab.agrau[inode][g]);
        for (std::size_t jnode = 0; jnode < kNodesPerElem; ++jnode) {
          const std::size_t special = jnode * kNumDims + idime;
          for (std::size_t jdime = 0; jdime < kNumDims; ++jdime) {
            const std::size_t jdofv = jnode * kNumDims + jdime;
            const R c0 = cart.gpvol[g] * tt.tau[g] * stab.agrau[inode][g] * rho *
                         gauss.gpgve[jdime][idime][g] * R(quad.shape[jnode][g]);
            out.elauu[jdofv][idofv] = out.elauu[jdofv][idofv] + c0;
            if (jdofv == special)
              out.elauu[jdofv][idofv] = out.elauu[jdofv][idofv] + w * stab.agrau[jnode][g];
          }
        }
        out.elrbu[idime][inode] = out.elrbu[idime][inode] + w * gauss.gprhs[idime][g];
      }
}

// Streamed convective form: each Gauss point yields an independent partial
// (each entry written once, the diagonal-dof term folded into the same
// expression), so the Gauss loop carries no elauu dependency.
template <class R, std::size_t G>
ConvectivePartial<R> convective_partial(std::size_t g, const CartesianBasis<R, G>& cart,
                                        const GaussValues<R, G>& gauss, const TauTim<R, G>& tt,
                                        const StabMats<R, G>& stab, const Quadrature<G>& quad,
                                        const PhysParams& phys) {
  ConvectivePartial<R> out;
  const R rho(phys.rho);
  for (std::size_t inode = 0; inode < kNodesPerElem; ++inode)
    for (std::size_t idime = 0; idime < kNumDims; ++idime) {
      const std::size_t idofv = inode * kNumDims + idime;
      const R w = cart.gpvol[g] * (R(quad.shape[inode][g]) + tt.tau[g] * stab.agrau[inode][g]);
      for (std::size_t jnode = 0; jnode < kNodesPerElem; ++jnode) {
        const std::size_t special = jnode * kNumDims + idime;
        for (std::size_t jdime = 0; jdime < kNumDims; ++jdime) {
          const std::size_t jdofv = jnode * kNumDims + jdime;
          const R c0 = cart.gpvol[g] * tt.tau[g] * stab.agrau[inode][g] * rho *
                       gauss.gpgve[jdime][idime][g] * R(quad.shape[jnode][g]);
          out.elauu[jdofv][idofv] =
              (jdofv == special) ? c0 + w * stab.agrau[jnode][g] : c0;
        }
      }
      out.elrbu[idime][inode] = w * gauss.gprhs[idime][g];
    }
  return out;
}

// Left-fold of one partial into the running totals; ascending-g application
// of these is the canonical summation order shared by engine and pipeline.
template <class R>
void add_convective_partial(ElementMatrices<R>& acc, const ConvectivePartial<R>& p) {
  for (std::size_t j = 0; j < kDofPerElem; ++j)
    for (std::size_t i = 0; i < kDofPerElem; ++i)
      acc.elauu[j][i] = acc.elauu[j][i] + p.elauu[j][i];
  for (std::size_t d = 0; d < kNumDims; ++d)
    for (std::size_t n = 0; n < kNodesPerElem; ++n)
      acc.elrbu[d][n] = acc.elrbu[d][n] + p.elrbu[d][n];
}

template <class R, std::size_t G>
ViscousPartial<R> viscous_partial(std::size_t g, const CartesianBasis<R, G>& cart,
                                  const StabMats<R, G>& stab, const PhysParams& phys) {
  ViscousPartial<R> out;
  const R mu(phys.mu);
  for (std::size_t i = 0; i < kNodesPerElem; ++i)
    for (std::size_t jn = 0; jn < kNodesPerElem; ++jn)
      out.s[i][jn] = cart.gpvol[g] * mu * stab.wgrgr[i][jn][g];
  return out;
}

template <class R>
void add_viscous_partial(std::array<NodeVec<R>, kNodesPerElem>& acc, const ViscousPartial<R>& p) {
  for (std::size_t i = 0; i < kNodesPerElem; ++i)
    for (std::size_t jn = 0; jn < kNodesPerElem; ++jn) acc[i][jn] = acc[i][jn] + p.s[i][jn];
}

// Adds the summed viscous block to elauu's diagonal-dof entries, then
// contracts elauu with the element velocities so only elrbu leaves the
// engine. One add and one subtract per touched entry.
template <class R>
void viscous_apply(ElementMatrices<R>& m, const std::array<NodeVec<R>, kNodesPerElem>& s,
                   const Mat34<R>& elvel) {
  for (std::size_t inode = 0; inode < kNodesPerElem; ++inode)
    for (std::size_t jnode = 0; jnode < kNodesPerElem; ++jnode)
      for (std::size_t idime = 0; idime < kNumDims; ++idime) {
        const std::size_t idofv = inode * kNumDims + idime;
        const std::size_t jdofv = jnode * kNumDims + idime;
        m.elauu[jdofv][idofv] = m.elauu[jdofv][idofv] + s[inode][jnode];
      }
  for (std::size_t idime = 0; idime < kNumDims; ++idime)
    for (std::size_t inode = 0; inode < kNodesPerElem; ++inode) {
      const std::size_t idofv = inode * kNumDims + idime;
      R acc = R(0.0);
      for (std::size_t jnode = 0; jnode < kNodesPerElem; ++jnode)
        for (std::size_t jdime = 0; jdime < kNumDims; ++jdime)
          acc = acc + m.elauu[jnode * kNumDims + jdime][idofv] * elvel[jdime][jnode];
      m.elrbu[idime][inode] = m.elrbu[idime][inode] - acc;
    }
}

template <class R, std::size_t G>
void viscous_term(ElementMatrices<R>& m, const CartesianBasis<R, G>& cart,
                  const StabMats<R, G>& stab, const Mat34<R>& elvel, const PhysParams& phys) {
  std::array<NodeVec<R>, kNodesPerElem> s{};
  for (auto& row : s) row.fill(R(0.0));
  for (std::size_t g = 0; g < G; ++g) add_viscous_partial(s, viscous_partial(g, cart, stab, phys));
  viscous_apply(m, s, elvel);
}

template <class R, std::size_t G>
ElementResultT<R> assemble_element(std::uint64_t elem_id, const Mat34<R>& elvel,
                                   const Mat34<R>& elcod, const PhysParams& phys,
                                   const Quadrature<G>& quad) {
  const auto cart = cartesian_derivatives<R, G>(elcod, quad, elem_id);
  const auto gauss = gauss_point_values<R, G>(elvel, cart, quad, phys);
  const auto tt = tau_and_tim<R, G>(cart, gauss, quad, phys);
  const auto stab = element_matrices<R, G>(cart, gauss, phys);

  ElementMatrices<R> m;
  m.zero();
  for (std::size_t g = 0; g < G; ++g)
    add_convective_partial(m, convective_partial<R, G>(g, cart, gauss, tt, stab, quad, phys));
  viscous_term<R, G>(m, cart, stab, elvel, phys);

  ElementResultT<R> r;
  r.elem_id = elem_id;
  r.elrbu = m.elrbu;
  r.eldtrho = tt.eldtrho;
  r.elmurho = tt.elmurho;
  return r;
}

template <std::size_t G>
inline ElementResult assemble_element(const ElementInput& in, const PhysParams& phys,
                                      const Quadrature<G>& quad) {
  return assemble_element<double, G>(in.elem_id, in.elvel, in.elcod, phys, quad);
}

// The sequential oracle: gather, the per-element stage chain, scatter-add in
// ascending element order.
template <std::size_t G = kDefaultGauss>
GlobalOutputs assemble_all(const Mesh& mesh, const PhysParams& phys,
                           const Quadrature<G>& quad = quadrature<G>()) {
  GlobalOutputs out(mesh.num_points);
  for (std::uint64_t e = 0; e < mesh.num_elements; ++e) {
    const ElementInput in = gather_element(mesh, e);
    const ElementResult r = assemble_element<G>(in, phys, quad);
    scatter_add(out, mesh, r);
  }
  return out;
}

}  // namespace flowforge
