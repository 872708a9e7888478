#pragma once

#include <array>
#include <cstddef>

#include "flowforge/core.hpp"

namespace flowforge {

// Linear tetrahedron quadrature. G is fixed at compile time; rules are
// provided for G = 1 (centroid) and G = 4 (symmetric interior rule).
template <std::size_t G>
struct Quadrature {
  static constexpr std::size_t num_gauss = G;

  // Reference coordinates (xi, eta, zeta) of each point.
  std::array<std::array<double, kNumDims>, G> points{};
  std::array<double, G> weights{};
  // shape[n][g]: value of shape function n at point g.
  std::array<std::array<double, G>, kNodesPerElem> shape{};
  // refgrad[n][k]: d shape_n / d xi_k, constant over the element.
  std::array<std::array<double, kNumDims>, kNodesPerElem> refgrad{};
};

namespace detail {

template <std::size_t G>
constexpr Quadrature<G> finish_rule(Quadrature<G> q) {
  for (std::size_t g = 0; g < G; ++g) {
    const double x = q.points[g][0];
    const double y = q.points[g][1];
    const double z = q.points[g][2];
    q.shape[0][g] = 1.0 - x - y - z;
    q.shape[1][g] = x;
    q.shape[2][g] = y;
    q.shape[3][g] = z;
  }
  q.refgrad = {{{-1.0, -1.0, -1.0}, {1.0, 0.0, 0.0}, {0.0, 1.0, 0.0}, {0.0, 0.0, 1.0}}};
  return q;
}

}  // namespace detail

template <std::size_t G>
constexpr Quadrature<G> make_quadrature() {
  static_assert(G == 1 || G == 4, "no quadrature rule shipped for this G");
  if constexpr (G == 1) {
    Quadrature<1> q;
    q.points = {{{0.25, 0.25, 0.25}}};
    q.weights = {1.0 / 6.0};
    return detail::finish_rule(q);
  } else {
    // Interior coordinates are permutations of (a, b, b, b); a + 3b = 1.
    constexpr double a = 0.5854101966249685;
    constexpr double b = 0.1381966011250105;
    Quadrature<4> q;
    q.points = {{{b, b, b}, {a, b, b}, {b, a, b}, {b, b, a}}};
    q.weights = {1.0 / 24.0, 1.0 / 24.0, 1.0 / 24.0, 1.0 / 24.0};
    return detail::finish_rule(q);
  }
}

template <std::size_t G>
inline const Quadrature<G>& quadrature() {
  static constexpr Quadrature<G> q = make_quadrature<G>();
  return q;
}

}  // namespace flowforge
