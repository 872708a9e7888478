#pragma once

#include <algorithm>
#include <cfloat>
#include <cmath>
#include <cstring>

#include "flowforge/mesh.hpp"

namespace flowforge {

// Max relative elementwise deviation of `got` against `ref`.
// Denominator floors at 1e-12 * max|ref| so that summation-order noise on
// entries that are tiny relative to the field does not read as huge relative
// error, while arrays that should be zero still flag any nonzero result.
inline double max_rel_deviation(const GlobalOutputs& got, const GlobalOutputs& ref) {
  auto scan = [](const std::vector<double>& a, const std::vector<double>& b, double floor_scale) {
    double dev = 0.0;
    for (std::size_t i = 0; i < b.size(); ++i) {
      const double denom = std::max({std::fabs(b[i]), floor_scale, DBL_MIN});
      dev = std::max(dev, std::fabs(a[i] - b[i]) / denom);
    }
    return dev;
  };
  auto amax = [](const std::vector<double>& v) {
    double m = 0.0;
    for (double x : v) m = std::max(m, std::fabs(x));
    return m;
  };
  double dev = 0.0;
  for (int d = 0; d < 3; ++d)
    dev = std::max(dev, scan(got.rhsid[d], ref.rhsid[d], 1e-12 * amax(ref.rhsid[d])));
  dev = std::max(dev, scan(got.dt_rho_nsi, ref.dt_rho_nsi, 1e-12 * amax(ref.dt_rho_nsi)));
  dev = std::max(dev, scan(got.mass_rho_nsi, ref.mass_rho_nsi, 1e-12 * amax(ref.mass_rho_nsi)));
  return dev;
}

inline bool bit_identical(const GlobalOutputs& a, const GlobalOutputs& b) {
  auto same = [](const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size()) return false;
    for (std::size_t i = 0; i < x.size(); ++i)
      if (std::memcmp(&x[i], &y[i], sizeof(double)) != 0) return false;
    return true;
  };
  for (int d = 0; d < 3; ++d)
    if (!same(a.rhsid[d], b.rhsid[d])) return false;
  return same(a.dt_rho_nsi, b.dt_rho_nsi) && same(a.mass_rho_nsi, b.mass_rho_nsi);
}

}  // namespace flowforge
