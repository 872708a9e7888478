#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace flowforge {

inline constexpr std::size_t kNumDims = 3;
inline constexpr std::size_t kNodesPerElem = 4;
inline constexpr std::size_t kDofPerElem = kNumDims * kNodesPerElem;
inline constexpr std::size_t kDefaultGauss = 4;

// [dim][node] layout, matching the dimension-major point arrays.
template <class R>
using Mat34 = std::array<std::array<R, kNodesPerElem>, kNumDims>;

template <class R>
using NodeVec = std::array<R, kNodesPerElem>;

struct PhysParams {
  double rho = 1.0;
  double mu = 0.01;
  double dt = 0.05;
  std::array<double, kNumDims> grav{0.0, 0.0, -9.81};
  double c1 = 4.0;
  double c2 = 2.0;
};

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// Structural mesh invariant broken (bad index, repeated node, non-finite value).
class InvalidMeshError : public Error {
 public:
  using Error::Error;
};

// det J at or below the degeneracy floor while assembling an element.
class DegenerateElementError : public Error {
 public:
  DegenerateElementError(std::uint64_t elem_id, double detj)
      : Error("degenerate element " + std::to_string(elem_id) +
              ": det J = " + std::to_string(detj)),
        elem_id(elem_id),
        detj(detj) {}
  std::uint64_t elem_id;
  double detj;
};

// Stream protocol violated (wrong partial group size, out-of-order tags, ...).
class ProtocolError : public Error {
 public:
  using Error::Error;
};

// No global pipeline progress for the configured timeout.
class WatchdogStallError : public Error {
 public:
  explicit WatchdogStallError(std::string diagnosis)
      : Error("pipeline stalled: no global progress within timeout\n" + diagnosis),
        diagnosis(std::move(diagnosis)) {}
  std::string diagnosis;
};

inline void validate(const PhysParams& p) {
  if (!(p.rho > 0.0)) throw ConfigError("rho must be > 0");
  if (!(p.mu >= 0.0)) throw ConfigError("mu must be >= 0");
  if (!(p.dt > 0.0)) throw ConfigError("dt must be > 0");
  if (!(p.c1 > 0.0)) throw ConfigError("c1 must be > 0");
  if (!(p.c2 >= 0.0)) throw ConfigError("c2 must be >= 0");
}

struct ElementInput {
  std::uint64_t elem_id = 0;
  Mat34<double> elvel{};
  Mat34<double> elcod{};
};

template <class R>
struct ElementResultT {
  std::uint64_t elem_id = 0;
  Mat34<R> elrbu{};
  NodeVec<R> eldtrho{};
  NodeVec<R> elmurho{};
};

using ElementResult = ElementResultT<double>;

}  // namespace flowforge
