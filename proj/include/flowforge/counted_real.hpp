#pragma once

#include <cmath>
#include <cstdint>

namespace flowforge {

// Drop-in scalar that counts arithmetic. Counting rules: +, -, *, /, sqrt
// and cbrt are one operation each; copies, conversions, comparisons and
// sign flips are free.
struct Counted {
  double v = 0.0;

  Counted() = default;
  explicit Counted(double x) : v(x) {}

  static thread_local std::uint64_t ops;
  static void reset() { ops = 0; }

  explicit operator double() const { return v; }

  friend Counted operator+(Counted a, Counted b) { ++ops; return Counted(a.v + b.v); }
  friend Counted operator-(Counted a, Counted b) { ++ops; return Counted(a.v - b.v); }
  friend Counted operator*(Counted a, Counted b) { ++ops; return Counted(a.v * b.v); }
  friend Counted operator/(Counted a, Counted b) { ++ops; return Counted(a.v / b.v); }
  friend Counted operator-(Counted a) { return Counted(-a.v); }

  friend bool operator<(Counted a, Counted b) { return a.v < b.v; }
  friend bool operator>(Counted a, Counted b) { return a.v > b.v; }
  friend bool operator<=(Counted a, Counted b) { return a.v <= b.v; }
  friend bool operator>=(Counted a, Counted b) { return a.v >= b.v; }
  friend bool operator==(Counted a, Counted b) { return a.v == b.v; }

  friend Counted sqrt(Counted a) { ++ops; return Counted(std::sqrt(a.v)); }
  friend Counted cbrt(Counted a) { ++ops; return Counted(std::cbrt(a.v)); }
  friend Counted fabs(Counted a) { return Counted(std::fabs(a.v)); }
};

inline thread_local std::uint64_t Counted::ops = 0;

}  // namespace flowforge
