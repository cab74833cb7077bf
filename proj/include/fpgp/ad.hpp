#pragma once

// Tape-based reverse-mode differentiation for the filtering objective.
// The numeric pipeline is templated on its scalar type; instantiating it
// with Rev records one node per arithmetic operation, and a single reverse
// sweep yields the gradient with cost independent of the parameter count.

#include <cmath>
#include <cstdint>
#include <vector>

#include <Eigen/Core>

namespace fpgp::ad {

struct Tape {
  // Local partials are evaluated at record time, so the sweep only needs
  // parent indices and weights.
  struct Node {
    int32_t a;
    int32_t b;
    double wa;
    double wb;
  };

  std::vector<Node> nodes;

  int32_t leaf() {
    nodes.push_back({-1, -1, 0.0, 0.0});
    return static_cast<int32_t>(nodes.size()) - 1;
  }

  int32_t unary(int32_t a, double wa) {
    nodes.push_back({a, -1, wa, 0.0});
    return static_cast<int32_t>(nodes.size()) - 1;
  }

  int32_t binary(int32_t a, int32_t b, double wa, double wb) {
    nodes.push_back({a, b, wa, wb});
    return static_cast<int32_t>(nodes.size()) - 1;
  }

  void clear() { nodes.clear(); }
  size_t size() const { return nodes.size(); }

  // Adjoints of every node given unit adjoint on `seed`.
  std::vector<double> backward(int32_t seed) const {
    std::vector<double> adj(nodes.size(), 0.0);
    if (seed < 0) return adj;
    adj[seed] = 1.0;
    for (int32_t i = seed; i >= 0; --i) {
      const double g = adj[i];
      if (g == 0.0) continue;
      const Node& n = nodes[i];
      if (n.a >= 0) adj[n.a] += n.wa * g;
      if (n.b >= 0) adj[n.b] += n.wb * g;
    }
    return adj;
  }
};

Tape*& active_tape();

// Differentiable scalar. Operations involving at least one taped operand
// push nodes onto the active tape; pure constants stay off the tape.
struct Rev {
  double v = 0.0;
  int32_t idx = -1;

  Rev() = default;
  Rev(double value) : v(value), idx(-1) {}  // NOLINT: implicit by design
  Rev(double value, int32_t i) : v(value), idx(i) {}

  static Rev input(double value) {
    return Rev(value, active_tape()->leaf());
  }

  double value() const { return v; }
};

inline Rev make_unary(double v, const Rev& a, double wa) {
  if (a.idx < 0) return Rev(v);
  return Rev(v, active_tape()->unary(a.idx, wa));
}

inline Rev make_binary(double v, const Rev& a, const Rev& b, double wa, double wb) {
  if (a.idx < 0 && b.idx < 0) return Rev(v);
  if (b.idx < 0) return Rev(v, active_tape()->unary(a.idx, wa));
  if (a.idx < 0) return Rev(v, active_tape()->unary(b.idx, wb));
  return Rev(v, active_tape()->binary(a.idx, b.idx, wa, wb));
}

inline Rev operator+(const Rev& a, const Rev& b) { return make_binary(a.v + b.v, a, b, 1.0, 1.0); }
inline Rev operator-(const Rev& a, const Rev& b) { return make_binary(a.v - b.v, a, b, 1.0, -1.0); }
inline Rev operator*(const Rev& a, const Rev& b) { return make_binary(a.v * b.v, a, b, b.v, a.v); }
inline Rev operator/(const Rev& a, const Rev& b) {
  const double inv = 1.0 / b.v;
  return make_binary(a.v * inv, a, b, inv, -a.v * inv * inv);
}
inline Rev operator-(const Rev& a) { return make_unary(-a.v, a, -1.0); }
inline Rev operator+(const Rev& a) { return a; }

inline Rev& operator+=(Rev& a, const Rev& b) { a = a + b; return a; }
inline Rev& operator-=(Rev& a, const Rev& b) { a = a - b; return a; }
inline Rev& operator*=(Rev& a, const Rev& b) { a = a * b; return a; }
inline Rev& operator/=(Rev& a, const Rev& b) { a = a / b; return a; }

inline bool operator<(const Rev& a, const Rev& b) { return a.v < b.v; }
inline bool operator>(const Rev& a, const Rev& b) { return a.v > b.v; }
inline bool operator<=(const Rev& a, const Rev& b) { return a.v <= b.v; }
inline bool operator>=(const Rev& a, const Rev& b) { return a.v >= b.v; }
inline bool operator==(const Rev& a, const Rev& b) { return a.v == b.v; }
inline bool operator!=(const Rev& a, const Rev& b) { return a.v != b.v; }

inline Rev exp(const Rev& a) {
  const double e = std::exp(a.v);
  return make_unary(e, a, e);
}
inline Rev log(const Rev& a) { return make_unary(std::log(a.v), a, 1.0 / a.v); }
inline Rev sqrt(const Rev& a) {
  const double s = std::sqrt(a.v);
  return make_unary(s, a, 0.5 / s);
}
inline Rev tanh(const Rev& a) {
  const double t = std::tanh(a.v);
  return make_unary(t, a, 1.0 - t * t);
}
inline Rev abs(const Rev& a) { return make_unary(std::abs(a.v), a, a.v < 0.0 ? -1.0 : 1.0); }
inline Rev fabs(const Rev& a) { return abs(a); }

inline Rev max(const Rev& a, const Rev& b) { return a.v >= b.v ? a : b; }
inline Rev min(const Rev& a, const Rev& b) { return a.v <= b.v ? a : b; }

inline bool isfinite(const Rev& a) { return std::isfinite(a.v); }

// Value extraction shared by generic code paths.
inline double to_double(double x) { return x; }
inline double to_double(const Rev& x) { return x.v; }

// ADL hooks so templated code can call these unqualified on double too.
using std::exp;
using std::log;
using std::sqrt;
using std::tanh;
using std::abs;
using std::fabs;
using std::isfinite;

}  // namespace fpgp::ad

namespace Eigen {

template <>
struct NumTraits<fpgp::ad::Rev> {
  using Real = fpgp::ad::Rev;
  using NonInteger = fpgp::ad::Rev;
  using Nested = fpgp::ad::Rev;
  using Literal = double;
  enum {
    IsComplex = 0,
    IsInteger = 0,
    IsSigned = 1,
    RequireInitialization = 1,
    ReadCost = 1,
    AddCost = 3,
    MulCost = 3,
  };
  static inline Real epsilon() { return fpgp::ad::Rev(NumTraits<double>::epsilon()); }
  static inline Real dummy_precision() { return fpgp::ad::Rev(NumTraits<double>::dummy_precision()); }
  static inline Real highest() { return fpgp::ad::Rev(NumTraits<double>::highest()); }
  static inline Real lowest() { return fpgp::ad::Rev(NumTraits<double>::lowest()); }
  static inline int digits10() { return NumTraits<double>::digits10(); }
};

}  // namespace Eigen
