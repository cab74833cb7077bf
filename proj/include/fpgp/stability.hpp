#pragma once
// Stability classification for fixed points of a discrete-time map.
// Eigenvalue magnitudes are compared against 1.

#include <cmath>
#include <complex>
#include <vector>

namespace fpgp {

enum class Stability { Stable, Unstable, Saddle };

inline const char* to_string(Stability s) {
  switch (s) {
    case Stability::Stable: return "stable";
    case Stability::Unstable: return "unstable";
    default: return "saddle";
  }
}

struct StabilityCall {
  Stability cls = Stability::Stable;
  bool marginal = false;   // some |lambda| within 1e-9 of 1
  double max_abs_eig = 0.0;
};

// Magnitudes within 1e-9 of 1 are flagged marginal; those are nudged by
// +1e-12 before the comparison so the call stays deterministic.
inline StabilityCall classify_eigenvalues(
    const std::vector<std::complex<double>>& eigs) {
  StabilityCall out;
  bool any_inside = false;
  bool any_outside = false;
  for (const auto& lambda : eigs) {
    double m = std::abs(lambda);
    out.max_abs_eig = std::max(out.max_abs_eig, m);
    if (std::abs(m - 1.0) <= 1e-9) {
      out.marginal = true;
      m += 1e-12;
    }
    if (m < 1.0) {
      any_inside = true;
    } else {
      any_outside = true;
    }
  }
  if (!any_outside) {
    out.cls = Stability::Stable;
  } else if (!any_inside) {
    out.cls = Stability::Unstable;
  } else {
    out.cls = Stability::Saddle;
  }
  return out;
}

}  // namespace fpgp
