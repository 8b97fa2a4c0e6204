#pragma once

#include <Eigen/Dense>
#include <cmath>

#include "resodyn/common.hpp"

namespace resodyn {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

// A point on the flat d-torus. Coordinates always live in [0,1); the metric
// is the minimum over integer lattice translates of the Euclidean distance,
// which on the flat torus factorizes per coordinate.
struct TorusPoint {
  Vec coords;

  TorusPoint() = default;
  explicit TorusPoint(Vec c) : coords(std::move(c)) { reduce(); }
  TorusPoint(double x, double y) : coords(2) {
    coords << x, y;
    reduce();
  }

  int dim() const { return static_cast<int>(coords.size()); }

  void reduce() {
    for (int i = 0; i < coords.size(); ++i) {
      double v = coords[i] - std::floor(coords[i]);
      if (v >= 1.0) v = 0.0;  // guard against floor rounding at 1-ulp below 1
      coords[i] = v;
    }
  }
};

inline double wrap_coord(double v) {
  double w = v - std::floor(v);
  return w >= 1.0 ? 0.0 : w;
}

// Componentwise representative of (a - b) in [-1/2, 1/2): the displacement
// from b to a in the chart centered at b.
inline Vec torus_diff(const Vec& a, const Vec& b) {
  Vec d = a - b;
  for (int i = 0; i < d.size(); ++i) {
    d[i] -= std::round(d[i]);
    if (d[i] == 0.5) d[i] = -0.5;
  }
  return d;
}

inline Vec torus_diff(const TorusPoint& a, const TorusPoint& b) {
  return torus_diff(a.coords, b.coords);
}

inline double torus_distance(const TorusPoint& a, const TorusPoint& b) {
  return torus_diff(a, b).norm();
}

inline TorusPoint torus_translate(const TorusPoint& base, const Vec& displacement) {
  return TorusPoint(Vec(base.coords + displacement));
}

// Largest possible distance on the unit d-torus: sqrt(d)/2.
inline double torus_diameter(int dim) { return 0.5 * std::sqrt(static_cast<double>(dim)); }

}  // namespace resodyn
