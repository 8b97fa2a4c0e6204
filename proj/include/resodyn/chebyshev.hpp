#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "resodyn/common.hpp"

namespace resodyn {

// Polynomial interpolant on Chebyshev-Lobatto nodes over [lo, hi], with
// barycentric evaluation, exact derivative interpolation, and a certified
// sup bound on the derivative from the Chebyshev coefficient tail.
class ChebInterp {
 public:
  ChebInterp() = default;
  ChebInterp(double lo, double hi, std::vector<double> values)
      : lo_(lo), hi_(hi), values_(std::move(values)) {
    n_ = static_cast<int>(values_.size()) - 1;
  }

  static std::vector<double> nodes(double lo, double hi, int degree) {
    std::vector<double> xs(static_cast<size_t>(degree) + 1);
    double c = 0.5 * (lo + hi), h = 0.5 * (hi - lo);
    for (int j = 0; j <= degree; ++j)
      xs[static_cast<size_t>(j)] = c + h * std::cos(M_PI * j / degree);
    return xs;
  }

  static ChebInterp sample(double lo, double hi, int degree,
                           const std::function<double(double)>& f) {
    auto xs = nodes(lo, hi, degree);
    std::vector<double> vals(xs.size());
    for (size_t j = 0; j < xs.size(); ++j) vals[j] = f(xs[j]);
    return ChebInterp(lo, hi, std::move(vals));
  }

  double lo() const { return lo_; }
  double hi() const { return hi_; }
  int degree() const { return n_; }
  const std::vector<double>& values() const { return values_; }
  std::vector<double> grid() const { return nodes(lo_, hi_, n_); }

  double eval(double x) const { return bary(x, values_); }

  // Derivative values at the nodes via the spectral differentiation matrix;
  // interpolating them reproduces p' exactly (degree n-1 <= n).
  const std::vector<double>& deriv_values() const {
    if (deriv_.empty()) build_deriv();
    return deriv_;
  }
  double deriv(double x) const {
    if (deriv_.empty()) build_deriv();
    return bary(x, deriv_);
  }

  // Chebyshev coefficients c_k of p on the scaled domain (type-I DCT).
  std::vector<double> coefficients() const {
    std::vector<double> c(static_cast<size_t>(n_) + 1, 0.0);
    if (n_ == 0) {
      c[0] = values_[0];
      return c;
    }
    for (int k = 0; k <= n_; ++k) {
      double acc = 0.0;
      for (int j = 0; j <= n_; ++j) {
        double w = (j == 0 || j == n_) ? 0.5 : 1.0;
        acc += w * values_[static_cast<size_t>(j)] * std::cos(M_PI * j * k / n_);
      }
      c[static_cast<size_t>(k)] = (2.0 / n_) * acc * ((k == 0 || k == n_) ? 0.5 : 1.0);
    }
    return c;
  }

  // Certified sup_{[lo,hi]} |p'| <= sum_k k^2 |c_k| / h  (|T_k'| <= k^2).
  double deriv_sup_bound() const {
    auto c = coefficients();
    double h = 0.5 * (hi_ - lo_);
    double bound = 0.0;
    for (size_t k = 1; k < c.size(); ++k)
      bound += static_cast<double>(k) * static_cast<double>(k) * std::abs(c[k]);
    return h > 0 ? bound / h : 0.0;
  }

  // Arc-length style integral of a smooth functional of (x, p(x), p'(x))
  // over [a, b] by composite Gauss-Legendre quadrature.
  double integrate(double a, double b, const std::function<double(double, double, double)>& f,
                   int panels = 8) const {
    static const double gx[4] = {-0.8611363115940526, -0.3399810435848563, 0.3399810435848563,
                                 0.8611363115940526};
    static const double gw[4] = {0.3478548451374538, 0.6521451548625461, 0.6521451548625461,
                                 0.3478548451374538};
    double total = 0.0;
    double sign = 1.0;
    if (b < a) {
      std::swap(a, b);
      sign = -1.0;
    }
    for (int p = 0; p < panels; ++p) {
      double pa = a + (b - a) * p / panels, pb = a + (b - a) * (p + 1) / panels;
      double mid = 0.5 * (pa + pb), half = 0.5 * (pb - pa);
      for (int q = 0; q < 4; ++q) {
        double x = mid + half * gx[q];
        total += half * gw[q] * f(x, eval(x), deriv(x));
      }
    }
    return sign * total;
  }

 private:
  double bary(double x, const std::vector<double>& vals) const {
    if (n_ == 0) return vals[0];
    auto xs = grid();
    double num = 0.0, den = 0.0;
    double sgn = 1.0;
    for (int j = 0; j <= n_; ++j) {
      double w = sgn * ((j == 0 || j == n_) ? 0.5 : 1.0);
      sgn = -sgn;
      double dx = x - xs[static_cast<size_t>(j)];
      if (std::abs(dx) < 1e-300) return vals[static_cast<size_t>(j)];
      double t = w / dx;
      num += t * vals[static_cast<size_t>(j)];
      den += t;
    }
    return num / den;
  }

  void build_deriv() const {
    deriv_.assign(static_cast<size_t>(n_) + 1, 0.0);
    if (n_ == 0) return;
    auto xs = grid();
    // Lobatto differentiation matrix rows applied to the values
    auto cw = [this](int j) { return (j == 0 || j == n_) ? 2.0 : 1.0; };
    for (int i = 0; i <= n_; ++i) {
      double row_sum = 0.0, acc = 0.0;
      for (int j = 0; j <= n_; ++j) {
        if (i == j) continue;
        double dij = (cw(i) / cw(j)) * (((i + j) % 2 == 0) ? 1.0 : -1.0) /
                     (xs[static_cast<size_t>(i)] - xs[static_cast<size_t>(j)]);
        acc += dij * values_[static_cast<size_t>(j)];
        row_sum += dij;
      }
      // negative-sum trick for the diagonal
      acc += -row_sum * values_[static_cast<size_t>(i)];
      deriv_[static_cast<size_t>(i)] = acc;
    }
  }

  double lo_ = -1.0, hi_ = 1.0;
  int n_ = 0;
  std::vector<double> values_;
  mutable std::vector<double> deriv_;
};

}  // namespace resodyn
