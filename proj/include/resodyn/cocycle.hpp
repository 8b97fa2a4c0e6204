#pragma once

#include <Eigen/Dense>
#include <fstream>
#include <vector>

#include "resodyn/splitting.hpp"

namespace resodyn {

// Orbit segment {x, f(x), ..., f^n(x)} with the Jacobians at the first n
// points. Immutable after construction; independent segments may be built
// concurrently.
struct OrbitSegment {
  TorusPoint base;
  long length = 0;
  std::vector<TorusPoint> points;  // n+1
  std::vector<Mat> jacobians;      // n
};

inline OrbitSegment orbit(const DiscreteMap& map, const TorusPoint& x0, long n) {
  if (n > map.orbit_cap) throw precondition_error("orbit: length exceeds orbit cap");
  OrbitSegment seg;
  seg.base = x0;
  seg.length = n;
  seg.points.reserve(static_cast<size_t>(n) + 1);
  seg.jacobians.reserve(static_cast<size_t>(n));
  seg.points.push_back(x0);
  for (long k = 0; k < n; ++k) {
    seg.jacobians.push_back(map.derivative(seg.points.back()));
    seg.points.push_back(map.forward(seg.points.back()));
  }
  return seg;
}

namespace detail {

// One-step restriction of Df to bundle i in frame coordinates: the
// k_i x k_i matrix B_i(f x)^T Df_x B_i(x). Under exact invariance its
// singular values are the restricted norm and co-norm of Df|_{E_i(x)}.
inline Mat restricted_step(const Mat& jac, const Mat& frame_at, const Mat& frame_after) {
  return frame_after.transpose() * (jac * frame_at);
}

struct LogSv {
  double lognorm;
  double logconorm;
};

inline LogSv log_singular_values(const Mat& m) {
  if (m.cols() == 1 && m.rows() == 1) {
    double v = std::abs(m(0, 0));
    if (v < 1e-300) throw solver_error("cocycle: frame collapse (one-step co-norm underflow)");
    return {std::log(v), std::log(v)};
  }
  Eigen::JacobiSVD<Mat> svd(m);
  double hi = svd.singularValues().maxCoeff();
  double lo = svd.singularValues().minCoeff();
  if (lo < 1e-300) throw solver_error("cocycle: frame collapse (one-step co-norm underflow)");
  return {std::log(hi), std::log(lo)};
}

}  // namespace detail

// Per-step restricted norms and co-norms of the derivative cocycle along an
// orbit, one row per bundle, plus running log-sums. All values log-domain.
struct CocycleStats {
  std::vector<int> dims;
  long length = 0;
  // lognorm[i][k] = log ||Df|_{E_i(x_k)}||, logconorm[i][k] = log m(...)
  std::vector<std::vector<double>> lognorm, logconorm;
  // prefix[i][k] = sum of the first k entries; size length+1
  std::vector<std::vector<double>> prefix_lognorm, prefix_logconorm;

  double window_lognorm(int bundle, long from, long steps) const {
    return prefix_lognorm[bundle][from + steps] - prefix_lognorm[bundle][from];
  }
  double window_logconorm(int bundle, long from, long steps) const {
    return prefix_logconorm[bundle][from + steps] - prefix_logconorm[bundle][from];
  }
};

inline CocycleStats cocycle_stats(const OrbitSegment& seg, const Splitting& s) {
  CocycleStats st;
  st.dims = s.dims;
  st.length = seg.length;
  int nb = s.bundles();
  st.lognorm.assign(nb, {});
  st.logconorm.assign(nb, {});
  st.prefix_lognorm.assign(nb, {0.0});
  st.prefix_logconorm.assign(nb, {0.0});
  std::vector<Mat> frames_here(nb), frames_next(nb);
  for (int i = 0; i < nb; ++i) frames_here[i] = s.frame(seg.points[0], i);
  for (long k = 0; k < seg.length; ++k) {
    for (int i = 0; i < nb; ++i) frames_next[i] = s.frame(seg.points[k + 1], i);
    for (int i = 0; i < nb; ++i) {
      auto sv = detail::log_singular_values(
          detail::restricted_step(seg.jacobians[k], frames_here[i], frames_next[i]));
      st.lognorm[i].push_back(sv.lognorm);
      st.logconorm[i].push_back(sv.logconorm);
      st.prefix_lognorm[i].push_back(st.prefix_lognorm[i].back() + sv.lognorm);
      st.prefix_logconorm[i].push_back(st.prefix_logconorm[i].back() + sv.logconorm);
    }
    frames_here.swap(frames_next);
  }
  return st;
}

// j-step restricted norm and co-norm (log domain) of the cocycle product
// over [from, from+steps), computed by multiplying one-step frame-coordinate
// restrictions with running rescaling; never forms Df^n densely.
inline std::pair<double, double> restricted_norms(const OrbitSegment& seg, const Splitting& s,
                                                  int bundle, long from, long steps) {
  if (from < 0 || from + steps > seg.length)
    throw precondition_error("restricted_norms: window outside segment");
  if (steps == 0) return {0.0, 0.0};
  int k = s.dims[static_cast<size_t>(bundle)];
  Mat prod = Mat::Identity(k, k);
  double logscale = 0.0;
  Mat frame_here = s.frame(seg.points[static_cast<size_t>(from)], bundle);
  for (long j = 0; j < steps; ++j) {
    Mat frame_next = s.frame(seg.points[static_cast<size_t>(from + j + 1)], bundle);
    prod = detail::restricted_step(seg.jacobians[static_cast<size_t>(from + j)], frame_here,
                                   frame_next) *
           prod;
    double nrm = prod.norm();
    if (nrm < 1e-300) throw solver_error("restricted_norms: frame collapse");
    if (nrm > 1e150 || nrm < 1e-150) {
      prod /= nrm;
      logscale += std::log(nrm);
    }
    frame_here = frame_next;
  }
  auto sv = detail::log_singular_values(prod);
  return {logscale + sv.lognorm, logscale + sv.logconorm};
}

// Lyapunov-exponent estimate along each bundle with a convergence trace.
struct LyapunovEstimate {
  std::vector<double> chi_minus, chi_plus;           // per bundle
  std::vector<long> trace_steps;                     // checkpoints
  std::vector<std::vector<double>> trace_minus;      // partial averages per bundle
  std::vector<std::vector<double>> trace_plus;
  std::vector<double> oscillation;                   // last-decade spread per bundle
  long n = 0;
};

// (1/n) * accumulated one-step restricted log norms / co-norms per bundle.
// The diagnostic is the oscillation of partial averages over the last 10%
// of the orbit; no convergence is claimed, only reported.
inline LyapunovEstimate lyapunov_estimate(const DiscreteMap& map, const Splitting& s,
                                          const TorusPoint& x0, long n) {
  if (n < 1000) throw precondition_error("lyapunov_estimate: n must be >= 1e3");
  if (n > map.orbit_cap) throw precondition_error("lyapunov_estimate: n exceeds orbit cap");
  int nb = s.bundles();
  LyapunovEstimate est;
  est.n = n;
  est.chi_minus.assign(nb, 0.0);
  est.chi_plus.assign(nb, 0.0);
  est.trace_minus.assign(nb, {});
  est.trace_plus.assign(nb, {});
  long stride = std::max<long>(1, n / 1000);
  TorusPoint x = x0;
  std::vector<Mat> frames_here(nb), frames_next(nb);
  for (int i = 0; i < nb; ++i) frames_here[i] = s.frame(x, i);
  std::vector<double> acc_lo(nb, 0.0), acc_hi(nb, 0.0);
  for (long k = 0; k < n; ++k) {
    Mat jac = map.derivative(x);
    TorusPoint xn = map.forward(x);
    for (int i = 0; i < nb; ++i) {
      frames_next[i] = s.frame(xn, i);
      auto sv = detail::log_singular_values(detail::restricted_step(jac, frames_here[i], frames_next[i]));
      acc_lo[i] += sv.logconorm;
      acc_hi[i] += sv.lognorm;
    }
    x = xn;
    frames_here.swap(frames_next);
    if ((k + 1) % stride == 0 || k + 1 == n) {
      est.trace_steps.push_back(k + 1);
      for (int i = 0; i < nb; ++i) {
        est.trace_minus[i].push_back(acc_lo[i] / static_cast<double>(k + 1));
        est.trace_plus[i].push_back(acc_hi[i] / static_cast<double>(k + 1));
      }
    }
  }
  for (int i = 0; i < nb; ++i) {
    est.chi_minus[i] = acc_lo[i] / static_cast<double>(n);
    est.chi_plus[i] = acc_hi[i] / static_cast<double>(n);
  }
  // last-decade oscillation of the partial averages, per bundle
  size_t first = est.trace_steps.size() - std::max<size_t>(1, est.trace_steps.size() / 10);
  est.oscillation.assign(nb, 0.0);
  for (int i = 0; i < nb; ++i) {
    double lo_m = est.trace_minus[i][first], hi_m = lo_m;
    double lo_p = est.trace_plus[i][first], hi_p = lo_p;
    for (size_t j = first; j < est.trace_steps.size(); ++j) {
      lo_m = std::min(lo_m, est.trace_minus[i][j]);
      hi_m = std::max(hi_m, est.trace_minus[i][j]);
      lo_p = std::min(lo_p, est.trace_plus[i][j]);
      hi_p = std::max(hi_p, est.trace_plus[i][j]);
    }
    est.oscillation[i] = std::max(hi_m - lo_m, hi_p - lo_p);
  }
  return est;
}

// CSV export of per-step log norms: columns k, bundle, lognorm, logconorm.
inline void write_cocycle_csv(const CocycleStats& st, std::ostream& out,
                              const std::string& config_hash = "") {
  if (!config_hash.empty()) out << "# config_hash=" << config_hash << "\n";
  out << "k,bundle,lognorm,logconorm\n";
  for (long k = 0; k < st.length; ++k)
    for (size_t i = 0; i < st.dims.size(); ++i)
      out << k << ',' << i << ',' << format_double(st.lognorm[i][static_cast<size_t>(k)]) << ','
          << format_double(st.logconorm[i][static_cast<size_t>(k)]) << "\n";
}

}  // namespace resodyn
