#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "resodyn/blocks.hpp"
#include "resodyn/chebyshev.hpp"
#include "resodyn/cocycle.hpp"

namespace resodyn {

// ---------------------------------------------------------------------------
// Charts and cones
// ---------------------------------------------------------------------------

// Local affine chart at a point: column 0 of `axes` is the graph (transverse)
// axis, column 1 the base (tangent-bundle) axis. Frames need not be mutually
// orthogonal, so coordinates are solved, not projected.
struct Chart {
  TorusPoint origin;
  Mat axes;      // 2x2
  Mat axes_inv;  // cached inverse

  Chart() = default;
  Chart(TorusPoint o, const Vec& graph_axis, const Vec& base_axis) : origin(std::move(o)) {
    axes.resize(2, 2);
    axes.col(0) = graph_axis;
    axes.col(1) = base_axis;
    axes_inv = axes.inverse();
  }
  // (graph coordinate, base coordinate) of a nearby point
  Vec coords(const TorusPoint& p) const { return axes_inv * torus_diff(p, origin); }
  double base_coord(const TorusPoint& p) const { return coords(p)[1]; }
  double graph_coord(const TorusPoint& p) const { return coords(p)[0]; }
  TorusPoint point(double graph_c, double base_c) const {
    return torus_translate(origin, Vec(axes.col(0) * graph_c + axes.col(1) * base_c));
  }
};

// Cone of width theta around one bundle: v = v_E + v_F with
// ||v_other|| <= theta ||v_bundle||.
struct ConeField {
  const Splitting* splitting = nullptr;
  int bundle = 1;  // the bundle the cone surrounds (1 = F-cone, 0 = E-cone)
  double theta = 0.0;
};

struct ConeResult {
  bool member = false;
  double margin = 0.0;  // theta*||v_bundle|| - ||v_other||
};

inline ConeResult cone_membership(const Vec& v, const ConeField& cone, const TorusPoint& x) {
  if (v.norm() == 0.0) throw precondition_error("cone_membership: zero vector");
  Mat b(2, 2);
  b.col(0) = cone.splitting->frame(x, cone.bundle);
  b.col(1) = cone.splitting->frame(x, 1 - cone.bundle);
  Vec c = b.partialPivLu().solve(v);
  double along = std::abs(c[0]), other = std::abs(c[1]);
  ConeResult res;
  res.margin = cone.theta * along - other;
  res.member = res.margin >= 0.0;
  return res;
}

// ---------------------------------------------------------------------------
// Admissible disks
// ---------------------------------------------------------------------------

// A C^1 disk stored as a graph over the fiber of its tangent bundle in the
// chart at its center; graph(0) = 0. `radius` is intrinsic (arc length from
// the center to the nearer boundary), `slope` a certified Lipschitz bound,
// (anchor, offset) the admissibility data "near x".
struct AdmissibleDisk {
  TorusPoint center;
  int tangent_bundle = 1;  // 0: E-disk (unstable-type), 1: F-disk (stable-type)
  Chart chart;
  ChebInterp graph;
  double radius = 0.0;
  double slope = 0.0;
  TorusPoint anchor;
  double offset = 0.0;

  bool is_point() const { return radius <= 0.0; }
  TorusPoint point_at(double v) const { return chart.point(is_point() ? 0.0 : graph.eval(v), v); }
  Vec tangent_at(double v) const {
    double g = is_point() ? 0.0 : graph.deriv(v);
    return Vec(chart.axes.col(0) * g + chart.axes.col(1));
  }
  // intrinsic arc length from base coordinate a to b
  double arc_length(double a, double b) const {
    if (is_point()) return 0.0;
    const Mat& ax = chart.axes;
    return graph.integrate(a, b, [&ax](double, double, double dg) {
      return (ax.col(0) * dg + ax.col(1)).norm();
    });
  }
};

// Straight segment along a bundle direction (slope 0), radius measured
// along the axis (unit speed).
inline AdmissibleDisk make_straight_disk(const Splitting& s, const TorusPoint& x, int bundle,
                                         double radius, int ndeg = 16) {
  AdmissibleDisk d;
  d.center = x;
  d.tangent_bundle = bundle;
  Vec base = s.frame_refined(x, bundle).col(0);
  Vec graph = s.frame_refined(x, 1 - bundle).col(0);
  d.chart = Chart(x, graph, base);
  d.graph = ChebInterp(-radius, radius, std::vector<double>(static_cast<size_t>(ndeg) + 1, 0.0));
  d.radius = radius;
  d.slope = 0.0;
  d.anchor = x;
  d.offset = 0.0;
  return d;
}

inline AdmissibleDisk make_point_disk(const Splitting& s, const TorusPoint& x, int bundle) {
  AdmissibleDisk d = make_straight_disk(s, x, bundle, 0.0, 0);
  d.radius = 0.0;
  return d;
}

// ---------------------------------------------------------------------------
// Calibrated constants for one (map, splitting, exponents, epsilon)
// ---------------------------------------------------------------------------

struct ManifoldContext {
  DiscreteMap map;
  Splitting splitting;
  ExponentPair chi;
  double eps = 0.0;
  double r = 0.0;       // chart radius from the estaver moduli
  double r1 = 0.0;      // r e^{-eps}
  double theta0 = 0.0;  // chord/arc distortion bound
  double c0 = 1.0;      // transversal-intersection distortion constant
  double eta1 = 0.0, eta2 = 0.0;
  int ndeg = 16;
  mutable std::map<double, double> theta1_cache;

  double lambda() const {
    return std::min(chi.chi_e_minus - 2 * eps, -(chi.chi_f_plus + 2 * eps));
  }

  // theta_1(t): largest grid value theta <= theta_0 such that every direction
  // in the F-cone of width t^2 theta contracts under Dg^{-1} at least
  // e^{-eps/4} as fast as the F direction itself, sampled on a mesh.
  double theta1(double t) const;
};

namespace detail {

// one-step restricted log norms at a point, from the splitting's frames
inline std::pair<double, double> one_step_lognorms(const DiscreteMap& map, const Splitting& s,
                                                   const TorusPoint& x) {
  Mat jac = map.derivative(x);
  TorusPoint fx = map.forward(x);
  double e = std::log(std::abs((s.frame(fx, 0).transpose() * jac * s.frame(x, 0))(0, 0)));
  double f = std::log(std::abs((s.frame(fx, 1).transpose() * jac * s.frame(x, 1))(0, 0)));
  return {e, f};
}

}  // namespace detail

inline double ManifoldContext::theta1(double t) const {
  auto it = theta1_cache.find(t);
  if (it != theta1_cache.end()) return it->second;
  double theta = theta0;
  const int mesh = 12;
  for (int halvings = 0; halvings < 40; ++halvings, theta *= 0.5) {
    bool ok = true;
    for (int iy = 0; iy < mesh && ok; ++iy) {
      for (int ix = 0; ix < mesh && ok; ++ix) {
        TorusPoint y(static_cast<double>(ix) / mesh + 0.013, static_cast<double>(iy) / mesh + 0.007);
        TorusPoint ym = map.inverse(y);
        Mat dginv = map.derivative(ym).inverse();
        Vec fdir = splitting.frame(y, 1).col(0);
        Vec edir = splitting.frame(y, 0).col(0);
        double mf = (dginv * fdir).norm();
        for (double sgn : {-1.0, 1.0}) {
          Vec w = fdir + sgn * t * t * theta * edir;
          double ratio = (dginv * w).norm() / w.norm() / mf;
          if (ratio <= std::exp(-eps / 4.0)) ok = false;
        }
      }
    }
    if (ok) break;
    if (theta < 1e-10)
      throw solver_error("theta1 calibration failed: cone comparison unsatisfiable");
  }
  theta1_cache[t] = theta;
  return theta;
}

struct CalibrationOptions {
  int modulus_samples = 300;
  int c0_samples = 60;
  double r_cap = 0.12;
  int ndeg = 16;
  std::uint64_t seed = 20240901;
};

inline ManifoldContext make_manifold_context(const DiscreteMap& map, const Splitting& s,
                                             ExponentPair chi, double eps,
                                             const CalibrationOptions& opt = {}) {
  if (!(chi.chi_f_plus < 0 && 0 < chi.chi_e_minus))
    throw precondition_error("make_manifold_context: needs chi_F^+ < 0 < chi_E^-");
  if (eps >= epsilon_zero(chi))
    throw precondition_error("make_manifold_context: eps must be below epsilon_0");
  ManifoldContext ctx;
  ctx.map = map;
  ctx.splitting = s;
  ctx.chi = chi;
  ctx.eps = eps;
  ctx.ndeg = opt.ndeg;
  ctx.eta1 = std::exp(chi.chi_f_plus - chi.chi_e_minus + 2 * eps);
  ctx.eta2 = ctx.eta1 * std::exp(eps);

  // chart radius: largest r (over a shrinking grid) whose one-step
  // restricted-norm modulus stays within eps/4
  std::mt19937_64 rng(opt.seed);
  std::vector<TorusPoint> base_pts;
  std::vector<std::pair<double, double>> base_ln;
  for (int i = 0; i < opt.modulus_samples; ++i) {
    TorusPoint x{uniform01(rng), uniform01(rng)};
    base_pts.push_back(x);
    base_ln.push_back(detail::one_step_lognorms(map, s, x));
  }
  double r = opt.r_cap;
  for (; r > 1e-4; r *= 0.8) {
    double worst = 0.0;
    std::mt19937_64 rng2(opt.seed + 1);
    for (size_t i = 0; i < base_pts.size(); ++i) {
      double ang = uniform(rng2, 0, 2 * M_PI);
      Vec d(2);
      d << r * std::cos(ang), r * std::sin(ang);
      auto ln = detail::one_step_lognorms(map, s, torus_translate(base_pts[i], d));
      worst = std::max({worst, std::abs(ln.first - base_ln[i].first),
                        std::abs(ln.second - base_ln[i].second)});
    }
    if (worst <= eps / 4.0) break;
  }
  if (r <= 1e-4)
    throw solver_error("chart radius calibration failed: restricted-norm modulus too rough");
  ctx.r = r;
  ctx.r1 = r * std::exp(-eps);

  // theta0 from the chord/arc distortion kappa(theta) <= e^{eps/4}, using the
  // worst frame pair over a mesh
  double theta_hi = 1.0, theta_lo = 0.0;
  auto kappa = [&](double theta) {
    double worst = 1.0;
    for (int iy = 0; iy < 8; ++iy)
      for (int ix = 0; ix < 8; ++ix) {
        TorusPoint y(ix / 8.0 + 0.02, iy / 8.0 + 0.05);
        for (int bundle : {0, 1}) {
          Vec eb = s.frame(y, bundle).col(0), eg = s.frame(y, 1 - bundle).col(0);
          double mx = 0.0, mn = 1e300;
          for (int k = -8; k <= 8; ++k) {
            double sp = (eb + (theta * k / 8.0) * eg).norm();
            mx = std::max(mx, sp);
            mn = std::min(mn, sp);
          }
          worst = std::max(worst, mx / mn);
        }
      }
    return worst;
  };
  for (int it = 0; it < 50; ++it) {
    double mid = 0.5 * (theta_hi + theta_lo);
    if (kappa(mid) <= std::exp(eps / 4.0))
      theta_lo = mid;
    else
      theta_hi = mid;
  }
  ctx.theta0 = theta_lo;
  if (ctx.theta0 <= 0) throw solver_error("theta0 calibration failed");

  // C0: transversal-intersection distortion, measured over sampled pairs of
  // straight cone-boundary disks, times a 1.25 safety factor
  double worst_ratio = 1.0;
  std::mt19937_64 rng3(opt.seed + 2);
  for (int trial = 0; trial < opt.c0_samples; ++trial) {
    TorusPoint c{uniform01(rng3), uniform01(rng3)};
    Vec ee = s.frame(c, 0).col(0), ef = s.frame(c, 1).col(0);
    double h = ctx.r1 * 0.1;
    TorusPoint ce = torus_translate(c, Vec(h * uniform(rng3, -1, 1) * ef));
    TorusPoint cf = torus_translate(c, Vec(h * uniform(rng3, -1, 1) * ee));
    double se = ctx.theta0 * uniform(rng3, -1, 1), sf = ctx.theta0 * uniform(rng3, -1, 1);
    Vec de = (ee + se * ef).normalized();  // E-type disk direction
    Vec df = (ef + sf * ee).normalized();  // F-type disk direction
    // intersection of the two lines ce + u de, cf + v df
    Mat a(2, 2);
    a.col(0) = de;
    a.col(1) = -df;
    Vec rhs = torus_diff(cf, ce);
    Vec uv = a.partialPivLu().solve(rhs);
    Vec z = torus_diff(torus_translate(ce, Vec(uv[0] * de)), c);  // relative to c, small
    TorusPoint zp = torus_translate(ce, Vec(uv[0] * de));
    for (int k = -3; k <= 3; ++k)
      for (int l = -3; l <= 3; ++l) {
        TorusPoint x = torus_translate(ce, Vec((uv[0] + 0.3 * ctx.r1 * k / 3.0) * de));
        TorusPoint y = torus_translate(cf, Vec((uv[1] + 0.3 * ctx.r1 * l / 3.0) * df));
        double dxy = torus_distance(x, y);
        if (dxy < 1e-12) continue;
        worst_ratio =
            std::max(worst_ratio, std::max(torus_distance(x, zp), torus_distance(y, zp)) / dxy);
      }
    (void)z;
  }
  ctx.c0 = 1.25 * worst_ratio;
  return ctx;
}

// Time reversal of a full context (bundles swapped, exponents mirrored).
// Calibrations are re-run on the reversed system.
inline ManifoldContext reversed_context(const ManifoldContext& ctx,
                                        const CalibrationOptions& opt = {}) {
  ExponentPair chi_rev{-ctx.chi.chi_f_plus, -ctx.chi.chi_e_minus};
  return make_manifold_context(reversed(ctx.map), swap_bundles(ctx.splitting), chi_rev, ctx.eps,
                               opt);
}

// ---------------------------------------------------------------------------
// Graph transforms
// ---------------------------------------------------------------------------

namespace detail {

struct Patch {
  Chart chart;
  ChebInterp graph;
  double center_base = 0.0;
  TorusPoint point_at(double v) const { return chart.point(graph.eval(v), v); }
  double speed(double v) const {
    return (chart.axes.col(0) * graph.deriv(v) + chart.axes.col(1)).norm();
  }
  double arc(double a, double b) const {
    const Mat& ax = chart.axes;
    return graph.integrate(a, b, [&ax](double, double, double dg) {
      return (ax.col(0) * dg + ax.col(1)).norm();
    });
  }
};

using PointMap = std::function<TorusPoint(const TorusPoint&)>;

// Finds s in [s_lo, s_hi] with base coordinate of step(patch(s)) equal to
// target, by safeguarded secant iteration on a monotone bracket.
inline double solve_base_coord(const Patch& patch, const PointMap& step, const Chart& next,
                               double target, double s_lo, double s_hi, double f_lo, double f_hi) {
  if ((f_lo - target) * (f_hi - target) > 0)
    throw solver_error("graph transform: target base coordinate outside bracket");
  double a = s_lo, b = s_hi, fa = f_lo - target, fb = f_hi - target;
  double s = a, fs = fa;
  for (int it = 0; it < 80; ++it) {
    double cand = (std::abs(fb - fa) > 1e-300) ? b - fb * (b - a) / (fb - fa) : 0.5 * (a + b);
    double width = b - a;
    if (!(cand > a && cand < b)) cand = 0.5 * (a + b);
    s = cand;
    fs = next.base_coord(step(patch.point_at(s))) - target;
    if (std::abs(fs) < 1e-14 * (1.0 + std::abs(target)) || width < 1e-16) break;
    if ((fa < 0) == (fs < 0)) {
      a = s;
      fa = fs;
    } else {
      b = s;
      fb = fs;
    }
  }
  return s;
}

// Shrinks parameter range so the mapped points stay within `limit` of the
// next anchor (pre-clip before node placement; the mapped disk can be much
// longer than the chart).
inline std::pair<double, double> preclip_params(const Patch& patch, const PointMap& step,
                                                const TorusPoint& next_anchor, double limit,
                                                double s_center) {
  auto dist = [&](double s) { return torus_distance(step(patch.point_at(s)), next_anchor); };
  auto shrink = [&](double s_far) {
    if (dist(s_far) <= limit) return s_far;
    double a = s_center, b = s_far;  // dist(a) <= limit < dist(b)
    for (int it = 0; it < 60; ++it) {
      double m = 0.5 * (a + b);
      (dist(m) <= limit ? a : b) = m;
    }
    return a;
  };
  if (dist(s_center) > limit)
    throw solver_error("graph transform: center left the chart ball");
  return {shrink(patch.graph.lo()), shrink(patch.graph.hi())};
}

struct TransformLimits {
  double chart_limit = 0.0;   // containment guard around the next anchor
  double clip_arc = 0.0;      // intrinsic clip radius about the mapped center (0: none)
  double slope_guard = 1.0;   // certified-slope ceiling
  int ndeg = 16;
};

// One graph-transform step: map the patch with `step`, re-graph it in the
// chart at the next anchor, clip, certify the slope.
inline Patch transform_patch(const Patch& patch, const PointMap& step, const Chart& next_chart,
                             const TransformLimits& lim) {
  auto [p_lo, p_hi] = preclip_params(patch, step, next_chart.origin, lim.chart_limit, patch.center_base);
  TorusPoint w = step(patch.point_at(patch.center_base));
  double b_c = next_chart.base_coord(w);
  double s_min = std::min(p_lo, p_hi), s_max = std::max(p_lo, p_hi);
  double f_at_smin = next_chart.base_coord(step(patch.point_at(s_min)));
  double f_at_smax = next_chart.base_coord(step(patch.point_at(s_max)));
  double b_lo = std::min(f_at_smin, f_at_smax), b_hi = std::max(f_at_smin, f_at_smax);
  if (!(b_lo < b_c && b_c < b_hi))
    throw solver_error("graph transform: radius collapsed around the tracked center");

  auto value_at = [&](double v) {
    double s = solve_base_coord(patch, step, next_chart, v, s_min, s_max, f_at_smin, f_at_smax);
    return next_chart.graph_coord(step(patch.point_at(s)));
  };

  Patch out;
  out.chart = next_chart;
  out.center_base = b_c;
  out.graph = ChebInterp::sample(b_lo, b_hi, lim.ndeg, value_at);
  if (lim.clip_arc > 0.0) {
    // intrinsic clip about the tracked center
    auto arc_to = [&](double v) { return std::abs(out.arc(b_c, v)); };
    auto clip_side = [&](double far) {
      if (arc_to(far) <= lim.clip_arc) return far;
      double a = b_c, b = far;
      for (int it = 0; it < 60; ++it) {
        double m = 0.5 * (a + b);
        (arc_to(m) <= lim.clip_arc ? a : b) = m;
      }
      return a;
    };
    double v_lo = clip_side(b_lo), v_hi = clip_side(b_hi);
    if (!(v_lo < b_c && b_c < v_hi))
      throw solver_error("graph transform: clip emptied the disk around the center");
    out.graph = ChebInterp::sample(v_lo, v_hi, lim.ndeg, value_at);
  }
  double cert_slope = out.graph.deriv_sup_bound();
  if (cert_slope > lim.slope_guard)
    throw solver_error("graph transform: slope certificate fails (" + format_double(cert_slope) +
                       " > " + format_double(lim.slope_guard) + ")");
  return out;
}

inline Patch patch_from_disk(const AdmissibleDisk& d) {
  Patch p;
  p.chart = d.chart;
  p.graph = d.graph;
  p.center_base = 0.0;
  return p;
}

inline Chart chart_at(const ManifoldContext& ctx, const TorusPoint& x, int tangent_bundle,
                      bool refined) {
  Vec base = refined ? ctx.splitting.frame_refined(x, tangent_bundle).col(0)
                     : ctx.splitting.frame(x, tangent_bundle).col(0);
  Vec graph = refined ? ctx.splitting.frame_refined(x, 1 - tangent_bundle).col(0)
                      : ctx.splitting.frame(x, 1 - tangent_bundle).col(0);
  return Chart(x, graph, base);
}

}  // namespace detail

// Recenters a working patch at its tracked center point and clips it to a
// symmetric intrinsic radius, producing a public AdmissibleDisk.
inline AdmissibleDisk recenter_patch(const ManifoldContext& ctx, const detail::Patch& patch,
                                     int tangent_bundle, double radius_clip,
                                     const TorusPoint& anchor) {
  TorusPoint w = patch.point_at(patch.center_base);
  Chart chart = detail::chart_at(ctx, w, tangent_bundle, true);
  detail::TransformLimits lim;
  lim.chart_limit = ctx.r * 1.25;
  lim.clip_arc = radius_clip;
  lim.slope_guard = 1.0;
  lim.ndeg = ctx.ndeg;
  detail::Patch rec = detail::transform_patch(
      patch, [](const TorusPoint& p) { return p; }, chart, lim);
  AdmissibleDisk d;
  d.center = w;
  d.tangent_bundle = tangent_bundle;
  d.chart = chart;
  // exact graph(0) = 0: subtract the (tiny) solve residual at the center
  std::vector<double> vals = rec.graph.values();
  double at0 = rec.graph.eval(0.0);
  for (double& v : vals) v -= at0;
  d.graph = ChebInterp(rec.graph.lo(), rec.graph.hi(), std::move(vals));
  d.radius = std::min(std::abs(d.arc_length(0, d.graph.lo())), std::abs(d.arc_length(0, d.graph.hi())));
  d.slope = d.graph.deriv_sup_bound();
  d.anchor = anchor;
  d.offset = torus_distance(anchor, w);
  return d;
}

// ---------------------------------------------------------------------------
// Public operations
// ---------------------------------------------------------------------------

// Single backward step of the graph transform: the disk at g^{k+1}x pulled
// to g^k x, clipped to the chart ball of radius r (intrinsic metric).
inline AdmissibleDisk backward_graph_step(const ManifoldContext& ctx, const AdmissibleDisk& disk,
                                          const TorusPoint& at, double clip_radius) {
  if (disk.is_point())
    return make_point_disk(ctx.splitting, ctx.map.inverse(disk.center), disk.tangent_bundle);
  detail::Patch patch = detail::patch_from_disk(disk);
  Chart chart = detail::chart_at(ctx, at, disk.tangent_bundle, false);
  detail::TransformLimits lim;
  lim.chart_limit = ctx.r * 1.25;
  lim.clip_arc = clip_radius;
  lim.slope_guard = 1.0;
  lim.ndeg = ctx.ndeg;
  auto inv = [&m = ctx.map](const TorusPoint& p) { return m.inverse(p); };
  detail::Patch pulled = detail::transform_patch(patch, inv, chart, lim);
  return recenter_patch(ctx, pulled, disk.tangent_bundle, clip_radius, at);
}

// Certificate accompanying pulled subdisks and local manifolds.
struct ManifoldCertificate {
  bool hypotheses_pass = false;
  std::vector<double> step_slopes;       // certified slope after each pull
  std::vector<double> slope_law;         // t^2 eta2^k theta1 envelope
  bool slope_law_pass = false;
  std::vector<double> containment;       // max node distance from the anchor per step
  double radius = 0.0;
  double radius_required = 0.0;
  bool radius_pass = false;
  std::vector<double> contraction_worst; // worst pair ratio / bound, per audited k
  bool contraction_pass = false;
  double tangency = 0.0;
  double convergence_gap = 0.0;
};

namespace detail {

// Hypotheses (i)-(ii) of the averaged pull (forward-time data over the
// fragment [i0, i0+n]): (i) window domination ending at the far end,
// (ii) F-norm products from the near end.
inline bool averf_hypotheses(const CocycleStats& st, long i0, long n, double t, double eps,
                             const ExponentPair& chi, double eta1) {
  double two_log_t = 2.0 * std::log(t), log_t = std::log(t), leta = std::log(eta1);
  for (long k = 1; k <= n; ++k) {
    double dom = st.window_lognorm(1, i0 + n - k, k) - st.window_logconorm(0, i0 + n - k, k);
    if (dom > two_log_t + k * leta + 1e-10) return false;
    double fprod = st.window_lognorm(1, i0, k);
    if (fprod > log_t + (chi.chi_f_plus + eps) * k + 1e-10) return false;
  }
  return true;
}

}  // namespace detail

// Pulls a subdisk of D back along the orbit fragment points[i0..i0+n]
// (D given at the far end, tangent to the theta_1(t) cone, radius > r),
// producing an admissible disk of radius r/t at points[i0], with audits
// of containment, the cone-widening law, radius, and the contraction
// inequality on sampled pairs.
struct PullResult {
  AdmissibleDisk disk;
  ManifoldCertificate cert;
};

inline PullResult pull_subdisk(const ManifoldContext& ctx, const OrbitSegment& seg,
                               const CocycleStats& stats, long i0, long n,
                               const AdmissibleDisk& incoming, double t, int audit_pairs = 20,
                               long audit_k = 0) {
  PullResult res;
  res.cert.hypotheses_pass = detail::averf_hypotheses(stats, i0, n, t, ctx.eps, ctx.chi, ctx.eta1);
  if (!res.cert.hypotheses_pass)
    throw precondition_error("pull_subdisk: averaged-domination hypotheses fail on this fragment");
  double th1 = ctx.theta1(t);
  if (n == 0) {
    detail::Patch p = detail::patch_from_disk(incoming);
    res.disk = recenter_patch(ctx, p, incoming.tangent_bundle, ctx.r / t, incoming.anchor);
    res.cert.radius = res.disk.radius;
    res.cert.radius_required = ctx.r / t * (1.0 - 1e-6);
    res.cert.radius_pass = res.cert.radius >= res.cert.radius_required;
    res.cert.slope_law_pass = true;
    res.cert.contraction_pass = true;
    return res;
  }

  detail::Patch patch = detail::patch_from_disk(incoming);
  auto inv = [&m = ctx.map](const TorusPoint& p) { return m.inverse(p); };
  for (long k = n - 1; k >= 0; --k) {
    Chart chart = detail::chart_at(ctx, seg.points[static_cast<size_t>(i0 + k)],
                                   incoming.tangent_bundle, false);
    detail::TransformLimits lim;
    lim.chart_limit = ctx.r * 1.25;
    lim.clip_arc = ctx.r;  // the ball clipping of the D_k recursion
    lim.slope_guard = std::max(1.0, t * t * th1 * 4.0);
    lim.ndeg = ctx.ndeg;
    patch = detail::transform_patch(patch, inv, chart, lim);
    long pulled = n - k;
    res.cert.step_slopes.push_back(patch.graph.deriv_sup_bound());
    res.cert.slope_law.push_back(t * t * std::pow(ctx.eta2, static_cast<double>(pulled)) * th1);
    double far = 0.0;
    for (double v : patch.graph.grid())
      far = std::max(far, torus_distance(patch.point_at(v), chart.origin));
    res.cert.containment.push_back(far);
  }
  res.cert.slope_law_pass = true;
  for (size_t i = 0; i < res.cert.step_slopes.size(); ++i)
    if (res.cert.step_slopes[i] > res.cert.slope_law[i] + 1e-8) res.cert.slope_law_pass = false;

  res.disk = recenter_patch(ctx, patch, incoming.tangent_bundle, ctx.r / t,
                            seg.points[static_cast<size_t>(i0)]);
  res.cert.radius = res.disk.radius;
  res.cert.radius_required = ctx.r / t * (1.0 - 1e-6);
  res.cert.radius_pass = res.cert.radius >= res.cert.radius_required;

  // short-range contraction audit: pairs tracked on forward-transformed
  // disks (co-moving charts; pointwise iteration would drown in e^{chi k}
  // rounding noise). Long horizons use stable_contraction_audit below.
  if (audit_pairs > 0) {
    long kmax = std::min<long>(audit_k > 0 ? std::min(audit_k, n) : n, 12);
    std::mt19937_64 rng(12345);
    std::vector<std::pair<double, double>> pairs;
    for (int i = 0; i < audit_pairs; ++i) {
      double a = uniform(rng, res.disk.graph.lo(), res.disk.graph.hi());
      double b = uniform(rng, res.disk.graph.lo(), res.disk.graph.hi());
      if (std::abs(a - b) < 1e-6) b = (a > 0 ? a - 0.1 * res.disk.radius : a + 0.1 * res.disk.radius);
      pairs.emplace_back(a, b);
    }
    std::vector<double> d0;
    for (auto [a, b] : pairs)
      d0.push_back(torus_distance(res.disk.point_at(a), res.disk.point_at(b)));
    detail::Patch fpatch = detail::patch_from_disk(res.disk);
    std::vector<std::pair<double, double>> coords = pairs;
    res.cert.contraction_pass = true;
    auto fwd = [&m = ctx.map](const TorusPoint& p) { return m.forward(p); };
    for (long k = 1; k <= kmax; ++k) {
      Chart chart = detail::chart_at(ctx, seg.points[static_cast<size_t>(i0 + k)],
                                     incoming.tangent_bundle, false);
      detail::TransformLimits lim;
      lim.chart_limit = ctx.r * 1.5;
      lim.clip_arc = 0.0;
      lim.slope_guard = 1.0;
      lim.ndeg = ctx.ndeg;
      detail::Patch next = detail::transform_patch(fpatch, fwd, chart, lim);
      double worst = 0.0;
      for (size_t i = 0; i < coords.size(); ++i) {
        double va = chart.base_coord(fwd(fpatch.point_at(coords[i].first)));
        double vb = chart.base_coord(fwd(fpatch.point_at(coords[i].second)));
        coords[i] = {va, vb};
        double dk = torus_distance(next.point_at(va), next.point_at(vb));
        double bound = t * std::exp((ctx.chi.chi_f_plus + 2 * ctx.eps) * k) * d0[i];
        if (d0[i] > 1e-10) worst = std::max(worst, dk / bound);
      }
      res.cert.contraction_worst.push_back(worst);
      if (worst > 1.0 + 1e-9) res.cert.contraction_pass = false;
      fpatch = next;
    }
  } else {
    res.cert.contraction_pass = true;
  }
  return res;
}

// Long-horizon contraction audit for a computed stable disk at
// seg.points[j0]: per-step contraction rates are measured along the disk's
// forward images (tangent stretch at the tracked points, log domain), so
// the audited products stay well-scaled at every k even when the pair
// separation underflows chord resolution. Verifies
//   prod rates <= t * e^{(chi_F^+ + 2 eps) k}  for all k <= k_max
// at the sampled pair positions.
struct ContractionAudit {
  std::vector<double> worst_log_ratio;  // per k: max over samples of
                                        // (sum log rates) - log bound
  bool pass = true;
  long k_max = 0;
};

inline ContractionAudit stable_contraction_audit(const ManifoldContext& ctx,
                                                 const OrbitSegment& seg,
                                                 const AdmissibleDisk& disk, long j0, double t,
                                                 long k_max, int npairs,
                                                 std::uint64_t seed = 777) {
  if (j0 + k_max > seg.length)
    throw precondition_error("stable_contraction_audit: segment too short for k_max");
  ContractionAudit audit;
  audit.k_max = k_max;
  std::mt19937_64 rng(seed);
  // sample positions: pairs enter through their endpoints' tangent rates
  std::vector<double> params;
  for (int i = 0; i < 2 * npairs; ++i)
    params.push_back(uniform(rng, disk.graph.lo(), disk.graph.hi()));
  struct Track {
    double v;        // signed base offset from the anchor, current step
    double log_sum;  // accumulated log rates
  };
  std::vector<Track> tracks;
  Vec f0 = ctx.splitting.frame_refined(seg.points[static_cast<size_t>(j0)], 1).col(0);
  for (double v : params)
    tracks.push_back({f0.dot(torus_diff(disk.point_at(v), seg.points[static_cast<size_t>(j0)])), 0.0});
  double log_bound_rate = ctx.chi.chi_f_plus + 2 * ctx.eps;
  double log_t = std::log(t);
  for (long k = 0; k < k_max; ++k) {
    const TorusPoint& anchor = seg.points[static_cast<size_t>(j0 + k)];
    Vec fdir = ctx.splitting.frame(anchor, 1).col(0);
    double worst = -1e300;
    for (size_t i = 0; i < tracks.size(); ++i) {
      Track& tr = tracks[i];
      double off = tr.v;
      if (std::abs(off) < 1e-200) off = std::copysign(1e-200, off == 0.0 ? 1.0 : off);
      TorusPoint p = torus_translate(anchor, Vec(fdir * clamp(off, -ctx.r, ctx.r)));
      Mat jac = ctx.map.derivative(p);
      Vec tangent = (k == 0 && !disk.is_point())
                        ? disk.tangent_at(clamp(params[i], disk.graph.lo(), disk.graph.hi()))
                        : Vec(fdir);
      double rate = (jac * tangent.normalized()).norm();
      tr.log_sum += std::log(rate);
      tr.v *= rate;
      worst = std::max(worst, tr.log_sum - log_bound_rate * static_cast<double>(k + 1));
    }
    audit.worst_log_ratio.push_back(worst);
    if (worst > log_t + 1e-9) audit.pass = false;
  }
  return audit;
}

// Local stable manifold at a block-cloud point: pull straight seed disks
// back along increasing resonance returns until the successive disks are
// Cauchy in C^0 + slope.
struct LocalManifoldOptions {
  double t = 1.0;
  long j_max = 12;
  double cauchy_tol = 1e-9;
  long min_gap = 3;        // minimum spacing between successive returns used
  long max_len = 24;       // longest fragment pulled: the tracked center slides
                           // off the stored anchors at ~1e-13 e^{chi m} per pull
  int audit_pairs = 20;
  long audit_k = 0;        // 0: audit over the full final fragment
  double radius_request = -1.0;  // <0: the theorem radius r/t; 0: the point itself
};

struct LocalManifoldResult {
  AdmissibleDisk disk;
  ManifoldCertificate cert;
  std::vector<double> cauchy_gaps;
  std::vector<long> times_used;
};

namespace detail {

inline double disk_c1_distance(const AdmissibleDisk& a, const AdmissibleDisk& b) {
  double lo = std::max(a.graph.lo(), b.graph.lo());
  double hi = std::min(a.graph.hi(), b.graph.hi());
  if (hi <= lo) return 1e300;
  // both graphs are expressed in a's chart for the comparison
  double worst = 0.0;
  for (int i = 0; i <= 24; ++i) {
    double v = lo + (hi - lo) * i / 24.0;
    TorusPoint pb = b.point_at(v);
    double gb_in_a = a.chart.graph_coord(pb);
    double vb_in_a = a.chart.base_coord(pb);
    double c0_gap = std::abs(a.graph.eval(clamp(vb_in_a, a.graph.lo(), a.graph.hi())) - gb_in_a);
    double c1_gap = std::abs(a.graph.deriv(clamp(vb_in_a, a.graph.lo(), a.graph.hi())) - b.graph.deriv(v));
    worst = std::max(worst, c0_gap + c1_gap);
  }
  return worst;
}

}  // namespace detail

inline LocalManifoldResult local_stable_manifold(const ManifoldContext& ctx,
                                                 const OrbitSegment& seg, const CocycleStats& stats,
                                                 const std::vector<long>& returns_after, long j0,
                                                 const LocalManifoldOptions& opt) {
  LocalManifoldResult out;
  if (opt.radius_request == 0.0) {
    out.disk = make_point_disk(ctx.splitting, seg.points[static_cast<size_t>(j0)], 1);
    out.cert.hypotheses_pass = true;
    out.cert.radius_pass = true;
    out.cert.slope_law_pass = true;
    out.cert.contraction_pass = true;
    return out;
  }
  std::optional<AdmissibleDisk> prev;
  long last_used = j0;
  long used = 0;
  for (long nj : returns_after) {
    if (nj - last_used < opt.min_gap) continue;
    if (nj - j0 > opt.max_len) break;
    if (used >= opt.j_max) break;
    long n = nj - j0;
    if (!detail::averf_hypotheses(stats, j0, n, opt.t, ctx.eps, ctx.chi, ctx.eta1)) continue;
    AdmissibleDisk seed = make_straight_disk(ctx.splitting, seg.points[static_cast<size_t>(nj)], 1,
                                             ctx.r * 1.02, ctx.ndeg);
    PullResult pulled = pull_subdisk(ctx, seg, stats, j0, n, seed, opt.t,
                                     used + 1 == opt.j_max ? opt.audit_pairs : 0, opt.audit_k);
    ++used;
    last_used = nj;
    out.times_used.push_back(nj);
    if (prev) {
      double gap = detail::disk_c1_distance(pulled.disk, *prev);
      out.cauchy_gaps.push_back(gap);
      if (gap < opt.cauchy_tol) {
        out.disk = pulled.disk;
        out.cert = pulled.cert;
        break;
      }
    }
    prev = pulled.disk;
    out.disk = pulled.disk;
    out.cert = pulled.cert;
  }
  if (out.times_used.empty())
    throw precondition_error("local_stable_manifold: no usable resonance returns");
  if (!out.cauchy_gaps.empty() && out.cauchy_gaps.back() >= opt.cauchy_tol &&
      used >= opt.j_max)
    throw solver_error("local_stable_manifold: no C1 convergence within j_max (last gap " +
                       format_double(out.cauchy_gaps.back()) + ")");
  // run the contraction audit on the accepted disk if it was skipped
  if (out.cert.contraction_worst.empty() && opt.audit_pairs > 0) {
    long n = out.times_used.back() - j0;
    AdmissibleDisk seed = make_straight_disk(
        ctx.splitting, seg.points[static_cast<size_t>(out.times_used.back())], 1, ctx.r * 1.02,
        ctx.ndeg);
    PullResult redo = pull_subdisk(ctx, seg, stats, j0, n, seed, opt.t, opt.audit_pairs, opt.audit_k);
    out.disk = redo.disk;
    out.cert = redo.cert;
  }
  out.cert.convergence_gap = out.cauchy_gaps.empty() ? 0.0 : out.cauchy_gaps.back();
  // tangency to the target bundle at the center
  Vec tangent = out.disk.tangent_at(0.0).normalized();
  Vec target = ctx.splitting.frame_refined(out.disk.center, 1).col(0);
  Mat a(2, 1), b(2, 1);
  a.col(0) = tangent;
  b.col(0) = target;
  out.cert.tangency = frame_angle(a, b);
  return out;
}

// Mirror image under time reversal: the unstable disk of `ctx.map` at a
// block point is the stable disk of the reversed system along the reversed
// fragment. `returns_before` are H_t times below j0 (ascending).
inline LocalManifoldResult local_unstable_manifold(const ManifoldContext& ctx_rev,
                                                   const OrbitSegment& seg,
                                                   const std::vector<long>& returns_before, long j0,
                                                   const LocalManifoldOptions& opt) {
  // reversed fragment: points j0, j0-1, ..., 0
  OrbitSegment rev;
  rev.base = seg.points[static_cast<size_t>(j0)];
  rev.length = j0;
  for (long k = j0; k >= 0; --k) {
    rev.points.push_back(seg.points[static_cast<size_t>(k)]);
    if (k >= 1) rev.jacobians.push_back(seg.jacobians[static_cast<size_t>(k - 1)].inverse());
  }
  CocycleStats rev_stats = cocycle_stats(rev, ctx_rev.splitting);
  std::vector<long> rev_returns;
  for (auto it = returns_before.rbegin(); it != returns_before.rend(); ++it)
    rev_returns.push_back(j0 - *it);
  LocalManifoldResult res = local_stable_manifold(ctx_rev, rev, rev_stats, rev_returns, 0, opt);
  res.disk.tangent_bundle = 0;  // F of the reversed system is E of the original
  for (long& t : res.times_used) t = j0 - t;
  return res;
}

// Transverse intersection of an E-based and an F-based admissible disk:
// 2-variable Newton on the chart-coordinate difference, multistart fallback.
inline TorusPoint intersect_disks(const AdmissibleDisk& de, const AdmissibleDisk& df,
                                  double tol = 1e-12) {
  if (torus_distance(de.center, df.center) > 0.49)
    throw precondition_error("intersect_disks: disks do not share a chart ball");
  auto residual = [&](double u, double v) -> Vec {
    return torus_diff(de.point_at(u), df.point_at(v));
  };
  auto newton_from = [&](double u, double v) -> std::optional<std::pair<double, double>> {
    for (int it = 0; it < 60; ++it) {
      Vec r = residual(u, v);
      if (r.norm() <= tol) return std::make_pair(u, v);
      Mat j(2, 2);
      j.col(0) = de.tangent_at(u);
      j.col(1) = -df.tangent_at(v);
      Vec step = j.partialPivLu().solve(-r);
      // keep iterates inside (slightly padded) domains
      u = clamp(u + step[0], de.graph.lo() * 1.05, de.graph.hi() * 1.05);
      v = clamp(v + step[1], df.graph.lo() * 1.05, df.graph.hi() * 1.05);
    }
    return std::nullopt;
  };
  std::optional<std::pair<double, double>> hit = newton_from(0.0, 0.0);
  if (!hit) {
    for (int i = -2; i <= 2 && !hit; ++i)
      for (int j = -2; j <= 2 && !hit; ++j)
        hit = newton_from(0.4 * i * (de.is_point() ? 0.0 : de.graph.hi()),
                          0.4 * j * (df.is_point() ? 0.0 : df.graph.hi()));
  }
  if (!hit) throw solver_error("intersect_disks: root finder did not converge");
  auto [u, v] = *hit;
  if (u < de.graph.lo() - 1e-9 || u > de.graph.hi() + 1e-9 || v < df.graph.lo() - 1e-9 ||
      v > df.graph.hi() + 1e-9)
    throw solver_error("intersect_disks: no intersection within both radii");
  return de.point_at(u);
}

// Distance from a point to a disk (graph mismatch in the disk's chart);
// infinity when the base coordinate falls outside the domain.
inline double disk_transverse_distance(const AdmissibleDisk& d, const TorusPoint& p) {
  Vec c = d.chart.coords(p);
  if (c[1] < d.graph.lo() - 1e-12 || c[1] > d.graph.hi() + 1e-12)
    return std::numeric_limits<double>::infinity();
  return std::abs(c[0] - d.graph.eval(c[1])) * d.chart.axes.col(0).norm();
}

// Trap check: the first recorded block return n_K at which the whole
// forward image of B lies on the local stable disk of the return point.
struct TrapResult {
  long n_k = -1;
  std::vector<double> diam_series;  // e^{-tau n} diam(g^n B)
};

inline TrapResult trap_check(const ManifoldContext& ctx, const OrbitSegment& seg,
                             const CocycleStats& stats, const std::vector<long>& block_times,
                             long j0, std::vector<TorusPoint> pts, double tau, long budget,
                             const LocalManifoldOptions& mopt, double tol = 1e-8) {
  if (!(tau < std::min(0.0, ctx.chi.chi_e_minus - 2 * ctx.eps)))
    throw precondition_error("trap_check: tau must be < min(0, chi_E^- - 2 eps)");
  TrapResult res;
  // numeric check of the decay hypothesis over the budget
  std::vector<TorusPoint> cur = pts;
  for (long n = 0; n <= budget; ++n) {
    double diam = 0.0;
    for (size_t i = 0; i < cur.size(); ++i)
      for (size_t j = i + 1; j < cur.size(); ++j)
        diam = std::max(diam, torus_distance(cur[i], cur[j]));
    res.diam_series.push_back(std::exp(-tau * static_cast<double>(n)) * diam);
    if (n >= 1 && res.diam_series[static_cast<size_t>(n)] >
                      res.diam_series[static_cast<size_t>(n - 1)] + 1e-12)
      throw precondition_error("trap_check: e^{-tau n} diam(g^n B) is not decreasing");
    for (auto& p : cur) p = ctx.map.forward(p);
  }
  for (long nk : block_times) {
    if (nk <= j0 || nk - j0 > budget) continue;
    std::vector<long> later;
    for (long t : block_times)
      if (t > nk) later.push_back(t);
    if (later.empty()) break;
    LocalManifoldResult wf;
    try {
      wf = local_stable_manifold(ctx, seg, stats, later, nk, mopt);
    } catch (const std::exception&) {
      continue;
    }
    bool all_on = true;
    for (const auto& p0 : pts) {
      TorusPoint p = p0;
      for (long s = 0; s < nk - j0; ++s) p = ctx.map.forward(p);
      if (disk_transverse_distance(wf.disk, p) > tol) all_on = false;
    }
    if (all_on) {
      res.n_k = nk;
      return res;
    }
  }
  throw solver_error("trap_check: budget exhausted without containment");
}

}  // namespace resodyn
