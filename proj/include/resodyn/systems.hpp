#pragma once

#include <Eigen/Dense>
#include <fstream>
#include <functional>
#include <memory>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "resodyn/common.hpp"
#include "resodyn/torus.hpp"

namespace resodyn {

// An invertible C^1 map of the flat d-torus with evaluable derivative.
// forward/inverse/derivative are pure with respect to the captured state,
// so a fully constructed DiscreteMap is safe to share across threads.
struct DiscreteMap {
  int dimension = 2;
  std::string descriptor;
  std::function<TorusPoint(const TorusPoint&)> forward;
  std::function<TorusPoint(const TorusPoint&)> inverse;
  std::function<Mat(const TorusPoint&)> derivative;
  long orbit_cap = 8'000'000;
};

// Applies forward (steps > 0) or inverse (steps < 0) |steps| times,
// reducing mod 1 each step.
inline TorusPoint evaluate(const DiscreteMap& map, TorusPoint x, long steps) {
  if (std::abs(steps) > map.orbit_cap)
    throw precondition_error("evaluate: |steps| exceeds orbit cap");
  if (steps >= 0) {
    for (long k = 0; k < steps; ++k) x = map.forward(x);
  } else {
    for (long k = 0; k < -steps; ++k) x = map.inverse(x);
  }
  return x;
}

// Time reversal: the reversed map g satisfies g = f^{-1}, with
// Dg(x) = (Df at f^{-1}(x))^{-1}.
inline DiscreteMap reversed(const DiscreteMap& map) {
  DiscreteMap r;
  r.dimension = map.dimension;
  r.descriptor = map.descriptor + "|reversed";
  r.orbit_cap = map.orbit_cap;
  r.forward = map.inverse;
  r.inverse = map.forward;
  auto deriv = map.derivative;
  auto inv = map.inverse;
  r.derivative = [deriv, inv](const TorusPoint& x) -> Mat {
    Mat d = deriv(inv(x));
    return d.inverse();
  };
  return r;
}

// ---------------------------------------------------------------------------
// Trigonometric-polynomial perturbations of a unimodular linear torus map:
//   f(x) = A x + sum_t amp_t * trig_t(2 pi <k_t, x> + phase_t) e_{coord_t}
// ---------------------------------------------------------------------------

struct TrigTerm {
  int coord = 0;
  bool is_sin = true;
  double amp = 0.0;
  Eigen::VectorXi freq;
  double phase = 0.0;
};

struct TrigMapSpec {
  int dim = 2;
  Eigen::MatrixXi linear;
  std::vector<TrigTerm> terms;
  std::string label;
};

namespace detail {

constexpr double kTwoPi = 6.283185307179586476925286766559;

inline Vec trig_map_lift(const TrigMapSpec& spec, const Vec& x) {
  Vec y = spec.linear.cast<double>() * x;
  for (const auto& t : spec.terms) {
    double arg = kTwoPi * (t.freq.cast<double>().dot(x)) + t.phase;
    y[t.coord] += t.amp * (t.is_sin ? std::sin(arg) : std::cos(arg));
  }
  return y;
}

inline Mat trig_map_jacobian(const TrigMapSpec& spec, const Vec& x) {
  Mat j = spec.linear.cast<double>();
  for (const auto& t : spec.terms) {
    double arg = kTwoPi * (t.freq.cast<double>().dot(x)) + t.phase;
    double dtrig = t.is_sin ? std::cos(arg) : -std::sin(arg);
    j.row(t.coord) += (t.amp * dtrig * kTwoPi) * t.freq.cast<double>().transpose();
  }
  return j;
}

}  // namespace detail

// Solves f(w) = z on the torus by damped-free Newton seeded at A^{-1} z.
// Tolerance 1e-13, at most 50 iterations.
inline TorusPoint trig_map_inverse(const TrigMapSpec& spec, const TorusPoint& z,
                                   double tol = 1e-13, int max_iter = 50) {
  Mat ainv = spec.linear.cast<double>().inverse();
  Vec w = ainv * z.coords;
  TorusPoint wp{Vec(w)};
  for (int it = 0; it < max_iter; ++it) {
    TorusPoint fw{Vec(detail::trig_map_lift(spec, wp.coords))};
    Vec r = torus_diff(z, fw);
    if (r.norm() <= tol) return wp;
    Mat j = detail::trig_map_jacobian(spec, wp.coords);
    Vec step = j.partialPivLu().solve(r);
    wp = torus_translate(wp, step);
  }
  throw solver_error("trig_map_inverse: Newton did not reach tolerance for " + spec.label);
}

inline DiscreteMap make_trig_map(const TrigMapSpec& spec) {
  if (spec.linear.rows() != spec.dim || spec.linear.cols() != spec.dim)
    throw usage_error("map spec: linear part must be dim x dim");
  double det = spec.linear.cast<double>().determinant();
  if (std::abs(std::abs(det) - 1.0) > 1e-9)
    throw usage_error("map spec: linear part must be unimodular (|det| = 1), got det=" +
                      std::to_string(det));
  for (const auto& t : spec.terms) {
    if (t.coord < 0 || t.coord >= spec.dim || t.freq.size() != spec.dim)
      throw usage_error("map spec: malformed trig term");
  }
  auto sp = std::make_shared<TrigMapSpec>(spec);
  DiscreteMap m;
  m.dimension = spec.dim;
  m.descriptor = spec.label;
  m.forward = [sp](const TorusPoint& x) {
    return TorusPoint(Vec(detail::trig_map_lift(*sp, x.coords)));
  };
  if (spec.terms.empty()) {
    // purely linear: direct inverse, no iteration
    auto ainv = std::make_shared<Mat>(spec.linear.cast<double>().inverse());
    m.inverse = [ainv](const TorusPoint& z) { return TorusPoint(Vec(*ainv * z.coords)); };
  } else {
    m.inverse = [sp](const TorusPoint& z) { return trig_map_inverse(*sp, z); };
  }
  m.derivative = [sp](const TorusPoint& x) { return detail::trig_map_jacobian(*sp, x.coords); };
  return m;
}

// ---------------------------------------------------------------------------
// Built-in systems and the descriptor registry
// ---------------------------------------------------------------------------

inline TrigMapSpec cat_map_spec() {
  TrigMapSpec s;
  s.dim = 2;
  s.linear.resize(2, 2);
  s.linear << 2, 1, 1, 1;
  s.label = "cat";
  return s;
}

// f_delta(x,y) = A(x,y) + (delta/2pi)(sin 2 pi x, 0) mod 1
inline TrigMapSpec perturbed_cat_spec(double delta) {
  TrigMapSpec s = cat_map_spec();
  TrigTerm t;
  t.coord = 0;
  t.is_sin = true;
  t.amp = delta / detail::kTwoPi;
  t.freq.resize(2);
  t.freq << 1, 0;
  s.terms.push_back(t);
  std::ostringstream lbl;
  lbl << "perturbed-cat:delta=" << format_double(delta);
  s.label = lbl.str();
  return s;
}

inline TrigMapSpec identity_map_spec(int dim = 2) {
  TrigMapSpec s;
  s.dim = dim;
  s.linear = Eigen::MatrixXi::Identity(dim, dim);
  s.label = "identity";
  return s;
}

// Coefficient file, plain text key=value, one key per line, '#' comments:
//   dim=2
//   A=2 1 1 1                      (row-major integers)
//   term=0 sin 0.01 1 0 0.0        (coord fn amp k_1..k_d phase)
inline TrigMapSpec load_map_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw usage_error("cannot open map file: " + path);
  TrigMapSpec s;
  s.dim = 0;
  s.label = "file:" + path;
  std::string line;
  int lineno = 0;
  std::vector<std::string> term_lines;
  while (std::getline(in, line)) {
    ++lineno;
    auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    std::string trimmed;
    for (char c : line)
      if (!std::isspace(static_cast<unsigned char>(c)) || !trimmed.empty()) trimmed += c;
    while (!trimmed.empty() && std::isspace(static_cast<unsigned char>(trimmed.back())))
      trimmed.pop_back();
    if (trimmed.empty()) continue;
    auto eq = trimmed.find('=');
    if (eq == std::string::npos)
      throw usage_error(path + ":" + std::to_string(lineno) + ": expected key=value");
    std::string key = trimmed.substr(0, eq);
    std::string val = trimmed.substr(eq + 1);
    if (key == "dim") {
      s.dim = std::stoi(val);
    } else if (key == "A") {
      if (s.dim <= 0) throw usage_error(path + ": dim must precede A");
      std::istringstream vs(val);
      s.linear.resize(s.dim, s.dim);
      for (int r = 0; r < s.dim; ++r)
        for (int c = 0; c < s.dim; ++c)
          if (!(vs >> s.linear(r, c)))
            throw usage_error(path + ":" + std::to_string(lineno) + ": A needs dim*dim integers");
    } else if (key == "term") {
      term_lines.push_back(val);
    } else {
      throw usage_error(path + ":" + std::to_string(lineno) + ": unknown key '" + key + "'");
    }
  }
  if (s.dim <= 0 || s.linear.size() == 0) throw usage_error(path + ": missing dim or A");
  for (const auto& tl : term_lines) {
    std::istringstream vs(tl);
    TrigTerm t;
    std::string fn;
    if (!(vs >> t.coord >> fn >> t.amp)) throw usage_error(path + ": malformed term '" + tl + "'");
    if (fn != "sin" && fn != "cos") throw usage_error(path + ": term fn must be sin or cos");
    t.is_sin = (fn == "sin");
    t.freq.resize(s.dim);
    for (int i = 0; i < s.dim; ++i)
      if (!(vs >> t.freq[i])) throw usage_error(path + ": term needs " + std::to_string(s.dim) + " frequencies");
    if (!(vs >> t.phase)) t.phase = 0.0;
    s.terms.push_back(t);
  }
  return s;
}

// Registry addressed by text descriptor: "cat", "identity",
// "perturbed-cat:delta=0.1", "file:<path>".
inline DiscreteMap make_map(const std::string& descriptor) {
  if (descriptor == "cat") return make_trig_map(cat_map_spec());
  if (descriptor == "identity") return make_trig_map(identity_map_spec());
  const std::string pc = "perturbed-cat";
  if (descriptor.rfind(pc, 0) == 0) {
    double delta = 0.1;
    auto colon = descriptor.find(':');
    if (colon != std::string::npos) {
      std::string args = descriptor.substr(colon + 1);
      auto eq = args.find('=');
      if (eq == std::string::npos || args.substr(0, eq) != "delta")
        throw usage_error("perturbed-cat expects ':delta=<value>', got '" + descriptor + "'");
      delta = std::stod(args.substr(eq + 1));
    }
    return make_trig_map(perturbed_cat_spec(delta));
  }
  if (descriptor.rfind("file:", 0) == 0) return make_trig_map(load_map_file(descriptor.substr(5)));
  throw usage_error("unknown system descriptor: '" + descriptor + "'");
}

// Spot-checks the DiscreteMap contract on random points: composition
// inverse(forward(x)) = x to 1e-12 and an invertible derivative everywhere
// sampled. Throws verification_error on failure.
inline void validate_map(const DiscreteMap& map, int samples = 1000, std::uint64_t seed = 7) {
  std::mt19937_64 rng(seed);
  for (int i = 0; i < samples; ++i) {
    Vec c(map.dimension);
    for (int k = 0; k < map.dimension; ++k) c[k] = uniform01(rng);
    TorusPoint x{c};
    TorusPoint back = map.inverse(map.forward(x));
    if (torus_distance(back, x) > 1e-12)
      throw verification_error("map " + map.descriptor + ": inverse(forward(x)) != x");
    Eigen::JacobiSVD<Mat> svd(map.derivative(x));
    if (svd.singularValues().minCoeff() <= 1e-10)
      throw verification_error("map " + map.descriptor + ": derivative near-singular");
  }
}

}  // namespace resodyn
