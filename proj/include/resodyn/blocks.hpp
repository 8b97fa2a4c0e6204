#pragma once

#include <algorithm>
#include <deque>
#include <memory>
#include <optional>
#include <vector>

#include "resodyn/cocycle.hpp"
#include "resodyn/grid_index.hpp"

namespace resodyn {

struct ExponentPair {
  double chi_e_minus = 0.0;  // co-norm rate along E
  double chi_f_plus = 0.0;   // norm rate along F
};

// Smallness rule epsilon_0 = min(|chi|/10, gap/10); default epsilon is half.
inline double epsilon_zero(const ExponentPair& chi) {
  return std::min({std::abs(chi.chi_e_minus) / 10.0, std::abs(chi.chi_f_plus) / 10.0,
                   std::abs(chi.chi_e_minus - chi.chi_f_plus) / 10.0});
}
inline double default_epsilon(const ExponentPair& chi) { return epsilon_zero(chi) / 2.0; }

namespace detail {

// Forward recurrence a1_{n+1} = max(1, b_n * a1_n), log domain, a1_0 = 1.
inline std::vector<double> a1_from_logb(const std::vector<double>& log_b) {
  std::vector<double> a1(log_b.size() + 1, 0.0);
  for (size_t n = 0; n < log_b.size(); ++n) a1[n + 1] = std::max(0.0, log_b[n] + a1[n]);
  return a1;
}

// Windowed backward sup a2_n = max(1, sup_{1<=j<=W} prod_{i=n}^{n+j-1} b_i),
// evaluated as a sliding-window maximum of prefix sums. Equals running the
// backward recurrence eq-style from n+W with value 1.
inline std::vector<double> a2_from_logb(const std::vector<double>& log_b, long window) {
  long L = static_cast<long>(log_b.size());
  if (window > L) throw precondition_error("resonance_sequences: window longer than orbit");
  std::vector<double> S(static_cast<size_t>(L) + 1, 0.0);
  for (long i = 0; i < L; ++i) S[static_cast<size_t>(i + 1)] = S[static_cast<size_t>(i)] + log_b[static_cast<size_t>(i)];
  long count = L - window + 1;
  std::vector<double> a2(static_cast<size_t>(count), 0.0);
  std::deque<long> dq;  // indices m with decreasing S[m]
  // window for position n is m in (n, n+W]; scan n from high to low
  for (long n = count - 1; n >= 0; --n) {
    long incoming = n + 1;  // enters the window as n decreases
    while (!dq.empty() && S[static_cast<size_t>(dq.back())] <= S[static_cast<size_t>(incoming)]) dq.pop_back();
    dq.push_back(incoming);
    while (dq.front() > n + window) dq.pop_front();
    a2[static_cast<size_t>(n)] = std::max(0.0, S[static_cast<size_t>(dq.front())] - S[static_cast<size_t>(n)]);
  }
  return a2;
}

}  // namespace detail

// Resonance sequences a^1_n, a^2_n along one orbit (log domain). The
// per-step ratio is b_n = max( ||Df|F(x_n)|| / e^{chi_F^+ + eps},
// e^{chi_E^- - eps} / m(Df|E(x_n)) ); a^1 follows the forward recurrence,
// a^2 the backward one truncated at `window` (flagged windowed: values are
// lower bounds for the untruncated sup).
struct ResonanceProfile {
  double epsilon = 0.0;
  ExponentPair chi;
  long length = 0;   // per-step entries
  long window = 0;   // truncation W for the sup over j >= 0
  bool windowed = true;
  std::vector<double> log_b;   // size length
  std::vector<double> log_a1;  // size length+1, indices 0..length
  std::vector<double> log_a2;  // indices 0..length-window
  double log_c0 = 0.0;         // one-step growth constant over the orbit
  TorusPoint base;

  long a2_count() const { return static_cast<long>(log_a2.size()); }
  // largest index for which both sequences are defined
  long domain() const { return a2_count(); }
  double log_max_a(long n) const {
    return std::max(log_a1[static_cast<size_t>(n)], log_a2[static_cast<size_t>(n)]);
  }
};

inline ResonanceProfile resonance_sequences(const CocycleStats& stats, const TorusPoint& base,
                                            ExponentPair chi, double epsilon, long window) {
  if (epsilon <= 0) throw precondition_error("resonance_sequences: epsilon must be positive");
  if (stats.dims.size() != 2) throw precondition_error("resonance_sequences: needs E,F bundles");
  ResonanceProfile p;
  p.epsilon = epsilon;
  p.chi = chi;
  p.length = stats.length;
  p.window = window;
  p.base = base;
  p.log_b.resize(static_cast<size_t>(stats.length));
  double worst = 0.0;
  for (long i = 0; i < stats.length; ++i) {
    double rf = stats.lognorm[1][static_cast<size_t>(i)] - (chi.chi_f_plus + epsilon);
    double re = (chi.chi_e_minus - epsilon) - stats.logconorm[0][static_cast<size_t>(i)];
    p.log_b[static_cast<size_t>(i)] = std::max(rf, re);
    worst = std::max({worst, std::abs(rf), std::abs(re)});
  }
  p.log_c0 = worst;
  p.log_a1 = detail::a1_from_logb(p.log_b);
  p.log_a2 = detail::a2_from_logb(p.log_b, window);
  return p;
}

// H_t = { n : max(a1_n, a2_n) <= t } over the profile domain, with density
// estimates over growing prefixes.
struct ResonanceTimeSet {
  double t = 1.0;
  std::vector<long> times;
  long domain = 0;
  double density = 0.0;        // #times / domain
  double density_lower = 0.0;  // min prefix density over the later half
  double density_upper = 0.0;  // max prefix density over the later half
};

inline ResonanceTimeSet resonance_times(const ResonanceProfile& p, double t) {
  if (t < 1.0) throw precondition_error("resonance_times: level t must be >= 1");
  ResonanceTimeSet r;
  r.t = t;
  r.domain = p.domain();
  double log_t = std::log(t);
  std::vector<double> prefix_density;
  long hits = 0;
  for (long n = 0; n < r.domain; ++n) {
    if (p.log_max_a(n) <= log_t) {
      r.times.push_back(n);
      ++hits;
    }
    prefix_density.push_back(static_cast<double>(hits) / static_cast<double>(n + 1));
  }
  r.density = r.domain > 0 ? static_cast<double>(hits) / static_cast<double>(r.domain) : 0.0;
  if (!prefix_density.empty()) {
    size_t half = prefix_density.size() / 2;
    r.density_lower = r.density_upper = prefix_density[half];
    for (size_t i = half; i < prefix_density.size(); ++i) {
      r.density_lower = std::min(r.density_lower, prefix_density[i]);
      r.density_upper = std::max(r.density_upper, prefix_density[i]);
    }
  }
  return r;
}

// Finite tail approximation of the resonance block Lambda_t: the orbit
// points at H_t times past tail_start, reported as a point cloud with its
// covering radius (largest nearest-neighbor gap).
struct BlockApproximation {
  double t = 1.0;
  long tail_start = 0;
  std::vector<long> indices;
  std::vector<TorusPoint> points;
  double covering_radius = 0.0;
  std::shared_ptr<TorusGridIndex> index;  // id = position in `indices`

  bool contains_near(const TorusPoint& p, double mesh) const {
    return index && index->any_within(p, mesh);
  }
};

inline BlockApproximation block_points(const OrbitSegment& seg, const ResonanceTimeSet& times,
                                       long tail_start) {
  if (tail_start >= seg.length) throw precondition_error("block_points: tail_start beyond orbit");
  BlockApproximation b;
  b.t = times.t;
  b.tail_start = tail_start;
  for (long n : times.times)
    if (n >= tail_start) b.indices.push_back(n);
  if (b.indices.empty()) throw precondition_error("block_points: empty H_t tail");
  double cell = std::max(1.0 / 512.0, 0.5 / std::sqrt(static_cast<double>(b.indices.size())));
  b.index = std::make_shared<TorusGridIndex>(cell);
  for (size_t i = 0; i < b.indices.size(); ++i) {
    b.points.push_back(seg.points[static_cast<size_t>(b.indices[i])]);
    b.index->insert(b.points.back(), static_cast<long>(i));
  }
  b.covering_radius = b.index->covering_radius();
  return b;
}

// T(x) estimated over a level grid: the smallest level whose block cloud
// has a point within `mesh` of the query.
struct LevelFunction {
  std::vector<double> levels;
  std::vector<std::shared_ptr<TorusGridIndex>> clouds;
  double mesh = 0.0;

  std::optional<double> try_level(const TorusPoint& p) const {
    for (size_t i = 0; i < levels.size(); ++i)
      if (clouds[i] && clouds[i]->any_within(p, mesh)) return levels[i];
    return std::nullopt;
  }
  double level_at(const TorusPoint& p) const {
    auto t = try_level(p);
    if (!t) throw precondition_error("level_estimates: point not covered at any level on the grid");
    return *t;
  }
};

inline LevelFunction level_estimates(const std::vector<BlockApproximation>& blocks, double mesh) {
  LevelFunction lf;
  lf.mesh = mesh;
  for (const auto& b : blocks) {
    lf.levels.push_back(b.t);
    lf.clouds.push_back(b.index);
  }
  return lf;
}

// Tempered-behavior audit: the series (1/k) log T(g^k x0) and its tail
// maxima. The level grid is extended by doubling until it covers max(a)
// over the orbit, so every orbit index is covered and the audit is total.
struct TemperedAudit {
  std::vector<long> ks;               // subsampled checkpoints
  std::vector<double> log_t_over_k;   // at the checkpoints
  double tail_max_half = 0.0;         // max over k in [domain/2, domain]
  double tail_max_quarter = 0.0;      // max over k in [domain/4, domain/2)
  bool pass = false;
  double bound = 0.0;
};

inline TemperedAudit tempered_audit(const OrbitSegment& seg, const ResonanceProfile& profile,
                                    std::vector<double> level_grid, double mesh, double bound) {
  double max_log_a = 0.0;
  for (long n = 0; n < profile.domain(); ++n) max_log_a = std::max(max_log_a, profile.log_max_a(n));
  if (level_grid.empty()) level_grid = {1, 2, 4, 8, 16, 32};
  while (std::log(level_grid.back()) < max_log_a) level_grid.push_back(level_grid.back() * 2.0);

  // tail 0: an audited index witnesses its own level, so the audit is total
  std::vector<BlockApproximation> blocks;
  for (double t : level_grid) {
    auto ht = resonance_times(profile, t);
    if (ht.times.empty()) continue;
    blocks.push_back(block_points(seg, ht, 0));
  }
  LevelFunction lf = level_estimates(blocks, mesh);

  TemperedAudit audit;
  audit.bound = bound;
  long domain = profile.domain();
  long stride = std::max<long>(1, domain / 4000);
  double max_half = 0.0, max_quarter = 0.0;
  for (long k = 1; k < domain; ++k) {
    bool checkpoint = (k % stride == 0) || k + 1 == domain;
    bool in_half = k >= domain / 2;
    bool in_quarter = k >= domain / 4 && k < domain / 2;
    if (!checkpoint && !in_half && !in_quarter) continue;
    auto t = lf.try_level(seg.points[static_cast<size_t>(k)]);
    double v = std::log(t.value_or(level_grid.back())) / static_cast<double>(k);
    if (checkpoint) {
      audit.ks.push_back(k);
      audit.log_t_over_k.push_back(v);
    }
    if (in_half) max_half = std::max(max_half, v);
    if (in_quarter) max_quarter = std::max(max_quarter, v);
  }
  audit.tail_max_half = max_half;
  audit.tail_max_quarter = max_quarter;
  audit.pass = max_half <= bound;
  return audit;
}

// The four finite-window product bounds at a block point (log residuals,
// all must be >= -1e-10 when the index really sits in H_t):
//   [0] backward E co-norm, [1] forward E co-norm,
//   [2] backward F norm,    [3] forward F norm.
struct BlockBoundResiduals {
  long index = 0;
  double residual[4] = {0, 0, 0, 0};
  double min_residual() const {
    return std::min(std::min(residual[0], residual[1]), std::min(residual[2], residual[3]));
  }
};

inline std::vector<BlockBoundResiduals> block_bound_check(const CocycleStats& stats,
                                                          ExponentPair chi, double epsilon,
                                                          double t, const std::vector<long>& indices,
                                                          long k) {
  std::vector<BlockBoundResiduals> out;
  double log_t = std::log(t);
  double rate_e = (chi.chi_e_minus - epsilon) * static_cast<double>(k);
  double rate_f = (chi.chi_f_plus + epsilon) * static_cast<double>(k);
  for (long j : indices) {
    if (j < k || j + k > stats.length)
      throw precondition_error("block_bound_check: insufficient backward or forward orbit at index " +
                               std::to_string(j));
    BlockBoundResiduals r;
    r.index = j;
    r.residual[0] = stats.window_logconorm(0, j - k, k) + log_t - rate_e;
    r.residual[1] = stats.window_logconorm(0, j, k) + log_t - rate_e;
    r.residual[2] = log_t + rate_f - stats.window_lognorm(1, j - k, k);
    r.residual[3] = log_t + rate_f - stats.window_lognorm(1, j, k);
    out.push_back(r);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Power selection (the f -> f^N step): smallest candidate N whose H_1 set
// for the N-power system has orbit density above theta.
// ---------------------------------------------------------------------------

struct PowerSelection {
  int n_power = 1;
  double density = 0.0;
  std::vector<int> candidates;
  std::vector<double> densities;
  bool monotone = true;  // density nondecreasing along the candidate list (audit)
};

// Per-g-step restricted log norms of g = f^N along the f-orbit, by matrix
// products of the one-step frame-coordinate restrictions.
inline CocycleStats power_stats(const OrbitSegment& seg, const Splitting& s, int n_power) {
  CocycleStats st;
  st.dims = s.dims;
  st.length = seg.length / n_power;
  int nb = s.bundles();
  st.lognorm.assign(nb, {});
  st.logconorm.assign(nb, {});
  st.prefix_lognorm.assign(nb, {0.0});
  st.prefix_logconorm.assign(nb, {0.0});
  for (long j = 0; j < st.length; ++j) {
    for (int i = 0; i < nb; ++i) {
      auto [ln, lc] = restricted_norms(seg, s, i, j * n_power, n_power);
      st.lognorm[i].push_back(ln);
      st.logconorm[i].push_back(lc);
      st.prefix_lognorm[i].push_back(st.prefix_lognorm[i].back() + ln);
      st.prefix_logconorm[i].push_back(st.prefix_logconorm[i].back() + lc);
    }
  }
  return st;
}

inline PowerSelection select_power(const OrbitSegment& seg, const Splitting& s, ExponentPair chi_f,
                                   double epsilon, double theta,
                                   std::vector<int> candidates, long window_g) {
  if (theta >= 1.0) throw precondition_error("select_power: theta must lie in [0,1)");
  std::sort(candidates.begin(), candidates.end());
  PowerSelection sel;
  sel.candidates = candidates;
  int chosen = 0;
  for (int n_power : candidates) {
    CocycleStats gs = power_stats(seg, s, n_power);
    ExponentPair chi_g{chi_f.chi_e_minus * n_power, chi_f.chi_f_plus * n_power};
    long w = std::min<long>(window_g, gs.length);
    ResonanceProfile p = resonance_sequences(gs, seg.base, chi_g, epsilon * n_power, w);
    double density = resonance_times(p, 1.0).density;
    sel.densities.push_back(density);
    if (chosen == 0 && (density > theta || theta <= 0.0)) {
      chosen = n_power;
      sel.density = density;
    }
  }
  for (size_t i = 1; i < sel.densities.size(); ++i)
    if (sel.densities[i] < sel.densities[i - 1] - 1e-12) sel.monotone = false;
  if (chosen == 0)
    throw precondition_error("select_power: no candidate achieves the density threshold");
  sel.n_power = chosen;
  return sel;
}

// ---------------------------------------------------------------------------
// Exports
// ---------------------------------------------------------------------------

// CSV: n, log a1_n, log a2_n, one membership flag column per level.
inline void write_blocks_csv(const ResonanceProfile& p, const std::vector<double>& levels,
                             std::ostream& out, const std::string& config_hash = "") {
  if (!config_hash.empty()) out << "# config_hash=" << config_hash << "\n";
  out << "n,log_a1,log_a2";
  for (double t : levels) out << ",H_" << format_double(t);
  out << "\n";
  for (long n = 0; n < p.domain(); ++n) {
    out << n << ',' << format_double(p.log_a1[static_cast<size_t>(n)]) << ','
        << format_double(p.log_a2[static_cast<size_t>(n)]);
    for (double t : levels) out << ',' << (p.log_max_a(n) <= std::log(t) ? 1 : 0);
    out << "\n";
  }
}

}  // namespace resodyn
