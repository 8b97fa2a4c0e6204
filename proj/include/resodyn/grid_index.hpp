#pragma once

#include <cstddef>
#include <limits>
#include <utility>
#include <vector>

#include "resodyn/torus.hpp"

namespace resodyn {

// Uniform-grid nearest-neighbor index on the 2-torus with wrap-around ring
// search. Cell size is fixed at construction.
class TorusGridIndex {
 public:
  explicit TorusGridIndex(double cell) {
    n_ = std::max(1, static_cast<int>(std::floor(1.0 / std::max(cell, 1e-6))));
    n_ = std::min(n_, 4096);
    buckets_.resize(static_cast<size_t>(n_) * n_);
  }

  void insert(const TorusPoint& p, long id) {
    pts_.push_back(p.coords);
    ids_.push_back(id);
    buckets_[bucket_of(p.coords)].push_back(pts_.size() - 1);
  }

  size_t size() const { return pts_.size(); }

  // Nearest stored point within max_dist (torus metric); (-1, inf) if none.
  // skip_slot excludes one stored slot (for nearest-other-point queries).
  std::pair<long, double> nearest(const TorusPoint& p, double max_dist,
                                  std::ptrdiff_t skip_slot = -1) const {
    long best_id = -1;
    double best = max_dist;
    int max_ring = std::min(n_ / 2 + 1, static_cast<int>(std::ceil(best * n_)) + 1);
    int cx = cell_coord(p.coords[0]), cy = cell_coord(p.coords[1]);
    for (int ring = 0; ring <= max_ring; ++ring) {
      // once a hit exists, rings beyond hit_ring+1 cannot improve
      if (best_id >= 0 && ring > static_cast<int>(std::ceil(best * n_)) + 1) break;
      bool any_cell = false;
      for (int dy = -ring; dy <= ring; ++dy) {
        for (int dx = -ring; dx <= ring; ++dx) {
          if (std::max(std::abs(dx), std::abs(dy)) != ring) continue;
          if (n_ <= 2 * ring && ring > 0) continue;  // grid smaller than ring: already covered
          any_cell = true;
          const auto& b = buckets_[bucket(cx + dx, cy + dy)];
          for (size_t slot : b) {
            if (static_cast<std::ptrdiff_t>(slot) == skip_slot) continue;
            double d = torus_diff(pts_[slot], p.coords).norm();
            if (d < best) {
              best = d;
              best_id = ids_[slot];
            }
          }
        }
      }
      if (!any_cell && ring > 0) break;
    }
    return {best_id, best_id >= 0 ? best : std::numeric_limits<double>::infinity()};
  }

  bool any_within(const TorusPoint& p, double r) const { return nearest(p, r).first >= 0; }

  // Largest nearest-other-point distance over the stored cloud (the
  // covering-radius report). Exact for clouds up to `cap` points, computed
  // on the first `cap` points otherwise.
  double covering_radius(size_t cap = 20000) const {
    if (pts_.size() < 2) return pts_.empty() ? 0.0 : torus_diameter(2);
    double worst = 0.0;
    size_t m = std::min(pts_.size(), cap);
    for (size_t i = 0; i < m; ++i) {
      auto [id, d] = nearest(TorusPoint(Vec(pts_[i])), torus_diameter(2) + 1e-9,
                             static_cast<std::ptrdiff_t>(i));
      (void)id;
      worst = std::max(worst, d);
    }
    return worst;
  }

 private:
  int cell_coord(double v) const {
    int c = static_cast<int>(std::floor(v * n_));
    c %= n_;
    return c < 0 ? c + n_ : c;
  }
  size_t bucket(int x, int y) const {
    x %= n_;
    y %= n_;
    if (x < 0) x += n_;
    if (y < 0) y += n_;
    return static_cast<size_t>(y) * n_ + x;
  }
  size_t bucket_of(const Vec& p) const { return bucket(cell_coord(p[0]), cell_coord(p[1])); }

  int n_;
  std::vector<std::vector<size_t>> buckets_;
  std::vector<Vec> pts_;
  std::vector<long> ids_;
};

}  // namespace resodyn
