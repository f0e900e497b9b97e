#pragma once

// Test-only reference implementations. They trade speed for directness and
// share no code paths with the library beyond plain data types.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numbers>
#include <set>
#include <vector>

#include "lsp/criterion.hpp"
#include "lsp/geometry.hpp"
#include "lsp/metrics.hpp"
#include "lsp/radial_bounds.hpp"
#include "lsp/random.hpp"

namespace oracle {

using lsp::BinaryMask;
using lsp::Vec2;

// Franklin's crossing test.
inline bool point_in_polygon(const std::vector<Vec2>& poly, double x, double y) {
  bool inside = false;
  const std::size_t n = poly.size();
  for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
    const Vec2 a = poly[i], b = poly[j];
    if (((a.y > y) != (b.y > y)) && (x < (b.x - a.x) * (y - a.y) / (b.y - a.y) + a.x)) {
      inside = !inside;
    }
  }
  return inside;
}

inline std::set<std::pair<int, int>> rasterize_by_pip(const std::vector<Vec2>& poly, int w, int h) {
  std::set<std::pair<int, int>> out;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (point_in_polygon(poly, x + 0.5, y + 0.5)) out.insert({x, y});
    }
  }
  return out;
}

// ---------------------------------------------------------------- bounds

struct Crossing {
  int cx, cy;      // cell entered (may lie outside the frame)
  double t;        // ray parameter of entry
};

// Cells visited by the ray from `start` along `dir`, found by sampling every
// `step` px and refining between samples whose cells are not edge
// neighbours, until the frame is left. Entry parameters come from bisection.
inline std::vector<Crossing> march(Vec2 start, Vec2 dir, int w, int h, double step = 0.05) {
  auto cell_at = [&](double t) {
    return std::pair<int, int>{static_cast<int>(std::floor(start.x + t * dir.x)),
                               static_cast<int>(std::floor(start.y + t * dir.y))};
  };
  auto outside = [&](std::pair<int, int> c) {
    return c.first < 0 || c.second < 0 || c.first >= w || c.second >= h;
  };
  std::vector<Crossing> out;
  std::function<void(double, std::pair<int, int>, double, std::pair<int, int>, int)> refine =
      [&](double a, std::pair<int, int> ca, double b, std::pair<int, int> cb, int depth) {
        if (ca == cb) return;
        const int manhattan = std::abs(ca.first - cb.first) + std::abs(ca.second - cb.second);
        if (manhattan == 1 || depth >= 40) {
          double lo = a, hi = b;
          for (int it = 0; it < 60 && hi - lo > 1e-12; ++it) {
            const double mid = 0.5 * (lo + hi);
            (cell_at(mid) == ca ? lo : hi) = mid;
          }
          out.push_back({cb.first, cb.second, hi});
          return;
        }
        const double mid = 0.5 * (a + b);
        const auto cm = cell_at(mid);
        refine(a, ca, mid, cm, depth + 1);
        if (!out.empty() && outside({out.back().cx, out.back().cy})) return;
        refine(mid, cm, b, cb, depth + 1);
      };
  double t = 0.0;
  auto cell = cell_at(0.0);
  while (true) {
    const double next = t + step;
    const auto c = cell_at(next);
    refine(t, cell, next, c, 0);
    if (!out.empty() && outside({out.back().cx, out.back().cy})) break;
    t = next;
    cell = c;
  }
  // A ray through a lattice corner touches the two side cells in a single
  // point; rounding can turn that into a visit of ~1e-15 px. Drop those.
  std::vector<Crossing> kept;
  auto prev = cell_at(0.0);
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (i + 1 < out.size() && out[i + 1].t - out[i].t < 1e-9 &&
        std::abs(out[i + 1].cx - prev.first) == 1 && std::abs(out[i + 1].cy - prev.second) == 1)
      continue;
    kept.push_back(out[i]);
    prev = {out[i].cx, out[i].cy};
  }
  return kept;
}

struct MarchedBounds {
  std::vector<double> r_min;  // (y * w + x) * 64 + k
  std::vector<double> r_max;
};

inline MarchedBounds march_bounds(const std::vector<BinaryMask>& masks, int w, int h) {
  const std::size_t cells = static_cast<std::size_t>(w) * h;
  std::vector<std::vector<int>> owners(cells);
  for (std::size_t m = 0; m < masks.size(); ++m) {
    for (auto idx : masks[m].indices()) owners[idx].push_back(static_cast<int>(m));
  }
  MarchedBounds out;
  out.r_min.assign(cells * lsp::kRayCount, 0.0);
  out.r_max.assign(cells * lsp::kRayCount, 0.0);
  const double inf = std::numeric_limits<double>::infinity();
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const auto& mine = owners[static_cast<std::size_t>(y) * w + x];
      if (mine.empty()) continue;
      for (int k = 0; k < lsp::kRayCount; ++k) {
        const double angle = 2.0 * std::numbers::pi * k / lsp::kRayCount;
        const Vec2 dir{std::cos(angle), std::sin(angle)};
        const auto path = march({x + 0.5, y + 0.5}, dir, w, h);
        double lo = inf, hi = inf;
        std::vector<bool> left(mine.size(), false);
        for (const auto& c : path) {
          const bool out_of_frame = c.cx < 0 || c.cy < 0 || c.cx >= w || c.cy >= h;
          const std::vector<int> empty;
          const auto& here =
              out_of_frame ? empty : owners[static_cast<std::size_t>(c.cy) * w + c.cx];
          for (std::size_t i = 0; i < mine.size(); ++i) {
            if (left[i]) continue;
            if (out_of_frame || std::find(here.begin(), here.end(), mine[i]) == here.end()) {
              left[i] = true;
              lo = std::min(lo, c.t);
            }
          }
          if (out_of_frame) break;
          if (here.empty() && hi == inf) hi = c.t;
        }
        const std::size_t at = (static_cast<std::size_t>(y) * w + x) * lsp::kRayCount + k;
        out.r_min[at] = lo;
        out.r_max[at] = hi;
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------- assignment

inline double brute_force_assignment(const std::vector<std::vector<double>>& c) {
  const std::size_t m = c.size();
  if (m == 0) return 0.0;
  const std::size_t n = c[0].size();
  std::vector<bool> used(n, false);
  double best = std::numeric_limits<double>::infinity();
  std::function<void(std::size_t, double)> go = [&](std::size_t row, double acc) {
    if (row == m) {
      best = std::min(best, acc);
      return;
    }
    for (std::size_t j = 0; j < n; ++j) {
      if (used[j]) continue;
      used[j] = true;
      go(row + 1, acc + c[row][j]);
      used[j] = false;
    }
  };
  go(0, 0.0);
  return best;
}

// ---------------------------------------------------------------- focal

// Straight from the definition with explicit probabilities.
inline double focal_direct(const std::vector<double>& logits, int target, double alpha,
                           double gamma) {
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const double q = 1.0 / (1.0 + std::exp(-logits[i]));
    if (static_cast<int>(i) == target) {
      sum += -alpha * std::pow(1.0 - q, gamma) * std::log(q);
    } else {
      sum += -(1.0 - alpha) * std::pow(q, gamma) * std::log(1.0 - q);
    }
  }
  return sum;
}

// ---------------------------------------------------------------- attention

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Plain loops; allowed(i, j) says whether query i may see key j.
inline Mat full_attention(const Mat& q, const Mat& k, const Mat& v, int heads,
                          const std::function<bool(int, int)>& allowed) {
  const int dim = static_cast<int>(q.cols());
  const int hd = dim / heads;
  Mat out = Mat::Zero(q.rows(), dim);
  for (int i = 0; i < q.rows(); ++i) {
    for (int h = 0; h < heads; ++h) {
      std::vector<double> s;
      std::vector<int> idx;
      for (int j = 0; j < k.rows(); ++j) {
        if (!allowed(i, j)) continue;
        double dot = 0.0;
        for (int c = 0; c < hd; ++c) dot += q(i, h * hd + c) * k(j, h * hd + c);
        s.push_back(dot / std::sqrt(static_cast<double>(hd)));
        idx.push_back(j);
      }
      const double peak = *std::max_element(s.begin(), s.end());
      double z = 0.0;
      for (double& x : s) z += (x = std::exp(x - peak));
      for (std::size_t t = 0; t < s.size(); ++t) {
        for (int c = 0; c < hd; ++c) out(i, h * hd + c) += s[t] / z * v(idx[t], h * hd + c);
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------- metrics

inline double iou_by_sets(const BinaryMask& a, const BinaryMask& b) {
  std::set<std::uint32_t> sa(a.indices().begin(), a.indices().end());
  std::set<std::uint32_t> sb(b.indices().begin(), b.indices().end());
  std::size_t inter = 0;
  for (auto i : sa) inter += sb.count(i);
  const std::size_t uni = sa.size() + sb.size() - inter;
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

inline double masked_iou_by_sets(const BinaryMask& gt, const BinaryMask& pred,
                                 const BinaryMask& gt_union) {
  std::set<std::uint32_t> g(gt.indices().begin(), gt.indices().end());
  std::set<std::uint32_t> u(gt_union.indices().begin(), gt_union.indices().end());
  std::size_t inter = 0, outside = 0;
  for (auto i : pred.indices()) {
    inter += g.count(i);
    outside += u.count(i) ? 0 : 1;
  }
  const std::size_t denom = g.size() + outside;
  return denom == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(denom);
}

struct BrutePq {
  double best_sum = 0.0;  // summed score of the eligible pairs in the best matching
  std::size_t tp = 0;
};

// Exhaustive search over partial matchings restricted to pairs above the
// threshold, maximizing the summed score.
inline BrutePq brute_force_pairing(const std::vector<std::vector<double>>& s, double thr) {
  const std::size_t m = s.size();
  const std::size_t n = m ? s[0].size() : 0;
  std::vector<bool> used(n, false);
  BrutePq best;
  std::function<void(std::size_t, double, std::size_t)> go = [&](std::size_t row, double acc,
                                                                 std::size_t tp) {
    if (row == m) {
      if (acc > best.best_sum + 1e-15 || (std::abs(acc - best.best_sum) <= 1e-15 && tp > best.tp)) {
        best = {acc, tp};
      }
      return;
    }
    go(row + 1, acc, tp);
    for (std::size_t j = 0; j < n; ++j) {
      if (used[j] || !(s[row][j] > thr)) continue;
      used[j] = true;
      go(row + 1, acc + s[row][j], tp + 1);
      used[j] = false;
    }
  };
  go(0, 0.0, 0);
  return best;
}

inline double pq_from(double tp_sum, std::size_t tp, std::size_t fp, std::size_t fn) {
  if (tp == 0) return 0.0;
  return (tp_sum / tp) * (tp / (tp + 0.5 * fp + 0.5 * fn));
}

// ---------------------------------------------------------------- distance

// Nearest uncovered pixel center, scanning a window that reaches one pixel
// beyond the frame on every side.
inline std::vector<double> brute_edt(const BinaryMask& m) {
  const int w = m.width(), h = m.height();
  std::vector<bool> covered(static_cast<std::size_t>(w) * h, false);
  for (auto idx : m.indices()) covered[idx] = true;
  std::vector<double> out(covered.size(), 0.0);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (!covered[static_cast<std::size_t>(y) * w + x]) continue;
      double best = std::numeric_limits<double>::infinity();
      for (int by = -1; by <= h; ++by) {
        for (int bx = -1; bx <= w; ++bx) {
          const bool in = bx >= 0 && by >= 0 && bx < w && by < h;
          if (in && covered[static_cast<std::size_t>(by) * w + bx]) continue;
          best = std::min(best, std::hypot(double(bx - x), double(by - y)));
        }
      }
      out[static_cast<std::size_t>(y) * w + x] = best;
    }
  }
  return out;
}

// ---------------------------------------------------------------- scenes

// Random filled ellipse, possibly touching or crossing the frame.
inline BinaryMask random_blob(lsp::Rng& rng, int w, int h, double min_axis, double max_axis) {
  const double cx = rng.uniform(-1.0, w + 1.0), cy = rng.uniform(-1.0, h + 1.0);
  const double ax = rng.uniform(min_axis, max_axis), ay = rng.uniform(min_axis, max_axis);
  const double th = rng.uniform(0.0, std::numbers::pi);
  const double c = std::cos(th), s = std::sin(th);
  std::vector<std::uint32_t> idx;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double dx = x + 0.5 - cx, dy = y + 0.5 - cy;
      const double u = (c * dx + s * dy) / ax, v = (-s * dx + c * dy) / ay;
      if (u * u + v * v <= 1.0) idx.push_back(static_cast<std::uint32_t>(y * w + x));
    }
  }
  return BinaryMask(w, h, std::move(idx));
}

// Disc of radius rad around (cx, cy) in pixels.
inline BinaryMask disc(int w, int h, double cx, double cy, double rad) {
  std::vector<std::uint32_t> idx;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (std::hypot(x + 0.5 - cx, y + 0.5 - cy) <= rad)
        idx.push_back(static_cast<std::uint32_t>(y * w + x));
    }
  }
  return BinaryMask(w, h, std::move(idx));
}

// Masks whose 8-neighbourhood dilations are pairwise disjoint and which keep
// a one-pixel margin to the frame.
inline std::vector<BinaryMask> separated_blobs(lsp::Rng& rng, int w, int h, int count) {
  std::vector<BinaryMask> out;
  std::vector<bool> blocked(static_cast<std::size_t>(w) * h, false);
  for (int attempt = 0; attempt < count * 20 && static_cast<int>(out.size()) < count; ++attempt) {
    auto m = random_blob(rng, w, h, 1.0, std::max(2.0, w / 4.0));
    if (m.empty()) continue;
    bool ok = true;
    for (auto idx : m.indices()) {
      const int x = static_cast<int>(idx % w), y = static_cast<int>(idx / w);
      if (x == 0 || y == 0 || x == w - 1 || y == h - 1 || blocked[idx]) ok = false;
    }
    if (!ok) continue;
    for (auto idx : m.indices()) {
      const int x = static_cast<int>(idx % w), y = static_cast<int>(idx / w);
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          const int nx = x + dx, ny = y + dy;
          if (nx >= 0 && ny >= 0 && nx < w && ny < h) blocked[static_cast<std::size_t>(ny) * w + nx] = true;
        }
    }
    out.push_back(std::move(m));
  }
  return out;
}

// Painter's order: later masks overwrite earlier ones. Ids start at 1.
inline lsp::LabelRaster paint(const std::vector<BinaryMask>& masks, int w, int h) {
  lsp::LabelRaster lr;
  lr.width = w;
  lr.height = h;
  lr.ids.assign(static_cast<std::size_t>(w) * h, 0);
  lr.class_names = {"nucleus"};
  for (std::size_t i = 0; i < masks.size(); ++i)
    for (auto idx : masks[i].indices()) lr.ids[idx] = static_cast<std::uint32_t>(i + 1);
  for (auto id : lr.ids)
    if (id) lr.instance_class[id] = 0;
  return lr;
}

struct TableDiff {
  double max_error = 0.0;         // over entries finite in both
  std::size_t infinity_mismatch = 0;
  std::size_t lower_above_upper = 0;
};

inline TableDiff compare_tables(const lsp::BoundTables& t, const MarchedBounds& m) {
  TableDiff d;
  for (std::size_t i = 0; i < m.r_min.size(); ++i) {
    const double lo = t.lower_data()[i], hi = t.upper_data()[i];
    d.max_error = std::max(d.max_error, std::abs(lo - m.r_min[i]));
    if (std::isinf(hi) != std::isinf(m.r_max[i])) {
      ++d.infinity_mismatch;
    } else if (!std::isinf(hi)) {
      d.max_error = std::max(d.max_error, std::abs(hi - m.r_max[i]));
    }
    if (lo > hi) ++d.lower_above_upper;
  }
  return d;
}

// Smallest distance (pixels) from the configuration to any place where the
// loss is not differentiable with the assignment held fixed: pixel edges and
// pixel-center lines crossed by a matched position, zero point offsets, and
// radii equal to an interpolated bound.
inline double kink_margin(const lsp::GroundTruthSet& gt, const lsp::PredictionSet& pred,
                          const lsp::BoundTables& tables, const lsp::MatchResult& match) {
  double margin = std::numeric_limits<double>::infinity();
  auto frac_gap = [](double v) {
    const double f = v - std::floor(v);
    return std::min({f, 1.0 - f, std::abs(f - 0.5)});
  };
  for (std::size_t j = 0; j < gt.size(); ++j) {
    const auto& d = pred.items[static_cast<std::size_t>(match.row_to_col[j])];
    const Vec2 q{d.p.x * gt.width, d.p.y * gt.height};
    margin = std::min({margin, frac_gap(q.x), frac_gap(q.y),
                       std::abs(q.x - gt.instances[j].centroid.x),
                       std::abs(q.y - gt.instances[j].centroid.y)});
    if (!lsp::point_in_mask(gt.union_mask, q)) continue;
    const auto row = lsp::lookup_bounds(tables, q);
    for (int k = 0; k < lsp::kRayCount; ++k) {
      margin = std::min(margin, std::abs(d.r[k] - row.r_min[k]));
      if (std::isfinite(row.r_max[k])) margin = std::min(margin, std::abs(d.r[k] - row.r_max[k]));
    }
  }
  return margin;
}

// Ground truth plus a noisy copy: some instances jittered, some dropped,
// some spurious additions.
inline std::pair<lsp::InstanceSet, lsp::InstanceSet> noisy_pair(lsp::Rng& rng, int max_instances, int classes) {
  const int w = 24, h = 24;
  lsp::InstanceSet gt{w, h, {}, {}}, pred{w, h, {}, {}};
  const int n = 1 + static_cast<int>(rng.below(max_instances));
  for (int i = 0; i < n; ++i) {
    auto m = random_blob(rng, w, h, 2.0, 6.0);
    if (m.empty()) continue;
    gt.masks.push_back(m);
    gt.classes.push_back(static_cast<int>(rng.below(classes)));
  }
  for (std::size_t i = 0; i < gt.masks.size(); ++i) {
    if (rng.uniform() < 0.2) continue;
    std::vector<std::uint32_t> idx;
    const int dx = static_cast<int>(rng.below(3)) - 1, dy = static_cast<int>(rng.below(3)) - 1;
    for (auto p : gt.masks[i].indices()) {
      const int x = static_cast<int>(p % w) + dx, y = static_cast<int>(p / w) + dy;
      if (x >= 0 && y >= 0 && x < w && y < h && rng.uniform() < 0.9)
        idx.push_back(static_cast<std::uint32_t>(y * w + x));
    }
    if (idx.empty()) continue;
    pred.masks.emplace_back(w, h, idx);
    pred.classes.push_back(rng.uniform() < 0.8 ? gt.classes[i] : static_cast<int>(rng.below(classes)));
  }
  const int extra = static_cast<int>(rng.below(2));
  for (int i = 0; i < extra; ++i) {
    auto m = random_blob(rng, w, h, 2.0, 5.0);
    if (m.empty()) continue;
    pred.masks.push_back(m);
    pred.classes.push_back(static_cast<int>(rng.below(classes)));
  }
  return {gt, pred};
}

}  // namespace oracle
