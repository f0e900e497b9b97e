#include "lsp/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace lsp {

namespace {

struct DisjointSets {
  std::vector<std::size_t> parent;
  explicit DisjointSets(std::size_t n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
  std::size_t find(std::size_t i) {
    while (parent[i] != i) {
      parent[i] = parent[parent[i]];
      i = parent[i];
    }
    return i;
  }
  void unite(std::size_t a, std::size_t b) {
    a = find(a);
    b = find(b);
    if (a != b) parent[std::max(a, b)] = std::min(a, b);
  }
};

}  // namespace

IouMatch match_scores(const CostMatrix& scores, double threshold) {
  const std::size_t m = scores.rows();
  const std::size_t n = scores.cols();
  IouMatch out;
  std::vector<bool> gt_used(m, false), pred_used(n, false);

  // Only pairs above the threshold interact, so each connected component of
  // that bipartite graph is solved on its own.
  DisjointSets sets(m + n);
  for (std::size_t g = 0; g < m; ++g) {
    for (std::size_t p = 0; p < n; ++p) {
      if (scores(g, p) > threshold) sets.unite(g, m + p);
    }
  }
  std::vector<std::vector<std::size_t>> rows_of(m + n), cols_of(m + n);
  for (std::size_t g = 0; g < m; ++g) rows_of[sets.find(g)].push_back(g);
  for (std::size_t p = 0; p < n; ++p) cols_of[sets.find(m + p)].push_back(p);

  for (std::size_t root = 0; root < m + n; ++root) {
    const auto& rows = rows_of[root];
    const auto& cols = cols_of[root];
    if (rows.empty() || cols.empty()) continue;
    const bool flip = rows.size() > cols.size();
    const auto& a = flip ? cols : rows;
    const auto& b = flip ? rows : cols;
    CostMatrix cost(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      for (std::size_t j = 0; j < b.size(); ++j) {
        const double s = flip ? scores(b[j], a[i]) : scores(a[i], b[j]);
        cost(i, j) = s > threshold ? -s : 0.0;
      }
    }
    const MatchResult res = solve(cost);
    for (std::size_t i = 0; i < a.size(); ++i) {
      const std::size_t j = static_cast<std::size_t>(res.row_to_col[i]);
      const std::size_t g = flip ? b[j] : a[i];
      const std::size_t p = flip ? a[i] : b[j];
      const double s = scores(g, p);
      if (s > threshold) {
        out.tp.push_back({g, p, s});
        gt_used[g] = true;
        pred_used[p] = true;
      }
    }
  }
  std::sort(out.tp.begin(), out.tp.end(),
            [](const MatchedPair& x, const MatchedPair& y) { return x.gt < y.gt; });
  for (std::size_t g = 0; g < m; ++g) {
    if (!gt_used[g]) out.fn.push_back(g);
  }
  for (std::size_t p = 0; p < n; ++p) {
    if (!pred_used[p]) out.fp.push_back(p);
  }
  return out;
}

IouMatch match_by_iou(std::span<const BinaryMask> gt, std::span<const BinaryMask> pred,
                      const BinaryMask* masked_union, double threshold) {
  if (gt.empty() && pred.empty()) return {};
  const BinaryMask& ref = gt.empty() ? pred.front() : gt.front();
  const int w = ref.width();
  const int h = ref.height();
  auto check = [&](const BinaryMask& m) {
    if (m.width() != w || m.height() != h)
      throw std::invalid_argument("match_by_iou: rasters are not aligned");
  };
  for (const auto& m : gt) check(m);
  for (const auto& m : pred) check(m);
  if (masked_union) {
    check(*masked_union);
    for (const auto& m : gt) {
      if (!is_subset(m, *masked_union))
        throw std::invalid_argument("match_by_iou: ground truth outside the masked union");
    }
  }

  // Pixel -> covering ground-truth indices.
  const std::size_t pixels = static_cast<std::size_t>(w) * static_cast<std::size_t>(h);
  std::vector<std::uint32_t> start(pixels + 1, 0);
  for (const auto& m : gt) {
    for (auto idx : m.indices()) ++start[idx + 1];
  }
  for (std::size_t i = 1; i <= pixels; ++i) start[i] += start[i - 1];
  std::vector<std::uint32_t> owner(start.back());
  {
    std::vector<std::uint32_t> cursor(start.begin(), start.end() - 1);
    for (std::size_t g = 0; g < gt.size(); ++g) {
      for (auto idx : gt[g].indices()) owner[cursor[idx]++] = static_cast<std::uint32_t>(g);
    }
  }

  CostMatrix scores(gt.size(), pred.size(), 0.0);
  std::vector<std::size_t> inter(gt.size(), 0);
  std::vector<std::uint32_t> touched;
  for (std::size_t p = 0; p < pred.size(); ++p) {
    touched.clear();
    std::size_t on_union = 0;
    for (auto idx : pred[p].indices()) {
      for (auto k = start[idx]; k < start[idx + 1]; ++k) {
        if (inter[owner[k]]++ == 0) touched.push_back(owner[k]);
      }
    }
    if (masked_union) on_union = intersection_area(pred[p], *masked_union);
    for (auto g : touched) {
      const std::size_t overlap = inter[g];
      const std::size_t denom = masked_union
                                    ? gt[g].area() + (pred[p].area() - on_union)
                                    : gt[g].area() + pred[p].area() - overlap;
      scores(g, p) = static_cast<double>(overlap) / static_cast<double>(denom);
      inter[g] = 0;
    }
  }
  return match_scores(scores, threshold);
}

std::optional<Quality> panoptic_quality(const PqCounts& c) {
  if (!c.defined()) return std::nullopt;
  Quality q;
  if (c.tp > 0) {
    q.sq = c.score_sum / static_cast<double>(c.tp);
    q.rq = static_cast<double>(c.tp) /
           (static_cast<double>(c.tp) + 0.5 * static_cast<double>(c.fp) +
            0.5 * static_cast<double>(c.fn));
  }
  q.pq = q.sq * q.rq;
  return q;
}

std::optional<Quality> panoptic_quality(std::span<const double> tp_scores, std::size_t fp,
                                        std::size_t fn) {
  PqCounts c;
  c.tp = tp_scores.size();
  c.fp = fp;
  c.fn = fn;
  for (double s : tp_scores) c.score_sum += s;
  return panoptic_quality(c);
}

PqCounts counts_of(const IouMatch& match) {
  PqCounts c;
  c.tp = match.tp.size();
  c.fp = match.fp.size();
  c.fn = match.fn.size();
  for (const auto& pair : match.tp) c.score_sum += pair.score;
  return c;
}

ImageEvaluation evaluate_image(const InstanceSet& gt, const InstanceSet& pred, int num_classes) {
  if (num_classes < 1) throw std::invalid_argument("evaluate_image: need at least one class");
  if (gt.width != pred.width || gt.height != pred.height)
    throw std::invalid_argument("evaluate_image: raster sizes differ");
  auto check = [&](const InstanceSet& s) {
    if (s.masks.size() != s.classes.size())
      throw std::invalid_argument("evaluate_image: one class per mask required");
    for (int c : s.classes) {
      if (c < 0 || c >= num_classes)
        throw std::invalid_argument("evaluate_image: class index out of range");
    }
  };
  check(gt);
  check(pred);

  const BinaryMask gt_union = mask_union(gt.masks, gt.width, gt.height);
  ImageEvaluation ev;
  ev.per_class.resize(static_cast<std::size_t>(num_classes));
  ev.per_class_masked.resize(static_cast<std::size_t>(num_classes));
  for (int c = 0; c < num_classes; ++c) {
    std::vector<BinaryMask> g, p;
    for (std::size_t i = 0; i < gt.masks.size(); ++i) {
      if (gt.classes[i] == c) g.push_back(gt.masks[i]);
    }
    for (std::size_t i = 0; i < pred.masks.size(); ++i) {
      if (pred.classes[i] == c) p.push_back(pred.masks[i]);
    }
    ev.per_class[static_cast<std::size_t>(c)] = counts_of(match_by_iou(g, p));
    ev.per_class_masked[static_cast<std::size_t>(c)] = counts_of(match_by_iou(g, p, &gt_union));
  }
  ev.binary = counts_of(match_by_iou(gt.masks, pred.masks));
  ev.binary_masked = counts_of(match_by_iou(gt.masks, pred.masks, &gt_union));
  return ev;
}

std::string to_string(AggregationMode mode) {
  return mode == AggregationMode::kMicro ? "micro" : "macro";
}

AggregationMode parse_aggregation_mode(const std::string& text) {
  if (text == "micro") return AggregationMode::kMicro;
  if (text == "macro") return AggregationMode::kMacro;
  throw std::invalid_argument("unknown aggregation mode '" + text + "'");
}

namespace {

std::optional<double> mean_of(const std::vector<double>& v) {
  if (v.empty()) return std::nullopt;
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

ClassReport pooled(const PqCounts& plain, const PqCounts& masked) {
  return {plain, panoptic_quality(plain), masked, panoptic_quality(masked)};
}

// mPQ and bPQ for one IoU flavour.
std::pair<std::optional<double>, std::optional<double>> summarize(
    std::span<const ImageEvaluation> images, AggregationMode mode, bool masked,
    std::size_t classes) {
  auto per_class = [&](const ImageEvaluation& ev, std::size_t c) -> const PqCounts& {
    return masked ? ev.per_class_masked[c] : ev.per_class[c];
  };
  auto binary = [&](const ImageEvaluation& ev) -> const PqCounts& {
    return masked ? ev.binary_masked : ev.binary;
  };
  std::vector<double> class_values;
  std::optional<double> bpq;
  if (mode == AggregationMode::kMicro) {
    for (std::size_t c = 0; c < classes; ++c) {
      PqCounts total;
      for (const auto& ev : images) total += per_class(ev, c);
      if (auto q = panoptic_quality(total)) class_values.push_back(q->pq);
    }
    PqCounts total;
    for (const auto& ev : images) total += binary(ev);
    if (auto q = panoptic_quality(total)) bpq = q->pq;
  } else {
    for (std::size_t c = 0; c < classes; ++c) {
      std::vector<double> per_image;
      for (const auto& ev : images) {
        if (auto q = panoptic_quality(per_class(ev, c))) per_image.push_back(q->pq);
      }
      if (auto m = mean_of(per_image)) class_values.push_back(*m);
    }
    std::vector<double> per_image;
    for (const auto& ev : images) {
      if (auto q = panoptic_quality(binary(ev))) per_image.push_back(q->pq);
    }
    bpq = mean_of(per_image);
  }
  return {mean_of(class_values), bpq};
}

}  // namespace

PanopticReport aggregate(std::span<const ImageEvaluation> images, AggregationMode mode) {
  PanopticReport report;
  report.mode = mode;
  report.images = images.size();
  if (images.empty()) return report;
  const std::size_t classes = images.front().per_class.size();
  for (const auto& ev : images) {
    if (ev.per_class.size() != classes || ev.per_class_masked.size() != classes)
      throw std::invalid_argument("aggregate: images disagree on the class vocabulary");
  }
  for (std::size_t c = 0; c < classes; ++c) {
    PqCounts plain, masked;
    for (const auto& ev : images) {
      plain += ev.per_class[c];
      masked += ev.per_class_masked[c];
    }
    report.classes.push_back(pooled(plain, masked));
  }
  PqCounts plain, masked;
  for (const auto& ev : images) {
    plain += ev.binary;
    masked += ev.binary_masked;
  }
  report.binary = pooled(plain, masked);
  std::tie(report.mpq, report.bpq) = summarize(images, mode, false, classes);
  std::tie(report.mmpq, report.bmpq) = summarize(images, mode, true, classes);
  return report;
}

DetectionReport detection_match(std::span<const Vec2> gt, std::span<const Vec2> pred,
                                std::span<const double> scores, double resolution,
                                double radius_um) {
  if (!(resolution > 0.0)) throw std::invalid_argument("detection_match: resolution must be > 0");
  if (!(radius_um > 0.0)) throw std::invalid_argument("detection_match: radius must be > 0");
  if (scores.size() != pred.size())
    throw std::invalid_argument("detection_match: one score per prediction required");
  DetectionReport report;
  report.radius_um = radius_um;
  report.radius_px = radius_um / resolution;
  const double limit = report.radius_px * report.radius_px;

  std::vector<std::size_t> order(pred.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  std::vector<bool> taken(gt.size(), false);
  for (std::size_t p : order) {
    std::size_t best = gt.size();
    double best_d = 0.0;
    for (std::size_t g = 0; g < gt.size(); ++g) {
      if (taken[g]) continue;
      const double dx = gt[g].x - pred[p].x;
      const double dy = gt[g].y - pred[p].y;
      const double d = dx * dx + dy * dy;
      if (d <= limit && (best == gt.size() || d < best_d)) {
        best = g;
        best_d = d;
      }
    }
    if (best != gt.size()) {
      taken[best] = true;
      report.matches.emplace_back(p, best);
    }
  }
  report.tp = report.matches.size();
  report.fp = pred.size() - report.tp;
  report.fn = gt.size() - report.tp;
  if (report.tp + report.fp > 0)
    report.precision = static_cast<double>(report.tp) / static_cast<double>(report.tp + report.fp);
  if (report.tp + report.fn > 0)
    report.recall = static_cast<double>(report.tp) / static_cast<double>(report.tp + report.fn);
  if (report.precision + report.recall > 0)
    report.f1 = 2.0 * report.precision * report.recall / (report.precision + report.recall);
  return report;
}

}  // namespace lsp
