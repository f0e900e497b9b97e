#include "lsp/criterion.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace lsp {

GroundTruthSet GroundTruthSet::from_labels(const LabelRaster& labels) {
  labels.validate();
  GroundTruthSet gt;
  gt.width = labels.width;
  gt.height = labels.height;
  gt.num_classes = std::max<int>(1, static_cast<int>(labels.class_names.size()));
  gt.resolution = labels.resolution;
  const auto ids = labels.instance_ids();
  auto masks = labels.instance_masks();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    GroundTruthInstance inst;
    inst.class_index = labels.instance_class.at(ids[i]);
    inst.mask = std::move(masks[i]);
    inst.centroid = centroid(inst.mask);
    gt.instances.push_back(std::move(inst));
  }
  gt.union_mask = labels.foreground();
  return gt;
}

GroundTruthSet GroundTruthSet::from_masks(int width, int height, int num_classes,
                                          std::vector<BinaryMask> masks,
                                          std::vector<int> classes, double resolution) {
  if (masks.size() != classes.size())
    throw std::invalid_argument("one class per ground-truth mask required");
  GroundTruthSet gt;
  gt.width = width;
  gt.height = height;
  gt.num_classes = num_classes;
  gt.resolution = resolution;
  gt.union_mask = mask_union(masks, width, height);
  for (std::size_t i = 0; i < masks.size(); ++i) {
    if (classes[i] < 0 || classes[i] >= num_classes)
      throw std::invalid_argument("ground-truth class out of range");
    GroundTruthInstance inst;
    inst.class_index = classes[i];
    inst.centroid = centroid(masks[i]);
    inst.mask = std::move(masks[i]);
    gt.instances.push_back(std::move(inst));
  }
  return gt;
}

namespace {

double softplus(double x) {
  return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

void check_target(const std::vector<double>& logits, int target) {
  if (target < 0 || target >= static_cast<int>(logits.size()))
    throw std::invalid_argument("target class outside the logit vector");
}

}  // namespace

double inner_mask_cost(const BinaryMask& gt_mask, Vec2 p, double lambda) {
  return point_in_mask(gt_mask, to_pixels(p, gt_mask.width(), gt_mask.height())) ? 0.0 : lambda;
}

double radial_loss(Vec2 p, const Radii& r, const BinaryMask& foreground,
                   const BoundTables& tables) {
  if (foreground.width() != tables.width() || foreground.height() != tables.height())
    throw std::invalid_argument("radial_loss: tables and foreground differ in size");
  const Vec2 p_px = to_pixels(p, tables.width(), tables.height());
  if (!point_in_mask(foreground, p_px)) return 0.0;
  const BoundRow bounds = lookup_bounds(tables, p_px);
  double sum = 0.0;
  for (int k = 0; k < kRayCount; ++k) {
    sum += std::max({bounds.r_min[k] - r[k], 0.0, r[k] - bounds.r_max[k]});
  }
  return sum / kRayCount;
}

double radial_loss(Vec2 p, const Radii& r, const LabelRaster& labels, const BoundTables& tables) {
  return radial_loss(p, r, labels.foreground(), tables);
}

double point_loss(Vec2 gt_centroid, Vec2 p, int width, int height) {
  const Vec2 q = to_pixels(p, width, height);
  return std::abs(gt_centroid.x - q.x) + std::abs(gt_centroid.y - q.y);
}

double focal_loss(const std::vector<double>& logits, int target_class, double alpha,
                  double gamma) {
  check_target(logits, target_class);
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const double x = logits[i];
    if (static_cast<int>(i) == target_class) {
      sum += alpha * std::pow(sigmoid(-x), gamma) * softplus(-x);
    } else {
      sum += (1.0 - alpha) * std::pow(sigmoid(x), gamma) * softplus(x);
    }
  }
  return sum;
}

std::vector<double> focal_loss_gradient(const std::vector<double>& logits, int target_class,
                                        double alpha, double gamma) {
  check_target(logits, target_class);
  std::vector<double> grad(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const double x = logits[i];
    const double q = sigmoid(x);
    const double q_bar = sigmoid(-x);
    if (static_cast<int>(i) == target_class) {
      // d/dx of -a (1-q)^g log q
      grad[i] = alpha * (-gamma * std::pow(q_bar, gamma) * q * softplus(-x) -
                         std::pow(q_bar, gamma + 1.0));
    } else {
      // d/dx of -(1-a) q^g log(1-q)
      grad[i] = (1.0 - alpha) * (std::pow(q, gamma + 1.0) +
                                 gamma * std::pow(q, gamma) * q_bar * softplus(x));
    }
  }
  return grad;
}

double matching_class_cost(const std::vector<double>& logits, int target_class, double alpha,
                           double gamma) {
  check_target(logits, target_class);
  const double x = logits[static_cast<std::size_t>(target_class)];
  const double positive = alpha * std::pow(sigmoid(-x), gamma) * softplus(-x);
  const double negative = (1.0 - alpha) * std::pow(sigmoid(x), gamma) * softplus(x);
  return positive - negative;
}

namespace {

void check_shapes(const GroundTruthSet& gt, const PredictionSet& pred, const BoundTables& tables) {
  if (gt.width != tables.width() || gt.height != tables.height() || pred.width != gt.width ||
      pred.height != gt.height)
    throw std::invalid_argument("ground truth, predictions and tables differ in size");
  const auto slots = static_cast<std::size_t>(gt.num_classes) + 1;
  for (const auto& d : pred.items) {
    if (d.class_logits.size() != slots)
      throw std::invalid_argument("prediction logits must have K + 1 entries");
  }
}

}  // namespace

CostMatrix matching_cost_matrix(const GroundTruthSet& gt, const PredictionSet& pred,
                                const BoundTables& tables, const CriterionConfig& config) {
  check_shapes(gt, pred, tables);
  if (pred.size() < gt.size())
    throw std::invalid_argument("matching needs at least as many predictions as instances");
  const std::size_t m = gt.size();
  const std::size_t n = pred.size();

  std::vector<double> radial(n);
  for (std::size_t i = 0; i < n; ++i) {
    radial[i] = radial_loss(pred.items[i].p, pred.items[i].r, gt.union_mask, tables);
  }

  CostMatrix costs(m, n);
  for (std::size_t j = 0; j < m; ++j) {
    const auto& inst = gt.instances[j];
    for (std::size_t i = 0; i < n; ++i) {
      const auto& d = pred.items[i];
      costs(j, i) = matching_class_cost(d.class_logits, inst.class_index, config.alpha,
                                        config.gamma) +
                    point_loss(inst.centroid, d.p, gt.width, gt.height) + radial[i] +
                    inner_mask_cost(inst.mask, d.p, config.lambda);
    }
  }
  return costs;
}

LossBreakdown total_loss(const GroundTruthSet& gt, const PredictionSet& pred,
                         const BoundTables& tables, const MatchResult& assignment,
                         const CriterionConfig& config) {
  check_shapes(gt, pred, tables);
  const std::size_t m = gt.size();
  const std::size_t n = pred.size();
  if (assignment.row_to_col.size() != m)
    throw std::invalid_argument("assignment does not cover the ground truth");

  const int empty_class = gt.num_classes;
  std::vector<int> target(n, empty_class);
  for (std::size_t j = 0; j < m; ++j) {
    target[static_cast<std::size_t>(assignment.row_to_col[j])] = gt.instances[j].class_index;
  }

  LossBreakdown out;
  if (n > 0) {
    double cls = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      cls += focal_loss(pred.items[i].class_logits, target[i], config.alpha, config.gamma);
    }
    out.classification = cls / static_cast<double>(n);
  }
  if (m > 0) {
    double pt = 0.0;
    double rad = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      const auto& d = pred.items[static_cast<std::size_t>(assignment.row_to_col[j])];
      pt += point_loss(gt.instances[j].centroid, d.p, gt.width, gt.height);
      rad += radial_loss(d.p, d.r, gt.union_mask, tables);
    }
    out.point = pt / static_cast<double>(m);
    out.radial = rad / static_cast<double>(m);
  }
  out.total = out.classification + out.point + out.radial;
  return out;
}

LossBreakdown layered_loss(const GroundTruthSet& gt, const std::vector<PredictionSet>& layers,
                           const BoundTables& tables, const CriterionConfig& config) {
  LossBreakdown sum;
  for (const auto& layer : layers) {
    const MatchResult match = solve(matching_cost_matrix(gt, layer, tables, config));
    LossBreakdown one = total_loss(gt, layer, tables, match, config);
    sum.classification += one.classification;
    sum.point += one.point;
    sum.radial += one.radial;
    sum.total += one.total;
    sum.layers.push_back(std::move(one));
  }
  return sum;
}

namespace {

constexpr double kKinkTolerance = 1e-9;

bool near_integer(double v) { return std::abs(v - std::round(v)) < kKinkTolerance; }

double sign(double v) { return v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0); }

}  // namespace

LossGradients loss_gradients(const GroundTruthSet& gt, const PredictionSet& pred,
                             const BoundTables& tables, const MatchResult& assignment,
                             const CriterionConfig& config) {
  check_shapes(gt, pred, tables);
  const std::size_t m = gt.size();
  const std::size_t n = pred.size();
  if (assignment.row_to_col.size() != m)
    throw std::invalid_argument("assignment does not cover the ground truth");

  LossGradients out;
  out.items.resize(n);
  const int empty_class = gt.num_classes;
  std::vector<int> target(n, empty_class);
  for (std::size_t j = 0; j < m; ++j) {
    target[static_cast<std::size_t>(assignment.row_to_col[j])] = gt.instances[j].class_index;
  }
  for (std::size_t i = 0; i < n; ++i) {
    auto g = focal_loss_gradient(pred.items[i].class_logits, target[i], config.alpha, config.gamma);
    for (double& v : g) v /= static_cast<double>(n);
    out.items[i].d_logits = std::move(g);
  }
  if (m == 0) return out;

  const double w = gt.width;
  const double h = gt.height;
  const double per_match = 1.0 / static_cast<double>(m);
  for (std::size_t j = 0; j < m; ++j) {
    const auto col = static_cast<std::size_t>(assignment.row_to_col[j]);
    const auto& d = pred.items[col];
    auto& g = out.items[col];
    const Vec2 p_px = to_pixels(d.p, gt.width, gt.height);

    // Point term: |c - p*w| summed over both axes.
    const double dx = p_px.x - gt.instances[j].centroid.x;
    const double dy = p_px.y - gt.instances[j].centroid.y;
    if (std::abs(dx) < kKinkTolerance || std::abs(dy) < kKinkTolerance) out.at_kink = true;
    g.d_p.x += per_match * sign(dx) * w;
    g.d_p.y += per_match * sign(dy) * h;

    // Radial term, gated on the pixel containing p.
    if (near_integer(p_px.x) || near_integer(p_px.y)) out.at_kink = true;
    if (!point_in_mask(gt.union_mask, p_px)) continue;
    if (near_integer(p_px.x - 0.5) || near_integer(p_px.y - 0.5)) out.at_kink = true;
    const BoundRowGradient b = lookup_bounds_with_gradient(tables, p_px);
    const double per_ray = per_match / kRayCount;
    for (int k = 0; k < kRayCount; ++k) {
      const double lo = b.value.r_min[k];
      const double hi = b.value.r_max[k];
      if (std::abs(d.r[k] - lo) < kKinkTolerance ||
          (std::isfinite(hi) && std::abs(d.r[k] - hi) < kKinkTolerance))
        out.at_kink = true;
      if (d.r[k] < lo) {
        g.d_r[k] -= per_ray;
        g.d_p.x += per_ray * b.d_min[k].x * w;
        g.d_p.y += per_ray * b.d_min[k].y * h;
      } else if (d.r[k] > hi) {
        g.d_r[k] += per_ray;
        g.d_p.x -= per_ray * b.d_max[k].x * w;
        g.d_p.y -= per_ray * b.d_max[k].y * h;
      }
    }
  }
  return out;
}

BoundTables fixed_boundary_mode(const BoundTables& tables) {
  BoundTables out = tables;
  out.upper_data() = out.lower_data();
  return out;
}

}  // namespace lsp
