#pragma once

// Set-prediction objective: matching cost, loss terms and their gradients.
// All geometric quantities are in pixels; normalized positions are scaled by
// the raster size before any distance is taken.

#include <vector>

#include "lsp/assignment.hpp"
#include "lsp/geometry.hpp"
#include "lsp/radial_bounds.hpp"

namespace lsp {

struct GroundTruthInstance {
  int class_index = 0;  // in [0, K)
  BinaryMask mask;
  Vec2 centroid;        // pixels
};

struct GroundTruthSet {
  int width = 0;
  int height = 0;
  int num_classes = 1;  // K
  double resolution = 0.25;
  std::vector<GroundTruthInstance> instances;
  BinaryMask union_mask;  // G

  std::size_t size() const noexcept { return instances.size(); }

  static GroundTruthSet from_labels(const LabelRaster& labels);
  // Masks may overlap. Centroids are computed from the masks.
  static GroundTruthSet from_masks(int width, int height, int num_classes,
                                   std::vector<BinaryMask> masks, std::vector<int> classes,
                                   double resolution = 0.25);
};

struct PredictionSet {
  int width = 0;
  int height = 0;
  double grid_radius = 0.0;  // s, normalized
  std::vector<ShapeDescriptor> items;

  std::size_t size() const noexcept { return items.size(); }
};

struct CriterionConfig {
  double lambda = 10.0;
  double alpha = 0.25;
  double gamma = 2.0;
};

struct LossBreakdown {
  double classification = 0.0;
  double point = 0.0;
  double radial = 0.0;
  double total = 0.0;
  std::vector<LossBreakdown> layers;  // filled by layered_loss only
};

// 0 inside the mask, lambda otherwise. p is normalized.
double inner_mask_cost(const BinaryMask& gt_mask, Vec2 p, double lambda);

// Mean per-ray violation of [r_min, r_max] at p; 0 unless p is a foreground
// point of `foreground`.
double radial_loss(Vec2 p, const Radii& r, const BinaryMask& foreground,
                   const BoundTables& tables);
double radial_loss(Vec2 p, const Radii& r, const LabelRaster& labels, const BoundTables& tables);

// L1 distance in pixels between a centroid and a normalized point.
double point_loss(Vec2 gt_centroid, Vec2 p, int width, int height);
inline double point_loss(Vec2 gt_centroid, Vec2 p, int raster_size) {
  return point_loss(gt_centroid, p, raster_size, raster_size);
}

// Sigmoid focal loss summed over all slots against a one-hot target.
double focal_loss(const std::vector<double>& logits, int target_class, double alpha,
                  double gamma);
// d focal / d logits.
std::vector<double> focal_loss_gradient(const std::vector<double>& logits, int target_class,
                                        double alpha, double gamma);

// Focal matching cost at the target slot: positive branch minus negative branch.
double matching_class_cost(const std::vector<double>& logits, int target_class, double alpha,
                           double gamma);

// Rows are ground-truth instances, columns predictions.
// Throws std::invalid_argument when there are fewer predictions than
// ground-truth instances.
CostMatrix matching_cost_matrix(const GroundTruthSet& gt, const PredictionSet& pred,
                                const BoundTables& tables, const CriterionConfig& config = {});

LossBreakdown total_loss(const GroundTruthSet& gt, const PredictionSet& pred,
                         const BoundTables& tables, const MatchResult& assignment,
                         const CriterionConfig& config = {});

// Matches and evaluates every layer independently; totals are the unweighted
// sum over layers.
LossBreakdown layered_loss(const GroundTruthSet& gt, const std::vector<PredictionSet>& layers,
                           const BoundTables& tables, const CriterionConfig& config = {});

struct PredictionGradient {
  std::vector<double> d_logits;
  Vec2 d_p;  // w.r.t. the normalized position
  Radii d_r{};
};

struct LossGradients {
  std::vector<PredictionGradient> items;
  // Set when some piecewise-linear term was evaluated exactly at a kink (or
  // a foreground boundary) and a subgradient was returned.
  bool at_kink = false;
};

// Analytic gradient of total_loss with the assignment held fixed.
LossGradients loss_gradients(const GroundTruthSet& gt, const PredictionSet& pred,
                             const BoundTables& tables, const MatchResult& assignment,
                             const CriterionConfig& config = {});

// Upper table replaced by the lower one.
BoundTables fixed_boundary_mode(const BoundTables& tables);

}  // namespace lsp
