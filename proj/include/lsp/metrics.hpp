#pragma once

// Panoptic quality (plain and masked IoU) and centroid detection scores.

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lsp/assignment.hpp"
#include "lsp/geometry.hpp"

namespace lsp {

inline constexpr double kIouThreshold = 0.5;

struct MatchedPair {
  std::size_t gt = 0;
  std::size_t pred = 0;
  double score = 0.0;
};

struct IouMatch {
  std::vector<MatchedPair> tp;    // ascending gt index
  std::vector<std::size_t> fp;    // unmatched predictions, ascending
  std::vector<std::size_t> fn;    // unmatched ground truths, ascending
};

// scores(g, p) is the pair score. Entries at or below the threshold can never
// be true positives and are ignored; the remaining ones are paired to
// maximize their total through the assignment solver.
IouMatch match_scores(const CostMatrix& scores, double threshold = kIouThreshold);

// Plain IoU when masked_union is null, otherwise masked IoU against it
// (normally the union of every ground-truth instance in the image).
IouMatch match_by_iou(std::span<const BinaryMask> gt, std::span<const BinaryMask> pred,
                      const BinaryMask* masked_union = nullptr,
                      double threshold = kIouThreshold);

struct PqCounts {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;
  double score_sum = 0.0;  // summed (m)IoU of the true positives

  bool defined() const noexcept { return tp + fp + fn > 0; }
  PqCounts& operator+=(const PqCounts& o) {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    score_sum += o.score_sum;
    return *this;
  }
};

struct Quality {
  double sq = 0.0;
  double rq = 0.0;
  double pq = 0.0;
};

// nullopt when the class is vacuous (no TP, FP or FN).
std::optional<Quality> panoptic_quality(const PqCounts& counts);
std::optional<Quality> panoptic_quality(std::span<const double> tp_scores, std::size_t fp,
                                        std::size_t fn);
PqCounts counts_of(const IouMatch& match);

// Instances of one image. classes[i] indexes the class vocabulary.
struct InstanceSet {
  int width = 0;
  int height = 0;
  std::vector<BinaryMask> masks;
  std::vector<int> classes;
};

struct ImageEvaluation {
  std::vector<PqCounts> per_class;         // plain IoU
  std::vector<PqCounts> per_class_masked;  // masked IoU
  PqCounts binary;                         // classes merged before matching
  PqCounts binary_masked;
};

// Throws std::invalid_argument on mismatched raster sizes or class indices
// outside [0, num_classes).
ImageEvaluation evaluate_image(const InstanceSet& gt, const InstanceSet& pred, int num_classes);

enum class AggregationMode {
  kMicro,  // counts pooled over images, PQ computed once
  kMacro,  // PQ per image, then averaged over the images where it is defined
};
std::string to_string(AggregationMode mode);
AggregationMode parse_aggregation_mode(const std::string& text);

struct ClassReport {
  PqCounts counts;
  std::optional<Quality> quality;
  PqCounts masked_counts;
  std::optional<Quality> masked_quality;
};

struct PanopticReport {
  AggregationMode mode = AggregationMode::kMacro;
  std::size_t images = 0;
  // Pooled over all images regardless of mode, so PQ = SQ * RQ per entry.
  std::vector<ClassReport> classes;
  ClassReport binary;
  std::optional<double> mpq;
  std::optional<double> bpq;
  std::optional<double> mmpq;
  std::optional<double> bmpq;
};

PanopticReport aggregate(std::span<const ImageEvaluation> images, AggregationMode mode);

struct DetectionReport {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;
  double radius_um = 3.0;
  double radius_px = 0.0;
  std::vector<std::pair<std::size_t, std::size_t>> matches;  // (pred, gt)
};

// Greedy by descending score (ties: lower index first); each prediction
// takes the nearest unmatched ground truth within radius_um / resolution
// pixels, inclusive. Ties in distance go to the lower ground-truth index.
// Throws std::invalid_argument unless resolution and radius are positive and
// every prediction has a score.
DetectionReport detection_match(std::span<const Vec2> gt, std::span<const Vec2> pred,
                                std::span<const double> scores, double resolution,
                                double radius_um = 3.0);

}  // namespace lsp
