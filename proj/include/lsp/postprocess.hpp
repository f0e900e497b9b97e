#pragma once

// Overlap resolution: shared pixels go to the instance they are deepest in.

#include <cstdint>
#include <string>
#include <vector>

#include "lsp/geometry.hpp"
#include "lsp/radial_bounds.hpp"

namespace lsp {

// Exact Euclidean distance from every covered pixel center to the nearest
// uncovered pixel center, row-major over the mask's raster. Pixels outside
// the frame count as uncovered. Background pixels hold 0.
std::vector<double> euclidean_distance_transform(const BinaryMask& m);

struct StackItem {
  std::uint32_t id = 0;  // nonzero, unique within the stack
  int class_index = 0;
  double score = 0.0;
  BinaryMask mask;
};

struct InstanceStack {
  int width = 0;
  int height = 0;
  std::vector<StackItem> items;
  std::vector<std::string> class_names;
};

// Each covered pixel goes to the instance maximizing (depth, area, -id).
// The result depends only on the set of items, not their order.
// Throws std::invalid_argument on zero or duplicate ids, mismatched mask
// sizes, or class indices outside class_names (when class_names is set).
LabelRaster resolve_overlaps(const InstanceStack& stack, double resolution = 0.25);

}  // namespace lsp
