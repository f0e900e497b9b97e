#pragma once

// Star-convex polygon shapes and binary pixel masks.
//
// Conventions used throughout the library:
//  * image coordinates, x rightward and y downward;
//  * pixel (x, y) is the unit square [x, x+1) x [y, y+1), its center is
//    (x + 0.5, y + 0.5);
//  * ray k of `count` points at angle 2*pi*k/count measured from +x, which is
//    clockwise on screen because y grows downward;
//  * positions are normalized to [0,1]^2, radii are in pixels.

#include <array>
#include <cstdint>
#include <span>
#include <vector>

namespace lsp {

inline constexpr int kRayCount = 64;

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  friend bool operator==(const Vec2&, const Vec2&) = default;
};

using Radii = std::array<double, kRayCount>;

struct ShapeDescriptor {
  Vec2 p;                            // normalized position
  Radii r{};                         // pixels, strictly positive
  std::vector<double> class_logits;  // K + 1 slots, the last one is "no nucleus"
  double score = 0.0;
};

// Pixel-set over a width x height raster, stored as sorted row-major indices.
class BinaryMask {
 public:
  BinaryMask() = default;
  BinaryMask(int width, int height);
  // Takes any order, drops duplicates; throws std::invalid_argument on
  // out-of-range indices.
  BinaryMask(int width, int height, std::vector<std::uint32_t> indices);

  static BinaryMask from_pixels(int width, int height,
                                std::span<const std::array<int, 2>> pixels);

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }
  std::size_t area() const noexcept { return indices_.size(); }
  bool empty() const noexcept { return indices_.empty(); }
  const std::vector<std::uint32_t>& indices() const noexcept { return indices_; }

  bool contains(int x, int y) const;
  bool same_shape(const BinaryMask& other) const noexcept {
    return width_ == other.width_ && height_ == other.height_;
  }

  friend bool operator==(const BinaryMask&, const BinaryMask&) = default;

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<std::uint32_t> indices_;
};

std::vector<Vec2> ray_directions(int count);
const std::array<Vec2, kRayCount>& unit_rays();

// Normalized -> pixel coordinates.
inline Vec2 to_pixels(Vec2 p, int width, int height) {
  return {p.x * width, p.y * height};
}

std::array<Vec2, kRayCount> polygon_vertices(const ShapeDescriptor& d, int raster_size);
std::array<Vec2, kRayCount> polygon_vertices(const ShapeDescriptor& d, int width,
                                             int height);

// Pixels whose centers lie inside the polygon under the even-odd rule.
BinaryMask rasterize(const ShapeDescriptor& d, int width, int height);
BinaryMask rasterize_polygon(std::span<const Vec2> vertices, int width, int height);

bool point_in_mask(const BinaryMask& m, Vec2 p_px);

std::size_t intersection_area(const BinaryMask& a, const BinaryMask& b);
BinaryMask mask_union(std::span<const BinaryMask> masks, int width, int height);
bool is_subset(const BinaryMask& a, const BinaryMask& b);

double iou(const BinaryMask& a, const BinaryMask& b);

// |gt & pred| / |gt | (pred \ gt_union)|; prediction area that falls on other
// ground-truth instances is not charged.
double masked_iou(const BinaryMask& gt, const BinaryMask& pred, const BinaryMask& gt_union);

// Mean of covered pixel centers. Throws EmptyMaskError.
Vec2 centroid(const BinaryMask& m);

}  // namespace lsp
