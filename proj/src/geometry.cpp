#include "lsp/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

#include "lsp/errors.hpp"

namespace lsp {

BinaryMask::BinaryMask(int width, int height) : width_(width), height_(height) {
  if (width < 0 || height < 0) throw std::invalid_argument("negative mask dimensions");
}

BinaryMask::BinaryMask(int width, int height, std::vector<std::uint32_t> indices)
    : BinaryMask(width, height) {
  const auto limit = static_cast<std::uint64_t>(width) * static_cast<std::uint64_t>(height);
  for (auto idx : indices) {
    if (idx >= limit) throw std::invalid_argument("mask pixel index out of range");
  }
  std::sort(indices.begin(), indices.end());
  indices.erase(std::unique(indices.begin(), indices.end()), indices.end());
  indices_ = std::move(indices);
}

BinaryMask BinaryMask::from_pixels(int width, int height,
                                   std::span<const std::array<int, 2>> pixels) {
  std::vector<std::uint32_t> idx;
  idx.reserve(pixels.size());
  for (const auto& [x, y] : pixels) {
    if (x < 0 || y < 0 || x >= width || y >= height)
      throw std::invalid_argument("pixel outside raster");
    idx.push_back(static_cast<std::uint32_t>(y) * static_cast<std::uint32_t>(width) +
                  static_cast<std::uint32_t>(x));
  }
  return BinaryMask(width, height, std::move(idx));
}

bool BinaryMask::contains(int x, int y) const {
  if (x < 0 || y < 0 || x >= width_ || y >= height_) return false;
  const auto idx = static_cast<std::uint32_t>(y) * static_cast<std::uint32_t>(width_) +
                   static_cast<std::uint32_t>(x);
  return std::binary_search(indices_.begin(), indices_.end(), idx);
}

std::vector<Vec2> ray_directions(int count) {
  if (count < 3) throw std::invalid_argument("ray count must be at least 3");
  std::vector<Vec2> dirs(static_cast<std::size_t>(count));
  for (int k = 0; k < count; ++k) {
    const double angle = 2.0 * std::numbers::pi * k / count;
    double c = std::cos(angle);
    double s = std::sin(angle);
    // cos(pi/2) evaluates to ~6e-17; axis-aligned rays must be exact.
    if (std::abs(c) < 1e-15) c = 0.0;
    if (std::abs(s) < 1e-15) s = 0.0;
    dirs[static_cast<std::size_t>(k)] = {c, s};
  }
  return dirs;
}

const std::array<Vec2, kRayCount>& unit_rays() {
  static const std::array<Vec2, kRayCount> rays = [] {
    std::array<Vec2, kRayCount> out{};
    const auto dirs = ray_directions(kRayCount);
    std::copy(dirs.begin(), dirs.end(), out.begin());
    return out;
  }();
  return rays;
}

std::array<Vec2, kRayCount> polygon_vertices(const ShapeDescriptor& d, int raster_size) {
  return polygon_vertices(d, raster_size, raster_size);
}

std::array<Vec2, kRayCount> polygon_vertices(const ShapeDescriptor& d, int width,
                                             int height) {
  if (width <= 0 || height <= 0) throw std::invalid_argument("raster size must be positive");
  const Vec2 center = to_pixels(d.p, width, height);
  const auto& rays = unit_rays();
  std::array<Vec2, kRayCount> out{};
  for (int k = 0; k < kRayCount; ++k) {
    out[k] = {center.x + d.r[k] * rays[k].x, center.y + d.r[k] * rays[k].y};
  }
  return out;
}

namespace {

// Smallest integer x with x + 0.5 >= a.
long first_center_at_or_after(double a) {
  auto x = static_cast<long>(std::ceil(a - 0.5));
  while (static_cast<double>(x) + 0.5 < a) ++x;
  while (static_cast<double>(x) - 0.5 >= a) --x;
  return x;
}

}  // namespace

BinaryMask rasterize_polygon(std::span<const Vec2> vertices, int width, int height) {
  if (width < 1 || height < 1) throw std::invalid_argument("raster must be at least 1x1");
  BinaryMask empty(width, height);
  if (vertices.size() < 3) return empty;

  double ymin = vertices[0].y, ymax = vertices[0].y;
  for (const auto& v : vertices) {
    if (!std::isfinite(v.x) || !std::isfinite(v.y))
      throw std::invalid_argument("non-finite polygon vertex");
    ymin = std::min(ymin, v.y);
    ymax = std::max(ymax, v.y);
  }
  const long row_lo = std::max(0L, static_cast<long>(std::floor(ymin - 0.5)));
  const long row_hi = std::min(static_cast<long>(height) - 1, static_cast<long>(std::ceil(ymax)));

  std::vector<std::uint32_t> covered;
  std::vector<double> xs;
  const std::size_t n = vertices.size();
  for (long y = row_lo; y <= row_hi; ++y) {
    const double yc = static_cast<double>(y) + 0.5;
    xs.clear();
    for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
      const Vec2& a = vertices[i];
      const Vec2& b = vertices[j];
      if ((a.y > yc) != (b.y > yc)) {
        xs.push_back((b.x - a.x) * (yc - a.y) / (b.y - a.y) + a.x);
      }
    }
    std::sort(xs.begin(), xs.end());
    // A center cx is inside iff an odd number of crossings lie strictly to
    // its right, i.e. xs[2i] <= cx < xs[2i+1].
    for (std::size_t i = 0; i + 1 < xs.size(); i += 2) {
      const long x0 = std::max(0L, first_center_at_or_after(xs[i]));
      const long x1 = std::min(static_cast<long>(width), first_center_at_or_after(xs[i + 1]));
      for (long x = x0; x < x1; ++x) {
        covered.push_back(static_cast<std::uint32_t>(y * width + x));
      }
    }
  }
  return BinaryMask(width, height, std::move(covered));
}

BinaryMask rasterize(const ShapeDescriptor& d, int width, int height) {
  if (width < 1 || height < 1) throw std::invalid_argument("raster must be at least 1x1");
  const auto verts = polygon_vertices(d, width, height);
  return rasterize_polygon(verts, width, height);
}

bool point_in_mask(const BinaryMask& m, Vec2 p_px) {
  if (!std::isfinite(p_px.x) || !std::isfinite(p_px.y)) return false;
  const double fx = std::floor(p_px.x);
  const double fy = std::floor(p_px.y);
  if (fx < 0 || fy < 0 || fx >= m.width() || fy >= m.height()) return false;
  return m.contains(static_cast<int>(fx), static_cast<int>(fy));
}

std::size_t intersection_area(const BinaryMask& a, const BinaryMask& b) {
  const auto& x = a.indices();
  const auto& y = b.indices();
  std::size_t i = 0, j = 0, count = 0;
  while (i < x.size() && j < y.size()) {
    if (x[i] < y[j]) {
      ++i;
    } else if (y[j] < x[i]) {
      ++j;
    } else {
      ++count;
      ++i;
      ++j;
    }
  }
  return count;
}

BinaryMask mask_union(std::span<const BinaryMask> masks, int width, int height) {
  std::vector<std::uint32_t> all;
  for (const auto& m : masks) {
    if (m.width() != width || m.height() != height)
      throw std::invalid_argument("mask dimension mismatch");
    all.insert(all.end(), m.indices().begin(), m.indices().end());
  }
  return BinaryMask(width, height, std::move(all));
}

bool is_subset(const BinaryMask& a, const BinaryMask& b) {
  return std::includes(b.indices().begin(), b.indices().end(), a.indices().begin(),
                       a.indices().end());
}

double iou(const BinaryMask& a, const BinaryMask& b) {
  if (!a.same_shape(b)) throw std::invalid_argument("iou: mask dimension mismatch");
  const std::size_t inter = intersection_area(a, b);
  const std::size_t uni = a.area() + b.area() - inter;
  if (uni == 0) return 0.0;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

double masked_iou(const BinaryMask& gt, const BinaryMask& pred, const BinaryMask& gt_union) {
  if (!gt.same_shape(pred) || !gt.same_shape(gt_union))
    throw std::invalid_argument("masked_iou: mask dimension mismatch");
  if (!is_subset(gt, gt_union))
    throw std::invalid_argument("masked_iou: ground truth not contained in the union");
  const std::size_t inter = intersection_area(gt, pred);
  const std::size_t outside = pred.area() - intersection_area(pred, gt_union);
  const std::size_t denom = gt.area() + outside;
  if (denom == 0) return 0.0;
  return static_cast<double>(inter) / static_cast<double>(denom);
}

Vec2 centroid(const BinaryMask& m) {
  if (m.empty()) throw EmptyMaskError("centroid of an empty mask");
  double sx = 0.0, sy = 0.0;
  const auto w = static_cast<std::uint32_t>(m.width());
  for (auto idx : m.indices()) {
    sx += static_cast<double>(idx % w) + 0.5;
    sy += static_cast<double>(idx / w) + 0.5;
  }
  const auto n = static_cast<double>(m.area());
  return {sx / n, sy / n};
}

}  // namespace lsp
