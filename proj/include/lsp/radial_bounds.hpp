#pragma once

// Per-pixel, per-ray lower/upper radial distance bounds.
//
// For a foreground pixel q and ray k:
//   r_min  distance from the pixel center to where the ray first leaves any
//          instance containing q, or leaves the frame, whichever is nearer;
//   r_max  distance to the first pixel square covered by no instance, or
//          +infinity when the ray reaches the frame without meeting one.
// Background pixels hold 0 in both tables.

#include <cstdint>
#include <filesystem>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "lsp/geometry.hpp"

namespace lsp {

inline constexpr float kInfiniteBound = std::numeric_limits<float>::infinity();

struct LabelRaster {
  int width = 0;
  int height = 0;
  std::vector<std::uint32_t> ids;           // row-major, 0 = background
  std::map<std::uint32_t, int> instance_class;  // id -> index into class_names
  std::vector<std::string> class_names;
  double resolution = 0.25;                 // um per pixel

  std::uint32_t at(int x, int y) const {
    return ids[static_cast<std::size_t>(y) * static_cast<std::size_t>(width) +
               static_cast<std::size_t>(x)];
  }

  // Sorted list of ids present in the raster.
  std::vector<std::uint32_t> instance_ids() const;
  BinaryMask mask_of(std::uint32_t id) const;
  // One mask per id of instance_ids(), in the same order, built in one pass.
  std::vector<BinaryMask> instance_masks() const;
  BinaryMask foreground() const;

  // Throws std::invalid_argument if a referenced id lacks a class, the
  // resolution is not positive, or the id buffer has the wrong size.
  void validate() const;
};

class BoundTables {
 public:
  BoundTables() = default;
  BoundTables(int width, int height);

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }
  static constexpr int rays() noexcept { return kRayCount; }

  std::span<float> r_min(int x, int y) { return {&r_min_[offset(x, y)], kRayCount}; }
  std::span<float> r_max(int x, int y) { return {&r_max_[offset(x, y)], kRayCount}; }
  std::span<const float> r_min(int x, int y) const { return {&r_min_[offset(x, y)], kRayCount}; }
  std::span<const float> r_max(int x, int y) const { return {&r_max_[offset(x, y)], kRayCount}; }

  std::vector<float>& lower_data() noexcept { return r_min_; }
  std::vector<float>& upper_data() noexcept { return r_max_; }
  const std::vector<float>& lower_data() const noexcept { return r_min_; }
  const std::vector<float>& upper_data() const noexcept { return r_max_; }

  friend bool operator==(const BoundTables&, const BoundTables&) = default;

 private:
  std::size_t offset(int x, int y) const {
    return (static_cast<std::size_t>(y) * static_cast<std::size_t>(width_) +
            static_cast<std::size_t>(x)) *
           kRayCount;
  }

  int width_ = 0;
  int height_ = 0;
  std::vector<float> r_min_;
  std::vector<float> r_max_;
};

// Masks may overlap; this is the general form.
BoundTables build_tables(std::span<const BinaryMask> instances, int width, int height);
BoundTables build_tables(const LabelRaster& labels);

struct BoundRow {
  std::array<double, kRayCount> r_min{};
  std::array<double, kRayCount> r_max{};  // may hold +infinity
};

// Bilinear interpolation between the four surrounding pixel centers (clamped
// at the frame). An infinite r_max at any neighbor with nonzero weight makes
// the result infinite. Throws std::invalid_argument outside the raster.
BoundRow lookup_bounds(const BoundTables& tables, Vec2 p_px);

// Derivatives of the interpolated bounds with respect to p_px. Entries are
// zero where the bound is infinite.
struct BoundRowGradient {
  BoundRow value;
  std::array<Vec2, kRayCount> d_min{};
  std::array<Vec2, kRayCount> d_max{};
};
BoundRowGradient lookup_bounds_with_gradient(const BoundTables& tables, Vec2 p_px);

bool is_foreground(const LabelRaster& labels, Vec2 p_px);

// Binary table file: "LSPB", u32 version, u32 width, u32 height, u32 rays,
// then r_min and r_max as row-major little-endian float32.
void write_tables(const BoundTables& tables, const std::filesystem::path& path);
BoundTables read_tables(const std::filesystem::path& path);

}  // namespace lsp
