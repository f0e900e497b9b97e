#include "lsp/radial_bounds.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>
#include <stdexcept>

#include "lsp/errors.hpp"
#include "lsp/parallel.hpp"

namespace lsp {

std::vector<std::uint32_t> LabelRaster::instance_ids() const {
  std::set<std::uint32_t> seen;
  for (auto id : ids) {
    if (id != 0) seen.insert(id);
  }
  return {seen.begin(), seen.end()};
}

BinaryMask LabelRaster::mask_of(std::uint32_t id) const {
  std::vector<std::uint32_t> idx;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] == id) idx.push_back(static_cast<std::uint32_t>(i));
  }
  return BinaryMask(width, height, std::move(idx));
}

std::vector<BinaryMask> LabelRaster::instance_masks() const {
  std::map<std::uint32_t, std::vector<std::uint32_t>> pixels;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] != 0) pixels[ids[i]].push_back(static_cast<std::uint32_t>(i));
  }
  std::vector<BinaryMask> out;
  out.reserve(pixels.size());
  for (auto& [id, idx] : pixels) out.emplace_back(width, height, std::move(idx));
  return out;
}

BinaryMask LabelRaster::foreground() const {
  std::vector<std::uint32_t> idx;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] != 0) idx.push_back(static_cast<std::uint32_t>(i));
  }
  return BinaryMask(width, height, std::move(idx));
}

void LabelRaster::validate() const {
  if (width < 1 || height < 1) throw std::invalid_argument("label raster must be non-empty");
  if (ids.size() != static_cast<std::size_t>(width) * static_cast<std::size_t>(height))
    throw std::invalid_argument("label raster buffer size mismatch");
  if (!(resolution > 0.0) || !std::isfinite(resolution))
    throw std::invalid_argument("resolution must be positive");
  for (auto id : instance_ids()) {
    auto it = instance_class.find(id);
    if (it == instance_class.end())
      throw std::invalid_argument("instance " + std::to_string(id) + " has no class");
    if (it->second < 0 || it->second >= static_cast<int>(class_names.size()))
      throw std::invalid_argument("instance " + std::to_string(id) + " has an invalid class");
  }
}

BoundTables::BoundTables(int width, int height)
    : width_(width),
      height_(height),
      r_min_(static_cast<std::size_t>(width) * static_cast<std::size_t>(height) * kRayCount, 0.0f),
      r_max_(static_cast<std::size_t>(width) * static_cast<std::size_t>(height) * kRayCount, 0.0f) {
  if (width < 1 || height < 1) throw std::invalid_argument("tables must be at least 1x1");
}

namespace {

// Instances covering each pixel, CSR layout.
struct Coverage {
  int width = 0;
  int height = 0;
  std::vector<std::uint32_t> offsets;  // size W*H + 1
  std::vector<std::uint32_t> owners;

  std::span<const std::uint32_t> at(int x, int y) const {
    const auto i = static_cast<std::size_t>(y) * static_cast<std::size_t>(width) +
                   static_cast<std::size_t>(x);
    return {owners.data() + offsets[i], owners.data() + offsets[i + 1]};
  }
};

Coverage build_coverage(std::span<const BinaryMask> instances, int width, int height) {
  Coverage cov;
  cov.width = width;
  cov.height = height;
  const auto n = static_cast<std::size_t>(width) * static_cast<std::size_t>(height);
  cov.offsets.assign(n + 1, 0);
  for (const auto& m : instances) {
    if (m.width() != width || m.height() != height)
      throw std::invalid_argument("instance mask dimension mismatch");
    for (auto idx : m.indices()) ++cov.offsets[idx + 1];
  }
  for (std::size_t i = 0; i < n; ++i) cov.offsets[i + 1] += cov.offsets[i];
  cov.owners.resize(cov.offsets[n]);
  std::vector<std::uint32_t> cursor(cov.offsets.begin(), cov.offsets.end() - 1);
  for (std::uint32_t k = 0; k < instances.size(); ++k) {
    for (auto idx : instances[k].indices()) cov.owners[cursor[idx]++] = k;
  }
  return cov;
}

// Relative tolerance under which the two axis crossings are treated as a
// single step through a lattice corner.
constexpr double kCornerTolerance = 1e-9;

void trace_ray(const Coverage& cov, int qx, int qy, Vec2 dir,
               std::span<const std::uint32_t> start_owners, float& out_min, float& out_max) {
  const double ox = qx + 0.5;
  const double oy = qy + 0.5;
  int cx = qx;
  int cy = qy;
  const int step_x = dir.x > 0 ? 1 : (dir.x < 0 ? -1 : 0);
  const int step_y = dir.y > 0 ? 1 : (dir.y < 0 ? -1 : 0);
  constexpr double inf = std::numeric_limits<double>::infinity();
  const double delta_x = step_x != 0 ? 1.0 / std::abs(dir.x) : inf;
  const double delta_y = step_y != 0 ? 1.0 / std::abs(dir.y) : inf;
  double next_x = step_x > 0 ? (cx + 1 - ox) / dir.x : (step_x < 0 ? (cx - ox) / dir.x : inf);
  double next_y = step_y > 0 ? (cy + 1 - oy) / dir.y : (step_y < 0 ? (cy - oy) / dir.y : inf);

  // Instances containing the start pixel that the ray is still inside of.
  std::array<std::uint32_t, 16> inline_alive{};
  std::vector<std::uint32_t> heap_alive;
  std::span<std::uint32_t> alive;
  if (start_owners.size() <= inline_alive.size()) {
    std::copy(start_owners.begin(), start_owners.end(), inline_alive.begin());
    alive = {inline_alive.data(), start_owners.size()};
  } else {
    heap_alive.assign(start_owners.begin(), start_owners.end());
    alive = heap_alive;
  }
  std::size_t alive_count = alive.size();

  double lower = inf;
  for (;;) {
    double t;
    const double tie = kCornerTolerance * std::max(1.0, std::min(next_x, next_y));
    if (std::abs(next_x - next_y) <= tie) {
      t = std::min(next_x, next_y);
      cx += step_x;
      cy += step_y;
      next_x += delta_x;
      next_y += delta_y;
    } else if (next_x < next_y) {
      t = next_x;
      cx += step_x;
      next_x += delta_x;
    } else {
      t = next_y;
      cy += step_y;
      next_y += delta_y;
    }

    if (cx < 0 || cy < 0 || cx >= cov.width || cy >= cov.height) {
      if (alive_count > 0) lower = std::min(lower, t);
      out_min = static_cast<float>(lower);
      out_max = kInfiniteBound;
      return;
    }

    const auto here = cov.at(cx, cy);
    if (here.empty()) {
      // Every instance has been left by now, alive_count is necessarily 0.
      lower = std::min(lower, t);
      out_min = static_cast<float>(lower);
      out_max = static_cast<float>(t);
      return;
    }
    for (std::size_t i = 0; i < alive_count;) {
      if (std::find(here.begin(), here.end(), alive[i]) == here.end()) {
        lower = std::min(lower, t);
        alive[i] = alive[--alive_count];
      } else {
        ++i;
      }
    }
  }
}

BoundTables build_from_coverage(const Coverage& cov) {
  BoundTables tables(cov.width, cov.height);
  const auto& rays = unit_rays();
  parallel_for(static_cast<std::size_t>(cov.height), [&](std::size_t row) {
    const int y = static_cast<int>(row);
    for (int x = 0; x < cov.width; ++x) {
      const auto owners = cov.at(x, y);
      if (owners.empty()) continue;
      auto lo = tables.r_min(x, y);
      auto hi = tables.r_max(x, y);
      for (int k = 0; k < kRayCount; ++k) {
        trace_ray(cov, x, y, rays[k], owners, lo[k], hi[k]);
      }
    }
  });
  return tables;
}

}  // namespace

BoundTables build_tables(std::span<const BinaryMask> instances, int width, int height) {
  return build_from_coverage(build_coverage(instances, width, height));
}

BoundTables build_tables(const LabelRaster& labels) {
  labels.validate();
  return build_tables(labels.instance_masks(), labels.width, labels.height);
}

namespace {

struct Bilinear {
  int xa, xb, ya, yb;
  double fx, fy;
};

Bilinear bilinear_at(const BoundTables& tables, Vec2 p_px) {
  if (!(p_px.x >= 0.0 && p_px.y >= 0.0 && p_px.x < tables.width() && p_px.y < tables.height()))
    throw std::invalid_argument("lookup_bounds: point outside the raster");
  const double u = p_px.x - 0.5;
  const double v = p_px.y - 0.5;
  const double x0 = std::floor(u);
  const double y0 = std::floor(v);
  Bilinear b{};
  b.fx = u - x0;
  b.fy = v - y0;
  const int ix = static_cast<int>(x0);
  const int iy = static_cast<int>(y0);
  b.xa = std::clamp(ix, 0, tables.width() - 1);
  b.xb = std::clamp(ix + 1, 0, tables.width() - 1);
  b.ya = std::clamp(iy, 0, tables.height() - 1);
  b.yb = std::clamp(iy + 1, 0, tables.height() - 1);
  return b;
}

}  // namespace

BoundRowGradient lookup_bounds_with_gradient(const BoundTables& tables, Vec2 p_px) {
  const Bilinear b = bilinear_at(tables, p_px);
  const double w[4] = {(1 - b.fx) * (1 - b.fy), b.fx * (1 - b.fy), (1 - b.fx) * b.fy,
                       b.fx * b.fy};
  const int xs[4] = {b.xa, b.xb, b.xa, b.xb};
  const int ys[4] = {b.ya, b.ya, b.yb, b.yb};

  BoundRowGradient out;
  for (int k = 0; k < kRayCount; ++k) {
    double lo[4], hi[4];
    for (int n = 0; n < 4; ++n) {
      lo[n] = tables.r_min(xs[n], ys[n])[k];
      hi[n] = tables.r_max(xs[n], ys[n])[k];
    }

    double vmin = 0.0;
    double vmax = 0.0;
    bool upper_infinite = false;
    for (int n = 0; n < 4; ++n) {
      if (w[n] == 0.0) continue;
      vmin += w[n] * lo[n];
      if (std::isinf(hi[n])) {
        upper_infinite = true;
      } else {
        vmax += w[n] * hi[n];
      }
    }
    out.value.r_min[k] = vmin;
    out.d_min[k] = {(1 - b.fy) * (lo[1] - lo[0]) + b.fy * (lo[3] - lo[2]),
                    (1 - b.fx) * (lo[2] - lo[0]) + b.fx * (lo[3] - lo[1])};
    if (upper_infinite) {
      out.value.r_max[k] = std::numeric_limits<double>::infinity();
      out.d_max[k] = {0.0, 0.0};
    } else {
      out.value.r_max[k] = vmax;
      // Zero-weight neighbors may be infinite; their difference terms carry
      // zero weight in the value but not in the derivative.
      auto diff = [](double a, double c) {
        return (std::isinf(a) || std::isinf(c)) ? 0.0 : a - c;
      };
      out.d_max[k] = {(1 - b.fy) * diff(hi[1], hi[0]) + b.fy * diff(hi[3], hi[2]),
                      (1 - b.fx) * diff(hi[2], hi[0]) + b.fx * diff(hi[3], hi[1])};
    }
  }
  return out;
}

BoundRow lookup_bounds(const BoundTables& tables, Vec2 p_px) {
  return lookup_bounds_with_gradient(tables, p_px).value;
}

bool is_foreground(const LabelRaster& labels, Vec2 p_px) {
  if (!std::isfinite(p_px.x) || !std::isfinite(p_px.y)) return false;
  const double fx = std::floor(p_px.x);
  const double fy = std::floor(p_px.y);
  if (fx < 0 || fy < 0 || fx >= labels.width || fy >= labels.height) return false;
  return labels.at(static_cast<int>(fx), static_cast<int>(fy)) != 0;
}

namespace {

constexpr char kMagic[4] = {'L', 'S', 'P', 'B'};
constexpr std::uint32_t kTableVersion = 1;

void put_u32(std::ostream& os, std::uint32_t v) {
  const unsigned char bytes[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                                  static_cast<unsigned char>(v >> 16),
                                  static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(bytes), 4);
}

std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

}  // namespace

void write_tables(const BoundTables& tables, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ParseError(ParseErrorKind::kIo, "cannot open " + path.string() + " for writing");
  os.write(kMagic, 4);
  put_u32(os, kTableVersion);
  put_u32(os, static_cast<std::uint32_t>(tables.width()));
  put_u32(os, static_cast<std::uint32_t>(tables.height()));
  put_u32(os, static_cast<std::uint32_t>(BoundTables::rays()));
  for (const auto* data : {&tables.lower_data(), &tables.upper_data()}) {
    for (float f : *data) put_u32(os, std::bit_cast<std::uint32_t>(f));
  }
  if (!os) throw ParseError(ParseErrorKind::kIo, "write failed: " + path.string());
}

BoundTables read_tables(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ParseError(ParseErrorKind::kIo, "cannot open " + path.string());
  std::vector<unsigned char> buf((std::istreambuf_iterator<char>(is)),
                                 std::istreambuf_iterator<char>());
  if (buf.size() < 20 || std::memcmp(buf.data(), kMagic, 4) != 0)
    throw ParseError(ParseErrorKind::kMalformedHeader, "not an LSPB table file");
  const auto version = get_u32(&buf[4]);
  const auto width = get_u32(&buf[8]);
  const auto height = get_u32(&buf[12]);
  const auto rays = get_u32(&buf[16]);
  if (version != kTableVersion)
    throw ParseError(ParseErrorKind::kMalformedHeader, "unsupported table version");
  if (rays != static_cast<std::uint32_t>(kRayCount) || width == 0 || height == 0 ||
      width > (1u << 16) || height > (1u << 16))
    throw ParseError(ParseErrorKind::kMalformedHeader, "unsupported table geometry");
  const std::size_t count = static_cast<std::size_t>(width) * height * rays;
  if (buf.size() != 20 + 2 * count * 4)
    throw ParseError(ParseErrorKind::kTruncated, "table payload size mismatch");
  BoundTables tables(static_cast<int>(width), static_cast<int>(height));
  const unsigned char* p = buf.data() + 20;
  for (auto* data : {&tables.lower_data(), &tables.upper_data()}) {
    for (float& f : *data) {
      f = std::bit_cast<float>(get_u32(p));
      p += 4;
    }
  }
  return tables;
}

}  // namespace lsp
