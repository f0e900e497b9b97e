#include "lsp/postprocess.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <stdexcept>

#include "lsp/parallel.hpp"

namespace lsp {

namespace {

// Stands in for "covered" in the squared-distance input. Every padded line
// has a zero at both ends, so it never wins the envelope.
constexpr double kFar = 1e20;

// Squared distance transform of one line: lower envelope of parabolas.
void edt_1d(const double* f, double* d, int n, std::vector<int>& v, std::vector<double>& z) {
  v.assign(static_cast<std::size_t>(n), 0);
  z.assign(static_cast<std::size_t>(n) + 1, 0.0);
  const double inf = std::numeric_limits<double>::infinity();
  int k = 0;
  z[0] = -inf;
  z[1] = inf;
  for (int q = 1; q < n; ++q) {
    double s;
    while (true) {
      const int r = v[static_cast<std::size_t>(k)];
      s = ((f[q] + double(q) * q) - (f[r] + double(r) * r)) / (2.0 * (q - r));
      if (s <= z[static_cast<std::size_t>(k)]) {
        --k;
      } else {
        break;
      }
    }
    ++k;
    v[static_cast<std::size_t>(k)] = q;
    z[static_cast<std::size_t>(k)] = s;
    z[static_cast<std::size_t>(k) + 1] = inf;
  }
  int j = 0;
  for (int q = 0; q < n; ++q) {
    while (z[static_cast<std::size_t>(j) + 1] < q) ++j;
    const int r = v[static_cast<std::size_t>(j)];
    d[q] = double(q - r) * (q - r) + f[r];
  }
}

// Distances inside the mask's bounding box padded by one background pixel.
struct LocalDistance {
  int x0 = 0, y0 = 0, w = 0, h = 0;
  std::vector<double> values;  // w * h, padded box

  double at(int x, int y) const {
    return values[static_cast<std::size_t>(y - y0) * w + static_cast<std::size_t>(x - x0)];
  }
};

LocalDistance local_edt(const BinaryMask& m) {
  LocalDistance out;
  if (m.empty()) return out;
  const auto width = static_cast<std::uint32_t>(m.width());
  int minx = m.width(), maxx = -1, miny = m.height(), maxy = -1;
  for (auto idx : m.indices()) {
    const int x = static_cast<int>(idx % width), y = static_cast<int>(idx / width);
    minx = std::min(minx, x);
    maxx = std::max(maxx, x);
    miny = std::min(miny, y);
    maxy = std::max(maxy, y);
  }
  out.x0 = minx - 1;
  out.y0 = miny - 1;
  out.w = maxx - minx + 3;
  out.h = maxy - miny + 3;
  std::vector<double> grid(static_cast<std::size_t>(out.w) * out.h, 0.0);
  for (auto idx : m.indices()) {
    const int x = static_cast<int>(idx % width), y = static_cast<int>(idx / width);
    grid[static_cast<std::size_t>(y - out.y0) * out.w + static_cast<std::size_t>(x - out.x0)] = kFar;
  }
  std::vector<int> v;
  std::vector<double> z;
  std::vector<double> line(static_cast<std::size_t>(std::max(out.w, out.h)));
  std::vector<double> res(line.size());
  for (int x = 0; x < out.w; ++x) {
    for (int y = 0; y < out.h; ++y) line[static_cast<std::size_t>(y)] = grid[static_cast<std::size_t>(y) * out.w + x];
    edt_1d(line.data(), res.data(), out.h, v, z);
    for (int y = 0; y < out.h; ++y) grid[static_cast<std::size_t>(y) * out.w + x] = res[static_cast<std::size_t>(y)];
  }
  for (int y = 0; y < out.h; ++y) {
    double* row = grid.data() + static_cast<std::size_t>(y) * out.w;
    edt_1d(row, res.data(), out.w, v, z);
    for (int x = 0; x < out.w; ++x) row[x] = std::sqrt(res[static_cast<std::size_t>(x)]);
  }
  out.values = std::move(grid);
  return out;
}

}  // namespace

std::vector<double> euclidean_distance_transform(const BinaryMask& m) {
  std::vector<double> out(static_cast<std::size_t>(m.width()) * m.height(), 0.0);
  const LocalDistance local = local_edt(m);
  const auto width = static_cast<std::uint32_t>(m.width());
  for (auto idx : m.indices()) {
    out[idx] = local.at(static_cast<int>(idx % width), static_cast<int>(idx / width));
  }
  return out;
}

LabelRaster resolve_overlaps(const InstanceStack& stack, double resolution) {
  if (stack.width < 0 || stack.height < 0) throw std::invalid_argument("resolve: negative size");
  std::set<std::uint32_t> seen;
  for (const auto& item : stack.items) {
    if (item.id == 0) throw std::invalid_argument("resolve: instance id 0 is reserved");
    if (!seen.insert(item.id).second)
      throw std::invalid_argument("resolve: duplicate instance id " + std::to_string(item.id));
    if (item.mask.width() != stack.width || item.mask.height() != stack.height)
      throw std::invalid_argument("resolve: mask size does not match the stack");
    if (item.class_index < 0 ||
        (!stack.class_names.empty() &&
         item.class_index >= static_cast<int>(stack.class_names.size())))
      throw std::invalid_argument("resolve: class index out of range");
  }

  std::vector<LocalDistance> depth(stack.items.size());
  parallel_for(stack.items.size(), [&](std::size_t i) { depth[i] = local_edt(stack.items[i].mask); });

  LabelRaster out;
  out.width = stack.width;
  out.height = stack.height;
  out.resolution = resolution;
  out.class_names = stack.class_names;
  if (out.class_names.empty()) out.class_names = {"nucleus"};
  out.ids.assign(static_cast<std::size_t>(stack.width) * stack.height, 0);
  std::vector<double> best_depth(out.ids.size(), 0.0);
  std::vector<std::size_t> best_area(out.ids.size(), 0);
  const auto width = static_cast<std::uint32_t>(stack.width);
  for (std::size_t i = 0; i < stack.items.size(); ++i) {
    const auto& item = stack.items[i];
    const std::size_t area = item.mask.area();
    for (auto idx : item.mask.indices()) {
      const double d = depth[i].at(static_cast<int>(idx % width), static_cast<int>(idx / width));
      const std::uint32_t cur = out.ids[idx];
      bool better = cur == 0;
      if (!better) {
        if (d != best_depth[idx]) {
          better = d > best_depth[idx];
        } else if (area != best_area[idx]) {
          better = area > best_area[idx];
        } else {
          better = item.id < cur;
        }
      }
      if (better) {
        out.ids[idx] = item.id;
        best_depth[idx] = d;
        best_area[idx] = area;
      }
    }
  }
  for (const auto& item : stack.items) out.instance_class[item.id] = item.class_index;
  return out;
}

}  // namespace lsp
