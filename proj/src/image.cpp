#include "lsp/image.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "lsp/random.hpp"

namespace lsp {

Image normalize_image(const Image& rgb) {
  if (rgb.channels != 3) throw std::invalid_argument("normalize_image expects 3 channels");
  Image out = rgb;
  for (std::size_t i = 0; i < out.data.size(); ++i) {
    const auto c = i % 3;
    out.data[i] = (rgb.data[i] - kImageMean[c]) / kImageStd[c];
  }
  return out;
}

Image synthetic_image(int side, std::uint64_t seed) {
  if (side < 1) throw std::invalid_argument("synthetic image side must be positive");
  Image img;
  img.width = side;
  img.height = side;
  img.data.assign(static_cast<std::size_t>(side) * side * 3, 0.0);
  constexpr double background[3] = {0.93, 0.78, 0.86};
  constexpr double nucleus[3] = {0.35, 0.22, 0.55};

  Rng rng(seed);
  // Roughly one nucleus per 24x24 px.
  const int count = std::max(1, side * side / 576);
  struct Blob {
    double cx, cy, ax, ay, angle;
  };
  std::vector<Blob> blobs(static_cast<std::size_t>(count));
  for (auto& b : blobs) {
    b.cx = rng.uniform(0.0, side);
    b.cy = rng.uniform(0.0, side);
    b.ax = rng.uniform(4.0, 10.0);
    b.ay = rng.uniform(3.0, 8.0);
    b.angle = rng.uniform(0.0, 3.14159265358979);
  }
  std::vector<double> darkness(static_cast<std::size_t>(side) * side, 0.0);
  for (const auto& b : blobs) {
    const double c = std::cos(b.angle), s = std::sin(b.angle);
    const int x0 = std::max(0, static_cast<int>(b.cx - b.ax - 2));
    const int x1 = std::min(side - 1, static_cast<int>(b.cx + b.ax + 2));
    const int y0 = std::max(0, static_cast<int>(b.cy - b.ax - 2));
    const int y1 = std::min(side - 1, static_cast<int>(b.cy + b.ax + 2));
    for (int y = y0; y <= y1; ++y) {
      for (int x = x0; x <= x1; ++x) {
        const double dx = x + 0.5 - b.cx, dy = y + 0.5 - b.cy;
        const double u = (c * dx + s * dy) / b.ax, v = (-s * dx + c * dy) / b.ay;
        const double d = u * u + v * v;
        if (d < 1.0) {
          auto& px = darkness[static_cast<std::size_t>(y) * side + x];
          px = std::max(px, 1.0 - 0.4 * d);
        }
      }
    }
  }
  for (int y = 0; y < side; ++y) {
    for (int x = 0; x < side; ++x) {
      const double a = darkness[static_cast<std::size_t>(y) * side + x];
      const double noise = rng.uniform(-0.03, 0.03);
      for (int ch = 0; ch < 3; ++ch) {
        img.at(x, y, ch) = std::clamp(background[ch] * (1 - a) + nucleus[ch] * a + noise, 0.0, 1.0);
      }
    }
  }
  return img;
}

}  // namespace lsp
