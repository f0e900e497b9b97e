#pragma once

#include <cstdint>
#include <vector>

namespace lsp {

// Interleaved RGB image, row-major, channel-last.
struct Image {
  int width = 0;
  int height = 0;
  int channels = 3;
  std::vector<double> data;

  double& at(int x, int y, int c) {
    return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  double at(int x, int y, int c) const {
    return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
};

inline constexpr double kImageMean[3] = {0.485, 0.456, 0.406};
inline constexpr double kImageStd[3] = {0.229, 0.224, 0.225};

// Per-channel (v - mean) / std with the ImageNet statistics.
// Throws std::invalid_argument unless the image has three channels.
Image normalize_image(const Image& rgb);

// Dark elliptical blobs on a light stained background, values in [0, 1].
Image synthetic_image(int side, std::uint64_t seed);

}  // namespace lsp
