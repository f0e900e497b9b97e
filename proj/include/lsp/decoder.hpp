#pragma once

// Decoder kernels: grid queries, rotary encodings with a Cayley-parametrized
// orthogonal mixer, sliding-tile attention, decoder layers and the forward
// pass over a deterministic stub backbone. Everything runs in double
// precision with frozen seeded parameters.

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "lsp/criterion.hpp"
#include "lsp/geometry.hpp"
#include "lsp/image.hpp"

namespace lsp {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

// Number of feature levels fed to the cross-attention (strides 4, 8, 16).
inline constexpr int kFeatureLevels = 3;

struct DecoderConfig {
  int dim = 384;
  int layers = 6;
  int heads = 12;
  int ffn_dim = 1024;
  int query_tile = 3;
  int self_window = 3;
  int cross_window = 5;
  std::array<int, kFeatureLevels> feature_tiles = {8, 4, 2};
  std::array<int, kFeatureLevels> feature_channels = {96, 192, 384};
  int backbone_channels = 768;
  double rope_base = 100.0;
  int num_classes = 1;
  double score_threshold = 0.5;

  int head_dim() const { return dim / heads; }
  // Throws std::invalid_argument on inconsistent settings.
  void validate() const;
};

struct QueryGrid {
  int raster_size = 0;
  double resolution = 0.0;
  double s = 0.0;       // normalized radius
  int cells = 1;        // per side
  double r0 = 0.0;      // initial radius in pixels
  std::vector<Vec2> p0; // cell centers, j = cells * gy + gx

  std::size_t size() const noexcept { return p0.size(); }
};

// s = 3.5 um / (2 R resolution), cells = max(1, round(1 / 2s)).
QueryGrid grid_init(int raster_size, double resolution);

struct FeatureMap {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<double> data;  // (y * width + x) * channels + c

  const double* at(int x, int y) const {
    return data.data() + (static_cast<std::size_t>(y) * width + x) * channels;
  }
  // Relative position of cell (x, y): ((x + 1/2) / width, (y + 1/2) / height).
  Vec2 position(int x, int y) const {
    return {(x + 0.5) / width, (y + 0.5) / height};
  }
};

struct FeatureMaps {
  std::array<FeatureMap, kFeatureLevels> levels;  // strides 4, 8, 16
  FeatureMap final_map;                           // stride 32
};

// Average-pools the image at strides 4/8/16/32 and maps the three channels
// to the configured widths with bias-free seeded random matrices.
// Throws std::invalid_argument unless both sides are multiples of 32.
FeatureMaps stub_backbone(const Image& image, std::uint64_t seed, const DecoderConfig& config);

// Bilinear interpolation between cell centers, clamped at the edges.
Vector sample_bilinear(const FeatureMap& map, Vec2 p);

struct LayerNorm {
  Vector gamma;
  Vector beta;
  double eps = 1e-5;

  static LayerNorm identity(int dim);
  void apply_rows(Matrix& x) const;
};

// e0 = Norm(W B(p0)), one row per query.
Matrix init_embeddings(const FeatureMap& backbone, std::span<const Vec2> p0, const Matrix& w,
                       const LayerNorm& norm);

// (I - A)(I + A)^-1 for skew-symmetric A; orthogonal with determinant +1.
Matrix cayley_orthogonal(const Matrix& skew);

// theta^(-2i / (head_dim / 2)) for the head_dim / 4 rotary pairs of each axis.
std::vector<double> rope_frequencies(int head_dim, double base);

// Rotates consecutive pairs: the first half of v by freqs[i] * pos.x, the
// second half by freqs[i] * pos.y. Positions are expected already divided by s.
void rope_rotate_inplace(std::span<double> v, Vec2 pos, std::span<const double> freqs);
std::vector<double> rope_rotate(std::span<const double> v, Vec2 pos,
                                std::span<const double> freqs);

struct TileIndex {
  int x = 0;
  int y = 0;
  friend bool operator==(const TileIndex&, const TileIndex&) = default;
};

// Multi-head softmax attention where a query sees exactly the keys whose
// tile lies within Chebyshev distance window / 2 of the query's tile.
// q: queries x dim, k and v: keys x dim. Returns the concatenated head
// outputs (queries x dim), before any output projection.
Matrix sta_attention(const Matrix& q, const Matrix& k, const Matrix& v,
                     std::span<const TileIndex> query_tiles, std::span<const TileIndex> key_tiles,
                     int window, int heads);

// Two hidden ReLU layers and a linear output.
struct Mlp {
  std::array<Matrix, 3> weights;
  std::array<Vector, 3> biases;

  Matrix operator()(const Matrix& x) const;
};

struct LayerParams {
  // Self-attention
  Matrix self_q, self_k, self_v, self_out;
  // Cross-attention; key/value maps take this layer's feature channels.
  Matrix cross_q, cross_k, cross_v, cross_out;
  Matrix skew;                 // A = G - G^T, head_dim x head_dim
  Matrix mixer;                // cayley_orthogonal(skew)
  std::vector<double> freqs;   // rotary frequencies, shared by all heads
  Matrix ffn_gate, ffn_up, ffn_down;
  LayerNorm norm_self, norm_cross, norm_ffn;
  Matrix class_w;
  Vector class_b;
  Mlp delta_p;
  Mlp delta_r;
};

struct DecoderParams {
  DecoderConfig config;
  std::uint64_t seed = 0;
  Matrix embed_w;  // dim x backbone_channels
  LayerNorm embed_norm;
  std::vector<LayerParams> layers;

  static DecoderParams random(const DecoderConfig& config, std::uint64_t seed);
};

// Feature level used by layer l: stride 16, 8, 4, 16, 8, 4, ...
int feature_level_for_layer(int layer);

// Flattened key/value tokens of one feature level.
struct FeatureTokens {
  int level = 0;
  int width = 0;
  int height = 0;
  Matrix values;               // tokens x channels, j = width * y + x
  std::vector<Vec2> positions; // t_j
  std::vector<TileIndex> tiles;
};
FeatureTokens flatten_features(const FeatureMap& map, int level, int tile_size);

// Projects rows of x with w, then applies the orthogonal mixer and the rotary
// encoding at pos / s per head: RoPE(pos / s) P W x.
Matrix rotary_project(const Matrix& x, const Matrix& w, std::span<const Vec2> positions, double s,
                      const LayerParams& params, int heads);

// p' = s tanh(atanh((p - p0) / s) + dp) + p0 per axis, kept strictly inside
// the open box of half-width s. Throws InvalidStateError if p is not.
Vec2 position_update(Vec2 p, Vec2 p0, double s, Vec2 dp);

// r' = r exp(clamp(dr, -10, 10)), kept finite and strictly positive.
Radii radius_update(const Radii& r, const Radii& dr);
inline constexpr double kDeltaRadiusClamp = 10.0;

struct LayerState {
  Matrix embeddings;       // N x dim
  std::vector<Vec2> p;
  std::vector<Radii> r;
  Matrix logits;           // N x (K + 1), empty before the first layer
};

// Tiles of the query grid and their anchors in a feature level's tile grid.
std::vector<TileIndex> query_tiles(const QueryGrid& grid, int tile);
std::vector<TileIndex> query_anchor_tiles(const QueryGrid& grid, int query_tile,
                                          const FeatureTokens& features, int feature_tile);

LayerState decoder_layer(const LayerState& in, const FeatureTokens& features,
                         const LayerParams& params, const QueryGrid& grid,
                         const DecoderConfig& config);

struct ForwardResult {
  QueryGrid grid;
  std::vector<PredictionSet> layers;  // every query, one set per decoder layer
  PredictionSet predictions;          // final layer after the inference filter
  std::vector<std::size_t> kept;      // query indices behind `predictions`
};

// Highest-probability slot is not "no nucleus" and its probability >= tau.
bool keep_prediction(const ShapeDescriptor& d, double tau);

ForwardResult forward(const FeatureMaps& features, const DecoderParams& params, int raster_size,
                      double resolution);
// Normalizes the image and runs the stub backbone with params.seed first.
ForwardResult forward(const Image& image, const DecoderParams& params, double resolution);

struct BenchEntry {
  int side = 0;
  std::size_t pixels = 0;
  std::size_t queries = 0;
  std::size_t feature_tokens = 0;
  double seconds = 0.0;
};

struct BenchReport {
  std::vector<BenchEntry> entries;
  double exponent = 0.0;  // least-squares slope of log(time) against log(pixels)
};

BenchReport bench_scaling(std::span<const int> sides, const DecoderParams& params,
                          double resolution = 0.25, int repeats = 1);

// Least-squares slope of log(y) against log(x).
double fit_loglog_slope(std::span<const double> x, std::span<const double> y);

}  // namespace lsp
