#include "lsp/decoder.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>

#include "lsp/errors.hpp"
#include "lsp/parallel.hpp"
#include "lsp/random.hpp"

namespace lsp {

void DecoderConfig::validate() const {
  if (layers < 1) throw std::invalid_argument("decoder needs at least one layer");
  if (heads < 1 || dim % (2 * heads) != 0)
    throw std::invalid_argument("dim must be divisible by 2 * heads");
  if (head_dim() % 4 != 0)
    throw std::invalid_argument("head dimension must split into x and y rotary pairs");
  if (query_tile < 1 || self_window < 1 || cross_window < 1 || self_window % 2 == 0 ||
      cross_window % 2 == 0)
    throw std::invalid_argument("tile sizes must be positive and windows odd");
  for (int t : feature_tiles) {
    if (t < 1) throw std::invalid_argument("feature tile sizes must be positive");
  }
  for (int c : feature_channels) {
    if (c < 1) throw std::invalid_argument("feature channels must be positive");
  }
  if (backbone_channels < 1 || ffn_dim < 1 || num_classes < 1)
    throw std::invalid_argument("channel counts and class count must be positive");
  if (!(rope_base > 0.0)) throw std::invalid_argument("rotary base must be positive");
}

QueryGrid grid_init(int raster_size, double resolution) {
  if (raster_size < 32) throw std::invalid_argument("grid_init: raster size must be >= 32");
  if (!(resolution > 0.0) || !std::isfinite(resolution))
    throw std::invalid_argument("grid_init: resolution must be positive");
  QueryGrid grid;
  grid.raster_size = raster_size;
  grid.resolution = resolution;
  grid.s = 3.5 / (2.0 * raster_size * resolution);
  const double cells = std::max(1.0, std::round(1.0 / (2.0 * grid.s)));
  if (cells > raster_size)
    throw std::invalid_argument("grid_init: grid cells would be smaller than a pixel");
  grid.cells = static_cast<int>(cells);
  grid.r0 = grid.s * raster_size;
  grid.p0.reserve(static_cast<std::size_t>(grid.cells) * grid.cells);
  for (int gy = 0; gy < grid.cells; ++gy) {
    for (int gx = 0; gx < grid.cells; ++gx) {
      grid.p0.push_back({(gx + 0.5) / grid.cells, (gy + 0.5) / grid.cells});
    }
  }
  return grid;
}

namespace {

Matrix random_matrix(Rng& rng, int rows, int cols, double scale) {
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(-scale, scale);
  return m;
}

Matrix linear_init(Rng& rng, int out, int in, double gain = 1.0) {
  return random_matrix(rng, out, in, gain / std::sqrt(static_cast<double>(in)));
}

FeatureMap pool_and_project(const Image& image, int stride, const Matrix& map) {
  FeatureMap out;
  out.width = image.width / stride;
  out.height = image.height / stride;
  out.channels = static_cast<int>(map.rows());
  out.data.assign(static_cast<std::size_t>(out.width) * out.height * out.channels, 0.0);
  const double inv = 1.0 / (static_cast<double>(stride) * stride);
  for (int y = 0; y < out.height; ++y) {
    for (int x = 0; x < out.width; ++x) {
      double pooled[3] = {0.0, 0.0, 0.0};
      for (int dy = 0; dy < stride; ++dy) {
        for (int dx = 0; dx < stride; ++dx) {
          for (int c = 0; c < 3; ++c) pooled[c] += image.at(x * stride + dx, y * stride + dy, c);
        }
      }
      double* dst = out.data.data() + (static_cast<std::size_t>(y) * out.width + x) * out.channels;
      for (int c = 0; c < out.channels; ++c) {
        dst[c] = map(c, 0) * (pooled[0] * inv) + map(c, 1) * (pooled[1] * inv) +
                 map(c, 2) * (pooled[2] * inv);
      }
    }
  }
  return out;
}

}  // namespace

FeatureMaps stub_backbone(const Image& image, std::uint64_t seed, const DecoderConfig& config) {
  if (image.channels != 3) throw std::invalid_argument("stub_backbone expects 3 channels");
  if (image.width < 32 || image.height < 32 || image.width % 32 != 0 || image.height % 32 != 0)
    throw std::invalid_argument("stub_backbone: image sides must be multiples of 32");
  Rng rng(seed);
  FeatureMaps maps;
  constexpr int strides[kFeatureLevels] = {4, 8, 16};
  for (int level = 0; level < kFeatureLevels; ++level) {
    const Matrix proj = linear_init(rng, config.feature_channels[level], 3);
    maps.levels[level] = pool_and_project(image, strides[level], proj);
  }
  const Matrix proj = linear_init(rng, config.backbone_channels, 3);
  maps.final_map = pool_and_project(image, 32, proj);
  return maps;
}

Vector sample_bilinear(const FeatureMap& map, Vec2 p) {
  const double u = p.x * map.width - 0.5;
  const double v = p.y * map.height - 0.5;
  const double x0 = std::floor(u);
  const double y0 = std::floor(v);
  const double fx = u - x0;
  const double fy = v - y0;
  const int xa = std::clamp(static_cast<int>(x0), 0, map.width - 1);
  const int xb = std::clamp(static_cast<int>(x0) + 1, 0, map.width - 1);
  const int ya = std::clamp(static_cast<int>(y0), 0, map.height - 1);
  const int yb = std::clamp(static_cast<int>(y0) + 1, 0, map.height - 1);
  const double w00 = (1 - fx) * (1 - fy), w10 = fx * (1 - fy), w01 = (1 - fx) * fy, w11 = fx * fy;
  Vector out(map.channels);
  const double* a = map.at(xa, ya);
  const double* b = map.at(xb, ya);
  const double* c = map.at(xa, yb);
  const double* d = map.at(xb, yb);
  for (int ch = 0; ch < map.channels; ++ch) {
    out[ch] = w00 * a[ch] + w10 * b[ch] + w01 * c[ch] + w11 * d[ch];
  }
  return out;
}

LayerNorm LayerNorm::identity(int dim) {
  return {Vector::Ones(dim), Vector::Zero(dim), 1e-5};
}

void LayerNorm::apply_rows(Matrix& x) const {
  const auto n = static_cast<double>(x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    auto row = x.row(i);
    const double mean = row.sum() / n;
    const double var = (row.array() - mean).square().sum() / n;
    const double inv = 1.0 / std::sqrt(var + eps);
    row = (((row.array() - mean) * inv) * gamma.transpose().array() + beta.transpose().array())
              .matrix();
  }
}

Matrix init_embeddings(const FeatureMap& backbone, std::span<const Vec2> p0, const Matrix& w,
                       const LayerNorm& norm) {
  if (w.cols() != backbone.channels)
    throw std::invalid_argument("embedding projection does not match backbone channels");
  Matrix sampled(static_cast<Eigen::Index>(p0.size()), backbone.channels);
  for (std::size_t j = 0; j < p0.size(); ++j) {
    sampled.row(static_cast<Eigen::Index>(j)) = sample_bilinear(backbone, p0[j]).transpose();
  }
  Matrix e = sampled * w.transpose();
  norm.apply_rows(e);
  return e;
}

Matrix cayley_orthogonal(const Matrix& skew) {
  if (skew.rows() != skew.cols()) throw std::invalid_argument("cayley: matrix must be square");
  const Matrix eye = Matrix::Identity(skew.rows(), skew.cols());
  // (I - A) and (I + A)^-1 commute, so solve (I + A) P = (I - A).
  return Matrix((eye + skew).partialPivLu().solve(eye - skew));
}

std::vector<double> rope_frequencies(int head_dim, double base) {
  if (head_dim < 4 || head_dim % 4 != 0)
    throw std::invalid_argument("rotary head dimension must be a positive multiple of 4");
  const int axis_dim = head_dim / 2;
  std::vector<double> freqs(static_cast<std::size_t>(axis_dim / 2));
  for (int i = 0; i < axis_dim / 2; ++i) {
    freqs[static_cast<std::size_t>(i)] = std::pow(base, -2.0 * i / axis_dim);
  }
  return freqs;
}

void rope_rotate_inplace(std::span<double> v, Vec2 pos, std::span<const double> freqs) {
  const std::size_t half = v.size() / 2;
  if (v.size() % 4 != 0 || freqs.size() * 2 != half)
    throw std::invalid_argument("rope: vector size does not match the frequency count");
  for (std::size_t i = 0; i < freqs.size(); ++i) {
    const double ax = freqs[i] * pos.x;
    const double ay = freqs[i] * pos.y;
    const double cx = std::cos(ax), sx = std::sin(ax);
    const double cy = std::cos(ay), sy = std::sin(ay);
    double& a = v[2 * i];
    double& b = v[2 * i + 1];
    const double a0 = a, b0 = b;
    a = a0 * cx - b0 * sx;
    b = a0 * sx + b0 * cx;
    double& c = v[half + 2 * i];
    double& d = v[half + 2 * i + 1];
    const double c0 = c, d0 = d;
    c = c0 * cy - d0 * sy;
    d = c0 * sy + d0 * cy;
  }
}

std::vector<double> rope_rotate(std::span<const double> v, Vec2 pos,
                                std::span<const double> freqs) {
  std::vector<double> out(v.begin(), v.end());
  rope_rotate_inplace(out, pos, freqs);
  return out;
}

Matrix sta_attention(const Matrix& q, const Matrix& k, const Matrix& v,
                     std::span<const TileIndex> query_tiles, std::span<const TileIndex> key_tiles,
                     int window, int heads) {
  if (q.cols() != k.cols() || k.cols() != v.cols() || k.rows() != v.rows())
    throw std::invalid_argument("sta_attention: inconsistent shapes");
  if (static_cast<std::size_t>(q.rows()) != query_tiles.size() ||
      static_cast<std::size_t>(k.rows()) != key_tiles.size())
    throw std::invalid_argument("sta_attention: one tile per token required");
  if (window < 1 || window % 2 == 0) throw std::invalid_argument("sta_attention: window must be odd");
  if (heads < 1 || q.cols() % heads != 0)
    throw std::invalid_argument("sta_attention: dim must be divisible by heads");

  const Eigen::Index dim = q.cols();
  const Eigen::Index head_dim = dim / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(head_dim));
  const int reach = window / 2;

  // Keys bucketed per tile, ascending token order within a tile.
  int tiles_x = 0, tiles_y = 0;
  for (const auto& t : key_tiles) {
    if (t.x < 0 || t.y < 0) throw std::invalid_argument("sta_attention: negative tile index");
    tiles_x = std::max(tiles_x, t.x + 1);
    tiles_y = std::max(tiles_y, t.y + 1);
  }
  std::vector<std::size_t> bucket_start(static_cast<std::size_t>(tiles_x) * tiles_y + 1, 0);
  for (const auto& t : key_tiles) ++bucket_start[static_cast<std::size_t>(t.y) * tiles_x + t.x + 1];
  for (std::size_t i = 1; i < bucket_start.size(); ++i) bucket_start[i] += bucket_start[i - 1];
  std::vector<Eigen::Index> bucket(key_tiles.size());
  {
    std::vector<std::size_t> cursor(bucket_start.begin(), bucket_start.end() - 1);
    for (std::size_t j = 0; j < key_tiles.size(); ++j) {
      const auto& t = key_tiles[j];
      bucket[cursor[static_cast<std::size_t>(t.y) * tiles_x + t.x]++] = static_cast<Eigen::Index>(j);
    }
  }

  // Queries grouped by tile; all members of a group share one key set.
  std::map<std::pair<int, int>, std::vector<Eigen::Index>> groups_by_tile;
  for (std::size_t i = 0; i < query_tiles.size(); ++i) {
    groups_by_tile[{query_tiles[i].y, query_tiles[i].x}].push_back(static_cast<Eigen::Index>(i));
  }
  std::vector<std::pair<TileIndex, std::vector<Eigen::Index>>> groups;
  groups.reserve(groups_by_tile.size());
  for (auto& [tile, members] : groups_by_tile) {
    groups.push_back({TileIndex{tile.second, tile.first}, std::move(members)});
  }

  Matrix out = Matrix::Zero(q.rows(), dim);
  parallel_for(groups.size(), [&](std::size_t g) {
    const auto& [tile, members] = groups[g];
    std::vector<Eigen::Index> keys;
    for (int dy = -reach; dy <= reach; ++dy) {
      const int ty = tile.y + dy;
      if (ty < 0 || ty >= tiles_y) continue;
      for (int dx = -reach; dx <= reach; ++dx) {
        const int tx = tile.x + dx;
        if (tx < 0 || tx >= tiles_x) continue;
        const std::size_t b = static_cast<std::size_t>(ty) * tiles_x + tx;
        keys.insert(keys.end(), bucket.begin() + static_cast<std::ptrdiff_t>(bucket_start[b]),
                    bucket.begin() + static_cast<std::ptrdiff_t>(bucket_start[b + 1]));
      }
    }
    if (keys.empty()) throw InvalidStateError("sta_attention: query without keys in its window");

    const auto nq = static_cast<Eigen::Index>(members.size());
    const auto nk = static_cast<Eigen::Index>(keys.size());
    Matrix qg(nq, dim), kg(nk, dim), vg(nk, dim);
    for (Eigen::Index i = 0; i < nq; ++i) qg.row(i) = q.row(members[static_cast<std::size_t>(i)]);
    for (Eigen::Index j = 0; j < nk; ++j) {
      kg.row(j) = k.row(keys[static_cast<std::size_t>(j)]);
      vg.row(j) = v.row(keys[static_cast<std::size_t>(j)]);
    }
    for (int h = 0; h < heads; ++h) {
      const Eigen::Index c0 = h * head_dim;
      Matrix scores = (qg.middleCols(c0, head_dim) * kg.middleCols(c0, head_dim).transpose()) * scale;
      for (Eigen::Index i = 0; i < nq; ++i) {
        auto row = scores.row(i);
        const double peak = row.maxCoeff();
        row = (row.array() - peak).exp().matrix();
        row /= row.sum();
      }
      const Matrix mixed = scores * vg.middleCols(c0, head_dim);
      for (Eigen::Index i = 0; i < nq; ++i) {
        out.row(members[static_cast<std::size_t>(i)]).segment(c0, head_dim) = mixed.row(i);
      }
    }
  });
  return out;
}

Matrix Mlp::operator()(const Matrix& x) const {
  Matrix h = ((x * weights[0].transpose()).rowwise() + biases[0].transpose()).cwiseMax(0.0);
  h = ((h * weights[1].transpose()).rowwise() + biases[1].transpose()).cwiseMax(0.0);
  return (h * weights[2].transpose()).rowwise() + biases[2].transpose();
}

int feature_level_for_layer(int layer) {
  // Coarse to fine: stride 16 (level 2), 8 (level 1), 4 (level 0).
  return kFeatureLevels - 1 - (layer % kFeatureLevels);
}

namespace {

Mlp random_mlp(Rng& rng, int in, int hidden, int out, double out_gain) {
  Mlp mlp;
  mlp.weights = {linear_init(rng, hidden, in), linear_init(rng, hidden, hidden),
                 linear_init(rng, out, hidden, out_gain)};
  mlp.biases = {Vector::Zero(hidden), Vector::Zero(hidden), Vector::Zero(out)};
  return mlp;
}

}  // namespace

DecoderParams DecoderParams::random(const DecoderConfig& config, std::uint64_t seed) {
  config.validate();
  DecoderParams params;
  params.config = config;
  params.seed = seed;
  // Offset the stream so the decoder weights differ from the backbone maps.
  Rng rng(seed ^ 0x9e3779b97f4a7c15ULL);
  const int d = config.dim;
  const int hd = config.head_dim();
  params.embed_w = linear_init(rng, d, config.backbone_channels);
  params.embed_norm = LayerNorm::identity(d);
  for (int l = 0; l < config.layers; ++l) {
    const int channels = config.feature_channels[feature_level_for_layer(l)];
    LayerParams lp;
    lp.self_q = linear_init(rng, d, d);
    lp.self_k = linear_init(rng, d, d);
    lp.self_v = linear_init(rng, d, d);
    lp.self_out = linear_init(rng, d, d);
    lp.cross_q = linear_init(rng, d, d);
    lp.cross_k = linear_init(rng, d, channels);
    lp.cross_v = linear_init(rng, d, channels);
    lp.cross_out = linear_init(rng, d, d);
    const Matrix generator = random_matrix(rng, hd, hd, 0.1);
    lp.skew = generator - generator.transpose();
    lp.mixer = cayley_orthogonal(lp.skew);
    lp.freqs = rope_frequencies(hd, config.rope_base);
    lp.ffn_gate = linear_init(rng, config.ffn_dim, d);
    lp.ffn_up = linear_init(rng, config.ffn_dim, d);
    lp.ffn_down = linear_init(rng, d, config.ffn_dim);
    lp.norm_self = LayerNorm::identity(d);
    lp.norm_cross = LayerNorm::identity(d);
    lp.norm_ffn = LayerNorm::identity(d);
    lp.class_w = linear_init(rng, config.num_classes + 1, d);
    lp.class_b = Vector::Zero(config.num_classes + 1);
    lp.delta_p = random_mlp(rng, d, d, 2, 0.1);
    lp.delta_r = random_mlp(rng, d, d, kRayCount, 0.1);
    params.layers.push_back(std::move(lp));
  }
  return params;
}

FeatureTokens flatten_features(const FeatureMap& map, int level, int tile_size) {
  if (tile_size < 1) throw std::invalid_argument("feature tile size must be positive");
  FeatureTokens tokens;
  tokens.level = level;
  tokens.width = map.width;
  tokens.height = map.height;
  const auto n = static_cast<Eigen::Index>(map.width) * map.height;
  tokens.values = Eigen::Map<const Matrix>(map.data.data(), n, map.channels);
  tokens.positions.reserve(static_cast<std::size_t>(n));
  tokens.tiles.reserve(static_cast<std::size_t>(n));
  for (int y = 0; y < map.height; ++y) {
    for (int x = 0; x < map.width; ++x) {
      tokens.positions.push_back(map.position(x, y));
      tokens.tiles.push_back({x / tile_size, y / tile_size});
    }
  }
  return tokens;
}

Matrix rotary_project(const Matrix& x, const Matrix& w, std::span<const Vec2> positions, double s,
                      const LayerParams& params, int heads) {
  if (static_cast<std::size_t>(x.rows()) != positions.size())
    throw std::invalid_argument("rotary_project: one position per row required");
  Matrix y = x * w.transpose();
  const Eigen::Index hd = y.cols() / heads;
  if (params.mixer.rows() != hd) throw std::invalid_argument("rotary_project: mixer size mismatch");
  // Mix each head with P, then rotate by the scaled position.
  for (int h = 0; h < heads; ++h) {
    auto block = y.middleCols(h * hd, hd);
    block = (block * params.mixer.transpose()).eval();
  }
  for (Eigen::Index i = 0; i < y.rows(); ++i) {
    const Vec2 pos = {positions[static_cast<std::size_t>(i)].x / s,
                      positions[static_cast<std::size_t>(i)].y / s};
    for (int h = 0; h < heads; ++h) {
      rope_rotate_inplace(std::span<double>(y.row(i).data() + h * hd, static_cast<std::size_t>(hd)),
                          pos, params.freqs);
    }
  }
  return y;
}

Vec2 position_update(Vec2 p, Vec2 p0, double s, Vec2 dp) {
  if (!(s > 0.0)) throw std::invalid_argument("position_update: s must be positive");
  if (!std::isfinite(dp.x) || !std::isfinite(dp.y))
    throw std::invalid_argument("position_update: non-finite offset");
  const double below_one = std::nextafter(1.0, 0.0);
  auto axis = [&](double v, double origin, double delta) {
    const double offset = v - origin;
    if (!(std::abs(offset) < s))
      throw InvalidStateError("position_update: position left its confinement box");
    if (delta == 0.0) return v;
    const double ratio = std::clamp(offset / s, -below_one, below_one);
    double out = s * std::tanh(std::atanh(ratio) + delta) + origin;
    // tanh saturates to exactly +-1 in floating point; step back inside.
    while (!(std::abs(out - origin) < s)) out = std::nextafter(out, origin);
    return out;
  };
  return {axis(p.x, p0.x, dp.x), axis(p.y, p0.y, dp.y)};
}

Radii radius_update(const Radii& r, const Radii& dr) {
  Radii out{};
  for (int k = 0; k < kRayCount; ++k) {
    if (!(r[k] > 0.0)) throw std::invalid_argument("radius_update: radii must be positive");
    if (std::isnan(dr[k])) throw std::invalid_argument("radius_update: NaN update");
    const double step = std::clamp(dr[k], -kDeltaRadiusClamp, kDeltaRadiusClamp);
    out[k] = std::clamp(r[k] * std::exp(step), std::numeric_limits<double>::min(),
                        std::numeric_limits<double>::max());
  }
  return out;
}

std::vector<TileIndex> query_tiles(const QueryGrid& grid, int tile) {
  std::vector<TileIndex> tiles(grid.size());
  for (std::size_t j = 0; j < grid.size(); ++j) {
    const int gx = static_cast<int>(j % static_cast<std::size_t>(grid.cells));
    const int gy = static_cast<int>(j / static_cast<std::size_t>(grid.cells));
    tiles[j] = {gx / tile, gy / tile};
  }
  return tiles;
}

std::vector<TileIndex> query_anchor_tiles(const QueryGrid& grid, int query_tile,
                                          const FeatureTokens& features, int feature_tile) {
  auto anchor = [&](int t, int extent) {
    const int lo = t * query_tile;
    const int hi = std::min(lo + query_tile, grid.cells);
    const double center = 0.5 * (lo + hi) / grid.cells;
    const int cell = std::clamp(static_cast<int>(std::floor(center * extent)), 0, extent - 1);
    return cell / feature_tile;
  };
  auto tiles = query_tiles(grid, query_tile);
  for (auto& t : tiles) t = {anchor(t.x, features.width), anchor(t.y, features.height)};
  return tiles;
}

namespace {

Matrix silu(const Matrix& x) {
  return (x.array() / (1.0 + (-x.array()).exp())).matrix();
}

}  // namespace

LayerState decoder_layer(const LayerState& in, const FeatureTokens& features,
                         const LayerParams& params, const QueryGrid& grid,
                         const DecoderConfig& config) {
  const auto n = static_cast<Eigen::Index>(grid.size());
  if (in.embeddings.rows() != n || in.embeddings.cols() != config.dim ||
      in.p.size() != grid.size() || in.r.size() != grid.size())
    throw std::invalid_argument("decoder_layer: state does not match the query grid");
  if (features.values.cols() != params.cross_k.cols())
    throw std::invalid_argument("decoder_layer: feature channels do not match the layer");
  const int heads = config.heads;
  const double s = grid.s;
  const auto own_tiles = query_tiles(grid, config.query_tile);

  // Self-attention among queries.
  Matrix e = in.embeddings;
  {
    const Matrix q = rotary_project(e, params.self_q, in.p, s, params, heads);
    const Matrix k = rotary_project(e, params.self_k, in.p, s, params, heads);
    const Matrix v = e * params.self_v.transpose();
    const Matrix att = sta_attention(q, k, v, own_tiles, own_tiles, config.self_window, heads);
    e += att * params.self_out.transpose();
    params.norm_self.apply_rows(e);
  }

  // Cross-attention into the feature level.
  {
    const int feature_tile = config.feature_tiles[features.level];
    const auto anchors = query_anchor_tiles(grid, config.query_tile, features, feature_tile);
    const Matrix q = rotary_project(e, params.cross_q, in.p, s, params, heads);
    const Matrix k = rotary_project(features.values, params.cross_k, features.positions, s, params,
                                    heads);
    const Matrix v = features.values * params.cross_v.transpose();
    const Matrix att = sta_attention(q, k, v, anchors, features.tiles, config.cross_window, heads);
    e += att * params.cross_out.transpose();
    params.norm_cross.apply_rows(e);
  }

  // SwiGLU feed-forward.
  {
    const Matrix gate = silu(e * params.ffn_gate.transpose());
    const Matrix up = e * params.ffn_up.transpose();
    e += gate.cwiseProduct(up) * params.ffn_down.transpose();
    params.norm_ffn.apply_rows(e);
  }

  LayerState out;
  out.logits = (e * params.class_w.transpose()).rowwise() + params.class_b.transpose();
  const Matrix dp = params.delta_p(e);
  const Matrix dr = params.delta_r(e);
  out.p.resize(grid.size());
  out.r.resize(grid.size());
  for (Eigen::Index j = 0; j < n; ++j) {
    const auto idx = static_cast<std::size_t>(j);
    out.p[idx] = position_update(in.p[idx], grid.p0[idx], s, {dp(j, 0), dp(j, 1)});
    Radii delta{};
    for (int k = 0; k < kRayCount; ++k) delta[k] = dr(j, k);
    out.r[idx] = radius_update(in.r[idx], delta);
  }
  out.embeddings = std::move(e);
  return out;
}

namespace {

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double ex = std::exp(x);
  return ex / (1.0 + ex);
}

PredictionSet to_prediction_set(const LayerState& state, const QueryGrid& grid) {
  PredictionSet set;
  set.width = grid.raster_size;
  set.height = grid.raster_size;
  set.grid_radius = grid.s;
  set.items.resize(grid.size());
  const auto slots = state.logits.cols();
  for (std::size_t j = 0; j < grid.size(); ++j) {
    auto& d = set.items[j];
    d.p = {std::clamp(state.p[j].x, 0.0, 1.0), std::clamp(state.p[j].y, 0.0, 1.0)};
    d.r = state.r[j];
    d.class_logits.resize(static_cast<std::size_t>(slots));
    double best = 0.0;
    for (Eigen::Index c = 0; c < slots; ++c) {
      d.class_logits[static_cast<std::size_t>(c)] = state.logits(static_cast<Eigen::Index>(j), c);
      if (c + 1 < slots) best = std::max(best, sigmoid(d.class_logits[static_cast<std::size_t>(c)]));
    }
    d.score = best;
  }
  return set;
}

}  // namespace

bool keep_prediction(const ShapeDescriptor& d, double tau) {
  if (d.class_logits.empty()) return false;
  const auto best = std::max_element(d.class_logits.begin(), d.class_logits.end());
  const auto empty_slot = d.class_logits.end() - 1;
  if (best == empty_slot) return false;
  return sigmoid(*best) >= tau;
}

ForwardResult forward(const FeatureMaps& features, const DecoderParams& params, int raster_size,
                      double resolution) {
  const DecoderConfig& config = params.config;
  config.validate();
  if (static_cast<int>(params.layers.size()) != config.layers)
    throw std::invalid_argument("forward: parameter layer count does not match the config");
  constexpr int strides[kFeatureLevels] = {4, 8, 16};
  for (int level = 0; level < kFeatureLevels; ++level) {
    const auto& m = features.levels[level];
    if (m.width * strides[level] != raster_size || m.height * strides[level] != raster_size ||
        m.channels != config.feature_channels[level])
      throw std::invalid_argument("forward: feature level " + std::to_string(level) +
                                  " inconsistent with the raster size or config");
  }

  ForwardResult result;
  result.grid = grid_init(raster_size, resolution);
  const QueryGrid& grid = result.grid;

  LayerState state;
  state.embeddings = init_embeddings(features.final_map, grid.p0, params.embed_w, params.embed_norm);
  state.p = grid.p0;
  Radii r0{};
  r0.fill(grid.r0);
  state.r.assign(grid.size(), r0);

  std::array<std::optional<FeatureTokens>, kFeatureLevels> tokens;
  for (int l = 0; l < config.layers; ++l) {
    const int level = feature_level_for_layer(l);
    if (!tokens[level]) {
      tokens[level] = flatten_features(features.levels[level], level, config.feature_tiles[level]);
    }
    state = decoder_layer(state, *tokens[level], params.layers[static_cast<std::size_t>(l)], grid,
                          config);
    result.layers.push_back(to_prediction_set(state, grid));
  }

  const PredictionSet& last = result.layers.back();
  result.predictions.width = last.width;
  result.predictions.height = last.height;
  result.predictions.grid_radius = last.grid_radius;
  for (std::size_t j = 0; j < last.items.size(); ++j) {
    if (keep_prediction(last.items[j], config.score_threshold)) {
      result.predictions.items.push_back(last.items[j]);
      result.kept.push_back(j);
    }
  }
  return result;
}

ForwardResult forward(const Image& image, const DecoderParams& params, double resolution) {
  if (image.width != image.height) throw std::invalid_argument("forward expects a square image");
  const FeatureMaps features = stub_backbone(normalize_image(image), params.seed, params.config);
  return forward(features, params, image.width, resolution);
}

double fit_loglog_slope(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2)
    throw std::invalid_argument("slope fit needs at least two paired samples");
  const auto n = static_cast<double>(x.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += std::log(x[i]);
    my += std::log(y[i]);
  }
  mx /= n;
  my /= n;
  double sxy = 0, sxx = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = std::log(x[i]) - mx;
    sxy += dx * (std::log(y[i]) - my);
    sxx += dx * dx;
  }
  return sxy / sxx;
}

BenchReport bench_scaling(std::span<const int> sides, const DecoderParams& params,
                          double resolution, int repeats) {
  BenchReport report;
  for (int side : sides) {
    if (side < 32 || side % 32 != 0)
      throw std::invalid_argument("bench sides must be positive multiples of 32");
    const Image image = synthetic_image(side, params.seed);
    BenchEntry entry;
    entry.side = side;
    entry.pixels = static_cast<std::size_t>(side) * side;
    entry.seconds = std::numeric_limits<double>::infinity();
    for (int rep = 0; rep < std::max(1, repeats); ++rep) {
      const auto start = std::chrono::steady_clock::now();
      const ForwardResult out = forward(image, params, resolution);
      const auto stop = std::chrono::steady_clock::now();
      entry.seconds = std::min(entry.seconds, std::chrono::duration<double>(stop - start).count());
      entry.queries = out.grid.size();
    }
    for (int stride : {4, 8, 16}) {
      entry.feature_tokens += static_cast<std::size_t>(side / stride) * (side / stride);
    }
    report.entries.push_back(entry);
  }
  if (report.entries.size() >= 2) {
    std::vector<double> px, t;
    for (const auto& e : report.entries) {
      px.push_back(static_cast<double>(e.pixels));
      t.push_back(e.seconds);
    }
    report.exponent = fit_loglog_slope(px, t);
  }
  return report;
}

}  // namespace lsp
