#include "grit/model/backbone.hpp"

#include <stdexcept>
#include <string>

namespace grit::model {

WindowLayout make_window_layout(Index height, Index width, Index window, bool shift) {
  if (height < 1 || width < 1 || window < 1) throw std::invalid_argument("window layout needs positive sizes");
  WindowLayout L;
  L.height = height;
  L.width = width;
  L.win_h = std::min(window, height);
  L.win_w = std::min(window, width);
  L.windows_y = (height + L.win_h - 1) / L.win_h;
  L.windows_x = (width + L.win_w - 1) / L.win_w;
  const Index ph = L.windows_y * L.win_h;
  const Index pw = L.windows_x * L.win_w;
  L.shift_y = (shift && L.windows_y > 1) ? L.win_h / 2 : 0;
  L.shift_x = (shift && L.windows_x > 1) ? L.win_w / 2 : 0;

  const Index slots = L.slots();
  const Index count = L.windows() * slots;
  L.source.assign(static_cast<std::size_t>(count), -1);
  L.inverse.assign(static_cast<std::size_t>(height * width), -1);
  std::vector<int> region(static_cast<std::size_t>(count), 0);
  bool padded = false;
  auto band = [](Index p, Index size, Index win, Index s) { return p < size - win ? 0 : (p < size - s ? 1 : 2); };

  for (Index wy = 0; wy < L.windows_y; ++wy) {
    for (Index wx = 0; wx < L.windows_x; ++wx) {
      const Index win = wy * L.windows_x + wx;
      for (Index ty = 0; ty < L.win_h; ++ty) {
        for (Index tx = 0; tx < L.win_w; ++tx) {
          const Index py = wy * L.win_h + ty;
          const Index px = wx * L.win_w + tx;
          const Index oy = (py + L.shift_y) % ph;
          const Index ox = (px + L.shift_x) % pw;
          const Index row = win * slots + ty * L.win_w + tx;
          if (oy < height && ox < width) {
            L.source[static_cast<std::size_t>(row)] = oy * width + ox;
            L.inverse[static_cast<std::size_t>(oy * width + ox)] = row;
          } else {
            padded = true;
          }
          int ry = L.shift_y > 0 ? band(py, ph, L.win_h, L.shift_y) : 0;
          int rx = L.shift_x > 0 ? band(px, pw, L.win_w, L.shift_x) : 0;
          region[static_cast<std::size_t>(row)] = ry * 3 + rx;
        }
      }
    }
  }

  if (padded || L.shift_y > 0 || L.shift_x > 0) {
    auto& m = L.mask;
    m.batch = L.windows();
    m.rows = slots;
    m.cols = slots;
    m.allowed.assign(static_cast<std::size_t>(L.windows() * slots * slots), 0);
    for (Index win = 0; win < L.windows(); ++win) {
      for (Index i = 0; i < slots; ++i) {
        for (Index j = 0; j < slots; ++j) {
          const auto ri = static_cast<std::size_t>(win * slots + i);
          const auto rj = static_cast<std::size_t>(win * slots + j);
          const bool ok = L.source[rj] >= 0 && region[ri] == region[rj];
          m.allowed[static_cast<std::size_t>((win * slots + i) * slots + j)] = ok ? 1 : 0;
        }
      }
    }
  }
  return L;
}

template <typename Scalar>
Tensor<Scalar> patchify(const Tensor<Scalar>& images, Index patch) {
  if (images.rank() != 4 || images.dim(3) != 3) throw std::invalid_argument("images must be (B, H, W, 3)");
  const Index B = images.dim(0), H = images.dim(1), W = images.dim(2);
  if (patch < 1 || H % patch != 0 || W % patch != 0) {
    throw std::invalid_argument("image size " + std::to_string(H) + "x" + std::to_string(W) +
                                " is not divisible by patch size " + std::to_string(patch));
  }
  const Index h = H / patch, w = W / patch;
  std::vector<Index> rows;
  rows.reserve(static_cast<std::size_t>(B * H * W));
  for (Index b = 0; b < B; ++b)
    for (Index i = 0; i < h; ++i)
      for (Index j = 0; j < w; ++j)
        for (Index dy = 0; dy < patch; ++dy)
          for (Index dx = 0; dx < patch; ++dx) rows.push_back((b * H + i * patch + dy) * W + j * patch + dx);
  auto pixels = ad::gather_rows(images, rows, {B, h, w, patch * patch});
  return ad::reshape(pixels, {B, h, w, patch * patch * 3});
}

template <typename Scalar>
PatchEmbed<Scalar> PatchEmbed<Scalar>::create(ad::ParameterSet<Scalar>& ps, const std::string& path, Index patch,
                                              Index channels) {
  return {nn::Linear<Scalar>::create(ps, path + "/proj", patch * patch * 3, channels), patch};
}

template <typename Scalar>
Tensor<Scalar> PatchEmbed<Scalar>::operator()(const Tensor<Scalar>& images) const {
  return proj(patchify(images, patch));
}

template <typename Scalar>
SwinBlock<Scalar> SwinBlock<Scalar>::create(ad::ParameterSet<Scalar>& ps, const std::string& path, Index channels,
                                            int heads, Index hidden) {
  return {nn::LayerNorm<Scalar>::create(ps, path + "/norm1", channels),
          nn::MultiHeadAttention<Scalar>::create(ps, path + "/attn", channels, heads),
          nn::LayerNorm<Scalar>::create(ps, path + "/norm2", channels),
          nn::FeedForward<Scalar>::create(ps, path + "/mlp", channels, hidden)};
}

template <typename Scalar>
Tensor<Scalar> SwinBlock<Scalar>::operator()(const Tensor<Scalar>& map, Index window, bool shift,
                                             const Context& ctx) const {
  if (map.rank() != 4) throw std::invalid_argument("window attention expects a (B, H, W, C) map");
  const Index B = map.dim(0), h = map.dim(1), w = map.dim(2);
  const WindowLayout L = make_window_layout(h, w, window, shift);
  const Index nw = L.windows(), slots = L.slots();

  std::vector<Index> to_windows(static_cast<std::size_t>(B * nw * slots));
  for (Index b = 0; b < B; ++b) {
    for (Index r = 0; r < nw * slots; ++r) {
      const Index src = L.source[static_cast<std::size_t>(r)];
      to_windows[static_cast<std::size_t>(b * nw * slots + r)] = src < 0 ? -1 : b * h * w + src;
    }
  }
  std::vector<Index> to_map(static_cast<std::size_t>(B * h * w));
  for (Index b = 0; b < B; ++b) {
    for (Index p = 0; p < h * w; ++p) {
      to_map[static_cast<std::size_t>(b * h * w + p)] = b * nw * slots + L.inverse[static_cast<std::size_t>(p)];
    }
  }

  auto tokens = ad::gather_rows(norm1(map), to_windows, {B * nw, slots});
  const ad::AttentionMask* mask = L.mask.allowed.empty() ? nullptr : &L.mask;
  auto attended = attn(tokens, tokens, mask);
  auto x = ad::add(map, nn::apply_dropout(ad::gather_rows(attended, to_map, {B, h, w}), ctx));
  return ad::add(x, nn::apply_dropout(mlp(norm2(x), ctx), ctx));
}

template <typename Scalar>
PatchMerge<Scalar> PatchMerge<Scalar>::create(ad::ParameterSet<Scalar>& ps, const std::string& path, Index channels) {
  return {nn::LayerNorm<Scalar>::create(ps, path + "/norm", 4 * channels),
          nn::Linear<Scalar>::create(ps, path + "/reduction", 4 * channels, 2 * channels, false)};
}

template <typename Scalar>
Tensor<Scalar> PatchMerge<Scalar>::operator()(const Tensor<Scalar>& map) const {
  if (map.rank() != 4) throw std::invalid_argument("patch merge expects a (B, H, W, C) map");
  const Index B = map.dim(0), h = map.dim(1), w = map.dim(2), C = map.dim(3);
  const Index h2 = (h + 1) / 2, w2 = (w + 1) / 2;
  static constexpr Index offsets[4][2] = {{0, 0}, {1, 0}, {0, 1}, {1, 1}};
  std::vector<Index> rows;
  rows.reserve(static_cast<std::size_t>(B * h2 * w2 * 4));
  for (Index b = 0; b < B; ++b)
    for (Index i = 0; i < h2; ++i)
      for (Index j = 0; j < w2; ++j)
        for (const auto& o : offsets) {
          const Index y = std::min(2 * i + o[0], h - 1);
          const Index x = std::min(2 * j + o[1], w - 1);
          rows.push_back((b * h + y) * w + x);
        }
  auto stacked = ad::reshape(ad::gather_rows(map, rows, {B, h2, w2, 4}), {B, h2, w2, 4 * C});
  return reduction(norm(stacked));
}

template <typename Scalar>
Backbone<Scalar> Backbone<Scalar>::create(ad::ParameterSet<Scalar>& ps, const std::string& path,
                                          const BackboneConfig& config) {
  Backbone bb;
  bb.config = config;
  bb.embed = PatchEmbed<Scalar>::create(ps, path + "/patch_embed", config.patch_size, config.embed_dim);
  const int n_stages = static_cast<int>(config.depths.size());
  for (int s = 0; s < n_stages; ++s) {
    const Index channels = Index{config.embed_dim} << s;
    std::vector<SwinBlock<Scalar>> blocks;
    for (int d = 0; d < config.depths[static_cast<std::size_t>(s)]; ++d) {
      blocks.push_back(SwinBlock<Scalar>::create(ps,
                                                 path + "/stage" + std::to_string(s) + "/block" + std::to_string(d),
                                                 channels, config.heads[static_cast<std::size_t>(s)],
                                                 channels * config.mlp_ratio));
    }
    bb.stages.push_back(std::move(blocks));
    bb.merges.push_back(PatchMerge<Scalar>::create(ps, path + "/merge" + std::to_string(s), channels));
  }
  for (Index c : bb.level_channels()) {
    bb.level_norms.push_back(
        nn::LayerNorm<Scalar>::create(ps, path + "/level_norm" + std::to_string(bb.level_norms.size()), c));
  }
  return bb;
}

template <typename Scalar>
std::vector<Index> Backbone<Scalar>::level_channels() const {
  const int n_stages = static_cast<int>(config.depths.size());
  std::vector<Index> all;
  for (int s = 0; s < n_stages; ++s) all.push_back(Index{config.embed_dim} << s);
  all.push_back(Index{config.embed_dim} << n_stages);
  return {all.end() - config.pyramid_levels, all.end()};
}

template <typename Scalar>
FeaturePyramid<Scalar> Backbone<Scalar>::operator()(const Tensor<Scalar>& images, const Context& ctx) const {
  std::vector<Tensor<Scalar>> maps;
  auto x = embed(images);
  for (std::size_t s = 0; s < stages.size(); ++s) {
    for (std::size_t d = 0; d < stages[s].size(); ++d) {
      x = stages[s][d](x, config.window, d % 2 == 1, ctx);
    }
    maps.push_back(x);
    x = merges[s](x);
  }
  maps.push_back(x);
  FeaturePyramid<Scalar> pyramid;
  const std::size_t first = maps.size() - static_cast<std::size_t>(config.pyramid_levels);
  for (std::size_t l = first; l < maps.size(); ++l) pyramid.levels.push_back(level_norms[l - first](maps[l]));
  return pyramid;
}

#define GRIT_INSTANTIATE_BACKBONE(S)                                \
  template Tensor<S> patchify(const Tensor<S>&, Index);             \
  template struct PatchEmbed<S>;                                    \
  template struct SwinBlock<S>;                                     \
  template struct PatchMerge<S>;                                    \
  template struct Backbone<S>;

GRIT_INSTANTIATE_BACKBONE(double)
GRIT_INSTANTIATE_BACKBONE(float)

}  // namespace grit::model
