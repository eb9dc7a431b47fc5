#include <cmath>
#include <random>

#include "doctest.h"
#include "grit/model/backbone.hpp"
#include "support/gradcheck.hpp"

using namespace grit;
using grit::testing::gradcheck;
using grit::testing::random_readout;
using grit::testing::random_tensor;
using TensorD = ad::Tensor<double>;
using model::Index;

namespace {

const auto eval_ctx = nn::Context::eval();

TensorD random_map(const ad::Shape& shape, std::uint64_t seed, bool requires_grad = false) {
  std::mt19937_64 rng(seed);
  return random_tensor(shape, rng, -1.0, 1.0, requires_grad);
}

double max_abs_diff(const TensorD& a, const TensorD& b) {
  REQUIRE(a.shape() == b.shape());
  return (a.values() - b.values()).abs().maxCoeff();
}

// dep[i][j] is true when output token i has a nonzero gradient w.r.t. input token j.
std::vector<std::vector<bool>> token_dependencies(const model::SwinBlock<double>& block, Index h, Index w, Index c,
                                                  Index window, bool shift) {
  auto x = random_map({1, h, w, c}, 99, true);
  std::vector<std::vector<bool>> dep(static_cast<std::size_t>(h * w), std::vector<bool>(static_cast<std::size_t>(h * w)));
  for (Index i = 0; i < h * w; ++i) {
    x.zero_grad();
    const auto y = block(x, window, shift, eval_ctx);
    ad::Array<double> pick = ad::Array<double>::Zero(y.numel());
    for (Index ch = 0; ch < c; ++ch) pick[i * c + ch] = 1.0 + 0.1 * static_cast<double>(ch);
    auto picked = ad::sum(ad::mul(y, TensorD::from_values(y.shape(), pick)));
    ad::backward(picked);
    for (Index j = 0; j < h * w; ++j) {
      double g = 0.0;
      for (Index ch = 0; ch < c; ++ch) g += std::abs(x.grad()[j * c + ch]);
      dep[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = g != 0.0;
    }
  }
  return dep;
}

}  // namespace

TEST_CASE("patch embedding shapes and divisibility") {
  ad::ParameterSet<double> ps(1);
  auto embed = model::PatchEmbed<double>::create(ps, "embed", 4, 16);
  const auto out = embed(random_map({1, 64, 64, 3}, 2));
  CHECK(out.shape() == ad::Shape{1, 16, 16, 16});
  CHECK_THROWS_AS(embed(random_map({1, 62, 64, 3}, 2)), std::invalid_argument);
  CHECK_THROWS_AS(embed(random_map({1, 64, 64, 1}, 2)), std::invalid_argument);
}

TEST_CASE("patch embedding of a constant image is spatially constant") {
  ad::ParameterSet<double> ps(3);
  auto embed = model::PatchEmbed<double>::create(ps, "embed", 4, 8);
  const auto out = embed(TensorD::full({1, 16, 16, 3}, 0.37));
  const auto& v = out.values();
  for (Index p = 1; p < 16; ++p)
    for (Index c = 0; c < 8; ++c) CHECK(v[p * 8 + c] == doctest::Approx(v[c]).epsilon(1e-14));
}

TEST_CASE("patch embedding is affine in pixel values") {
  ad::ParameterSet<double> ps(4);
  auto embed = model::PatchEmbed<double>::create(ps, "embed", 2, 5);
  const auto a = random_map({2, 4, 6, 3}, 5), b = random_map({2, 4, 6, 3}, 6);
  const auto zero = embed(TensorD::zeros({2, 4, 6, 3}));
  const auto lhs = embed(ad::add(a, b));
  const auto rhs = ad::sub(ad::add(embed(a), embed(b)), zero);
  CHECK(max_abs_diff(lhs, rhs) < 1e-12);
}

TEST_CASE("patchify orders values by row offset, column offset, channel") {
  ad::Array<double> v(4 * 4 * 3);
  for (Index i = 0; i < v.size(); ++i) v[i] = static_cast<double>(i);
  const auto p = model::patchify(TensorD::from_values({1, 4, 4, 3}, v), 2);
  CHECK(p.shape() == ad::Shape{1, 2, 2, 12});
  // Patch (1, 0) starts at pixel (2, 0); its (dy=1, dx=1, c=2) entry is pixel (3, 1) channel 2.
  CHECK(p.values()[2 * 12 + 11] == static_cast<double>((3 * 4 + 1) * 3 + 2));
}

TEST_CASE("a window covering the whole map is global self-attention") {
  ad::ParameterSet<double> ps(7);
  auto block = model::SwinBlock<double>::create(ps, "block", 8, 2, 16);
  const auto x = random_map({2, 4, 4, 8}, 8);
  const auto windowed = block(x, 4, false, eval_ctx);
  const auto oversized = block(x, 9, true, eval_ctx);

  auto tokens = ad::reshape(block.norm1(x), {2, 16, 8});
  auto y = ad::add(x, ad::reshape(block.attn(tokens, tokens), {2, 4, 4, 8}));
  const auto global = ad::add(y, block.mlp(block.norm2(y), eval_ctx));

  CHECK(max_abs_diff(windowed, global) < 1e-12);
  CHECK(max_abs_diff(oversized, global) < 1e-12);
}

TEST_CASE("zero block weights give the identity through the residual paths") {
  ad::ParameterSet<double> ps(9);
  auto block = model::SwinBlock<double>::create(ps, "block", 4, 1, 8);
  for (const auto& [path, t] : ps.entries()) {
    auto copy = t;
    copy.mutable_values().setZero();
  }
  const auto x = random_map({1, 8, 8, 4}, 10);
  CHECK(max_abs_diff(block(x, 4, false, eval_ctx), x) == 0.0);
  CHECK(max_abs_diff(block(x, 4, true, eval_ctx), x) == 0.0);
}

TEST_CASE("unshifted windows have exactly zero cross-window gradients") {
  ad::ParameterSet<double> ps(11);
  auto block = model::SwinBlock<double>::create(ps, "block", 4, 2, 8);
  const Index h = 4, w = 8, win = 4;
  const auto dep = token_dependencies(block, h, w, 4, win, false);
  for (Index i = 0; i < h * w; ++i) {
    for (Index j = 0; j < h * w; ++j) {
      const bool same = (i % w) / win == (j % w) / win;
      CHECK(dep[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] == same);
    }
  }
}

TEST_CASE("shifting changes which token pairs interact on a two-window map") {
  ad::ParameterSet<double> ps(12);
  auto block = model::SwinBlock<double>::create(ps, "block", 4, 2, 8);
  const Index h = 4, w = 8;
  const auto plain = token_dependencies(block, h, w, 4, 4, false);
  const auto shifted = token_dependencies(block, h, w, 4, 4, true);
  int gained = 0, lost = 0;
  for (Index i = 0; i < h * w; ++i) {
    for (Index j = 0; j < h * w; ++j) {
      const auto a = plain[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
      const auto b = shifted[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
      gained += (!a && b);
      lost += (a && !b);
      if (i == j) CHECK(b);
    }
  }
  CHECK(gained > 0);
  CHECK(lost > 0);
  // Columns 3 and 4 straddle the unshifted boundary but share a shifted window.
  CHECK_FALSE(plain[3][4]);
  CHECK(shifted[3][4]);
  // Columns 0 and 7 are cyclic neighbours after the shift but stay masked apart.
  CHECK_FALSE(shifted[0][7]);
}

TEST_CASE("window layout inverts its own gather") {
  for (bool shift : {false, true}) {
    const auto L = model::make_window_layout(5, 7, 3, shift);
    CHECK(L.windows_y == 2);
    CHECK(L.windows_x == 3);
    for (Index p = 0; p < 35; ++p) {
      const Index row = L.inverse[static_cast<std::size_t>(p)];
      REQUIRE(row >= 0);
      CHECK(L.source[static_cast<std::size_t>(row)] == p);
    }
  }
  CHECK_THROWS_AS(model::make_window_layout(0, 4, 2, false), std::invalid_argument);
}

TEST_CASE("patch merge halves space and doubles channels") {
  ad::ParameterSet<double> ps(13);
  auto merge = model::PatchMerge<double>::create(ps, "merge", 6);
  CHECK(merge(random_map({2, 8, 8, 6}, 14)).shape() == ad::Shape{2, 4, 4, 12});
  CHECK(merge(random_map({1, 3, 5, 6}, 15)).shape() == ad::Shape{1, 2, 3, 12});
}

TEST_CASE("patch merge pads odd sizes by edge replication") {
  ad::ParameterSet<double> ps(16);
  auto merge = model::PatchMerge<double>::create(ps, "merge", 2);
  const auto x = random_map({1, 3, 5, 2}, 17);
  // Explicit 4x6 padding by repeating the last row and column.
  ad::Array<double> padded(4 * 6 * 2);
  for (Index y = 0; y < 4; ++y)
    for (Index xx = 0; xx < 6; ++xx)
      for (Index c = 0; c < 2; ++c)
        padded[(y * 6 + xx) * 2 + c] = x.values()[(std::min<Index>(y, 2) * 5 + std::min<Index>(xx, 4)) * 2 + c];
  CHECK(max_abs_diff(merge(x), merge(TensorD::from_values({1, 4, 6, 2}, padded))) == 0.0);
}

TEST_CASE("patch merge of a constant map is constant") {
  ad::ParameterSet<double> ps(18);
  auto merge = model::PatchMerge<double>::create(ps, "merge", 3);
  auto w = merge.reduction.weight;
  w.mutable_values().setZero();
  for (Index i = 0; i < 6; ++i) w.mutable_values()[i * 6 + i] = 1.0;
  std::vector<double> pixel{0.2, -0.5, 0.9};
  ad::Array<double> v(6 * 6 * 3);
  for (Index p = 0; p < 36; ++p)
    for (Index c = 0; c < 3; ++c) v[p * 3 + c] = pixel[static_cast<std::size_t>(c)];
  const auto out = merge(TensorD::from_values({1, 6, 6, 3}, v));
  for (Index p = 1; p < 9; ++p)
    for (Index c = 0; c < 6; ++c) CHECK(out.values()[p * 6 + c] == doctest::Approx(out.values()[c]).epsilon(1e-14));
}

TEST_CASE("desk pyramid ladder on 64x64 images") {
  BackboneConfig cfg;
  ad::ParameterSet<double> ps(19);
  auto bb = model::Backbone<double>::create(ps, "backbone", cfg);
  const auto pyr = bb(random_map({1, 64, 64, 3}, 20, false), eval_ctx);
  REQUIRE(pyr.levels.size() == 4);
  const Index sizes[] = {16, 8, 4, 2};
  const auto channels = bb.level_channels();
  for (std::size_t l = 0; l < 4; ++l) {
    CHECK(pyr.levels[l].dim(1) == sizes[l]);
    CHECK(pyr.levels[l].dim(2) == sizes[l]);
    CHECK(pyr.levels[l].dim(3) == channels[l]);
  }
  CHECK(channels == std::vector<Index>{32, 64, 128, 256});
}

TEST_CASE("patch-4 ladder reaches H/8 through H/64 after the extra merge") {
  BackboneConfig cfg;
  cfg.image_size = 128;
  cfg.patch_size = 4;
  cfg.embed_dim = 4;
  cfg.heads = {1, 1, 1, 1};
  ad::ParameterSet<double> ps(21);
  auto bb = model::Backbone<double>::create(ps, "backbone", cfg);
  const auto pyr = bb(random_map({1, 128, 128, 3}, 22), eval_ctx);
  REQUIRE(pyr.levels.size() == 4);
  for (std::size_t l = 0; l < 4; ++l) CHECK(pyr.levels[l].dim(1) == 128 / (8 << l));
  CHECK(pyr.last().dim(1) == 128 / 64);
  CHECK(pyr.last().dim(2) == 128 / 64);
}

TEST_CASE("same seed and image give an identical pyramid") {
  BackboneConfig cfg;
  ad::ParameterSet<double> a(23), b(23), c(24);
  auto bb_a = model::Backbone<double>::create(a, "backbone", cfg);
  auto bb_b = model::Backbone<double>::create(b, "backbone", cfg);
  auto bb_c = model::Backbone<double>::create(c, "backbone", cfg);
  const auto img = random_map({1, 64, 64, 3}, 25);
  const auto pa = bb_a(img, eval_ctx), pb = bb_b(img, eval_ctx), pc = bb_c(img, eval_ctx);
  for (std::size_t l = 0; l < pa.levels.size(); ++l) CHECK(max_abs_diff(pa.levels[l], pb.levels[l]) == 0.0);
  CHECK(max_abs_diff(pa.levels[0], pc.levels[0]) > 0.0);
}

TEST_CASE("pyramid readout gradient w.r.t. pixels matches finite differences") {
  BackboneConfig cfg;
  cfg.image_size = 16;
  cfg.patch_size = 2;
  cfg.embed_dim = 4;
  cfg.depths = {2, 1};
  cfg.heads = {2, 1};
  cfg.window = 2;
  cfg.mlp_ratio = 2;
  cfg.pyramid_levels = 3;
  ad::ParameterSet<double> ps(26);
  auto bb = model::Backbone<double>::create(ps, "backbone", cfg);
  std::mt19937_64 rng(27);
  const double err = gradcheck(
      [&](const std::vector<TensorD>& in) {
        const auto pyr = bb(in[0], eval_ctx);
        auto total = random_readout(pyr.levels[0], 1);
        for (std::size_t l = 1; l < pyr.levels.size(); ++l) total = ad::add(total, random_readout(pyr.levels[l], l + 1));
        return total;
      },
      {random_tensor({1, 16, 16, 3}, rng, 0.0, 1.0)});
  CHECK(err < 1e-4);
}
