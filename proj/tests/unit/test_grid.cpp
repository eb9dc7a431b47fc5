#include <cmath>
#include <random>

#include "doctest.h"
#include "grit/model/grid.hpp"
#include "support/gradcheck.hpp"

using namespace grit;
using grit::testing::gradcheck;
using grit::testing::random_readout;
using grit::testing::random_tensor;
using TensorD = ad::Tensor<double>;
using model::Index;

namespace {

const auto eval_ctx = nn::Context::eval();

ModelConfig grid_config(int layers) {
  ModelConfig c;
  c.d_model = 8;
  c.heads = 2;
  c.ffn_mult = 2;
  c.dropout = 0.0;
  c.grid_layers = layers;
  return c;
}

}  // namespace

TEST_CASE("without encoder layers the output is the class token plus projected cells") {
  ad::ParameterSet<double> ps(1);
  auto grid = model::GridNetwork<double>::create(ps, "grid", grid_config(0), 6);
  std::mt19937_64 rng(2);
  const auto last = random_tensor({2, 2, 3, 6}, rng, -1, 1, false);
  const auto out = grid(last, eval_ctx);
  REQUIRE(out.shape() == ad::Shape{2, 7, 8});
  const auto& W = grid.proj.weight.values();
  for (Index b = 0; b < 2; ++b) {
    for (Index c = 0; c < 8; ++c) CHECK(out.values()[(b * 7) * 8 + c] == grid.cls_token.values()[c]);
    for (Index m = 0; m < 6; ++m) {
      for (Index c = 0; c < 8; ++c) {
        double expect = 0.0;
        for (Index k = 0; k < 6; ++k) expect += last.values()[(b * 6 + m) * 6 + k] * W[k * 8 + c];
        CHECK(std::abs(out.values()[(b * 7 + 1 + m) * 8 + c] - expect) < 1e-12);
      }
    }
  }
}

TEST_CASE("a 2x2 last level gives M = 4 grid tokens plus the class token") {
  ad::ParameterSet<double> ps(3);
  auto grid = model::GridNetwork<double>::create(ps, "grid", grid_config(1), 256);
  const auto out = grid(TensorD::full({1, 2, 2, 256}, 0.1), eval_ctx);
  CHECK(out.shape() == ad::Shape{1, 5, 8});
  CHECK(model::grid_tokens(out).shape() == ad::Shape{1, 4, 8});
  CHECK(out.values().allFinite());
  CHECK_THROWS_AS(grid(TensorD::zeros({4, 256}), eval_ctx), std::invalid_argument);
}

TEST_CASE("permuting grid cells permutes the grid outputs") {
  ad::ParameterSet<double> ps(4);
  auto grid = model::GridNetwork<double>::create(ps, "grid", grid_config(2), 5);
  std::mt19937_64 rng(5);
  const auto last = random_tensor({1, 2, 3, 5}, rng, -1, 1, false);
  const std::vector<Index> perm{4, 2, 0, 5, 1, 3};
  const auto shuffled = ad::reshape(ad::gather_rows(ad::reshape(last, {6, 5}), perm, {6}), {1, 2, 3, 5});
  const auto base = grid(last, eval_ctx);
  const auto out = grid(shuffled, eval_ctx);
  for (Index c = 0; c < 8; ++c) CHECK(std::abs(out.values()[c] - base.values()[c]) < 1e-12);
  for (Index m = 0; m < 6; ++m)
    for (Index c = 0; c < 8; ++c)
      CHECK(std::abs(out.values()[(1 + m) * 8 + c] - base.values()[(1 + perm[static_cast<std::size_t>(m)]) * 8 + c]) <
            1e-12);
}

TEST_CASE("the optional positional table breaks permutation equivariance") {
  auto cfg = grid_config(1);
  cfg.grid_positional_encoding = true;
  ad::ParameterSet<double> ps(6);
  auto grid = model::GridNetwork<double>::create(ps, "grid", cfg, 5);
  std::mt19937_64 rng(7);
  const auto last = random_tensor({1, 2, 2, 5}, rng, -1, 1, false);
  const std::vector<Index> perm{3, 2, 1, 0};
  const auto shuffled = ad::reshape(ad::gather_rows(ad::reshape(last, {4, 5}), perm, {4}), {1, 2, 2, 5});
  const auto base = grid(last, eval_ctx), out = grid(shuffled, eval_ctx);
  double diff = 0.0;
  for (Index c = 0; c < 8; ++c) diff += std::abs(out.values()[8 + c] - base.values()[(1 + 3) * 8 + c]);
  CHECK(diff > 1e-6);
}

TEST_CASE("2-D positional table splits rows and columns") {
  const auto t = model::grid_positional_table<double>(2, 3, 8);
  CHECK(t.shape() == ad::Shape{6, 8});
  // Cell (1, 2): row half encodes position 1, column half position 2.
  CHECK(std::abs(t.values()[5 * 8 + 0] - std::sin(1.0)) < 1e-15);
  CHECK(std::abs(t.values()[5 * 8 + 1] - std::cos(1.0)) < 1e-15);
  CHECK(std::abs(t.values()[5 * 8 + 4] - std::sin(2.0)) < 1e-15);
  CHECK(std::abs(t.values()[5 * 8 + 6] - std::sin(2.0 / std::pow(10000.0, 2.0 / 4.0))) < 1e-15);
  CHECK_THROWS_AS(model::grid_positional_table<double>(2, 2, 6), std::invalid_argument);
}

TEST_CASE("grid gradients reach W^g and the last pyramid level") {
  std::mt19937_64 rng(8);
  ad::ParameterSet<double> ps(9);
  auto grid = model::GridNetwork<double>::create(ps, "grid", grid_config(1), 3);
  const double err = gradcheck(
      [&](const std::vector<TensorD>& in) {
        auto g = grid;
        g.proj.weight = in[0];
        return random_readout(model::grid_tokens(g(in[1], eval_ctx)), 1);
      },
      {random_tensor({3, 8}, rng), random_tensor({1, 2, 2, 3}, rng)});
  CHECK(err < 1e-4);
}
