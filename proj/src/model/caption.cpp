#include "grit/model/caption.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <tuple>

namespace grit::model {

namespace {

template <typename Scalar>
nn::ProjectedMemory<Scalar> select_rows(const nn::ProjectedMemory<Scalar>& m, const std::vector<Index>& images) {
  if (!m.keys.defined()) return m;
  const Index M = m.keys.dim(1);
  std::vector<Index> rows;
  rows.reserve(images.size() * static_cast<std::size_t>(M));
  for (Index img : images)
    for (Index j = 0; j < M; ++j) rows.push_back(img * M + j);
  const Index R = static_cast<Index>(images.size());
  return {ad::gather_rows(m.keys, rows, {R, M}), ad::gather_rows(m.values, rows, {R, M})};
}

template <typename Scalar>
const Tensor<Scalar>& require(const Tensor<Scalar>& t, const char* what) {
  if (!t.defined()) throw std::invalid_argument(std::string("fusion mode needs ") + what + " features");
  return t;
}

}  // namespace

template <typename Scalar>
VisualMemory<Scalar> VisualMemory<Scalar>::select(const std::vector<Index>& images) const {
  VisualMemory out;
  out.batch = static_cast<Index>(images.size());
  for (const auto& l : layers) out.layers.push_back({select_rows(l.first, images), select_rows(l.second, images)});
  return out;
}

template <typename Scalar>
Fusion<Scalar> Fusion<Scalar>::create(ad::ParameterSet<Scalar>& ps, const std::string& path, FusionMode mode,
                                      Index width, int heads) {
  Fusion f;
  f.mode = mode;
  switch (mode) {
    case FusionMode::concat:
    case FusionMode::grid_only:
    case FusionMode::region_only:
      f.first = nn::MultiHeadAttention<Scalar>::create(ps, path + "/cross", width, heads);
      f.first_norm = nn::LayerNorm<Scalar>::create(ps, path + "/cross_norm", width);
      break;
    case FusionMode::sequential_gr:
    case FusionMode::sequential_rg:
      f.first = nn::MultiHeadAttention<Scalar>::create(ps, path + "/cross1", width, heads);
      f.first_norm = nn::LayerNorm<Scalar>::create(ps, path + "/cross1_norm", width);
      f.second = nn::MultiHeadAttention<Scalar>::create(ps, path + "/cross2", width, heads);
      f.second_norm = nn::LayerNorm<Scalar>::create(ps, path + "/cross2_norm", width);
      break;
    case FusionMode::parallel_sigmoid:
    case FusionMode::parallel_identity:
      f.first = nn::MultiHeadAttention<Scalar>::create(ps, path + "/cross_grid", width, heads);
      f.second = nn::MultiHeadAttention<Scalar>::create(ps, path + "/cross_region", width, heads);
      f.first_norm = nn::LayerNorm<Scalar>::create(ps, path + "/fuse_norm", width);
      if (mode == FusionMode::parallel_sigmoid) {
        f.gate_grid = nn::Linear<Scalar>::create(ps, path + "/gate_grid", 2 * width, width);
        f.gate_region = nn::Linear<Scalar>::create(ps, path + "/gate_region", 2 * width, width);
      }
      break;
  }
  return f;
}

template <typename Scalar>
typename VisualMemory<Scalar>::Layer Fusion<Scalar>::project(const VisualFeatures<Scalar>& v) const {
  typename VisualMemory<Scalar>::Layer m;
  switch (mode) {
    case FusionMode::concat: {
      const auto& g = require(v.grid, "grid");
      m.first = first.project(v.regions.defined() ? ad::concat<Scalar>({g, v.regions}, 1) : g);
      break;
    }
    case FusionMode::grid_only:
      m.first = first.project(require(v.grid, "grid"));
      break;
    case FusionMode::region_only:
      m.first = first.project(require(v.regions, "region"));
      break;
    case FusionMode::sequential_gr:
    case FusionMode::parallel_sigmoid:
    case FusionMode::parallel_identity:
      m.first = first.project(require(v.grid, "grid"));
      m.second = second.project(require(v.regions, "region"));
      break;
    case FusionMode::sequential_rg:
      m.first = first.project(require(v.regions, "region"));
      m.second = second.project(require(v.grid, "grid"));
      break;
  }
  return m;
}

template <typename Scalar>
Tensor<Scalar> Fusion<Scalar>::operator()(const Tensor<Scalar>& x, const typename VisualMemory<Scalar>::Layer& memory,
                                          const Context& ctx, FusionTrace<Scalar>* trace) const {
  using nn::apply_dropout;
  Tensor<Scalar> out;
  switch (mode) {
    case FusionMode::concat:
    case FusionMode::grid_only:
    case FusionMode::region_only:
      out = first_norm(ad::add(x, apply_dropout(first(x, memory.first), ctx)));
      break;
    case FusionMode::sequential_gr:
    case FusionMode::sequential_rg: {
      auto y = first_norm(ad::add(x, apply_dropout(first(x, memory.first), ctx)));
      out = second_norm(ad::add(y, apply_dropout(second(y, memory.second), ctx)));
      break;
    }
    case FusionMode::parallel_sigmoid:
    case FusionMode::parallel_identity: {
      auto ag = apply_dropout(first(x, memory.first), ctx);
      auto ar = apply_dropout(second(x, memory.second), ctx);
      const int last = x.rank() - 1;
      Tensor<Scalar> sum;
      if (mode == FusionMode::parallel_sigmoid) {
        auto cg = ad::sigmoid(gate_grid(ad::concat<Scalar>({ag, x}, last)));
        auto cr = ad::sigmoid(gate_region(ad::concat<Scalar>({ar, x}, last)));
        sum = ad::add(ad::add(ad::mul(cg, ag), ad::mul(cr, ar)), x);
        if (trace) {
          trace->gate_grid = cg;
          trace->gate_region = cr;
        }
      } else {
        sum = ad::add(ad::add(ag, ar), x);
      }
      out = first_norm(sum);
      if (trace) {
        trace->a_grid = ag;
        trace->a_region = ar;
      }
      break;
    }
  }
  if (trace) trace->fused = out;
  return out;
}

template <typename Scalar>
CaptionGenerator<Scalar> CaptionGenerator<Scalar>::create(ad::ParameterSet<Scalar>& ps, const std::string& path,
                                                          const ModelConfig& c) {
  if (c.vocab_size < 5) throw std::invalid_argument("caption generator needs a vocabulary beyond the special tokens");
  CaptionGenerator g;
  const Index d = c.d_model;
  g.embedding = ps.normal(path + "/embedding", {c.vocab_size, d}, 0.02);
  for (int l = 0; l < c.caption_layers; ++l) {
    const std::string p = path + "/layer" + std::to_string(l);
    g.layers.push_back({nn::MultiHeadAttention<Scalar>::create(ps, p + "/self_attn", d, c.heads),
                        nn::LayerNorm<Scalar>::create(ps, p + "/self_norm", d),
                        Fusion<Scalar>::create(ps, p + "/fusion", c.fusion, d, c.heads),
                        nn::FeedForward<Scalar>::create(ps, p + "/ffn", d, d * c.ffn_mult),
                        nn::LayerNorm<Scalar>::create(ps, p + "/ffn_norm", d)});
  }
  g.vocab_proj = nn::Linear<Scalar>::create(ps, path + "/vocab_proj", d, c.vocab_size);
  g.mode = c.fusion;
  g.max_len = c.max_len;
  return g;
}

template <typename Scalar>
Tensor<Scalar> CaptionGenerator<Scalar>::embed_tokens(const std::vector<int>& ids, Index batch, Index length) const {
  if (static_cast<Index>(ids.size()) != batch * length) throw std::invalid_argument("token grid size mismatch");
  std::vector<Index> rows(ids.begin(), ids.end());
  auto words = ad::embedding(embedding, rows, {batch, length});
  return ad::add(words, nn::sinusoidal_table<Scalar>(length, width()));
}

template <typename Scalar>
VisualMemory<Scalar> CaptionGenerator<Scalar>::prepare(const VisualFeatures<Scalar>& visual) const {
  VisualMemory<Scalar> m;
  m.batch = visual.grid.defined() ? visual.grid.dim(0) : require(visual.regions, "visual").dim(0);
  for (const auto& layer : layers) m.layers.push_back(layer.fusion.project(visual));
  return m;
}

template <typename Scalar>
Tensor<Scalar> CaptionGenerator<Scalar>::forward(const std::vector<int>& ids, Index batch, Index length,
                                                 const VisualMemory<Scalar>& memory, const Context& ctx,
                                                 std::vector<FusionTrace<Scalar>>* traces) const {
  if (memory.batch != batch) throw std::invalid_argument("visual memory batch does not match the token batch");
  const auto causal = ad::AttentionMask::causal_mask();
  auto x = nn::apply_dropout(embed_tokens(ids, batch, length), ctx);
  if (traces) traces->assign(layers.size(), {});
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& L = layers[l];
    auto s = L.self_norm(ad::add(x, nn::apply_dropout(L.self_attn(x, x, &causal), ctx)));
    auto a = L.fusion(s, memory.layers[l], ctx, traces ? &(*traces)[l] : nullptr);
    x = L.ffn_norm(ad::add(a, nn::apply_dropout(L.ffn(a, ctx), ctx)));
  }
  return vocab_proj(x);
}

template <typename Scalar>
ad::RowMatrix<double> CaptionGenerator<Scalar>::next_log_probs(const std::vector<std::vector<int>>& prefixes,
                                                               const VisualMemory<Scalar>& memory) const {
  ad::NoGradGuard guard;
  const Index R = static_cast<Index>(prefixes.size());
  const Index T = static_cast<Index>(prefixes.front().size());
  std::vector<int> ids;
  ids.reserve(static_cast<std::size_t>(R * T));
  for (const auto& p : prefixes) {
    if (static_cast<Index>(p.size()) != T) throw std::invalid_argument("prefixes must share one length");
    ids.insert(ids.end(), p.begin(), p.end());
  }
  auto logits = forward(ids, R, T, memory, Context::eval());
  auto last = ad::log_softmax(ad::slice(logits, 1, T - 1, 1));
  const Index V = vocab_size();
  ad::RowMatrix<double> out(R, V);
  for (Index r = 0; r < R; ++r)
    for (Index v = 0; v < V; ++v) out(r, v) = static_cast<double>(last.values()[r * V + v]);
  return out;
}

template <typename Scalar>
StepFunction caption_step(const CaptionGenerator<Scalar>& generator, const VisualMemory<Scalar>& memory) {
  return [&generator, &memory](const std::vector<Index>& sources, const std::vector<std::vector<int>>& prefixes) {
    auto logp = generator.next_log_probs(prefixes, memory.select(sources));
    // The start and padding tokens never follow a prefix.
    logp.col(kPadId).setConstant(-std::numeric_limits<double>::infinity());
    logp.col(kSosId).setConstant(-std::numeric_limits<double>::infinity());
    return logp;
  };
}

std::vector<std::vector<Hypothesis>> beam_search(const StepFunction& step, Index sources, const BeamOptions& o) {
  if (o.beam_size < 1) throw std::invalid_argument("beam_size must be at least 1");
  if (o.max_len < 1) throw std::invalid_argument("max_len must be at least 1");
  struct Entry {
    Hypothesis h;
    bool terminal = false;
  };
  std::vector<std::vector<Entry>> beams(static_cast<std::size_t>(sources), std::vector<Entry>(1));

  for (int t = 0; t < o.max_len; ++t) {
    std::vector<Index> rows_src;
    std::vector<std::vector<int>> prefixes;
    for (Index s = 0; s < sources; ++s) {
      for (const auto& e : beams[static_cast<std::size_t>(s)]) {
        if (e.terminal) continue;
        std::vector<int> p{o.sos};
        p.insert(p.end(), e.h.tokens.begin(), e.h.tokens.end());
        rows_src.push_back(s);
        prefixes.push_back(std::move(p));
      }
    }
    if (prefixes.empty()) break;
    const auto logp = step(rows_src, prefixes);
    const Index V = logp.cols();

    Index row = 0;
    for (Index s = 0; s < sources; ++s) {
      auto& beam = beams[static_cast<std::size_t>(s)];
      // (score, last token, origin rank, entry index into pool)
      std::vector<std::tuple<double, int, int, std::size_t>> keys;
      std::vector<Entry> pool;
      for (std::size_t rank = 0; rank < beam.size(); ++rank) {
        const auto& e = beam[rank];
        if (e.terminal) {
          keys.emplace_back(e.h.score, e.h.tokens.empty() ? -1 : e.h.tokens.back(), static_cast<int>(rank), pool.size());
          pool.push_back(e);
          continue;
        }
        for (Index v = 0; v < V; ++v) {
          const double lp = logp(row, v);
          if (lp == -std::numeric_limits<double>::infinity()) continue;
          Entry c = e;
          c.h.tokens.push_back(static_cast<int>(v));
          c.h.step_logp.push_back(lp);
          c.h.logprob += lp;
          c.h.finished = v == o.eos;
          c.h.score = o.length_normalize ? c.h.logprob / static_cast<double>(c.h.tokens.size()) : c.h.logprob;
          c.terminal = c.h.finished || static_cast<int>(c.h.tokens.size()) >= o.max_len;
          keys.emplace_back(c.h.score, static_cast<int>(v), static_cast<int>(rank), pool.size());
          pool.push_back(std::move(c));
        }
        ++row;
      }
      std::sort(keys.begin(), keys.end(), [](const auto& a, const auto& b) {
        if (std::get<0>(a) != std::get<0>(b)) return std::get<0>(a) > std::get<0>(b);
        if (std::get<1>(a) != std::get<1>(b)) return std::get<1>(a) < std::get<1>(b);
        return std::get<2>(a) < std::get<2>(b);
      });
      std::vector<Entry> next;
      for (std::size_t i = 0; i < keys.size() && static_cast<int>(next.size()) < o.beam_size; ++i) {
        next.push_back(std::move(pool[std::get<3>(keys[i])]));
      }
      beam = std::move(next);
    }
  }

  std::vector<std::vector<Hypothesis>> out(static_cast<std::size_t>(sources));
  for (Index s = 0; s < sources; ++s) {
    for (auto& e : beams[static_cast<std::size_t>(s)]) out[static_cast<std::size_t>(s)].push_back(std::move(e.h));
  }
  return out;
}

std::vector<Hypothesis> greedy_decode(const StepFunction& step, Index sources, int max_len, int sos, int eos) {
  std::vector<Hypothesis> hyps(static_cast<std::size_t>(sources));
  for (int t = 0; t < max_len; ++t) {
    std::vector<Index> src;
    std::vector<std::vector<int>> prefixes;
    for (Index s = 0; s < sources; ++s) {
      const auto& h = hyps[static_cast<std::size_t>(s)];
      if (h.finished) continue;
      std::vector<int> p{sos};
      p.insert(p.end(), h.tokens.begin(), h.tokens.end());
      src.push_back(s);
      prefixes.push_back(std::move(p));
    }
    if (src.empty()) break;
    const auto logp = step(src, prefixes);
    for (std::size_t r = 0; r < src.size(); ++r) {
      auto& h = hyps[static_cast<std::size_t>(src[r])];
      Index best = 0;
      for (Index v = 1; v < logp.cols(); ++v) {
        if (logp(static_cast<Index>(r), v) > logp(static_cast<Index>(r), best)) best = v;
      }
      const double lp = logp(static_cast<Index>(r), best);
      h.tokens.push_back(static_cast<int>(best));
      h.step_logp.push_back(lp);
      h.logprob += lp;
      h.score = h.logprob;
      h.finished = best == eos;
    }
  }
  return hyps;
}

#define GRIT_INSTANTIATE_CAPTION(S)   \
  template struct VisualMemory<S>;    \
  template struct Fusion<S>;          \
  template struct CaptionGenerator<S>; \
  template StepFunction caption_step(const CaptionGenerator<S>&, const VisualMemory<S>&);

GRIT_INSTANTIATE_CAPTION(double)
GRIT_INSTANTIATE_CAPTION(float)

}  // namespace grit::model
