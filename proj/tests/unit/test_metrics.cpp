#include <algorithm>
#include <cmath>
#include <map>
#include <random>

#include "doctest.h"
#include "grit/metrics/detection.hpp"
#include "grit/metrics/text.hpp"

using namespace grit;
using metrics::Tokens;
using model::Box;
using model::Detection;

namespace {

using Gram = std::vector<std::string>;

std::map<Gram, int> count_grams(const Tokens& t, std::size_t n) {
  std::map<Gram, int> out;
  for (std::size_t i = 0; i + n <= t.size(); ++i) ++out[Gram(t.begin() + static_cast<long>(i), t.begin() + static_cast<long>(i + n))];
  return out;
}

// Sentence BLEU-N straight from the clipped-precision definition.
double bleu_oracle(const Tokens& cand, const std::vector<Tokens>& refs, std::size_t N) {
  double log_p = 0.0;
  for (std::size_t n = 1; n <= N; ++n) {
    const auto c = count_grams(cand, n);
    int clipped = 0, total = 0;
    for (const auto& [g, k] : c) {
      int best = 0;
      for (const auto& r : refs) {
        const auto rc = count_grams(r, n);
        auto it = rc.find(g);
        if (it != rc.end()) best = std::max(best, it->second);
      }
      clipped += std::min(k, best);
      total += k;
    }
    if (clipped == 0 || total == 0) return 0.0;
    log_p += std::log(static_cast<double>(clipped) / total);
  }
  const double c = static_cast<double>(cand.size());
  double r = 1e9;
  for (const auto& ref : refs) {
    const double rl = static_cast<double>(ref.size());
    if (std::abs(rl - c) < std::abs(r - c) || (std::abs(rl - c) == std::abs(r - c) && rl < r)) r = rl;
  }
  const double bp = c >= r ? 1.0 : std::exp(1.0 - r / c);
  return bp * std::exp(log_p / static_cast<double>(N));
}

// CIDEr-D over a whole corpus, written out with n-gram vectors keyed by token lists.
std::vector<double> cider_oracle(const std::vector<Tokens>& cands, const std::vector<std::vector<Tokens>>& corpus) {
  std::map<Gram, double> df;
  for (const auto& refs : corpus) {
    std::map<Gram, bool> seen;
    for (const auto& r : refs)
      for (std::size_t n = 1; n <= 4; ++n)
        for (const auto& [g, k] : count_grams(r, n)) seen[g] = true;
    for (const auto& [g, b] : seen) df[g] += 1.0;
  }
  const double log_n = std::log(static_cast<double>(corpus.size()));
  auto weights = [&](const Tokens& t, std::size_t n) {
    std::map<Gram, double> w;
    for (const auto& [g, k] : count_grams(t, n)) w[g] = k * (log_n - std::log(std::max(1.0, df.count(g) ? df[g] : 0.0)));
    return w;
  };
  auto norm = [](const std::map<Gram, double>& w) {
    double s = 0.0;
    for (const auto& [g, v] : w) s += v * v;
    return std::sqrt(s);
  };
  std::vector<double> out;
  for (std::size_t i = 0; i < cands.size(); ++i) {
    double total = 0.0;
    for (const auto& r : corpus[i]) {
      const double hl = std::max<double>(0.0, static_cast<double>(cands[i].size()) - 1.0);
      const double rl = std::max<double>(0.0, static_cast<double>(r.size()) - 1.0);
      const double pen = std::exp(-(hl - rl) * (hl - rl) / 72.0);
      for (std::size_t n = 1; n <= 4; ++n) {
        const auto h = weights(cands[i], n), w = weights(r, n);
        double dot = 0.0;
        for (const auto& [g, v] : h)
          if (w.count(g)) dot += std::min(v, w.at(g)) * w.at(g);
        const double nh = norm(h), nr = norm(w);
        if (nh > 0 && nr > 0) dot /= nh * nr;
        total += pen * dot / 4.0;
      }
    }
    out.push_back(10.0 * total / static_cast<double>(corpus[i].size()));
  }
  return out;
}

Tokens random_sentence(std::mt19937_64& rng, int min_len, int max_len, int vocab) {
  static const char* words[] = {"a", "red", "blue", "circle", "square", "left", "of", "above", "on", "grey"};
  const int len = std::uniform_int_distribution<int>(min_len, max_len)(rng);
  Tokens t;
  for (int i = 0; i < len; ++i) t.push_back(words[std::uniform_int_distribution<int>(0, vocab - 1)(rng)]);
  return t;
}

std::vector<std::vector<Tokens>> sample_corpus() {
  return {{{"a", "red", "circle", "on", "grey"}, {"grey", "background", "with", "a", "red", "circle"}},
          {{"a", "blue", "square", "left", "of", "a", "green", "triangle"}},
          {{"a", "yellow", "triangle", "above", "a", "red", "square"}, {"on", "black", "a", "yellow", "triangle"}},
          {{"two", "shapes", "on", "white"}}};
}

Detection det(int cls, double score, Box box) {
  Detection d;
  d.cls = cls;
  d.score = score;
  d.box = box;
  return d;
}

}  // namespace

TEST_CASE("tokenizer lowercases and strips punctuation") {
  CHECK(metrics::tokenize("A red Circle.") == Tokens{"a", "red", "circle"});
  CHECK(metrics::tokenize("").empty());
  CHECK(metrics::tokenize("  ,;. ").empty());
  CHECK(metrics::tokenize("left-of,BLUE\tsquare\n") == Tokens{"left", "of", "blue", "square"});
  for (const std::string s : {"A red Circle.", "Two  shapes:  one, two!", "x"}) {
    const auto t = metrics::tokenize(s);
    CHECK(metrics::tokenize(metrics::join(t)) == t);
  }
}

TEST_CASE("vocabulary thresholds and ordering") {
  std::vector<Tokens> caps;
  for (int i = 0; i < 4; ++i) caps.push_back({"zebra"});
  for (int i = 0; i < 6; ++i) caps.push_back({"circle", "red"});
  for (int i = 0; i < 6; ++i) caps.push_back({"blue"});
  caps.push_back({"red"});
  const auto v = metrics::Vocabulary::build(caps, 5);
  CHECK_FALSE(v.contains("zebra"));
  CHECK(v.id("zebra") == metrics::Vocabulary::unk);
  CHECK(v.tokens() == std::vector<std::string>{"<pad>", "<sos>", "<eos>", "<unk>", "red", "blue", "circle"});
  const auto all = metrics::Vocabulary::build(caps, 1);
  CHECK(all.contains("zebra"));
  CHECK(all.size() == 8);
  CHECK(v.decode({4, 3, 5, 2, 6}) == Tokens{"red", "blue"});
  CHECK(v.encode({"red", "zebra"}) == std::vector<int>{4, 3});
  CHECK_THROWS_AS(metrics::Vocabulary::from_tokens({"<pad>", "<sos>", "<eos>", "x"}), std::invalid_argument);
  CHECK_THROWS_AS(metrics::Vocabulary::from_tokens({"<pad>", "<sos>", "<eos>", "<unk>", "a", "a"}), std::invalid_argument);
}

TEST_CASE("BLEU of a reference copy is one and of disjoint words zero") {
  const Tokens ref{"a", "red", "circle", "left", "of", "a", "blue", "square"};
  const auto s = metrics::bleu(ref, {ref, {"a", "circle"}});
  for (double v : s) CHECK(v == 1.0);
  const auto z = metrics::bleu({"zebra", "giraffe", "lion", "tiger"}, {ref});
  for (double v : z) CHECK(v == 0.0);
}

TEST_CASE("BLEU matches a clipped-precision oracle on random cases") {
  std::mt19937_64 rng(1);
  double worst = 0.0;
  for (int t = 0; t < 500; ++t) {
    const auto cand = random_sentence(rng, 1, 8, 4);
    std::vector<Tokens> refs;
    const int k = std::uniform_int_distribution<int>(1, 3)(rng);
    for (int i = 0; i < k; ++i) refs.push_back(random_sentence(rng, 1, 9, 4));
    const auto s = metrics::bleu(cand, refs);
    for (std::size_t n = 1; n <= 4; ++n) worst = std::max(worst, std::abs(s[n - 1] - bleu_oracle(cand, refs, n)));
    std::reverse(refs.begin(), refs.end());
    CHECK(metrics::bleu(cand, refs) == s);
  }
  CHECK(worst < 1e-12);
}

TEST_CASE("CIDEr-D of the sole reference is ten") {
  const auto corpus = sample_corpus();
  metrics::CiderD cider(corpus);
  CHECK(std::abs(cider.score(1, corpus[1][0]) - 10.0) < 1e-9);
  CHECK(std::abs(cider.score(3, corpus[3][0]) - 10.0) < 1e-9);
  CHECK(cider.score(1, {"zebra", "giraffe"}) == 0.0);
  CHECK(cider.score(3, {}) == 0.0);
}

TEST_CASE("CIDEr-D matches an independent implementation") {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<std::vector<Tokens>> corpus;
    std::vector<Tokens> cands;
    for (int i = 0; i < 6; ++i) {
      std::vector<Tokens> refs;
      for (int k = 0; k < 1 + i % 3; ++k) refs.push_back(random_sentence(rng, 2, 9, 10));
      corpus.push_back(refs);
      cands.push_back(random_sentence(rng, 1, 9, 10));
    }
    const auto got = metrics::cider_d(cands, corpus);
    const auto expect = cider_oracle(cands, corpus);
    double mean = 0.0;
    for (std::size_t i = 0; i < cands.size(); ++i) {
      CHECK(std::abs(got.per_image[i] - expect[i]) < 1e-9);
      CHECK(got.per_image[i] >= 0.0);
      mean += expect[i] / static_cast<double>(cands.size());
    }
    CHECK(std::abs(got.mean - mean) < 1e-9);
  }
}

TEST_CASE("CIDEr-D is invariant to duplicating the corpus and permuting references") {
  auto corpus = sample_corpus();
  const std::vector<Tokens> cands{{"a", "red", "circle"}, {"a", "blue", "square"}, {"a", "yellow", "triangle"}, {"two", "on"}};
  const auto base = metrics::cider_d(cands, corpus);
  auto doubled = corpus;
  auto doubled_cands = cands;
  doubled.insert(doubled.end(), corpus.begin(), corpus.end());
  doubled_cands.insert(doubled_cands.end(), cands.begin(), cands.end());
  const auto twice = metrics::cider_d(doubled_cands, doubled);
  for (std::size_t i = 0; i < cands.size(); ++i) {
    CHECK(std::abs(twice.per_image[i] - base.per_image[i]) < 1e-12);
    CHECK(std::abs(twice.per_image[i + cands.size()] - base.per_image[i]) < 1e-12);
  }
  for (auto& refs : corpus) std::reverse(refs.begin(), refs.end());
  const auto permuted = metrics::cider_d(cands, corpus);
  for (std::size_t i = 0; i < cands.size(); ++i) CHECK(std::abs(permuted.per_image[i] - base.per_image[i]) < 1e-12);
}

TEST_CASE("the reference itself maximizes CIDEr-D among same-length candidates") {
  const std::vector<std::vector<Tokens>> corpus{{{"a", "b", "a", "c"}}, {{"b", "b", "c"}}, {{"c", "a"}}};
  metrics::CiderD cider(corpus);
  const double self = cider.score(0, corpus[0][0]);
  const char* words[] = {"a", "b", "c"};
  double best_other = 0.0;
  for (int code = 0; code < 81; ++code) {
    Tokens t;
    for (int k = 0, c = code; k < 4; ++k, c /= 3) t.push_back(words[c % 3]);
    if (t == corpus[0][0]) continue;
    best_other = std::max(best_other, cider.score(0, t));
  }
  CHECK(self == doctest::Approx(10.0).epsilon(1e-12));
  CHECK(best_other < self);
}

TEST_CASE("mAP@0.5 matches a hand-enumerated PR curve") {
  const Box g1{0.25, 0.25, 0.2, 0.2}, g2{0.75, 0.75, 0.2, 0.2};
  const std::vector<model::DetectionTarget> targets{{{0, -1, g1}, {0, -1, g2}}};
  // Ranked: TP (g1), FP (duplicate of g1), TP (g2).
  // PR points: (R 0.5, P 1), (R 0.5, P 1/2), (R 1, P 2/3); AP = 0.5 * 1 + 0.5 * 2/3.
  const std::vector<std::vector<Detection>> preds{{det(0, 0.9, g1), det(0, 0.8, Box{0.26, 0.25, 0.2, 0.2}), det(0, 0.7, g2)}};
  CHECK(std::abs(metrics::map50(preds, targets) - (0.5 + 0.5 * 2.0 / 3.0)) < 1e-12);
  // The duplicate ranked last leaves a perfect prefix.
  const std::vector<std::vector<Detection>> reordered{{det(0, 0.9, g1), det(0, 0.5, Box{0.26, 0.25, 0.2, 0.2}), det(0, 0.7, g2)}};
  CHECK(metrics::map50(reordered, targets) == 1.0);
}

TEST_CASE("mAP@0.5 extremes and class averaging") {
  const Box a{0.3, 0.3, 0.2, 0.2}, b{0.7, 0.6, 0.3, 0.2};
  const std::vector<model::DetectionTarget> targets{{{0, -1, a}}, {{1, -1, b}, {0, -1, b}}};
  CHECK(metrics::map50({{det(0, 0.9, a)}, {det(1, 0.8, b), det(0, 0.7, b)}}, targets) == 1.0);
  CHECK(metrics::map50({{}, {}}, targets) == 0.0);
  // Class 1 is perfect; both class-0 boxes are missed (one detection is off by more than IoU 0.5).
  const Box off{0.45, 0.3, 0.2, 0.2};
  CHECK(model::iou(a, off) < 0.5);
  CHECK(std::abs(metrics::map50({{det(0, 0.9, off)}, {det(1, 0.8, b)}}, targets) - 0.5) < 1e-12);
  // Detections of classes absent from the targets do not enter the mean.
  CHECK(metrics::map50({{det(0, 0.9, a), det(2, 0.99, a)}, {det(1, 0.8, b), det(0, 0.7, b)}}, targets) == 1.0);
  CHECK_THROWS_AS(metrics::map50({{}}, targets), std::invalid_argument);
}

TEST_CASE("average precision interpolates over recall steps") {
  CHECK(metrics::average_precision({true, true}, 2) == 1.0);
  CHECK(metrics::average_precision({false, true}, 1) == 0.5);
  CHECK(metrics::average_precision({}, 3) == 0.0);
  CHECK(metrics::average_precision({true}, 0) == 0.0);
  CHECK(std::abs(metrics::average_precision({true, false, true, false}, 4) - (0.25 + 0.25 * 2.0 / 3.0)) < 1e-12);
}
