#include "grit/metrics/text.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdlib>
#include <set>
#include <stdexcept>

namespace grit::metrics {

Tokens tokenize(const std::string& caption) {
  Tokens out;
  std::string cur;
  for (unsigned char c : caption) {
    if (std::isspace(c) || std::ispunct(c)) {
      if (!cur.empty()) out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(static_cast<char>(std::tolower(c)));
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

std::string join(const Tokens& tokens) {
  std::string s;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) s += ' ';
    s += tokens[i];
  }
  return s;
}

Vocabulary::Vocabulary() : tokens_{"<pad>", "<sos>", "<eos>", "<unk>"} {
  for (std::size_t i = 0; i < tokens_.size(); ++i) ids_.emplace(tokens_[i], static_cast<int>(i));
}

Vocabulary Vocabulary::from_tokens(const std::vector<std::string>& id_to_token) {
  static const char* specials[] = {"<pad>", "<sos>", "<eos>", "<unk>"};
  if (id_to_token.size() < 4) throw std::invalid_argument("vocabulary must start with the four special tokens");
  for (int i = 0; i < 4; ++i) {
    if (id_to_token[static_cast<std::size_t>(i)] != specials[i]) {
      throw std::invalid_argument("vocabulary id " + std::to_string(i) + " must be " + specials[i]);
    }
  }
  Vocabulary v;
  v.tokens_ = id_to_token;
  v.ids_.clear();
  for (std::size_t i = 0; i < v.tokens_.size(); ++i) {
    if (!v.ids_.emplace(v.tokens_[i], static_cast<int>(i)).second) {
      throw std::invalid_argument("duplicate vocabulary token '" + v.tokens_[i] + "'");
    }
  }
  return v;
}

Vocabulary Vocabulary::build(const std::vector<Tokens>& captions, int min_freq) {
  std::map<std::string, int> counts;
  for (const auto& c : captions)
    for (const auto& t : c) ++counts[t];
  std::vector<std::pair<std::string, int>> kept;
  for (const auto& [t, n] : counts) {
    if (n >= min_freq) kept.emplace_back(t, n);
  }
  std::stable_sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> list{"<pad>", "<sos>", "<eos>", "<unk>"};
  for (const auto& [t, n] : kept) list.push_back(t);
  return from_tokens(list);
}

int Vocabulary::id(const std::string& token) const {
  auto it = ids_.find(token);
  return it == ids_.end() ? unk : it->second;
}

const std::string& Vocabulary::token(int id) const {
  if (id < 0 || id >= size()) throw std::out_of_range("token id " + std::to_string(id) + " outside vocabulary");
  return tokens_[static_cast<std::size_t>(id)];
}

std::vector<int> Vocabulary::encode(const Tokens& tokens) const {
  std::vector<int> ids;
  ids.reserve(tokens.size());
  for (const auto& t : tokens) ids.push_back(id(t));
  return ids;
}

Tokens Vocabulary::decode(const std::vector<int>& ids) const {
  Tokens out;
  for (int i : ids) {
    if (i == eos) break;
    if (i == pad || i == sos || i == unk) continue;
    out.push_back(token(i));
  }
  return out;
}

namespace {

using NgramCounts = std::map<std::string, int>;

std::array<NgramCounts, 4> ngrams(const Tokens& t) {
  std::array<NgramCounts, 4> out;
  for (std::size_t n = 1; n <= 4; ++n) {
    for (std::size_t i = 0; i + n <= t.size(); ++i) {
      std::string key = t[i];
      for (std::size_t k = 1; k < n; ++k) key += ' ' + t[i + k];
      ++out[n - 1][key];
    }
  }
  return out;
}

struct BleuStats {
  std::array<double, 4> matched{};
  std::array<double, 4> total{};
  double cand_len = 0.0;
  double ref_len = 0.0;
};

void accumulate(BleuStats& s, const Tokens& cand, const std::vector<Tokens>& refs) {
  if (refs.empty()) throw std::invalid_argument("BLEU needs at least one reference");
  const auto c = ngrams(cand);
  std::array<NgramCounts, 4> max_ref;
  for (const auto& r : refs) {
    const auto g = ngrams(r);
    for (std::size_t n = 0; n < 4; ++n)
      for (const auto& [k, v] : g[n]) max_ref[n][k] = std::max(max_ref[n][k], v);
  }
  for (std::size_t n = 0; n < 4; ++n) {
    for (const auto& [k, v] : c[n]) {
      auto it = max_ref[n].find(k);
      s.matched[n] += std::min(v, it == max_ref[n].end() ? 0 : it->second);
      s.total[n] += v;
    }
  }
  const double cl = static_cast<double>(cand.size());
  // Closest reference length; the shorter one on ties.
  double best = static_cast<double>(refs.front().size());
  for (const auto& r : refs) {
    const double rl = static_cast<double>(r.size());
    if (std::abs(rl - cl) < std::abs(best - cl) || (std::abs(rl - cl) == std::abs(best - cl) && rl < best)) best = rl;
  }
  s.cand_len += cl;
  s.ref_len += best;
}

BleuScores finish(const BleuStats& s) {
  BleuScores out{};
  const double bp = s.cand_len >= s.ref_len ? 1.0 : (s.cand_len > 0 ? std::exp(1.0 - s.ref_len / s.cand_len) : 0.0);
  double log_sum = 0.0;
  bool zero = false;
  for (std::size_t n = 0; n < 4; ++n) {
    const double p = s.total[n] > 0 ? s.matched[n] / s.total[n] : 0.0;
    if (p <= 0.0) zero = true;
    if (!zero) log_sum += std::log(p);
    out[n] = zero ? 0.0 : bp * std::exp(log_sum / static_cast<double>(n + 1));
  }
  return out;
}

}  // namespace

BleuScores bleu(const Tokens& candidate, const std::vector<Tokens>& references) {
  BleuStats s;
  accumulate(s, candidate, references);
  return finish(s);
}

BleuScores corpus_bleu(const std::vector<Tokens>& candidates, const std::vector<std::vector<Tokens>>& references) {
  if (candidates.size() != references.size()) throw std::invalid_argument("one reference set per candidate required");
  BleuStats s;
  for (std::size_t i = 0; i < candidates.size(); ++i) accumulate(s, candidates[i], references[i]);
  return finish(s);
}

CiderD::CiderD(const std::vector<std::vector<Tokens>>& corpus, double sigma) : sigma_(sigma) {
  if (corpus.empty()) throw std::invalid_argument("CIDEr-D needs a non-empty reference corpus");
  for (const auto& refs : corpus) {
    std::set<std::string> seen;
    for (const auto& r : refs) {
      for (const auto& g : ngrams(r))
        for (const auto& [k, v] : g) seen.insert(k);
    }
    for (const auto& k : seen) df_[k] += 1.0;
  }
  log_images_ = std::log(static_cast<double>(corpus.size()));
  refs_.reserve(corpus.size());
  for (const auto& refs : corpus) {
    std::vector<Vector> vs;
    for (const auto& r : refs) vs.push_back(vectorize(r));
    refs_.push_back(std::move(vs));
  }
}

CiderD::Vector CiderD::vectorize(const Tokens& tokens) const {
  Vector v;
  const auto g = ngrams(tokens);
  for (std::size_t n = 0; n < 4; ++n) {
    double sq = 0.0;
    for (const auto& [k, tf] : g[n]) {
      auto it = df_.find(k);
      const double df = std::log(std::max(1.0, it == df_.end() ? 0.0 : it->second));
      const double w = static_cast<double>(tf) * (log_images_ - df);
      v.weights[n][k] = w;
      sq += w * w;
      if (n == 1) v.length += tf;  // bigram count, as in the reference scorer
    }
    v.norm[n] = std::sqrt(sq);
  }
  return v;
}

double CiderD::similarity(const Vector& hyp, const Vector& ref) const {
  const double delta = static_cast<double>(hyp.length - ref.length);
  const double penalty = std::exp(-(delta * delta) / (2.0 * sigma_ * sigma_));
  double total = 0.0;
  for (std::size_t n = 0; n < 4; ++n) {
    double val = 0.0;
    for (const auto& [k, w] : hyp.weights[n]) {
      auto it = ref.weights[n].find(k);
      if (it != ref.weights[n].end()) val += std::min(w, it->second) * it->second;
    }
    if (hyp.norm[n] != 0.0 && ref.norm[n] != 0.0) val /= hyp.norm[n] * ref.norm[n];
    total += val * penalty;
  }
  return total / 4.0;
}

double CiderD::score(const Vector& hyp, const std::vector<Vector>& refs) const {
  if (refs.empty()) throw std::invalid_argument("CIDEr-D needs at least one reference per image");
  double s = 0.0;
  for (const auto& r : refs) s += similarity(hyp, r);
  return 10.0 * s / static_cast<double>(refs.size());
}

double CiderD::score(std::size_t image, const Tokens& candidate) const {
  return score(vectorize(candidate), refs_.at(image));
}

double CiderD::score(const Tokens& candidate, const std::vector<Tokens>& references) const {
  std::vector<Vector> rv;
  for (const auto& r : references) rv.push_back(vectorize(r));
  return score(vectorize(candidate), rv);
}

CiderResult cider_d(const std::vector<Tokens>& candidates, const std::vector<std::vector<Tokens>>& references) {
  if (candidates.size() != references.size()) throw std::invalid_argument("one reference set per candidate required");
  CiderResult r;
  if (candidates.empty()) return r;
  CiderD scorer(references);
  for (std::size_t i = 0; i < candidates.size(); ++i) r.per_image.push_back(scorer.score(i, candidates[i]));
  double s = 0.0;
  for (double v : r.per_image) s += v;
  r.mean = s / static_cast<double>(r.per_image.size());
  return r;
}

}  // namespace grit::metrics
