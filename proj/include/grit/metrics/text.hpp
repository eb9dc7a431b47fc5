#pragma once

#include <array>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

namespace grit::metrics {

using Tokens = std::vector<std::string>;

/// Lowercases ASCII letters, turns ASCII punctuation into spaces and splits on
/// whitespace.
Tokens tokenize(const std::string& caption);
std::string join(const Tokens& tokens);

class Vocabulary {
 public:
  static constexpr int pad = 0, sos = 1, eos = 2, unk = 3;

  Vocabulary();
  /// Keeps tokens seen at least min_freq times; ids follow the specials in
  /// order of decreasing frequency, then lexicographically.
  static Vocabulary build(const std::vector<Tokens>& captions, int min_freq = 5);
  static Vocabulary from_tokens(const std::vector<std::string>& id_to_token);

  int size() const { return static_cast<int>(tokens_.size()); }
  int id(const std::string& token) const;
  const std::string& token(int id) const;
  bool contains(const std::string& token) const { return ids_.count(token) != 0; }
  const std::vector<std::string>& tokens() const { return tokens_; }

  /// Token ids without boundary markers.
  std::vector<int> encode(const Tokens& tokens) const;
  /// Stops at the end token and skips the other specials.
  Tokens decode(const std::vector<int>& ids) const;

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> ids_;
};

/// BLEU-1..4 (index n-1), each the geometric mean of clipped n-gram
/// precisions up to n times the brevity penalty (closest reference length).
using BleuScores = std::array<double, 4>;
BleuScores bleu(const Tokens& candidate, const std::vector<Tokens>& references);
/// Corpus-level BLEU: clipped counts and lengths pooled over all images.
BleuScores corpus_bleu(const std::vector<Tokens>& candidates, const std::vector<std::vector<Tokens>>& references);

/// CIDEr-D with document frequencies taken from a fixed reference corpus.
class CiderD {
 public:
  explicit CiderD(const std::vector<std::vector<Tokens>>& corpus_references, double sigma = 6.0);

  /// Score against the references of corpus image `image`.
  double score(std::size_t image, const Tokens& candidate) const;
  /// Score against arbitrary references using this corpus' document frequencies.
  double score(const Tokens& candidate, const std::vector<Tokens>& references) const;
  std::size_t images() const { return refs_.size(); }

 private:
  struct Vector {
    std::array<std::map<std::string, double>, 4> weights;
    std::array<double, 4> norm{};
    int length = 0;
  };
  Vector vectorize(const Tokens& tokens) const;
  double similarity(const Vector& hyp, const Vector& ref) const;
  double score(const Vector& hyp, const std::vector<Vector>& refs) const;

  std::unordered_map<std::string, double> df_;
  double log_images_ = 0.0;
  double sigma_;
  std::vector<std::vector<Vector>> refs_;
};

struct CiderResult {
  std::vector<double> per_image;
  double mean = 0.0;
};
/// Document frequencies from `references` themselves.
CiderResult cider_d(const std::vector<Tokens>& candidates, const std::vector<std::vector<Tokens>>& references);

}  // namespace grit::metrics
