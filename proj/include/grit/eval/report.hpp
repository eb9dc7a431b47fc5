#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "grit/train/trainer.hpp"
#include "json.hpp"

namespace grit::eval {

struct CaptionLine {
  std::int64_t image_id = 0;
  std::string caption;
};

/// One JSON object {"image_id", "caption"} per line.
void write_captions(const std::filesystem::path& path, const std::vector<CaptionLine>& captions);
std::vector<CaptionLine> read_captions(const std::filesystem::path& path);

struct EvalReport {
  std::string split;
  std::size_t n_images = 0;
  metrics::BleuScores bleu{};
  double cider_d = 0.0;
  std::optional<double> map50;

  nlohmann::json to_json() const;
};

/// Scores one caption per image of `data` against its references; every image
/// must have exactly one candidate.
EvalReport evaluate_captions(const std::vector<CaptionLine>& captions, const train::SplitData& data);

struct BenchRow {
  int batch_size = 0;
  // Milliseconds per image.
  double feature_ms = 0.0;
  double caption_ms = 0.0;
  double overhead_ms = 0.0;
  double total_ms = 0.0;
};

struct BenchReport {
  std::size_t images = 0;
  int beam_size = 0;
  int repeats = 0;
  std::vector<BenchRow> rows;

  nlohmann::json to_json() const;
  /// JSON Schema of to_json().
  static nlohmann::json schema();
};

/// Times feature extraction (backbone, detector, grid) and caption generation
/// (beam search) separately for each batch size; each batch size keeps the
/// repeat with the smallest total time.
BenchReport benchmark(const train::Model& model, const train::SplitData& data, const std::vector<int>& batch_sizes,
                      int beam_size, int repeats);

/// Checks a JSON value against the subset of JSON Schema used by schema():
/// type, required, properties, items, minimum. Returns the first violation.
std::optional<std::string> validate_schema(const nlohmann::json& value, const nlohmann::json& schema);

}  // namespace grit::eval
