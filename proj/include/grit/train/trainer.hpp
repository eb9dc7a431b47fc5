#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <string>
#include <vector>

#include "grit/autodiff/checkpoint.hpp"
#include "grit/data/dataset.hpp"
#include "grit/metrics/text.hpp"
#include "grit/model/grit.hpp"
#include "grit/train/losses.hpp"
#include "grit/train/optimizer.hpp"
#include "json.hpp"

namespace grit::train {

/// Training and inference run in single precision; tests of the numerics use double.
using Real = float;
using Model = model::GritModel<Real>;

/// One split held in memory.
struct SplitData {
  std::string split;
  int height = 0;
  int width = 0;
  std::vector<std::int64_t> image_ids;
  std::vector<std::vector<Real>> pixels;  // (H, W, 3) in [0, 1]
  std::vector<model::DetectionTarget> targets;
  std::vector<std::vector<metrics::Tokens>> references;

  std::size_t size() const { return image_ids.size(); }
  static SplitData from_dataset(const data::Dataset& dataset);
  /// The first n images.
  SplitData head(std::size_t n) const;
};

/// (B, H, W, 3) batch of the given images.
Tensor<Real> image_batch(const SplitData& data, const std::vector<std::size_t>& indices);

/// Words seen at least min_freq times in the training references.
metrics::Vocabulary build_vocabulary(const SplitData& train, int min_freq = 5);

/// Token grids for teacher forcing: inputs start with the start token,
/// targets end with the end token; both padded, (sequences, length).
struct TeacherBatch {
  std::vector<int> inputs;
  std::vector<int> targets;
  Index sequences = 0;
  Index length = 0;
  std::vector<Index> images;  // batch image of each sequence
};
TeacherBatch teacher_batch(const metrics::Vocabulary& vocab, const std::vector<std::vector<metrics::Tokens>>& captions,
                           int max_len);
/// Sequences whose targets are exactly the given decoded tokens (with their end token if present).
TeacherBatch hypothesis_batch(const std::vector<std::vector<std::vector<int>>>& tokens);

struct TraceRow {
  long step = 0;
  std::string stage;
  double loss = std::numeric_limits<double>::quiet_NaN();
  double cider_d = std::numeric_limits<double>::quiet_NaN();
  double map50 = std::numeric_limits<double>::quiet_NaN();
  double wall_ms = 0.0;
};

/// CSV columns: step, stage, loss, cider_d, map50, wall_ms. Missing values are empty.
struct MetricTrace {
  std::vector<TraceRow> rows;

  std::string csv(bool with_wall_time = true) const;
  void write_csv(const std::filesystem::path& path) const;
  nlohmann::json to_json() const;
  static MetricTrace from_json(const nlohmann::json& j);
};

/// Beam-search captions for every image of a split.
std::vector<metrics::Tokens> decode_split(const Model& model, const metrics::Vocabulary& vocab, const SplitData& data,
                                          const model::BeamOptions& options, int batch_size = 16);
model::BeamOptions beam_options(const ModelConfig& config, int beam_size);
double split_cider(const Model& model, const metrics::Vocabulary& vocab, const SplitData& data, int beam_size,
                   int batch_size = 16);
double split_map50(const Model& model, const SplitData& data, int batch_size = 16);
/// Mean teacher-forced XE per reference caption.
double split_xe(const Model& model, const metrics::Vocabulary& vocab, const SplitData& data, int batch_size = 16);

/// CIDEr-D rewards of decoded hypotheses for one corpus image.
std::vector<double> scst_rewards(const metrics::CiderD& cider, std::size_t image, const metrics::Vocabulary& vocab,
                                 const std::vector<model::Hypothesis>& hypotheses);

/// Runs one stage (detector pretraining, XE or self-critical) step by step.
/// Every step draws its randomness from (seed, step) and every epoch its
/// image order from (seed, epoch), so a run restored from checkpoint() continues
/// exactly as the uninterrupted run.
class Trainer {
 public:
  Trainer(Model& model, const metrics::Vocabulary& vocab, const SplitData& train, const SplitData* val,
          TrainConfig config);

  long step() const { return step_; }
  long total_steps() const { return total_steps_; }
  long steps_per_epoch() const { return steps_per_epoch_; }
  const TrainConfig& config() const { return config_; }
  const MetricTrace& trace() const { return trace_; }
  bool verbose = false;

  /// Runs until `until` steps are done (all of them when negative).
  void run(long until = -1);
  /// Loss of one step; advances the step counter.
  double train_step();

  /// Model parameters, vocabulary, optimizer state, progress and trace.
  ad::Checkpoint checkpoint() const;
  void resume(const ad::Checkpoint& ckpt);

  /// Learning rates of the visual and text groups at a step.
  std::vector<double> learning_rates(long step) const;

 private:
  std::vector<std::size_t> batch_indices(long step) const;
  model::VisualFeatures<Real> visual_features(const std::vector<std::size_t>& batch, const nn::Context& ctx,
                                              model::DetectionPrediction<Real>* detection);
  void build_cache();
  void end_of_epoch(long epoch);
  Tensor<Real> detector_loss(const std::vector<std::size_t>& batch, const nn::Context& ctx);
  Tensor<Real> xe_step_loss(const std::vector<std::size_t>& batch, const nn::Context& ctx);
  Tensor<Real> scst_step_loss(const std::vector<std::size_t>& batch, const nn::Context& ctx);

  Model& model_;
  const metrics::Vocabulary& vocab_;
  const SplitData& train_;
  const SplitData* val_;
  TrainConfig config_;
  Adam<Real> adam_;
  long step_ = 0;
  long steps_per_epoch_ = 0;
  long total_steps_ = 0;
  MetricTrace trace_;
  std::unique_ptr<metrics::CiderD> cider_;
  // Frozen visual features of every training image.
  std::vector<ad::Array<Real>> cached_last_, cached_regions_;
  ad::Shape last_shape_, region_shape_;
};

nlohmann::json checkpoint_metadata(const ad::Checkpoint& ckpt);
/// Rebuilds the model and vocabulary stored in a checkpoint.
struct LoadedModel {
  Model model;
  metrics::Vocabulary vocab;
  Stage stage = Stage::xe;
  nlohmann::json metadata;
};
LoadedModel load_model(const ad::Checkpoint& ckpt);
/// Copies parameters whose path satisfies the filter.
void load_parameters(const ad::Checkpoint& ckpt, Model& model, bool visual_only);
/// Digest of the fields shared with a detector-pretraining checkpoint.
std::string visual_digest(const ModelConfig& config);

}  // namespace grit::train
