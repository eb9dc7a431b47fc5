#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

namespace grit {

/// Cross-attention designs over (regions, grid) plus single-feature baselines.
enum class FusionMode {
  concat,
  sequential_gr,
  sequential_rg,
  parallel_sigmoid,
  parallel_identity,
  region_only,
  grid_only,
};

std::string to_string(FusionMode mode);
/// Accepts "parallel-sigmoid" and "parallel_sigmoid" spellings.
FusionMode parse_fusion(const std::string& text);
const std::vector<FusionMode>& all_fusion_modes();
bool uses_regions(FusionMode mode);
bool uses_grid(FusionMode mode);

struct BackboneConfig {
  int image_size = 64;
  int patch_size = 2;
  int embed_dim = 16;                 // C_1; doubles at each merge
  std::vector<int> depths{1, 1, 1, 1};
  std::vector<int> heads{1, 2, 4, 8};
  int window = 4;
  int mlp_ratio = 4;
  int pyramid_levels = 4;             // L_b
};

struct ModelConfig {
  BackboneConfig backbone;
  int d_model = 64;
  int heads = 4;
  double dropout = 0.1;
  int ffn_mult = 4;

  int num_queries = 16;               // N
  int detector_layers = 2;            // L_r
  int sampling_points = 4;            // K per (head, level)
  int num_classes = 3;
  int num_attributes = 4;
  double query_init_std = 1.0;

  int grid_layers = 1;                // L_g
  bool grid_positional_encoding = false;

  int caption_layers = 2;             // L_c
  int vocab_size = 0;                 // set from the vocabulary
  int max_len = 20;
  FusionMode fusion = FusionMode::parallel_sigmoid;
  int beam_size = 5;
  bool length_normalize = false;

  // Set-prediction loss and matching.
  double alpha_l1 = 5.0;
  double alpha_iou = 2.0;
  double match_class_weight = 2.0;
  double no_object_weight = 0.1;

  /// Fields that determine parameter shapes and wiring; beam and dropout are excluded.
  nlohmann::json architecture_json() const;
  /// Hex FNV-1a of architecture_json().
  std::string digest() const;
  void validate() const;
};

enum class Stage { detector_pretrain, xe, scst };
std::string to_string(Stage stage);
Stage parse_stage(const std::string& text);

struct TrainConfig {
  Stage stage = Stage::xe;
  std::uint64_t seed = 1;
  int batch_size = 8;
  int epochs = 10;
  int max_steps = 0;                  // 0: run all epochs
  bool end_to_end = true;

  // Backbone and detector group.
  double lr_visual = 1e-4;
  // Grid network and caption generator group; warms up linearly from
  // lr_text_start over the first warmup_epochs.
  double lr_text = 1e-3;
  double lr_text_start = 1e-4;
  double warmup_epochs = 1.0;

  double grad_clip = 1.0;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;

  int scst_samples = 5;               // k
  double attribute_phase = 0.5;       // fraction of detector steps that add the attribute term
  bool eval_each_epoch = true;

  void validate() const;
};

nlohmann::json to_json(const BackboneConfig& c);
nlohmann::json to_json(const ModelConfig& c);
nlohmann::json to_json(const TrainConfig& c);
BackboneConfig backbone_from_json(const nlohmann::json& j);
ModelConfig model_from_json(const nlohmann::json& j, ModelConfig base = {});
TrainConfig train_from_json(const nlohmann::json& j, TrainConfig base = {});

/// Named bundle of hyperparameters. `desk` runs on one CPU core in minutes;
/// `paper` records the published full-scale settings.
struct RunProfile {
  std::string name;
  ModelConfig model;
  TrainConfig detector;
  TrainConfig xe;
  TrainConfig scst;
};

RunProfile desk_profile();
RunProfile paper_profile();
RunProfile profile_by_name(const std::string& name);

}  // namespace grit
