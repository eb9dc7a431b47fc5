#include "grit/config.hpp"

#include <algorithm>
#include <cstdio>
#include <stdexcept>

#include "grit/autodiff/parameters.hpp"

namespace grit {

using nlohmann::json;

namespace {
const std::vector<std::pair<FusionMode, std::string>> kFusionNames = {
    {FusionMode::concat, "concat"},
    {FusionMode::sequential_gr, "sequential-gr"},
    {FusionMode::sequential_rg, "sequential-rg"},
    {FusionMode::parallel_sigmoid, "parallel-sigmoid"},
    {FusionMode::parallel_identity, "parallel-identity"},
    {FusionMode::region_only, "region-only"},
    {FusionMode::grid_only, "grid-only"},
};

template <typename T>
void read_if(const json& j, const char* key, T& field) {
  if (j.contains(key)) field = j.at(key).get<T>();
}
}  // namespace

std::string to_string(FusionMode mode) {
  for (const auto& [m, name] : kFusionNames) {
    if (m == mode) return name;
  }
  throw std::logic_error("unknown fusion mode");
}

FusionMode parse_fusion(const std::string& text) {
  std::string t = text;
  std::replace(t.begin(), t.end(), '_', '-');
  for (const auto& [m, name] : kFusionNames) {
    if (name == t) return m;
  }
  throw std::invalid_argument("unknown fusion mode '" + text + "'");
}

const std::vector<FusionMode>& all_fusion_modes() {
  static const std::vector<FusionMode> modes = [] {
    std::vector<FusionMode> m;
    for (const auto& [mode, _] : kFusionNames) m.push_back(mode);
    return m;
  }();
  return modes;
}

bool uses_regions(FusionMode mode) { return mode != FusionMode::grid_only; }
bool uses_grid(FusionMode mode) { return mode != FusionMode::region_only; }

std::string to_string(Stage stage) {
  switch (stage) {
    case Stage::detector_pretrain: return "detector_pretrain";
    case Stage::xe: return "xe";
    case Stage::scst: return "scst";
  }
  throw std::logic_error("unknown stage");
}

Stage parse_stage(const std::string& text) {
  if (text == "detector_pretrain" || text == "detector") return Stage::detector_pretrain;
  if (text == "xe") return Stage::xe;
  if (text == "scst") return Stage::scst;
  throw std::invalid_argument("unknown stage '" + text + "'");
}

json to_json(const BackboneConfig& c) {
  return {{"image_size", c.image_size}, {"patch_size", c.patch_size}, {"embed_dim", c.embed_dim},
          {"depths", c.depths},         {"heads", c.heads},           {"window", c.window},
          {"mlp_ratio", c.mlp_ratio},   {"pyramid_levels", c.pyramid_levels}};
}

BackboneConfig backbone_from_json(const json& j) {
  BackboneConfig c;
  read_if(j, "image_size", c.image_size);
  read_if(j, "patch_size", c.patch_size);
  read_if(j, "embed_dim", c.embed_dim);
  read_if(j, "depths", c.depths);
  read_if(j, "heads", c.heads);
  read_if(j, "window", c.window);
  read_if(j, "mlp_ratio", c.mlp_ratio);
  read_if(j, "pyramid_levels", c.pyramid_levels);
  return c;
}

json to_json(const ModelConfig& c) {
  json j = c.architecture_json();
  j["dropout"] = c.dropout;
  j["beam_size"] = c.beam_size;
  j["length_normalize"] = c.length_normalize;
  return j;
}

json ModelConfig::architecture_json() const {
  return {{"backbone", to_json(backbone)},
          {"d_model", d_model},
          {"heads", heads},
          {"ffn_mult", ffn_mult},
          {"num_queries", num_queries},
          {"detector_layers", detector_layers},
          {"sampling_points", sampling_points},
          {"num_classes", num_classes},
          {"num_attributes", num_attributes},
          {"query_init_std", query_init_std},
          {"grid_layers", grid_layers},
          {"grid_positional_encoding", grid_positional_encoding},
          {"caption_layers", caption_layers},
          {"vocab_size", vocab_size},
          {"max_len", max_len},
          {"fusion", to_string(fusion)},
          {"alpha_l1", alpha_l1},
          {"alpha_iou", alpha_iou},
          {"match_class_weight", match_class_weight},
          {"no_object_weight", no_object_weight}};
}

std::string ModelConfig::digest() const {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(ad::fnv1a64(architecture_json().dump())));
  return buf;
}

void ModelConfig::validate() const {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw std::invalid_argument("invalid model config: " + what);
  };
  const auto& b = backbone;
  require(b.image_size > 0 && b.patch_size > 0 && b.embed_dim > 0 && b.window > 0, "backbone sizes must be positive");
  require(!b.depths.empty() && b.depths.size() == b.heads.size(), "backbone depths/heads length mismatch");
  require(b.pyramid_levels >= 1 && b.pyramid_levels <= static_cast<int>(b.depths.size()) + 1,
          "pyramid_levels must lie in [1, stages + 1]");
  for (std::size_t s = 0; s < b.heads.size(); ++s) {
    require(b.heads[s] > 0 && ((b.embed_dim << s) % b.heads[s]) == 0, "stage width not divisible by heads");
  }
  require(d_model > 0 && heads > 0 && d_model % heads == 0, "d_model must divide into heads");
  require(d_model % 2 == 0, "d_model must be even for sinusoidal embeddings");
  require(num_queries >= 1 && sampling_points >= 1, "queries and sampling points must be positive");
  require(detector_layers >= 0 && grid_layers >= 0 && caption_layers >= 0, "layer counts must be non-negative");
  require(num_classes >= 1 && num_attributes >= 1, "class/attribute counts must be positive");
  require(dropout >= 0.0 && dropout < 1.0, "dropout must lie in [0, 1)");
  require(max_len >= 1 && beam_size >= 1, "max_len and beam_size must be positive");
}

json to_json(const TrainConfig& c) {
  return {{"stage", to_string(c.stage)},
          {"seed", c.seed},
          {"batch_size", c.batch_size},
          {"epochs", c.epochs},
          {"max_steps", c.max_steps},
          {"end_to_end", c.end_to_end},
          {"lr_visual", c.lr_visual},
          {"lr_text", c.lr_text},
          {"lr_text_start", c.lr_text_start},
          {"warmup_epochs", c.warmup_epochs},
          {"grad_clip", c.grad_clip},
          {"adam_beta1", c.adam_beta1},
          {"adam_beta2", c.adam_beta2},
          {"adam_eps", c.adam_eps},
          {"scst_samples", c.scst_samples},
          {"attribute_phase", c.attribute_phase},
          {"eval_each_epoch", c.eval_each_epoch}};
}

ModelConfig model_from_json(const json& j, ModelConfig c) {
  if (j.contains("backbone")) c.backbone = backbone_from_json(j.at("backbone"));
  read_if(j, "d_model", c.d_model);
  read_if(j, "heads", c.heads);
  read_if(j, "dropout", c.dropout);
  read_if(j, "ffn_mult", c.ffn_mult);
  read_if(j, "num_queries", c.num_queries);
  read_if(j, "detector_layers", c.detector_layers);
  read_if(j, "sampling_points", c.sampling_points);
  read_if(j, "num_classes", c.num_classes);
  read_if(j, "num_attributes", c.num_attributes);
  read_if(j, "query_init_std", c.query_init_std);
  read_if(j, "grid_layers", c.grid_layers);
  read_if(j, "grid_positional_encoding", c.grid_positional_encoding);
  read_if(j, "caption_layers", c.caption_layers);
  read_if(j, "vocab_size", c.vocab_size);
  read_if(j, "max_len", c.max_len);
  if (j.contains("fusion")) c.fusion = parse_fusion(j.at("fusion").get<std::string>());
  read_if(j, "beam_size", c.beam_size);
  read_if(j, "length_normalize", c.length_normalize);
  read_if(j, "alpha_l1", c.alpha_l1);
  read_if(j, "alpha_iou", c.alpha_iou);
  read_if(j, "match_class_weight", c.match_class_weight);
  read_if(j, "no_object_weight", c.no_object_weight);
  return c;
}

TrainConfig train_from_json(const json& j, TrainConfig c) {
  if (j.contains("stage")) c.stage = parse_stage(j.at("stage").get<std::string>());
  read_if(j, "seed", c.seed);
  read_if(j, "batch_size", c.batch_size);
  read_if(j, "epochs", c.epochs);
  read_if(j, "max_steps", c.max_steps);
  read_if(j, "end_to_end", c.end_to_end);
  read_if(j, "lr_visual", c.lr_visual);
  read_if(j, "lr_text", c.lr_text);
  read_if(j, "lr_text_start", c.lr_text_start);
  read_if(j, "warmup_epochs", c.warmup_epochs);
  read_if(j, "grad_clip", c.grad_clip);
  read_if(j, "adam_beta1", c.adam_beta1);
  read_if(j, "adam_beta2", c.adam_beta2);
  read_if(j, "adam_eps", c.adam_eps);
  read_if(j, "scst_samples", c.scst_samples);
  read_if(j, "attribute_phase", c.attribute_phase);
  read_if(j, "eval_each_epoch", c.eval_each_epoch);
  return c;
}

void TrainConfig::validate() const {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw std::invalid_argument("invalid train config: " + what);
  };
  require(batch_size >= 1 && epochs >= 0 && max_steps >= 0, "batch_size/epochs/max_steps");
  require(lr_visual >= 0 && lr_text >= 0 && lr_text_start >= 0, "learning rates must be non-negative");
  require(grad_clip >= 0, "grad_clip must be non-negative");
  require(stage != Stage::scst || scst_samples >= 2, "SCST needs at least two samples per image");
  require(attribute_phase >= 0 && attribute_phase <= 1, "attribute_phase must lie in [0, 1]");
}

RunProfile desk_profile() {
  RunProfile p;
  p.name = "desk";
  p.detector.stage = Stage::detector_pretrain;
  p.detector.epochs = 40;
  p.detector.batch_size = 8;
  p.detector.lr_visual = 5e-4;
  p.detector.attribute_phase = 0.5;

  p.xe.stage = Stage::xe;
  p.xe.epochs = 20;
  p.xe.batch_size = 16;
  p.xe.lr_visual = 5e-5;
  p.xe.lr_text = 1e-3;
  p.xe.lr_text_start = 1e-4;
  p.xe.warmup_epochs = 1.0;

  p.scst.stage = Stage::scst;
  p.scst.epochs = 2;
  p.scst.batch_size = 16;
  p.scst.lr_visual = 1e-5;
  p.scst.lr_text = 1e-5;
  p.scst.lr_text_start = 1e-5;
  p.scst.warmup_epochs = 0.0;
  p.scst.scst_samples = 5;
  return p;
}

RunProfile paper_profile() {
  RunProfile p;
  p.name = "paper";
  auto& m = p.model;
  m.backbone.image_size = 384;
  m.backbone.patch_size = 4;
  m.backbone.embed_dim = 128;  // Swin-Base
  m.backbone.depths = {2, 2, 18, 2};
  m.backbone.heads = {4, 8, 16, 32};
  m.backbone.window = 12;
  m.backbone.mlp_ratio = 4;
  m.backbone.pyramid_levels = 4;
  m.d_model = 512;
  m.heads = 8;
  m.dropout = 0.2;
  m.num_queries = 150;
  m.detector_layers = 6;
  m.sampling_points = 4;
  m.query_init_std = 1.0;
  m.grid_layers = 3;
  m.caption_layers = 3;
  m.max_len = 20;
  m.beam_size = 5;
  m.alpha_l1 = 5.0;
  m.alpha_iou = 2.0;

  p.detector.stage = Stage::detector_pretrain;
  p.detector.batch_size = 32;
  p.detector.max_steps = 150000;
  p.detector.lr_visual = 1e-4;

  p.xe.stage = Stage::xe;
  p.xe.epochs = 10;
  p.xe.batch_size = 128;
  p.xe.lr_visual = 1e-5;
  p.xe.lr_text = 1e-4;
  p.xe.lr_text_start = 1e-5;
  p.xe.warmup_epochs = 1.0;

  p.scst.stage = Stage::scst;
  p.scst.epochs = 10;
  p.scst.batch_size = 128;
  p.scst.lr_visual = 5e-6;
  p.scst.lr_text = 5e-6;
  p.scst.lr_text_start = 5e-6;
  p.scst.warmup_epochs = 0.0;
  p.scst.scst_samples = 5;
  return p;
}

RunProfile profile_by_name(const std::string& name) {
  if (name == "desk") return desk_profile();
  if (name == "paper") return paper_profile();
  throw std::invalid_argument("unknown profile '" + name + "' (expected desk or paper)");
}

}  // namespace grit
