#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "grit/data/dataset.hpp"

namespace grit::data {

struct SceneSpec {
  int image_size = 64;
  int min_objects = 1;
  int max_objects = 4;
  int min_extent = 12;  // object size in pixels
  int max_extent = 22;
  int margin = 2;       // minimum pixel gap between object boxes
  int placement_attempts = 200;
  std::uint64_t seed = 7;
};

struct SceneObject {
  int shape = 0;  // kShapeNames
  int color = 0;  // kColorNames
  int x = 0, y = 0, extent = 0;  // top-left corner and side of the bounding square
};

struct Scene {
  int background = 0;  // kBackgroundNames
  std::vector<SceneObject> objects;  // left to right
};

/// Per-image generator stream from (seed, image_id).
std::uint64_t image_seed(std::uint64_t seed, std::int64_t image_id);
/// Empty when placement fails within the attempt budget.
std::optional<Scene> sample_scene(const SceneSpec& spec, std::uint64_t seed);
/// Renders the scene and fills `objects` with boxes fitted to the drawn pixels.
Image render(const SceneSpec& spec, const Scene& scene, model::DetectionTarget* objects = nullptr);
/// Mask of pixels covered by one object, row-major image_size^2.
std::vector<std::uint8_t> object_mask(const SceneSpec& spec, const SceneObject& object);

/// Relation word between consecutive objects (left to right): "left of", "above" or "below".
std::string relation(const SceneObject& a, const SceneObject& b);
/// References: a list caption, a background-first caption and a relation caption.
std::vector<std::string> scene_captions(const Scene& scene);

struct ParsedCaption {
  std::optional<int> background;
  std::vector<std::pair<int, int>> objects;  // (color, shape)
  std::vector<std::string> relations;        // between consecutive objects; empty for list captions
};
/// Inverts scene_captions; throws std::invalid_argument on text outside the grammar.
ParsedCaption parse_caption(const std::string& caption);

struct GenerateResult {
  std::vector<Record> train;
  std::vector<Record> val;
  std::vector<std::int64_t> skipped;
};

/// Writes {root}/{train,val}/{images/, manifest.json, annotations.json}.
/// Image ids 0..n_images-1; the last n_val ids form the validation split.
GenerateResult generate_dataset(const SceneSpec& spec, int n_images, int n_val, const std::filesystem::path& root);

}  // namespace grit::data
