#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "grit/model/boxes.hpp"

namespace grit::data {

inline const std::vector<std::string> kShapeNames{"circle", "square", "triangle"};
inline const std::vector<std::string> kColorNames{"red", "green", "blue", "yellow"};
inline const std::vector<std::string> kBackgroundNames{"white", "gray", "black"};

/// 8-bit RGB raster, row-major, 3 bytes per pixel.
struct Image {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> rgb;
};

void write_ppm(const std::filesystem::path& path, const Image& image);
Image read_ppm(const std::filesystem::path& path);

struct Record {
  std::int64_t image_id = 0;
  std::string image_path;  // relative to the split directory
  int width = 0;
  int height = 0;
  std::string background;
  model::DetectionTarget objects;  // cls indexes kShapeNames, attribute kColorNames
  std::vector<std::string> captions;
};

struct Dataset {
  std::string split;
  std::filesystem::path directory;  // {root}/{split}
  std::vector<Record> records;

  std::filesystem::path image_file(const Record& r) const { return directory / r.image_path; }
  Image load_image(std::size_t index) const;
  std::vector<model::DetectionTarget> targets() const;
};

/// Thrown for malformed manifests; `what()` names the file, line and record.
struct ValidationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// One JSON object per line.
void write_manifest(const std::filesystem::path& path, const std::vector<Record>& records);
/// Detection labels only: a JSON array of {image_id, objects}.
void write_annotations(const std::filesystem::path& path, const std::vector<Record>& records);
/// Reads {root}/{split}/manifest.json and validates every record.
Dataset load_split(const std::filesystem::path& root, const std::string& split);
Dataset load_manifest(const std::filesystem::path& manifest_path, const std::string& split = "");
/// Throws if any image_id appears in more than one split.
void check_disjoint(const std::vector<const Dataset*>& splits);

/// (H, W, 3) values in [0, 1], pixel order as stored.
std::vector<double> normalized_pixels(const Image& image);

}  // namespace grit::data
