#include "grit/data/dataset.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>

#include "json.hpp"

namespace grit::data {

namespace fs = std::filesystem;
using nlohmann::json;

void write_ppm(const fs::path& path, const Image& image) {
  if (image.rgb.size() != static_cast<std::size_t>(image.width) * image.height * 3) {
    throw std::invalid_argument("image buffer does not match its size");
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "P6\n" << image.width << ' ' << image.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(image.rgb.data()), static_cast<std::streamsize>(image.rgb.size()));
}

Image read_ppm(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read image " + path.string());
  auto next_token = [&]() {
    std::string tok;
    while (in >> std::ws && in.peek() == '#') {
      std::string comment;
      std::getline(in, comment);
    }
    in >> tok;
    return tok;
  };
  if (next_token() != "P6") throw std::runtime_error(path.string() + ": not a binary PPM (P6)");
  Image img;
  int maxval = 0;
  try {
    img.width = std::stoi(next_token());
    img.height = std::stoi(next_token());
    maxval = std::stoi(next_token());
  } catch (const std::exception&) {
    throw std::runtime_error(path.string() + ": malformed PPM header");
  }
  if (img.width <= 0 || img.height <= 0 || maxval != 255) {
    throw std::runtime_error(path.string() + ": unsupported PPM dimensions or depth");
  }
  in.get();
  img.rgb.resize(static_cast<std::size_t>(img.width) * img.height * 3);
  in.read(reinterpret_cast<char*>(img.rgb.data()), static_cast<std::streamsize>(img.rgb.size()));
  if (in.gcount() != static_cast<std::streamsize>(img.rgb.size())) throw std::runtime_error(path.string() + ": truncated PPM");
  return img;
}

std::vector<double> normalized_pixels(const Image& image) {
  std::vector<double> v(image.rgb.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = image.rgb[i] / 255.0;
  return v;
}

Image Dataset::load_image(std::size_t index) const {
  const auto& r = records.at(index);
  Image img = read_ppm(image_file(r));
  if (img.width != r.width || img.height != r.height) {
    throw ValidationError(image_file(r).string() + ": size differs from manifest record " + std::to_string(r.image_id));
  }
  return img;
}

std::vector<model::DetectionTarget> Dataset::targets() const {
  std::vector<model::DetectionTarget> t;
  for (const auto& r : records) t.push_back(r.objects);
  return t;
}

namespace {

json objects_json(const model::DetectionTarget& objects) {
  json arr = json::array();
  for (const auto& o : objects) {
    json j{{"class", kShapeNames.at(static_cast<std::size_t>(o.cls))},
           {"box", {o.box.cx, o.box.cy, o.box.w, o.box.h}}};
    j["attribute"] = o.attribute >= 0 ? json(kColorNames.at(static_cast<std::size_t>(o.attribute))) : json(nullptr);
    arr.push_back(std::move(j));
  }
  return arr;
}

int index_of(const std::vector<std::string>& names, const std::string& s) {
  auto it = std::find(names.begin(), names.end(), s);
  return it == names.end() ? -1 : static_cast<int>(it - names.begin());
}

Record parse_record(const json& j) {
  auto need = [&](const char* key) -> const json& {
    if (!j.contains(key)) throw std::invalid_argument(std::string("missing field '") + key + "'");
    return j.at(key);
  };
  if (!j.is_object()) throw std::invalid_argument("record is not a JSON object");
  Record r;
  const auto& id = need("image_id");
  if (!id.is_number_integer()) throw std::invalid_argument("image_id must be an integer");
  r.image_id = id.get<std::int64_t>();
  r.image_path = need("image_path").get<std::string>();
  if (r.image_path.empty()) throw std::invalid_argument("image_path is empty");
  r.width = need("width").get<int>();
  r.height = need("height").get<int>();
  if (r.width <= 0 || r.height <= 0) throw std::invalid_argument("image size must be positive");
  r.background = need("background").get<std::string>();
  if (index_of(kBackgroundNames, r.background) < 0) throw std::invalid_argument("unknown background '" + r.background + "'");
  const auto& objs = need("objects");
  if (!objs.is_array()) throw std::invalid_argument("objects must be an array");
  for (std::size_t k = 0; k < objs.size(); ++k) {
    const auto& o = objs[k];
    const std::string where = "object " + std::to_string(k) + ": ";
    model::ObjectLabel label;
    label.cls = index_of(kShapeNames, o.at("class").get<std::string>());
    if (label.cls < 0) throw std::invalid_argument(where + "unknown class '" + o.at("class").get<std::string>() + "'");
    if (o.contains("attribute") && !o.at("attribute").is_null()) {
      label.attribute = index_of(kColorNames, o.at("attribute").get<std::string>());
      if (label.attribute < 0) throw std::invalid_argument(where + "unknown attribute");
    }
    const auto& b = o.at("box");
    if (!b.is_array() || b.size() != 4) throw std::invalid_argument(where + "box must be [cx, cy, w, h]");
    label.box = {b[0].get<double>(), b[1].get<double>(), b[2].get<double>(), b[3].get<double>()};
    if (!(label.box.w > 0.0) || !(label.box.h > 0.0)) throw std::invalid_argument(where + "box has non-positive width or height");
    if (!label.box.valid()) throw std::invalid_argument(where + "box values must lie in [0, 1]");
    r.objects.push_back(label);
  }
  const auto& caps = need("captions");
  if (!caps.is_array() || caps.size() < 2) throw std::invalid_argument("at least two reference captions required");
  for (const auto& c : caps) {
    auto s = c.get<std::string>();
    if (s.empty()) throw std::invalid_argument("empty caption");
    r.captions.push_back(std::move(s));
  }
  return r;
}

}  // namespace

void write_manifest(const fs::path& path, const std::vector<Record>& records) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const auto& r : records) {
    json j{{"image_id", r.image_id},  {"image_path", r.image_path}, {"width", r.width},
           {"height", r.height},      {"background", r.background}, {"objects", objects_json(r.objects)},
           {"captions", r.captions}};
    out << j.dump() << '\n';
  }
}

void write_annotations(const fs::path& path, const std::vector<Record>& records) {
  json arr = json::array();
  for (const auto& r : records) arr.push_back({{"image_id", r.image_id}, {"objects", objects_json(r.objects)}});
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << arr.dump(1) << '\n';
}

Dataset load_manifest(const fs::path& manifest_path, const std::string& split) {
  std::ifstream in(manifest_path);
  if (!in) throw ValidationError("cannot open manifest " + manifest_path.string());
  Dataset ds;
  ds.split = split;
  ds.directory = manifest_path.parent_path();
  std::map<std::int64_t, int> seen;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = manifest_path.string() + ":" + std::to_string(line_no);
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ValidationError(where + ": invalid JSON (" + e.what() + ")");
    }
    Record r;
    try {
      r = parse_record(j);
    } catch (const std::exception& e) {
      std::string id = j.is_object() && j.contains("image_id") ? " (image_id " + j["image_id"].dump() + ")" : "";
      throw ValidationError(where + id + ": " + e.what());
    }
    auto [it, fresh] = seen.emplace(r.image_id, line_no);
    if (!fresh) {
      throw ValidationError(where + ": image_id " + std::to_string(r.image_id) + " already used on line " +
                            std::to_string(it->second));
    }
    ds.records.push_back(std::move(r));
  }
  return ds;
}

Dataset load_split(const fs::path& root, const std::string& split) {
  return load_manifest(root / split / "manifest.json", split);
}

void check_disjoint(const std::vector<const Dataset*>& splits) {
  std::map<std::int64_t, std::string> owner;
  for (const auto* ds : splits) {
    for (const auto& r : ds->records) {
      auto [it, fresh] = owner.emplace(r.image_id, ds->split);
      if (!fresh) {
        throw ValidationError("image_id " + std::to_string(r.image_id) + " appears in both split '" + it->second +
                              "' and split '" + ds->split + "'");
      }
    }
  }
}

}  // namespace grit::data
