#include "grit/data/synth.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <iostream>
#include <random>
#include <stdexcept>

#include "grit/autodiff/parameters.hpp"
#include "grit/metrics/text.hpp"

namespace grit::data {

namespace fs = std::filesystem;

namespace {

constexpr std::array<std::array<std::uint8_t, 3>, 3> kBackgroundRgb{{{235, 235, 235}, {128, 128, 128}, {20, 20, 20}}};
constexpr std::array<std::array<std::uint8_t, 3>, 4> kColorRgb{{{220, 30, 30}, {30, 190, 40}, {30, 60, 230}, {240, 210, 20}}};

bool covers(const SceneObject& o, int px, int py) {
  const double cx = px + 0.5, cy = py + 0.5;
  const double e = o.extent;
  switch (o.shape) {
    case 0: {
      const double dx = cx - (o.x + e / 2), dy = cy - (o.y + e / 2);
      return dx * dx + dy * dy <= (e / 2) * (e / 2);
    }
    case 1:
      return px >= o.x && px < o.x + o.extent && py >= o.y && py < o.y + o.extent;
    default: {
      if (cy < o.y || cy > o.y + e) return false;
      const double half = (cy - o.y) / 2.0;
      return std::abs(cx - (o.x + e / 2)) <= half;
    }
  }
}

struct Bounds {
  int x0, y0, x1, y1;  // inclusive pixel bounds
};

Bounds mask_bounds(const std::vector<std::uint8_t>& mask, int size) {
  Bounds b{size, size, -1, -1};
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x)
      if (mask[static_cast<std::size_t>(y * size + x)]) {
        b.x0 = std::min(b.x0, x);
        b.y0 = std::min(b.y0, y);
        b.x1 = std::max(b.x1, x);
        b.y1 = std::max(b.y1, y);
      }
  return b;
}

double center_x(const SceneObject& o) { return o.x + o.extent / 2.0; }
double center_y(const SceneObject& o) { return o.y + o.extent / 2.0; }

std::string phrase(const SceneObject& o) { return "a " + kColorNames[o.color] + " " + kShapeNames[o.shape]; }

}  // namespace

std::uint64_t image_seed(std::uint64_t seed, std::int64_t image_id) {
  return ad::splitmix64(seed ^ ad::splitmix64(static_cast<std::uint64_t>(image_id) + 0x632be59bd9b4e019ULL));
}

std::optional<Scene> sample_scene(const SceneSpec& spec, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto uniform = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };
  Scene s;
  s.background = uniform(0, static_cast<int>(kBackgroundNames.size()) - 1);
  const int count = uniform(spec.min_objects, spec.max_objects);
  for (int k = 0; k < count; ++k) {
    SceneObject o;
    o.shape = uniform(0, static_cast<int>(kShapeNames.size()) - 1);
    o.color = uniform(0, static_cast<int>(kColorNames.size()) - 1);
    bool placed = false;
    for (int attempt = 0; attempt < spec.placement_attempts && !placed; ++attempt) {
      o.extent = uniform(spec.min_extent, spec.max_extent);
      o.x = uniform(0, spec.image_size - o.extent);
      o.y = uniform(0, spec.image_size - o.extent);
      placed = std::none_of(s.objects.begin(), s.objects.end(), [&](const SceneObject& p) {
        return o.x < p.x + p.extent + spec.margin && p.x < o.x + o.extent + spec.margin &&
               o.y < p.y + p.extent + spec.margin && p.y < o.y + o.extent + spec.margin;
      });
    }
    if (!placed) return std::nullopt;
    s.objects.push_back(o);
  }
  std::sort(s.objects.begin(), s.objects.end(), [](const SceneObject& a, const SceneObject& b) {
    if (center_x(a) != center_x(b)) return center_x(a) < center_x(b);
    return center_y(a) < center_y(b);
  });
  return s;
}

std::vector<std::uint8_t> object_mask(const SceneSpec& spec, const SceneObject& o) {
  const int n = spec.image_size;
  std::vector<std::uint8_t> mask(static_cast<std::size_t>(n * n), 0);
  for (int y = std::max(0, o.y); y < std::min(n, o.y + o.extent); ++y)
    for (int x = std::max(0, o.x); x < std::min(n, o.x + o.extent); ++x)
      mask[static_cast<std::size_t>(y * n + x)] = covers(o, x, y) ? 1 : 0;
  return mask;
}

Image render(const SceneSpec& spec, const Scene& scene, model::DetectionTarget* objects) {
  const int n = spec.image_size;
  Image img;
  img.width = img.height = n;
  img.rgb.resize(static_cast<std::size_t>(n * n * 3));
  const auto& bg = kBackgroundRgb.at(static_cast<std::size_t>(scene.background));
  for (int p = 0; p < n * n; ++p)
    for (int c = 0; c < 3; ++c) img.rgb[static_cast<std::size_t>(p * 3 + c)] = bg[static_cast<std::size_t>(c)];
  if (objects) objects->clear();
  for (const auto& o : scene.objects) {
    const auto mask = object_mask(spec, o);
    const auto& rgb = kColorRgb.at(static_cast<std::size_t>(o.color));
    for (int p = 0; p < n * n; ++p) {
      if (!mask[static_cast<std::size_t>(p)]) continue;
      for (int c = 0; c < 3; ++c) img.rgb[static_cast<std::size_t>(p * 3 + c)] = rgb[static_cast<std::size_t>(c)];
    }
    if (objects) {
      const Bounds b = mask_bounds(mask, n);
      const double s = n;
      objects->push_back({o.shape, o.color, model::Box::from_corners(b.x0 / s, b.y0 / s, (b.x1 + 1) / s, (b.y1 + 1) / s)});
    }
  }
  return img;
}

std::string relation(const SceneObject& a, const SceneObject& b) {
  const double dx = center_x(b) - center_x(a);
  const double dy = center_y(b) - center_y(a);
  if (std::abs(dy) > std::abs(dx)) return dy > 0 ? "above" : "below";
  return "left of";
}

std::vector<std::string> scene_captions(const Scene& scene) {
  if (scene.objects.empty()) throw std::invalid_argument("scene without objects");
  std::string list;
  for (std::size_t i = 0; i < scene.objects.size(); ++i) {
    if (i) list += " and ";
    list += phrase(scene.objects[i]);
  }
  const std::string& bg = kBackgroundNames[static_cast<std::size_t>(scene.background)];
  std::vector<std::string> caps{list + " on a " + bg + " background", "a " + bg + " background with " + list};
  if (scene.objects.size() == 1) {
    const auto& o = scene.objects.front();
    caps.push_back("a single " + kColorNames[o.color] + " " + kShapeNames[o.shape] + " on a " + bg + " background");
  } else {
    std::string chain = phrase(scene.objects.front());
    for (std::size_t i = 1; i < scene.objects.size(); ++i) {
      chain += " " + relation(scene.objects[i - 1], scene.objects[i]) + " " + phrase(scene.objects[i]);
    }
    caps.push_back(chain);
  }
  return caps;
}

ParsedCaption parse_caption(const std::string& caption) {
  const auto t = metrics::tokenize(caption);
  std::size_t pos = 0;
  auto fail = [&](const std::string& why) -> std::invalid_argument {
    return std::invalid_argument("caption '" + caption + "' at word " + std::to_string(pos) + ": " + why);
  };
  auto peek = [&](std::size_t ahead = 0) -> std::string { return pos + ahead < t.size() ? t[pos + ahead] : ""; };
  auto expect = [&](const std::string& word) {
    if (peek() != word) throw fail("expected '" + word + "'");
    ++pos;
  };
  auto index_in = [&](const std::vector<std::string>& names, const char* what) {
    auto it = std::find(names.begin(), names.end(), peek());
    if (it == names.end()) throw fail(std::string("expected a ") + what);
    ++pos;
    return static_cast<int>(it - names.begin());
  };
  auto object = [&]() {
    expect("a");
    const int color = index_in(kColorNames, "color");
    const int shape = index_in(kShapeNames, "shape");
    return std::make_pair(color, shape);
  };
  auto background_tail = [&](ParsedCaption& p) {
    expect("on");
    expect("a");
    p.background = index_in(kBackgroundNames, "background tone");
    expect("background");
  };

  ParsedCaption p;
  if (peek() == "a" && std::find(kBackgroundNames.begin(), kBackgroundNames.end(), peek(1)) != kBackgroundNames.end()) {
    ++pos;
    p.background = index_in(kBackgroundNames, "background tone");
    expect("background");
    expect("with");
    p.objects.push_back(object());
    while (peek() == "and") {
      ++pos;
      p.objects.push_back(object());
    }
  } else if (peek() == "a" && peek(1) == "single") {
    pos += 2;
    const int color = index_in(kColorNames, "color");
    const int shape = index_in(kShapeNames, "shape");
    p.objects.emplace_back(color, shape);
    background_tail(p);
  } else {
    p.objects.push_back(object());
    bool list = false;
    while (pos < t.size() && peek() != "on") {
      if (peek() == "and") {
        if (!p.relations.empty()) throw fail("list and relation forms mixed");
        list = true;
        ++pos;
      } else if (peek() == "left" && peek(1) == "of") {
        if (list) throw fail("list and relation forms mixed");
        pos += 2;
        p.relations.push_back("left of");
      } else if (peek() == "above" || peek() == "below") {
        if (list) throw fail("list and relation forms mixed");
        p.relations.push_back(peek());
        ++pos;
      } else {
        throw fail("expected 'and', a relation or 'on'");
      }
      p.objects.push_back(object());
    }
    if (pos < t.size()) {
      if (!p.relations.empty()) throw fail("relation captions carry no background");
      background_tail(p);
    } else if (p.relations.empty()) {
      throw fail("list caption must end with its background");
    }
  }
  if (pos != t.size()) throw fail("trailing words");
  return p;
}

GenerateResult generate_dataset(const SceneSpec& spec, int n_images, int n_val, const fs::path& root) {
  if (n_images < 1 || n_val < 0 || n_val >= n_images) throw std::invalid_argument("need 0 <= n_val < n_images");
  GenerateResult result;
  for (const char* split : {"train", "val"}) fs::create_directories(root / split / "images");
  for (int id = 0; id < n_images; ++id) {
    const std::uint64_t base = image_seed(spec.seed, id);
    std::optional<Scene> scene;
    for (int retry = 0; retry < 10 && !scene; ++retry) scene = sample_scene(spec, ad::splitmix64(base + retry));
    if (!scene) {
      std::cerr << "gen-data: could not place objects for image " << id << "; skipped\n";
      result.skipped.push_back(id);
      continue;
    }
    const bool is_val = id >= n_images - n_val;
    Record r;
    r.image_id = id;
    char name[32];
    std::snprintf(name, sizeof(name), "images/%05d.ppm", id);
    r.image_path = name;
    r.width = r.height = spec.image_size;
    r.background = kBackgroundNames[static_cast<std::size_t>(scene->background)];
    const Image img = render(spec, *scene, &r.objects);
    r.captions = scene_captions(*scene);
    write_ppm(root / (is_val ? "val" : "train") / r.image_path, img);
    (is_val ? result.val : result.train).push_back(std::move(r));
  }
  for (const char* split : {"train", "val"}) {
    const auto& recs = std::string(split) == "train" ? result.train : result.val;
    write_manifest(root / split / "manifest.json", recs);
    write_annotations(root / split / "annotations.json", recs);
  }
  return result;
}

}  // namespace grit::data
