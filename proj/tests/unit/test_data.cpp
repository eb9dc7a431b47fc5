#include <filesystem>
#include <fstream>
#include <iterator>
#include <set>

#include "doctest.h"
#include "grit/data/synth.hpp"
#include "grit/metrics/text.hpp"

using namespace grit;
using namespace grit::data;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("grit_test_data_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_text(const fs::path& p, const std::string& text) {
  fs::create_directories(p.parent_path());
  std::ofstream(p) << text;
}

const std::string kGoodRecord =
    R"({"image_id": 3, "image_path": "images/00003.ppm", "width": 64, "height": 64, "background": "gray", )"
    R"("objects": [{"class": "circle", "attribute": "red", "box": [0.5, 0.5, 0.2, 0.2]}], )"
    R"("captions": ["a red circle on a gray background", "a gray background with a red circle"]})";

}  // namespace

TEST_CASE("generation is byte-identical for a fixed seed") {
  SceneSpec spec;
  const auto a = scratch("regen_a"), b = scratch("regen_b");
  generate_dataset(spec, 24, 4, a);
  generate_dataset(spec, 24, 4, b);
  int files = 0;
  for (const auto& entry : fs::recursive_directory_iterator(a)) {
    if (!entry.is_regular_file()) continue;
    const auto rel = fs::relative(entry.path(), a);
    REQUIRE(fs::exists(b / rel));
    CHECK(slurp(entry.path()) == slurp(b / rel));
    ++files;
  }
  CHECK(files == 24 + 4);

  spec.seed = 8;
  const auto c = scratch("regen_c");
  generate_dataset(spec, 24, 4, c);
  CHECK(slurp(a / "train" / "manifest.json") != slurp(c / "train" / "manifest.json"));
}

TEST_CASE("splits hold the last ids for validation and are disjoint") {
  const auto root = scratch("splits");
  const auto result = generate_dataset(SceneSpec{}, 20, 5, root);
  CHECK(result.skipped.empty());
  const auto train = load_split(root, "train");
  const auto val = load_split(root, "val");
  CHECK(train.records.size() == 15);
  CHECK(val.records.size() == 5);
  CHECK(val.records.front().image_id == 15);
  CHECK_NOTHROW(check_disjoint({&train, &val}));
  for (const auto& r : train.records) {
    CHECK(r.captions.size() >= 2);
    CHECK(fs::exists(train.image_file(r)));
  }
  CHECK(fs::exists(root / "train" / "annotations.json"));
}

TEST_CASE("emitted boxes are tight around the rendered pixels") {
  SceneSpec spec;
  int checked = 0;
  for (int id = 0; id < 60; ++id) {
    auto scene = sample_scene(spec, image_seed(spec.seed, id));
    if (!scene) continue;
    model::DetectionTarget objects;
    const Image img = render(spec, *scene, &objects);
    REQUIRE(objects.size() == scene->objects.size());
    const int n = spec.image_size;
    for (std::size_t k = 0; k < objects.size(); ++k) {
      const auto& o = objects[k];
      // Find the object's pixels by colour within its bounding square grown by one pixel.
      const auto& so = scene->objects[k];
      const auto px = [&](int x, int y) { return &img.rgb[static_cast<std::size_t>((y * n + x) * 3)]; };
      const std::uint8_t* ref = nullptr;
      int minx = n, miny = n, maxx = -1, maxy = -1;
      const int cx = so.x + so.extent / 2, cy = so.y + so.extent / 2 + so.extent / 4;
      ref = px(std::min(cx, n - 1), std::min(cy, n - 1));
      for (int y = std::max(0, so.y - 1); y <= std::min(n - 1, so.y + so.extent); ++y)
        for (int x = std::max(0, so.x - 1); x <= std::min(n - 1, so.x + so.extent); ++x) {
          const auto* p = px(x, y);
          if (p[0] == ref[0] && p[1] == ref[1] && p[2] == ref[2]) {
            minx = std::min(minx, x);
            maxx = std::max(maxx, x);
            miny = std::min(miny, y);
            maxy = std::max(maxy, y);
          }
        }
      REQUIRE(maxx >= 0);
      const double tol = 1.0 / n + 1e-12;
      CHECK(std::abs(o.box.x0() - minx / 64.0) <= tol);
      CHECK(std::abs(o.box.x1() - (maxx + 1) / 64.0) <= tol);
      CHECK(std::abs(o.box.y0() - miny / 64.0) <= tol);
      CHECK(std::abs(o.box.y1() - (maxy + 1) / 64.0) <= tol);
      CHECK(o.cls == so.shape);
      CHECK(o.attribute == so.color);
      ++checked;
    }
  }
  CHECK(checked > 60);
}

TEST_CASE("objects never overlap") {
  SceneSpec spec;
  for (int id = 0; id < 100; ++id) {
    auto scene = sample_scene(spec, image_seed(spec.seed, id));
    if (!scene) continue;
    model::DetectionTarget objects;
    render(spec, *scene, &objects);
    for (std::size_t i = 0; i < objects.size(); ++i)
      for (std::size_t j = i + 1; j < objects.size(); ++j) CHECK(model::iou(objects[i].box, objects[j].box) == 0.0);
  }
}

TEST_CASE("caption parser inverts every generated caption") {
  SceneSpec spec;
  int captions = 0;
  for (int id = 0; id < 200; ++id) {
    auto scene = sample_scene(spec, image_seed(spec.seed, id));
    if (!scene) continue;
    const auto caps = scene_captions(*scene);
    REQUIRE(caps.size() == 3);
    for (std::size_t c = 0; c < caps.size(); ++c) {
      const auto parsed = parse_caption(caps[c]);
      REQUIRE(parsed.objects.size() == scene->objects.size());
      for (std::size_t k = 0; k < parsed.objects.size(); ++k) {
        CHECK(parsed.objects[k].first == scene->objects[k].color);
        CHECK(parsed.objects[k].second == scene->objects[k].shape);
      }
      const bool chain = c == 2 && scene->objects.size() > 1;
      if (chain) {
        REQUIRE(parsed.relations.size() == scene->objects.size() - 1);
        for (std::size_t k = 0; k + 1 < scene->objects.size(); ++k)
          CHECK(parsed.relations[k] == relation(scene->objects[k], scene->objects[k + 1]));
        CHECK_FALSE(parsed.background.has_value());
      } else {
        CHECK(parsed.relations.empty());
        REQUIRE(parsed.background.has_value());
        CHECK(*parsed.background == scene->background);
      }
      ++captions;
    }
  }
  CHECK(captions >= 600);
}

TEST_CASE("relation words follow the dominant displacement") {
  SceneObject a{0, 0, 0, 0, 10}, b{0, 0, 20, 2, 10};
  CHECK(relation(a, b) == "left of");
  b.x = 4;
  b.y = 30;
  CHECK(relation(a, b) == "above");
  a.y = 40;
  b.y = 0;
  CHECK(relation(a, b) == "below");
}

TEST_CASE("parser rejects text outside the grammar") {
  CHECK_THROWS_AS(parse_caption("a purple circle on a white background"), std::invalid_argument);
  CHECK_THROWS_AS(parse_caption("a red circle"), std::invalid_argument);
  CHECK_THROWS_AS(parse_caption("a red circle and a blue square left of a green triangle"), std::invalid_argument);
  CHECK_THROWS_AS(parse_caption("a red circle on a white background again"), std::invalid_argument);
  CHECK_NOTHROW(parse_caption("a red circle above a blue square"));
}

TEST_CASE("reference captions outscore colour-swapped corruptions") {
  SceneSpec spec;
  std::vector<std::vector<metrics::Tokens>> refs;
  std::vector<Scene> scenes;
  for (int id = 0; id < 200; ++id) {
    auto scene = sample_scene(spec, image_seed(spec.seed, id));
    if (!scene) continue;
    std::vector<metrics::Tokens> r;
    for (const auto& c : scene_captions(*scene)) r.push_back(metrics::tokenize(c));
    refs.push_back(r);
    scenes.push_back(*scene);
  }
  const metrics::CiderD cider(refs);
  int wins = 0;
  for (std::size_t i = 0; i < refs.size(); ++i) {
    const auto& truth = refs[i][0];
    auto corrupted = truth;
    const std::string& color = kColorNames[static_cast<std::size_t>(scenes[i].objects[0].color)];
    const std::string& swap = kColorNames[static_cast<std::size_t>((scenes[i].objects[0].color + 1) % 4)];
    *std::find(corrupted.begin(), corrupted.end(), color) = swap;
    const std::vector<metrics::Tokens> others(refs[i].begin() + 1, refs[i].end());
    wins += cider.score(truth, others) >= cider.score(corrupted, others);
  }
  CHECK(wins >= 0.95 * static_cast<double>(refs.size()));
}

TEST_CASE("manifest loading validates records with line numbers") {
  const auto root = scratch("manifest");
  write_text(root / "train" / "manifest.json", kGoodRecord + "\n");
  CHECK(load_split(root, "train").records.size() == 1);

  std::string bad = kGoodRecord;
  bad.replace(bad.find("0.2, 0.2"), 8, "0.0, 0.2");
  write_text(root / "bad" / "manifest.json", kGoodRecord + "\n" + bad + "\n");
  try {
    load_split(root, "bad");
    FAIL("expected a validation error");
  } catch (const ValidationError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("manifest.json:2") != std::string::npos);
    CHECK(msg.find("image_id 3") != std::string::npos);
    CHECK(msg.find("non-positive width") != std::string::npos);
  }

  write_text(root / "dup" / "manifest.json", kGoodRecord + "\n" + kGoodRecord + "\n");
  CHECK_THROWS_AS(load_split(root, "dup"), ValidationError);
  write_text(root / "junk" / "manifest.json", "{not json\n");
  CHECK_THROWS_AS(load_split(root, "junk"), ValidationError);

  const auto a = load_split(root, "train");
  auto b = a;
  b.split = "val";
  CHECK_THROWS_AS(check_disjoint({&a, &b}), ValidationError);
}

TEST_CASE("ppm round trip") {
  const auto root = scratch("ppm");
  fs::create_directories(root);
  Image img{3, 2, {1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15, 16, 17, 18}};
  write_ppm(root / "x.ppm", img);
  const Image back = read_ppm(root / "x.ppm");
  CHECK(back.width == 3);
  CHECK(back.height == 2);
  CHECK(back.rgb == img.rgb);
  write_text(root / "bad.ppm", "P3\n1 1\n255\n0 0 0\n");
  CHECK_THROWS(read_ppm(root / "bad.ppm"));
}
