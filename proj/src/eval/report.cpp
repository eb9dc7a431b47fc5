#include "grit/eval/report.hpp"

#include <chrono>
#include <fstream>
#include <map>

namespace grit::eval {

using nlohmann::json;
using Clock = std::chrono::steady_clock;

void write_captions(const std::filesystem::path& path, const std::vector<CaptionLine>& captions) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const auto& c : captions) out << json{{"image_id", c.image_id}, {"caption", c.caption}}.dump() << '\n';
}

std::vector<CaptionLine> read_captions(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw data::ValidationError("cannot open captions " + path.string());
  std::vector<CaptionLine> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = json::parse(line);
      out.push_back({j.at("image_id").get<std::int64_t>(), j.at("caption").get<std::string>()});
    } catch (const json::exception& e) {
      throw data::ValidationError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

json EvalReport::to_json() const {
  return {{"split", split},
          {"n_images", n_images},
          {"bleu1", bleu[0]},
          {"bleu2", bleu[1]},
          {"bleu3", bleu[2]},
          {"bleu4", bleu[3]},
          {"cider_d", cider_d},
          {"map50", map50 ? json(*map50) : json(nullptr)}};
}

EvalReport evaluate_captions(const std::vector<CaptionLine>& captions, const train::SplitData& data) {
  std::map<std::int64_t, std::string> by_id;
  for (const auto& c : captions) {
    if (!by_id.emplace(c.image_id, c.caption).second) {
      throw data::ValidationError("image_id " + std::to_string(c.image_id) + " has more than one caption");
    }
  }
  std::vector<metrics::Tokens> candidates;
  for (auto id : data.image_ids) {
    auto it = by_id.find(id);
    if (it == by_id.end()) throw data::ValidationError("no caption for image_id " + std::to_string(id));
    candidates.push_back(metrics::tokenize(it->second));
    by_id.erase(it);
  }
  if (!by_id.empty()) {
    throw data::ValidationError("caption for image_id " + std::to_string(by_id.begin()->first) + " not in split '" +
                                data.split + "'");
  }
  EvalReport r;
  r.split = data.split;
  r.n_images = data.size();
  r.bleu = metrics::corpus_bleu(candidates, data.references);
  r.cider_d = metrics::cider_d(candidates, data.references).mean;
  return r;
}

json BenchReport::to_json() const {
  json rows_json = json::array();
  for (const auto& r : rows) {
    rows_json.push_back({{"batch_size", r.batch_size},
                         {"feature_ms_per_image", r.feature_ms},
                         {"caption_ms_per_image", r.caption_ms},
                         {"overhead_ms_per_image", r.overhead_ms},
                         {"total_ms_per_image", r.total_ms}});
  }
  return {{"images", images}, {"beam_size", beam_size}, {"repeats", repeats}, {"results", rows_json}};
}

json BenchReport::schema() {
  const json number{{"type", "number"}, {"minimum", 0}};
  return {{"type", "object"},
          {"required", {"images", "beam_size", "repeats", "results"}},
          {"properties",
           {{"images", {{"type", "integer"}, {"minimum", 1}}},
            {"beam_size", {{"type", "integer"}, {"minimum", 1}}},
            {"repeats", {{"type", "integer"}, {"minimum", 1}}},
            {"results",
             {{"type", "array"},
              {"items",
               {{"type", "object"},
                {"required",
                 {"batch_size", "feature_ms_per_image", "caption_ms_per_image", "overhead_ms_per_image",
                  "total_ms_per_image"}},
                {"properties",
                 {{"batch_size", {{"type", "integer"}, {"minimum", 1}}},
                  {"feature_ms_per_image", number},
                  {"caption_ms_per_image", number},
                  {"overhead_ms_per_image", number},
                  {"total_ms_per_image", number}}}}}}}}}};
}

std::optional<std::string> validate_schema(const json& value, const json& schema, const std::string& where) {
  if (schema.contains("type")) {
    const auto type = schema["type"].get<std::string>();
    const bool ok = (type == "object" && value.is_object()) || (type == "array" && value.is_array()) ||
                    (type == "integer" && value.is_number_integer()) || (type == "number" && value.is_number()) ||
                    (type == "string" && value.is_string()) || (type == "boolean" && value.is_boolean());
    if (!ok) return where + ": expected " + type;
  }
  if (schema.contains("minimum") && value.is_number() && value.get<double>() < schema["minimum"].get<double>()) {
    return where + ": below minimum";
  }
  if (value.is_object()) {
    if (schema.contains("required"))
      for (const auto& key : schema["required"])
        if (!value.contains(key.get<std::string>())) return where + ": missing '" + key.get<std::string>() + "'";
    if (schema.contains("properties"))
      for (const auto& [key, sub] : schema["properties"].items())
        if (value.contains(key))
          if (auto err = validate_schema(value[key], sub, where + "." + key)) return err;
  }
  if (value.is_array() && schema.contains("items")) {
    for (std::size_t i = 0; i < value.size(); ++i)
      if (auto err = validate_schema(value[i], schema["items"], where + "[" + std::to_string(i) + "]")) return err;
  }
  return std::nullopt;
}

std::optional<std::string> validate_schema(const json& value, const json& schema) {
  return validate_schema(value, schema, "$");
}

BenchReport benchmark(const train::Model& model, const train::SplitData& data, const std::vector<int>& batch_sizes,
                      int beam_size, int repeats) {
  if (data.size() == 0) throw std::invalid_argument("bench needs at least one image");
  if (repeats < 1) throw std::invalid_argument("bench needs at least one repeat");
  ad::NoGradGuard guard;
  const auto ctx = nn::Context::eval();
  const auto options = train::beam_options(model.config, beam_size);
  auto ms = [](Clock::duration d) { return std::chrono::duration<double, std::milli>(d).count(); };

  auto run = [&](int batch) {
    BenchRow row;
    row.batch_size = batch;
    Clock::duration feature{}, caption{};
    const auto start = Clock::now();
    for (std::size_t first = 0; first < data.size(); first += static_cast<std::size_t>(batch)) {
      std::vector<std::size_t> idx;
      for (std::size_t i = first; i < std::min(data.size(), first + static_cast<std::size_t>(batch)); ++i) idx.push_back(i);
      const auto images = train::image_batch(data, idx);
      const auto t0 = Clock::now();
      const auto visual = model.features(model.pyramid(images, ctx), ctx);
      const auto t1 = Clock::now();
      const auto memory = model.caption.prepare(visual);
      const auto hyps = model::beam_search(model::caption_step(model.caption, memory), memory.batch, options);
      const auto t2 = Clock::now();
      feature += t1 - t0;
      caption += t2 - t1;
    }
    const double n = static_cast<double>(data.size());
    row.total_ms = ms(Clock::now() - start) / n;
    row.feature_ms = ms(feature) / n;
    row.caption_ms = ms(caption) / n;
    row.overhead_ms = row.total_ms - row.feature_ms - row.caption_ms;
    return row;
  };

  BenchReport report;
  report.images = data.size();
  report.beam_size = beam_size;
  report.repeats = repeats;
  for (int b : batch_sizes)
    if (b < 1) throw std::invalid_argument("batch sizes must be positive");
  run(batch_sizes.empty() ? 1 : batch_sizes.front());  // warm-up
  // Repeats sweep all batch sizes in turn, so machine load drifts affect every size alike.
  for (int r = 0; r < repeats; ++r) {
    for (std::size_t i = 0; i < batch_sizes.size(); ++i) {
      const BenchRow next = run(batch_sizes[i]);
      if (r == 0) {
        report.rows.push_back(next);
      } else if (next.total_ms < report.rows[i].total_ms) {
        report.rows[i] = next;
      }
    }
  }
  return report;
}

}  // namespace grit::eval
