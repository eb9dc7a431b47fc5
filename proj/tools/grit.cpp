#include <malloc.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "grit/data/synth.hpp"
#include "grit/eval/report.hpp"
#include "grit/train/trainer.hpp"

namespace fs = std::filesystem;
using namespace grit;
using nlohmann::json;

namespace {

constexpr int kExitValidation = 2;
constexpr int kExitNumeric = 3;

struct Options {
  std::string profile = "desk";
  std::string config_file;
  std::string fusion;
  std::string end_to_end;
  int beam = 0;
  long long seed = -1;
  int epochs = -1;
  long max_steps = -1;
  bool quiet = false;

  std::string data;
  std::string out;
  std::string init;
  std::string checkpoint;
  std::string split = "val";
  std::string captions;

  int images = 512;
  int val_images = 64;
  std::vector<int> batch_sizes{1, 2, 4, 8, 16};
  int bench_images = 32;
  int repeats = 3;
};

fs::path output_root() {
  const char* env = std::getenv("GRIT_OUTPUT_ROOT");
  return env && *env ? fs::path(env) : fs::path("runs");
}

fs::path or_default(const std::string& value, const std::string& name) {
  return value.empty() ? output_root() / name : fs::path(value);
}

json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw data::ValidationError("cannot open config " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw data::ValidationError(path.string() + ": " + e.what());
  }
}

void write_json_file(const fs::path& path, const json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

bool parse_bool(const std::string& text) {
  if (text == "true" || text == "1" || text == "yes") return true;
  if (text == "false" || text == "0" || text == "no") return false;
  throw data::ValidationError("expected true or false, got '" + text + "'");
}

/// Profile, then the config file, then flags.
RunProfile resolve_profile(const Options& o) {
  RunProfile p = profile_by_name(o.profile);
  if (!o.config_file.empty()) {
    const json j = read_json_file(o.config_file);
    if (j.contains("model")) p.model = model_from_json(j["model"], p.model);
    if (j.contains("detector")) p.detector = train_from_json(j["detector"], p.detector);
    if (j.contains("xe")) p.xe = train_from_json(j["xe"], p.xe);
    if (j.contains("scst")) p.scst = train_from_json(j["scst"], p.scst);
  }
  if (!o.fusion.empty()) p.model.fusion = parse_fusion(o.fusion);
  if (o.beam > 0) p.model.beam_size = o.beam;
  for (TrainConfig* t : {&p.detector, &p.xe, &p.scst}) {
    if (!o.end_to_end.empty()) t->end_to_end = parse_bool(o.end_to_end);
    if (o.seed >= 0) t->seed = static_cast<std::uint64_t>(o.seed);
    if (o.epochs >= 0) t->epochs = o.epochs;
    if (o.max_steps >= 0) t->max_steps = o.max_steps;
  }
  return p;
}

ad::Checkpoint read_checkpoint(const std::string& path, const char* what) {
  if (path.empty()) throw data::ValidationError(std::string("--") + what + " checkpoint is required");
  if (!fs::exists(path)) throw data::ValidationError(std::string(what) + " checkpoint not found: " + path);
  try {
    return ad::load_checkpoint(path);
  } catch (const std::runtime_error& e) {
    throw data::ValidationError(path + ": " + e.what());
  }
}

train::SplitData load_split(const fs::path& root, const std::string& split) {
  return train::SplitData::from_dataset(data::load_split(root, split));
}

/// Model for profile + flags whose digest must match the checkpoint.
train::LoadedModel checked_model(const ad::Checkpoint& ckpt, const Options& o) {
  auto loaded = train::load_model(ckpt);
  ModelConfig expected = resolve_profile(o).model;
  expected.vocab_size = loaded.model.config.vocab_size;
  if (expected.digest() != ckpt.config_digest) {
    throw data::ValidationError("checkpoint config digest " + ckpt.config_digest +
                                " does not match the requested configuration (" + expected.digest() +
                                "); check --profile and --fusion");
  }
  loaded.model.config.beam_size = expected.beam_size;
  loaded.model.config.dropout = expected.dropout;
  return loaded;
}

void log(const Options& o, const std::string& msg) {
  if (!o.quiet) std::cerr << msg << '\n';
}

void finish_stage(const Options& o, train::Trainer& trainer, const fs::path& out) {
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  ad::save_checkpoint(out.string(), trainer.checkpoint());
  trainer.trace().write_csv(out.string() + ".trace.csv");
  json summary{{"stage", to_string(trainer.config().stage)}, {"steps", trainer.step()}, {"checkpoint", out.string()}};
  for (const auto& r : trainer.trace().rows) {
    if (r.stage.find(':') == std::string::npos) continue;
    if (!std::isnan(r.cider_d)) summary[r.stage.substr(r.stage.find(':') + 1) + "_cider_d"] = r.cider_d;
    if (!std::isnan(r.map50)) summary[r.stage.substr(r.stage.find(':') + 1) + "_map50"] = r.map50;
  }
  write_json_file(out.string() + ".json", summary);
  log(o, "wrote " + out.string());
}

int cmd_gen_data(const Options& o) {
  const fs::path root = or_default(o.out, "data");
  data::SceneSpec spec;
  if (o.seed >= 0) spec.seed = static_cast<std::uint64_t>(o.seed);
  const auto result = data::generate_dataset(spec, o.images, o.val_images, root);
  log(o, "generated " + std::to_string(result.train.size()) + " train and " + std::to_string(result.val.size()) +
             " val images in " + root.string() + " (" + std::to_string(result.skipped.size()) + " skipped)");
  return 0;
}

int cmd_train(const Options& o, Stage stage) {
  const RunProfile profile = resolve_profile(o);
  const fs::path data_root = or_default(o.data, "data");
  const auto train_split = load_split(data_root, "train");
  const auto val_split = load_split(data_root, "val");
  TrainConfig tc = stage == Stage::detector_pretrain ? profile.detector : stage == Stage::xe ? profile.xe : profile.scst;
  tc.stage = stage;

  ModelConfig mc = profile.model;
  std::optional<ad::Checkpoint> init;
  metrics::Vocabulary vocab;
  if (!o.init.empty() || stage != Stage::detector_pretrain) {
    init = read_checkpoint(o.init, "init");
    const auto meta = train::checkpoint_metadata(*init);
    vocab = metrics::Vocabulary::from_tokens(meta.at("vocab").get<std::vector<std::string>>());
  } else {
    vocab = train::build_vocabulary(train_split);
  }
  mc.vocab_size = vocab.size();

  auto model = train::Model::create(mc, tc.seed);
  if (init) {
    const auto meta = train::checkpoint_metadata(*init);
    const auto from = parse_stage(meta.at("stage").get<std::string>());
    if (from == Stage::detector_pretrain && stage != Stage::detector_pretrain) {
      if (meta.at("visual_digest").get<std::string>() != train::visual_digest(mc)) {
        throw data::ValidationError("detector checkpoint " + o.init + " has a different backbone/detector config");
      }
      train::load_parameters(*init, model, true);
    } else {
      if (init->config_digest != mc.digest()) {
        throw data::ValidationError("checkpoint " + o.init + " config digest " + init->config_digest +
                                    " does not match the requested configuration " + mc.digest());
      }
      train::load_parameters(*init, model, false);
    }
  }

  train::Trainer trainer(model, vocab, train_split, &val_split, tc);
  trainer.verbose = !o.quiet;
  log(o, to_string(stage) + ": " + std::to_string(trainer.total_steps()) + " steps, fusion " + to_string(mc.fusion) +
             ", end-to-end " + (tc.end_to_end ? "true" : "false"));
  trainer.run();
  const char* name = stage == Stage::detector_pretrain ? "detector.ckpt" : stage == Stage::xe ? "xe.ckpt" : "scst.ckpt";
  finish_stage(o, trainer, or_default(o.out, name));
  return 0;
}

int cmd_caption(const Options& o) {
  const auto ckpt = read_checkpoint(o.checkpoint, "checkpoint");
  const auto loaded = checked_model(ckpt, o);
  const auto split = load_split(or_default(o.data, "data"), o.split);
  const auto caps = train::decode_split(loaded.model, loaded.vocab, split,
                                        train::beam_options(loaded.model.config, loaded.model.config.beam_size));
  std::vector<eval::CaptionLine> lines;
  for (std::size_t i = 0; i < split.size(); ++i) lines.push_back({split.image_ids[i], metrics::join(caps[i])});
  const fs::path out = or_default(o.out, "captions.jsonl");
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  eval::write_captions(out, lines);
  log(o, "wrote " + std::to_string(lines.size()) + " captions to " + out.string());
  return 0;
}

int cmd_eval(const Options& o) {
  const auto split = load_split(or_default(o.data, "data"), o.split);
  const auto captions = eval::read_captions(or_default(o.captions, "captions.jsonl"));
  auto report = eval::evaluate_captions(captions, split);
  if (!o.checkpoint.empty()) {
    const auto loaded = checked_model(read_checkpoint(o.checkpoint, "checkpoint"), o);
    report.map50 = train::split_map50(loaded.model, split);
  }
  const fs::path out = or_default(o.out, "eval.json");
  write_json_file(out, report.to_json());
  std::cout << report.to_json().dump(2) << '\n';
  return 0;
}

int cmd_bench(const Options& o) {
  const auto loaded = checked_model(read_checkpoint(o.checkpoint, "checkpoint"), o);
  const auto split = load_split(or_default(o.data, "data"), o.split).head(static_cast<std::size_t>(o.bench_images));
  const auto report = eval::benchmark(loaded.model, split, o.batch_sizes, loaded.model.config.beam_size, o.repeats);
  const json j = report.to_json();
  if (auto err = eval::validate_schema(j, eval::BenchReport::schema())) throw std::logic_error("bench report " + *err);
  write_json_file(or_default(o.out, "bench.json"), j);
  std::cout << j.dump(2) << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  // Keep large activation buffers in the heap instead of mapping fresh pages per batch.
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  mallopt(M_TOP_PAD, 64 << 20);
  CLI::App app{"GRIT captioning on synthetic scenes"};
  app.require_subcommand(1);
  Options o;

  auto common = [&](CLI::App* c) {
    c->add_option("--profile", o.profile, "Hyperparameter profile (desk or paper)");
    c->add_option("--config", o.config_file, "JSON overrides: {model, detector, xe, scst}");
    c->add_option("--fusion", o.fusion, "concat, sequential-gr, sequential-rg, parallel-sigmoid, parallel-identity, "
                                        "grid-only or region-only");
    c->add_option("--beam", o.beam, "Beam size for decoding");
    c->add_flag("--quiet", o.quiet, "No progress output");
  };
  auto training = [&](CLI::App* c) {
    common(c);
    c->add_option("--data", o.data, "Dataset root (default $GRIT_OUTPUT_ROOT/data)");
    c->add_option("--out", o.out, "Output checkpoint");
    c->add_option("--init", o.init, "Checkpoint to start from");
    c->add_option("--end-to-end", o.end_to_end, "Fine-tune the backbone and detector (true/false)");
    c->add_option("--seed", o.seed, "Training seed");
    c->add_option("--epochs", o.epochs, "Override the number of epochs");
    c->add_option("--max-steps", o.max_steps, "Stop after this many steps");
  };

  auto* gen = app.add_subcommand("gen-data", "Generate the synthetic dataset");
  gen->add_option("--out", o.out, "Dataset root (default $GRIT_OUTPUT_ROOT/data)");
  gen->add_option("--images", o.images, "Number of images")->check(CLI::PositiveNumber);
  gen->add_option("--val", o.val_images, "Images held out for validation")->check(CLI::NonNegativeNumber);
  gen->add_option("--seed", o.seed, "Generator seed");
  gen->add_flag("--quiet", o.quiet, "No progress output");

  auto* det = app.add_subcommand("pretrain-detector", "Pretrain backbone and detector on detection labels");
  training(det);
  auto* xe = app.add_subcommand("train-xe", "Cross-entropy captioning stage");
  training(xe);
  auto* scst = app.add_subcommand("train-scst", "Self-critical CIDEr-D stage");
  training(scst);

  auto* cap = app.add_subcommand("caption", "Write JSON-lines captions for a split");
  common(cap);
  cap->add_option("--checkpoint", o.checkpoint, "Model checkpoint")->required();
  cap->add_option("--data", o.data, "Dataset root");
  cap->add_option("--split", o.split, "Split name");
  cap->add_option("--out", o.out, "Output JSON-lines file");

  auto* ev = app.add_subcommand("eval", "Score captions against the split references");
  common(ev);
  ev->add_option("--captions", o.captions, "JSON-lines captions");
  ev->add_option("--checkpoint", o.checkpoint, "Also report detector mAP@0.5 for this checkpoint");
  ev->add_option("--data", o.data, "Dataset root");
  ev->add_option("--split", o.split, "Split name");
  ev->add_option("--out", o.out, "Report file");

  auto* bench = app.add_subcommand("bench", "Per-image inference time by phase and batch size");
  common(bench);
  bench->add_option("--checkpoint", o.checkpoint, "Model checkpoint")->required();
  bench->add_option("--data", o.data, "Dataset root");
  bench->add_option("--split", o.split, "Split name");
  bench->add_option("--batch-sizes", o.batch_sizes, "Batch sizes")->delimiter(',');
  bench->add_option("--images", o.bench_images, "Images timed per batch size")->check(CLI::PositiveNumber);
  bench->add_option("--repeats", o.repeats, "Timing repeats (best kept)")->check(CLI::PositiveNumber);
  bench->add_option("--out", o.out, "Report file");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitValidation;
  }

  try {
    if (*gen) return cmd_gen_data(o);
    if (*det) return cmd_train(o, Stage::detector_pretrain);
    if (*xe) return cmd_train(o, Stage::xe);
    if (*scst) return cmd_train(o, Stage::scst);
    if (*cap) return cmd_caption(o);
    if (*ev) return cmd_eval(o);
    if (*bench) return cmd_bench(o);
  } catch (const ad::NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const data::ValidationError& e) {
    std::cerr << "validation error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const std::invalid_argument& e) {
    std::cerr << "validation error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
