#include "grit/train/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <numeric>
#include <random>
#include <sstream>

#include "grit/metrics/detection.hpp"

namespace grit::train {

using nlohmann::json;
using Clock = std::chrono::steady_clock;
using ad::Shape;

SplitData SplitData::from_dataset(const data::Dataset& dataset) {
  SplitData d;
  d.split = dataset.split;
  for (std::size_t i = 0; i < dataset.records.size(); ++i) {
    const auto& r = dataset.records[i];
    const auto img = dataset.load_image(i);
    if (d.image_ids.empty()) {
      d.height = img.height;
      d.width = img.width;
    } else if (img.height != d.height || img.width != d.width) {
      throw data::ValidationError("image " + std::to_string(r.image_id) + " differs in size from the rest of the split");
    }
    std::vector<Real> px(img.rgb.size());
    for (std::size_t k = 0; k < px.size(); ++k) px[k] = static_cast<Real>(img.rgb[k] / 255.0);
    d.image_ids.push_back(r.image_id);
    d.pixels.push_back(std::move(px));
    d.targets.push_back(r.objects);
    std::vector<metrics::Tokens> refs;
    for (const auto& c : r.captions) refs.push_back(metrics::tokenize(c));
    d.references.push_back(std::move(refs));
  }
  return d;
}

SplitData SplitData::head(std::size_t n) const {
  n = std::min(n, size());
  SplitData d;
  d.split = split;
  d.height = height;
  d.width = width;
  d.image_ids.assign(image_ids.begin(), image_ids.begin() + static_cast<std::ptrdiff_t>(n));
  d.pixels.assign(pixels.begin(), pixels.begin() + static_cast<std::ptrdiff_t>(n));
  d.targets.assign(targets.begin(), targets.begin() + static_cast<std::ptrdiff_t>(n));
  d.references.assign(references.begin(), references.begin() + static_cast<std::ptrdiff_t>(n));
  return d;
}

Tensor<Real> image_batch(const SplitData& data, const std::vector<std::size_t>& indices) {
  const Index per = static_cast<Index>(data.height) * data.width * 3;
  ad::Array<Real> values(per * static_cast<Index>(indices.size()));
  for (std::size_t b = 0; b < indices.size(); ++b) {
    const auto& px = data.pixels.at(indices[b]);
    std::copy(px.begin(), px.end(), values.data() + static_cast<Index>(b) * per);
  }
  return Tensor<Real>::from_values({static_cast<Index>(indices.size()), data.height, data.width, 3}, std::move(values));
}

metrics::Vocabulary build_vocabulary(const SplitData& train, int min_freq) {
  std::vector<metrics::Tokens> all;
  for (const auto& refs : train.references) all.insert(all.end(), refs.begin(), refs.end());
  return metrics::Vocabulary::build(all, min_freq);
}

TeacherBatch teacher_batch(const metrics::Vocabulary& vocab, const std::vector<std::vector<metrics::Tokens>>& captions,
                           int max_len) {
  std::vector<std::vector<int>> seqs;
  TeacherBatch tb;
  for (std::size_t b = 0; b < captions.size(); ++b) {
    for (const auto& c : captions[b]) {
      auto ids = vocab.encode(c);
      if (static_cast<int>(ids.size()) > max_len - 1) ids.resize(static_cast<std::size_t>(max_len - 1));
      ids.push_back(model::kEosId);
      seqs.push_back(std::move(ids));
      tb.images.push_back(static_cast<Index>(b));
    }
  }
  tb.sequences = static_cast<Index>(seqs.size());
  for (const auto& s : seqs) tb.length = std::max(tb.length, static_cast<Index>(s.size()));
  tb.inputs.assign(static_cast<std::size_t>(tb.sequences * tb.length), model::kPadId);
  tb.targets = tb.inputs;
  for (Index s = 0; s < tb.sequences; ++s) {
    const auto& t = seqs[static_cast<std::size_t>(s)];
    for (std::size_t i = 0; i < t.size(); ++i) {
      const auto at = static_cast<std::size_t>(s * tb.length) + i;
      tb.targets[at] = t[i];
      tb.inputs[at] = i == 0 ? model::kSosId : t[i - 1];
    }
  }
  return tb;
}

TeacherBatch hypothesis_batch(const std::vector<std::vector<std::vector<int>>>& tokens) {
  TeacherBatch tb;
  for (std::size_t b = 0; b < tokens.size(); ++b)
    for (const auto& t : tokens[b]) {
      if (t.empty()) throw std::invalid_argument("empty hypothesis");
      tb.length = std::max(tb.length, static_cast<Index>(t.size()));
      tb.images.push_back(static_cast<Index>(b));
    }
  tb.sequences = static_cast<Index>(tb.images.size());
  tb.inputs.assign(static_cast<std::size_t>(tb.sequences * tb.length), model::kPadId);
  tb.targets = tb.inputs;
  Index s = 0;
  for (const auto& image : tokens)
    for (const auto& t : image) {
      for (std::size_t i = 0; i < t.size(); ++i) {
        const auto at = static_cast<std::size_t>(s * tb.length) + i;
        tb.targets[at] = t[i];
        tb.inputs[at] = i == 0 ? model::kSosId : t[i - 1];
      }
      ++s;
    }
  return tb;
}

namespace {

std::string number(double v) {
  if (std::isnan(v)) return "";
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

json nullable(double v) { return std::isnan(v) ? json(nullptr) : json(v); }
double from_nullable(const json& j) { return j.is_null() ? std::numeric_limits<double>::quiet_NaN() : j.get<double>(); }

std::vector<std::vector<std::size_t>> chunks(std::size_t n, int batch) {
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(batch)) {
    std::vector<std::size_t> idx;
    for (std::size_t i = start; i < std::min(n, start + static_cast<std::size_t>(batch)); ++i) idx.push_back(i);
    out.push_back(std::move(idx));
  }
  return out;
}

std::string hex_digest(const json& j) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(ad::fnv1a64(j.dump())));
  return buf;
}

}  // namespace

std::string MetricTrace::csv(bool with_wall_time) const {
  std::ostringstream out;
  out << "step,stage,loss,cider_d,map50" << (with_wall_time ? ",wall_ms" : "") << '\n';
  for (const auto& r : rows) {
    out << r.step << ',' << r.stage << ',' << number(r.loss) << ',' << number(r.cider_d) << ',' << number(r.map50);
    if (with_wall_time) out << ',' << number(r.wall_ms);
    out << '\n';
  }
  return out.str();
}

void MetricTrace::write_csv(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << csv();
}

json MetricTrace::to_json() const {
  json arr = json::array();
  for (const auto& r : rows) {
    arr.push_back({{"step", r.step},
                   {"stage", r.stage},
                   {"loss", nullable(r.loss)},
                   {"cider_d", nullable(r.cider_d)},
                   {"map50", nullable(r.map50)},
                   {"wall_ms", r.wall_ms}});
  }
  return arr;
}

MetricTrace MetricTrace::from_json(const json& j) {
  MetricTrace t;
  for (const auto& r : j) {
    t.rows.push_back({r.at("step").get<long>(), r.at("stage").get<std::string>(), from_nullable(r.at("loss")),
                      from_nullable(r.at("cider_d")), from_nullable(r.at("map50")), r.at("wall_ms").get<double>()});
  }
  return t;
}

model::BeamOptions beam_options(const ModelConfig& config, int beam_size) {
  model::BeamOptions o;
  o.beam_size = beam_size;
  o.max_len = config.max_len;
  o.length_normalize = config.length_normalize;
  return o;
}

std::vector<metrics::Tokens> decode_split(const Model& model, const metrics::Vocabulary& vocab, const SplitData& data,
                                          const model::BeamOptions& options, int batch_size) {
  std::vector<metrics::Tokens> out;
  for (const auto& idx : chunks(data.size(), batch_size)) {
    const auto hyps = model.generate(image_batch(data, idx), options);
    for (const auto& h : hyps) out.push_back(h.empty() ? metrics::Tokens{} : vocab.decode(h.front().tokens));
  }
  return out;
}

double split_cider(const Model& model, const metrics::Vocabulary& vocab, const SplitData& data, int beam_size,
                   int batch_size) {
  const auto caps = decode_split(model, vocab, data, beam_options(model.config, beam_size), batch_size);
  return metrics::cider_d(caps, data.references).mean;
}

double split_map50(const Model& model, const SplitData& data, int batch_size) {
  ad::NoGradGuard guard;
  std::vector<std::vector<model::Detection>> preds;
  for (const auto& idx : chunks(data.size(), batch_size)) {
    const auto d = model::detections(model.detect(image_batch(data, idx), nn::Context::eval()));
    preds.insert(preds.end(), d.begin(), d.end());
  }
  return metrics::map50(preds, data.targets);
}

double split_xe(const Model& model, const metrics::Vocabulary& vocab, const SplitData& data, int batch_size) {
  ad::NoGradGuard guard;
  const auto ctx = nn::Context::eval();
  double total = 0.0;
  Index sequences = 0;
  for (const auto& idx : chunks(data.size(), batch_size)) {
    std::vector<std::vector<metrics::Tokens>> caps;
    for (auto i : idx) caps.push_back(data.references[i]);
    const auto tb = teacher_batch(vocab, caps, model.config.max_len);
    const auto visual = model.features(model.pyramid(image_batch(data, idx), ctx), ctx);
    const auto memory = model.caption.prepare(visual).select(tb.images);
    const auto logits = model.caption.forward(tb.inputs, tb.sequences, tb.length, memory, ctx);
    total += static_cast<double>(xe_loss(logits, tb.targets).item()) * static_cast<double>(tb.sequences);
    sequences += tb.sequences;
  }
  return sequences ? total / static_cast<double>(sequences) : 0.0;
}

std::vector<double> scst_rewards(const metrics::CiderD& cider, std::size_t image, const metrics::Vocabulary& vocab,
                                 const std::vector<model::Hypothesis>& hypotheses) {
  std::vector<double> r;
  for (const auto& h : hypotheses) r.push_back(cider.score(image, vocab.decode(h.tokens)));
  return r;
}

Trainer::Trainer(Model& model, const metrics::Vocabulary& vocab, const SplitData& train, const SplitData* val,
                 TrainConfig config)
    : model_(model),
      vocab_(vocab),
      train_(train),
      val_(val),
      config_(std::move(config)),
      adam_({config_.adam_beta1, config_.adam_beta2, config_.adam_eps}) {
  config_.validate();
  if (train_.size() == 0) throw std::invalid_argument("training split is empty");
  if (vocab_.size() != model_.config.vocab_size) throw std::invalid_argument("vocabulary does not match the model");
  steps_per_epoch_ = static_cast<long>((train_.size() + static_cast<std::size_t>(config_.batch_size) - 1) /
                                       static_cast<std::size_t>(config_.batch_size));
  total_steps_ = steps_per_epoch_ * config_.epochs;
  if (config_.max_steps > 0) total_steps_ = std::min<long>(total_steps_, config_.max_steps);
  const bool detector_stage = config_.stage == Stage::detector_pretrain;
  for (const auto& [path, t] : model_.params.entries()) {
    const bool visual = Model::is_visual(path);
    if (detector_stage && !visual) continue;
    if (!detector_stage && visual && !config_.end_to_end) continue;
    adam_.add(path, t, visual ? 0 : 1);
  }
  if (config_.stage == Stage::scst) cider_ = std::make_unique<metrics::CiderD>(train_.references);
}

std::vector<double> Trainer::learning_rates(long step) const {
  const double warm = config_.warmup_epochs * static_cast<double>(steps_per_epoch_);
  double text = config_.lr_text;
  if (warm > 0.0 && static_cast<double>(step) < warm) {
    text = config_.lr_text_start + (config_.lr_text - config_.lr_text_start) * static_cast<double>(step) / warm;
  }
  return {config_.lr_visual, text};
}

std::vector<std::size_t> Trainer::batch_indices(long step) const {
  const long epoch = step / steps_per_epoch_;
  const long offset = step % steps_per_epoch_;
  std::vector<std::size_t> order(train_.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(ad::splitmix64(config_.seed ^ ad::splitmix64(0x5eed0000ULL + static_cast<std::uint64_t>(epoch))));
  std::shuffle(order.begin(), order.end(), rng);
  const auto begin = static_cast<std::size_t>(offset * config_.batch_size);
  const auto end = std::min(order.size(), begin + static_cast<std::size_t>(config_.batch_size));
  return {order.begin() + static_cast<std::ptrdiff_t>(begin), order.begin() + static_cast<std::ptrdiff_t>(end)};
}

void Trainer::build_cache() {
  ad::NoGradGuard guard;
  const auto ctx = nn::Context::eval();
  cached_last_.clear();
  cached_regions_.clear();
  for (const auto& idx : chunks(train_.size(), config_.batch_size)) {
    const auto pyr = model_.pyramid(image_batch(train_, idx), ctx);
    const auto& last = pyr.levels.back();
    last_shape_ = Shape(last.shape().begin() + 1, last.shape().end());
    const Index per = ad::numel(last_shape_);
    Tensor<Real> regions;
    Index per_region = 0;
    if (uses_regions(model_.config.fusion)) {
      regions = model_.detector(pyr, ctx).features;
      region_shape_ = Shape(regions.shape().begin() + 1, regions.shape().end());
      per_region = ad::numel(region_shape_);
    }
    for (std::size_t b = 0; b < idx.size(); ++b) {
      cached_last_.push_back(last.values().segment(static_cast<Index>(b) * per, per));
      if (regions.defined()) cached_regions_.push_back(regions.values().segment(static_cast<Index>(b) * per_region, per_region));
    }
  }
}

model::VisualFeatures<Real> Trainer::visual_features(const std::vector<std::size_t>& batch, const nn::Context& ctx,
                                                     model::DetectionPrediction<Real>* detection) {
  if (config_.end_to_end || config_.stage == Stage::detector_pretrain) {
    return model_.features(model_.pyramid(image_batch(train_, batch), ctx), ctx, detection);
  }
  if (cached_last_.empty()) build_cache();
  auto stack = [&](const std::vector<ad::Array<Real>>& cache, const Shape& shape) {
    const Index per = ad::numel(shape);
    ad::Array<Real> v(per * static_cast<Index>(batch.size()));
    for (std::size_t b = 0; b < batch.size(); ++b) v.segment(static_cast<Index>(b) * per, per) = cache[batch[b]];
    Shape full{static_cast<Index>(batch.size())};
    full.insert(full.end(), shape.begin(), shape.end());
    return Tensor<Real>::from_values(full, std::move(v));
  };
  model::VisualFeatures<Real> v;
  if (uses_regions(model_.config.fusion)) v.regions = stack(cached_regions_, region_shape_);
  if (uses_grid(model_.config.fusion)) v.grid = model_.grid_features(stack(cached_last_, last_shape_), ctx);
  return v;
}

Tensor<Real> Trainer::detector_loss(const std::vector<std::size_t>& batch, const nn::Context& ctx) {
  const auto& c = model_.config;
  const auto pred = model_.detect(image_batch(train_, batch), ctx);
  std::vector<model::DetectionTarget> targets;
  for (auto i : batch) targets.push_back(train_.targets[i]);
  const long attribute_start = std::lround((1.0 - config_.attribute_phase) * static_cast<double>(total_steps_));
  model::MatchWeights mw{c.match_class_weight, {c.alpha_l1, c.alpha_iou}};
  model::LossWeights lw{c.no_object_weight, {c.alpha_l1, c.alpha_iou}, step_ >= attribute_start};
  return model::detection_loss(pred, targets, mw, lw);
}

Tensor<Real> Trainer::xe_step_loss(const std::vector<std::size_t>& batch, const nn::Context& ctx) {
  const auto visual = visual_features(batch, ctx, nullptr);
  std::vector<std::vector<metrics::Tokens>> caps;
  for (auto i : batch) caps.push_back(train_.references[i]);
  const auto tb = teacher_batch(vocab_, caps, model_.config.max_len);
  const auto memory = model_.caption.prepare(visual).select(tb.images);
  const auto logits = model_.caption.forward(tb.inputs, tb.sequences, tb.length, memory, ctx);
  return xe_loss(logits, tb.targets);
}

Tensor<Real> Trainer::scst_step_loss(const std::vector<std::size_t>& batch, const nn::Context& ctx) {
  const auto visual = visual_features(batch, ctx, nullptr);
  const auto hyps = model_.generate(visual, beam_options(model_.config, config_.scst_samples));
  std::vector<std::vector<std::vector<int>>> tokens;
  std::vector<std::vector<double>> rewards;
  std::vector<Index> kept;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    if (hyps[b].size() < 2) continue;
    std::vector<std::vector<int>> t;
    for (const auto& h : hyps[b]) t.push_back(h.tokens);
    tokens.push_back(std::move(t));
    rewards.push_back(scst_rewards(*cider_, batch[b], vocab_, hyps[b]));
    kept.push_back(static_cast<Index>(b));
  }
  if (kept.empty()) throw std::runtime_error("beam search produced fewer than two hypotheses for every image");
  auto tb = hypothesis_batch(tokens);
  for (auto& img : tb.images) img = kept[static_cast<std::size_t>(img)];
  const auto memory = model_.caption.prepare(visual).select(tb.images);
  const auto logits = model_.caption.forward(tb.inputs, tb.sequences, tb.length, memory, ctx);
  const auto log_probs = ad::sum_last(target_log_probs(logits, tb.targets, model::kPadId));
  Tensor<Real> total;
  Index offset = 0;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const auto k = static_cast<Index>(tokens[i].size());
    auto rl = RLBatch<Real>::make(tokens[i], rewards[i], ad::slice(log_probs, 0, offset, k));
    const auto l = scst_loss(rl);
    total = total.defined() ? ad::add(total, l) : l;
    offset += k;
  }
  return ad::scale(total, static_cast<Real>(1.0 / static_cast<double>(tokens.size())));
}

double Trainer::train_step() {
  if (step_ >= total_steps_) throw std::logic_error("training already finished");
  const auto t0 = Clock::now();
  const auto batch = batch_indices(step_);
  std::mt19937_64 rng(ad::splitmix64(config_.seed ^ ad::splitmix64(static_cast<std::uint64_t>(step_) * 3 +
                                                                    static_cast<std::uint64_t>(config_.stage))));
  nn::Context ctx{true, model_.config.dropout, &rng};

  Tensor<Real> loss;
  switch (config_.stage) {
    case Stage::detector_pretrain: loss = detector_loss(batch, ctx); break;
    case Stage::xe: loss = xe_step_loss(batch, ctx); break;
    case Stage::scst: loss = scst_step_loss(batch, ctx); break;
  }
  const double value = loss.item();
  if (!std::isfinite(value)) {
    throw ad::NumericError(to_string(config_.stage) + " loss is not finite at step " + std::to_string(step_));
  }
  model_.params.zero_grad();
  ad::backward(loss);
  adam_.clip_grad_norm(config_.grad_clip);
  adam_.step(learning_rates(step_));
  model_.params.zero_grad();

  const double ms = std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
  trace_.rows.push_back({step_, to_string(config_.stage), value, std::numeric_limits<double>::quiet_NaN(),
                         std::numeric_limits<double>::quiet_NaN(), ms});
  ++step_;
  if (step_ % steps_per_epoch_ == 0 || step_ == total_steps_) end_of_epoch((step_ - 1) / steps_per_epoch_);
  return value;
}

void Trainer::end_of_epoch(long epoch) {
  if (!config_.eval_each_epoch && step_ != total_steps_) return;
  const auto t0 = Clock::now();
  const std::string stage = to_string(config_.stage);
  const double nan = std::numeric_limits<double>::quiet_NaN();
  const SplitData train_eval = train_.head(64);
  const long first = epoch * steps_per_epoch_;
  double sum = 0.0;
  int count = 0;
  for (const auto& r : trace_.rows)
    if (r.stage == stage && r.step >= first && r.step < step_) {
      sum += r.loss;
      ++count;
    }
  const double train_loss = count ? sum / count : nan;
  auto elapsed = [&] { return std::chrono::duration<double, std::milli>(Clock::now() - t0).count(); };

  if (config_.stage == Stage::detector_pretrain) {
    trace_.rows.push_back({step_, stage + ":train", train_loss, nan, split_map50(model_, train_eval), elapsed()});
    if (val_ && val_->size()) trace_.rows.push_back({step_, stage + ":val", nan, nan, split_map50(model_, *val_), elapsed()});
  } else {
    const int beam = model_.config.beam_size;
    trace_.rows.push_back({step_, stage + ":train", train_loss, split_cider(model_, vocab_, train_eval, beam), nan, elapsed()});
    if (val_ && val_->size()) {
      trace_.rows.push_back({step_, stage + ":val", split_xe(model_, vocab_, *val_),
                             split_cider(model_, vocab_, *val_, beam), nan, elapsed()});
    }
  }
  if (verbose) {
    const auto& r = trace_.rows.back();
    std::cerr << stage << " epoch " << epoch + 1 << " step " << step_ << "/" << total_steps_ << " loss " << train_loss;
    if (!std::isnan(r.cider_d)) std::cerr << " " << r.stage << " cider_d " << r.cider_d;
    if (!std::isnan(r.map50)) std::cerr << " " << r.stage << " map50 " << r.map50;
    std::cerr << '\n';
  }
}

void Trainer::run(long until) {
  const long stop = until < 0 ? total_steps_ : std::min(until, total_steps_);
  while (step_ < stop) train_step();
}

ad::Checkpoint Trainer::checkpoint() const {
  ad::Checkpoint ckpt;
  ckpt.rng_seed = config_.seed;
  ckpt.config_digest = model_.config.digest();
  ad::store_parameters(ckpt, model_.params, "model/");
  adam_.save(ckpt, "adam/");
  json meta{{"stage", to_string(config_.stage)},
            {"step", step_},
            {"total_steps", total_steps_},
            {"model", to_json(model_.config)},
            {"model_seed", model_.params.seed()},
            {"visual_digest", visual_digest(model_.config)},
            {"train", to_json(config_)},
            {"vocab", vocab_.tokens()},
            {"trace", trace_.to_json()}};
  ckpt.metadata = meta.dump();
  return ckpt;
}

void Trainer::resume(const ad::Checkpoint& ckpt) {
  const auto meta = checkpoint_metadata(ckpt);
  if (ckpt.config_digest != model_.config.digest()) {
    throw data::ValidationError("checkpoint digest " + ckpt.config_digest + " does not match the model config digest " +
                                model_.config.digest());
  }
  if (meta.at("stage").get<std::string>() != to_string(config_.stage)) {
    throw data::ValidationError("checkpoint holds stage '" + meta.at("stage").get<std::string>() + "', not '" +
                                to_string(config_.stage) + "'");
  }
  load_parameters(ckpt, model_, false);
  adam_.load(ckpt, "adam/");
  step_ = meta.at("step").get<long>();
  trace_ = MetricTrace::from_json(meta.at("trace"));
  cached_last_.clear();
  cached_regions_.clear();
}

json checkpoint_metadata(const ad::Checkpoint& ckpt) {
  try {
    return json::parse(ckpt.metadata);
  } catch (const json::parse_error& e) {
    throw data::ValidationError(std::string("checkpoint metadata is not JSON: ") + e.what());
  }
}

void load_parameters(const ad::Checkpoint& ckpt, Model& model, bool visual_only) {
  for (const auto& [path, t] : model.params.entries()) {
    if (visual_only && !Model::is_visual(path)) continue;
    Tensor<Real> handle = t;
    handle.mutable_values() = ckpt.get<Real>("model/" + path, t.shape());
  }
}

LoadedModel load_model(const ad::Checkpoint& ckpt) {
  const auto meta = checkpoint_metadata(ckpt);
  const ModelConfig config = model_from_json(meta.at("model"));
  if (config.digest() != ckpt.config_digest) throw data::ValidationError("checkpoint digest does not match its stored config");
  LoadedModel out{Model::create(config, meta.at("model_seed").get<std::uint64_t>()),
                  metrics::Vocabulary::from_tokens(meta.at("vocab").get<std::vector<std::string>>()),
                  parse_stage(meta.at("stage").get<std::string>()), meta};
  load_parameters(ckpt, out.model, false);
  return out;
}

std::string visual_digest(const ModelConfig& c) {
  return hex_digest({{"backbone", to_json(c.backbone)},
                     {"d_model", c.d_model},
                     {"heads", c.heads},
                     {"ffn_mult", c.ffn_mult},
                     {"num_queries", c.num_queries},
                     {"detector_layers", c.detector_layers},
                     {"sampling_points", c.sampling_points},
                     {"num_classes", c.num_classes},
                     {"num_attributes", c.num_attributes},
                     {"query_init_std", c.query_init_std}});
}

}  // namespace grit::train
