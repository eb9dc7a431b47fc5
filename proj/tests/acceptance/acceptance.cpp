#include <sys/wait.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include "grit/data/synth.hpp"
#include "grit/eval/report.hpp"
#include "grit/metrics/detection.hpp"
#include "grit/metrics/text.hpp"
#include "grit/model/detector.hpp"
#include "grit/train/losses.hpp"
#include "grit/train/trainer.hpp"
#include "support/gradcheck.hpp"
#include "support/oracles.hpp"

namespace fs = std::filesystem;
using namespace grit;
using namespace grit::testing;
using nlohmann::json;
using Clock = std::chrono::steady_clock;

namespace {

/// Collects failed expectations of one criterion.
struct Checks {
  int failed = 0;
  std::vector<std::string> notes;

  void expect(bool ok, const std::string& what) {
    if (ok) return;
    ++failed;
    if (notes.size() < 5) notes.push_back(what);
  }
  void note(const std::string& what) { notes.push_back(what); }
};

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string fmt(double v, int precision = 4) {
  std::ostringstream s;
  s.precision(precision);
  s << v;
  return s.str();
}

fs::path work_dir;

// ---------------------------------------------------------------------------

void gradient_suite(Checks& c) {
  const auto start = Clock::now();
  double worst = 0.0;
  int checked = 0;
  auto check = [&](const std::string& name, std::uint64_t seed,
                   const std::function<TensorD(const std::vector<TensorD>&)>& f, std::vector<TensorD> in) {
    const double err = gradcheck(f, std::move(in));
    worst = std::max(worst, err);
    ++checked;
    c.expect(err < 1e-4, name + " seed " + std::to_string(seed) + " rel err " + fmt(err));
  };
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(seed);
    auto a = random_tensor({3, 4}, rng), b = random_tensor({3, 4}, rng);
    auto vec = random_tensor({4}, rng), w = random_tensor({4, 5}, rng), bias = random_tensor({5}, rng);
    auto pos = random_tensor({3, 4}, rng, 0.5, 2.0);
    auto ba = random_tensor({2, 3, 4}, rng), bw = random_tensor({2, 4, 3}, rng);
    auto gain = random_tensor({4}, rng), shift = random_tensor({4}, rng);
    auto table = random_tensor({6, 3}, rng);
    auto r = [seed](const TensorD& t) { return random_readout(t, seed); };

    check("add", seed, [&](auto& in) { return r(ad::add(in[0], in[1])); }, {a, b});
    check("add broadcast", seed, [&](auto& in) { return r(ad::add(in[0], in[1])); }, {a, vec});
    check("sub", seed, [&](auto& in) { return r(ad::sub(in[0], in[1])); }, {a, vec});
    check("mul", seed, [&](auto& in) { return r(ad::mul(in[0], in[1])); }, {a, b});
    check("div", seed, [&](auto& in) { return r(ad::div(in[0], in[1])); }, {a, pos});
    check("matmul", seed, [&](auto& in) { return r(ad::matmul(in[0], in[1])); }, {a, w});
    check("batched matmul", seed, [&](auto& in) { return r(ad::matmul(in[0], in[1])); }, {ba, bw});
    check("linear", seed, [&](auto& in) { return r(ad::linear(in[0], in[1], in[2])); }, {a, w, bias});
    check("sigmoid", seed, [&](auto& in) { return r(ad::sigmoid(in[0])); }, {a});
    check("exp", seed, [&](auto& in) { return r(ad::exp(in[0])); }, {a});
    check("log", seed, [&](auto& in) { return r(ad::log(in[0])); }, {pos});
    check("relu", seed, [&](auto& in) { return r(ad::relu(in[0])); }, {a});
    check("abs", seed, [&](auto& in) { return r(ad::abs(in[0])); }, {a});
    check("minimum", seed, [&](auto& in) { return r(ad::minimum(in[0], in[1])); }, {a, b});
    check("maximum", seed, [&](auto& in) { return r(ad::maximum(in[0], in[1])); }, {a, b});
    check("softmax", seed, [&](auto& in) { return r(ad::softmax(in[0], 1)); }, {a});
    check("softmax axis 0", seed, [&](auto& in) { return r(ad::softmax(in[0], 0)); }, {a});
    check("log_softmax", seed, [&](auto& in) { return r(ad::log_softmax(in[0])); }, {a});
    check("layer_norm", seed, [&](auto& in) { return r(ad::layer_norm(in[0], in[1], in[2])); }, {a, gain, shift});
    check("embedding", seed, [&](auto& in) { return r(ad::embedding(in[0], {1, 4, 1, 5}, {2, 2})); }, {table});
    check("concat", seed, [&](auto& in) { return r(ad::concat<double>({in[0], in[1]}, 1)); }, {a, b});
    check("slice", seed, [&](auto& in) { return r(ad::slice(in[0], 1, 1, 2)); }, {a});
    check("permute", seed, [&](auto& in) { return r(ad::permute(in[0], {1, 0})); }, {a});
    check("broadcast_to", seed, [&](auto& in) { return r(ad::broadcast_to(in[0], {2, 3, 4})); }, {vec});
    check("sum_last", seed, [&](auto& in) { return r(ad::sum_last(in[0])); }, {a});
    check("gather_rows", seed, [&](auto& in) { return r(ad::gather_rows(in[0], {2, -1, 0, 2}, {2, 2})); }, {a});
    check("pick", seed, [&](auto& in) { return r(ad::pick(in[0], {0, 3, 2})); }, {a});
    const std::vector<std::uint8_t> mask{1, 0, 0, 1, 0, 1, 0, 0, 0, 0, 1, 0};
    check("masked_fill", seed, [&](auto& in) { return r(ad::masked_fill(in[0], mask, -3.0)); }, {a});

    // Sample points sit inside cells, away from the kinks of the bilinear weights.
    auto map = random_tensor({1, 4, 5, 2, 3}, rng);
    std::uniform_real_distribution<double> cell(0.15, 0.85);
    std::uniform_int_distribution<int> col(0, 4), line(0, 3);
    std::vector<double> pv;
    for (int k = 0; k < 12; ++k) {
      pv.push_back(std::clamp((col(rng) + cell(rng)) / 5.0 - 0.1, 0.01, 0.99));
      pv.push_back(std::clamp((line(rng) + cell(rng)) / 4.0 - 0.125, 0.01, 0.99));
    }
    check("bilinear_sample", seed, [&](auto& in) { return r(ad::bilinear_sample(in[0], in[1])); },
          {map, TensorD::from_vector({1, 6, 2, 2}, pv, true)});
    auto q = random_tensor({2, 3, 4}, rng), k = random_tensor({2, 5, 4}, rng), v = random_tensor({2, 5, 4}, rng);
    check("attention", seed, [&](auto& in) { return r(ad::attention(in[0], in[1], in[2], 2)); }, {q, k, v});
    const auto causal = ad::AttentionMask::causal_mask();
    check("causal attention", seed, [&](auto& in) { return r(ad::attention(in[0], in[0], in[0], 2, &causal)); },
          {random_tensor({2, 4, 4}, rng)});

    // Set-prediction loss over class, attribute and box heads.
    const model::DetectionTarget target{{1, 0, model::Box{0.4, 0.6, 0.3, 0.2}}, {2, 1, model::Box{0.7, 0.3, 0.2, 0.3}}};
    check("detection loss", seed,
          [&](auto& in) {
            return model::detection_loss(model::DetectionPrediction<double>{in[0], in[1], in[2]}, 0, target, {2, 0}, {});
          },
          {random_tensor({1, 3, 4}, rng), random_tensor({1, 3, 2}, rng), random_tensor({1, 3, 4}, rng, 0.2, 0.7)});
    check("cross-entropy loss", seed,
          [&](auto& in) { return train::xe_loss(in[0], {2, 1, 0, 3, 3, 1}); },
          {random_tensor({2, 3, 4}, rng, -2.0, 2.0)});
    const std::vector<int> sampled{1, 2, 3, 3, 1, 0};
    check("self-critical loss through log p", seed,
          [&](auto& in) {
            return train::scst_loss(train::RLBatch<double>::make(
                {{1, 2, 3}, {3, 1}}, {2.0, 0.5}, ad::sum_last(train::target_log_probs(in[0], sampled, 0))));
          },
          {random_tensor({2, 3, 4}, rng)});
  }
  const double elapsed = seconds_since(start);
  c.expect(elapsed < 120.0, "runtime " + fmt(elapsed) + " s");
  c.note(std::to_string(checked) + " checks over 20 seeds, worst rel err " + fmt(worst, 3) + ", " + fmt(elapsed, 3) +
         " s");
}

void matcher_exactness(Checks& c) {
  const auto start = Clock::now();
  std::mt19937_64 rng(23);
  std::uniform_real_distribution<double> u(0.0, 10.0);
  int exact = 0;
  for (int t = 0; t < 200; ++t) {
    const int cols = std::uniform_int_distribution<int>(1, 7)(rng);
    const int rows = std::uniform_int_distribution<int>(1, cols)(rng);
    std::vector<double> cost(static_cast<std::size_t>(rows * cols));
    for (auto& x : cost) x = t % 3 == 0 ? std::floor(u(rng)) : u(rng);
    const auto assign = model::hungarian(cost, rows, cols);
    std::set<int> used(assign.begin(), assign.end());
    double total = 0.0;
    for (int i = 0; i < rows; ++i) total += cost[static_cast<std::size_t>(i * cols + assign[static_cast<std::size_t>(i)])];
    const bool ok = used.size() == static_cast<std::size_t>(rows) && total == brute_force_min(cost, rows, cols);
    exact += ok;
    c.expect(ok, "instance " + std::to_string(t));
  }
  const double elapsed = seconds_since(start);
  c.expect(elapsed < 10.0, "runtime " + fmt(elapsed) + " s");
  c.note(std::to_string(exact) + "/200 exact, " + fmt(elapsed, 3) + " s");
}

void box_loss_oracle(Checks& c) {
  std::mt19937_64 rng(20);
  double worst = 0.0;
  for (int t = 0; t < 10000; ++t) {
    const Box a = random_box(rng), b = random_box(rng);
    const double l = model::giou_loss(a, b);
    worst = std::max(worst, std::abs(l - corner_giou_loss(a, b)));
    c.expect(l >= 0.0 && l <= 2.0, "loss out of [0, 2]");
    c.expect(l > 0.0, "distinct boxes with zero loss");
    c.expect(model::giou_loss(a, a) == 0.0, "equal boxes with nonzero loss");
  }
  c.expect(worst < 1e-12, "oracle error " + fmt(worst));
  const double halves = model::giou_loss(Box{0.25, 0.5, 0.5, 1.0}, Box{0.75, 0.5, 0.5, 1.0});
  c.expect(halves == 1.0, "left/right halves " + fmt(halves, 17));
  c.note("10^4 pairs, worst |diff| " + fmt(worst, 3) + ", halves " + fmt(halves));
}

void fusion_correctness(Checks& c) {
  const auto ctx = nn::Context::eval();
  auto features = [](std::uint64_t seed, Index d, Index T, Index N, Index M) {
    std::mt19937_64 rng(seed);
    return std::make_tuple(random_tensor({1, T, d}, rng, -1, 1, false), random_tensor({1, N, d}, rng, -1, 1, false),
                           random_tensor({1, M, d}, rng, -1, 1, false));
  };

  // d = 4, one token: gated parallel fusion by hand.
  double worst = 0.0;
  {
    ad::ParameterSet<double> ps(1);
    auto f = model::Fusion<double>::create(ps, "fusion", FusionMode::parallel_sigmoid, 4, 1);
    randomize(ps, 2, 0.6);
    const auto [x_t, regions, grid] = features(3, 4, 1, 3, 2);
    const auto out = f(x_t, model::VisualFeatures<double>{regions, grid}, ctx);
    const auto x = row(x_t, 0);
    const auto ag = attend(x, rows_of(grid), f.first), ar = attend(x, rows_of(regions), f.second);
    const auto cg = sigmoid_gate(ag, x, f.gate_grid), cr = sigmoid_gate(ar, x, f.gate_region);
    Vec sum(4);
    for (std::size_t j = 0; j < 4; ++j) sum[j] = cg[j] * ag[j] + cr[j] * ar[j] + x[j];
    const auto expect = layer_norm(sum, f.first_norm);
    for (Index j = 0; j < 4; ++j) worst = std::max(worst, std::abs(out.values()[j] - expect[static_cast<std::size_t>(j)]));
  }
  c.expect(worst < 1e-10, "hand computation error " + fmt(worst));

  // Identity gates against the plain sum of both attention outputs.
  double identity_diff = 0.0;
  {
    ad::ParameterSet<double> ps_s(6), ps_i(6);
    auto sig = model::Fusion<double>::create(ps_s, "fusion", FusionMode::parallel_sigmoid, 8, 2);
    auto idt = model::Fusion<double>::create(ps_i, "fusion", FusionMode::parallel_identity, 8, 2);
    const auto [x, regions, grid] = features(7, 8, 4, 5, 3);
    const model::VisualFeatures<double> vis{regions, grid};
    model::FusionTrace<double> trace;
    sig(x, vis, ctx, &trace);
    const auto out = idt(x, vis, ctx);
    const auto unweighted = sig.first_norm(ad::add(ad::add(trace.a_grid, trace.a_region), x));
    identity_diff = (out.values() - unweighted.values()).abs().maxCoeff();
  }
  c.expect(identity_diff == 0.0, "identity mode differs by " + fmt(identity_diff));

  // Causality: no logit depends on a later input token, for every fusion config.
  int modes = 0;
  for (auto mode : all_fusion_modes()) {
    ModelConfig cfg;
    cfg.d_model = 8;
    cfg.heads = 2;
    cfg.ffn_mult = 2;
    cfg.dropout = 0.0;
    cfg.caption_layers = 2;
    cfg.vocab_size = 12;
    cfg.fusion = mode;
    ad::ParameterSet<double> ps(26);
    auto gen = model::CaptionGenerator<double>::create(ps, "caption", cfg);
    const auto [x, regions, grid] = features(27, 8, 1, 4, 3);
    const auto memory = gen.prepare({regions, grid});
    const std::vector<int> ids{1, 4, 5, 6, 7};
    bool causal = true;
    for (Index i = 0; i < 5; ++i) {
      ps.zero_grad();
      const auto logits = gen.forward(ids, 1, 5, memory, ctx);
      ad::backward(random_readout(ad::slice(logits, 1, i, 1), 5));
      const auto g = gen.embedding.grad();
      for (Index j = 0; j < 5; ++j) {
        const double norm = g.segment(ids[static_cast<std::size_t>(j)] * 8, 8).abs().sum();
        if (j > i && norm != 0.0) causal = false;
        if (j == i && norm == 0.0) causal = false;
      }
    }
    modes += causal;
    c.expect(causal, "causality broken for " + to_string(mode));
  }
  c.note("hand error " + fmt(worst, 3) + ", identity diff " + fmt(identity_diff) + ", causal in " +
         std::to_string(modes) + "/" + std::to_string(all_fusion_modes().size()) + " modes");
}

void decoding(Checks& c) {
  // Beam 1 against greedy on a randomly initialised caption decoder.
  ModelConfig cfg;
  cfg.d_model = 8;
  cfg.heads = 2;
  cfg.ffn_mult = 2;
  cfg.dropout = 0.0;
  cfg.caption_layers = 2;
  cfg.vocab_size = 12;
  int greedy_match = 0;
  for (auto mode : all_fusion_modes()) {
    cfg.fusion = mode;
    ad::ParameterSet<double> ps(32);
    auto gen = model::CaptionGenerator<double>::create(ps, "caption", cfg);
    randomize(ps, 33, 0.8);
    std::mt19937_64 rng(34);
    const auto memory =
        gen.prepare({random_tensor({3, 4, 8}, rng, -1, 1, false), random_tensor({3, 3, 8}, rng, -1, 1, false)});
    const auto step = model::caption_step(gen, memory);
    const auto beams = model::beam_search(step, 3, {1, 8});
    const auto greedy = model::greedy_decode(step, 3, 8);
    bool same = true;
    for (std::size_t s = 0; s < 3; ++s) same = same && beams[s].size() == 1 && beams[s][0].tokens == greedy[s].tokens;
    greedy_match += same;
    c.expect(same, "beam 1 differs from greedy for " + to_string(mode));
  }

  // Two tokens, length 3, a beam wide enough to hold every path.
  int brute_match = 0;
  for (std::uint64_t salt = 0; salt < 50; ++salt) {
    const auto step = hashed_step(2, salt);
    model::BeamOptions opt;
    opt.beam_size = 8;
    opt.max_len = 3;
    opt.sos = 99;
    opt.eos = 1;
    const auto beams = model::beam_search(step, 1, opt);
    double best = -INFINITY;
    std::vector<int> best_tokens, prefix;
    enumerate(prefix, 0.0, 2, 3, 99, 1, step, best, best_tokens);
    const bool ok = beams[0][0].tokens == best_tokens && std::abs(beams[0][0].logprob - best) < 1e-12;
    brute_match += ok;
    c.expect(ok, "beam top differs from brute force, salt " + std::to_string(salt));
  }

  // Tied rewards leave no learning signal.
  int tied_zero = 0;
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 3.0);
  for (int trial = 0; trial < 50; ++trial) {
    const double reward = u(rng);
    auto log_probs = TensorD::from_vector({5}, {-1.3, -2.1, -0.4, -7.0, -3.3}, true);
    const auto loss = train::scst_loss(
        train::RLBatch<double>::make({{1}, {2}, {3}, {4}, {5}}, {reward, reward, reward, reward, reward}, log_probs));
    ad::backward(loss);
    const bool zero = loss.item() == 0.0 && (log_probs.grad() == 0.0).all();
    tied_zero += zero;
    c.expect(zero, "tied rewards give loss " + fmt(loss.item()));
  }
  c.note("beam 1 = greedy in " + std::to_string(greedy_match) + " modes, brute force " + std::to_string(brute_match) +
         "/50, tied SCST zero " + std::to_string(tied_zero) + "/50");
}

void metric_oracles(Checks& c) {
  const std::vector<std::vector<metrics::Tokens>> corpus{
      {{"a", "red", "circle", "on", "a", "gray", "background"}},
      {{"a", "blue", "square", "left", "of", "a", "green", "triangle"}},
      {{"a", "yellow", "triangle", "above", "a", "red", "square"}},
      {{"two", "shapes", "on", "a", "white", "background"}}};
  metrics::CiderD cider(corpus);
  double worst_cider = 0.0;
  bool bleu_one = true;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    worst_cider = std::max(worst_cider, std::abs(cider.score(i, corpus[i][0]) - 10.0));
    bleu_one = bleu_one && metrics::bleu(corpus[i][0], corpus[i])[3] == 1.0;
  }
  c.expect(worst_cider <= 1e-9, "CIDEr-D(self) off by " + fmt(worst_cider));
  c.expect(bleu_one, "BLEU-4(self) is not exactly 1");

  const metrics::Tokens disjoint{"zebra", "giraffe", "lion", "tiger", "hippo"};
  const double cider_zero = cider.score(1, disjoint), bleu_zero = metrics::bleu(disjoint, corpus[1])[3];
  c.expect(cider_zero == 0.0 && bleu_zero == 0.0, "zero-overlap candidate scores nonzero");

  // Ranked TP, duplicate FP, TP: precision 1 at recall 0.5, then 2/3 at recall 1.
  const Box g1{0.25, 0.25, 0.2, 0.2}, g2{0.75, 0.75, 0.2, 0.2};
  auto det = [](int cls, double score, Box box) {
    model::Detection d;
    d.cls = cls;
    d.score = score;
    d.box = box;
    return d;
  };
  const double map = metrics::map50({{det(0, 0.9, g1), det(0, 0.8, Box{0.26, 0.25, 0.2, 0.2}), det(0, 0.7, g2)}},
                                    {{{0, -1, g1}, {0, -1, g2}}});
  const double hand = 0.5 * 1.0 + 0.5 * 2.0 / 3.0;
  c.expect(std::abs(map - hand) < 1e-12, "mAP " + fmt(map, 17) + " vs " + fmt(hand, 17));
  c.note("CIDEr-D(self) err " + fmt(worst_cider, 3) + ", BLEU-4(self) " + (bleu_one ? "1" : "!= 1") + ", mAP " +
         fmt(map, 6) + " = " + fmt(hand, 6));
}

// ---------------------------------------------------------------------------

int run_cli(const fs::path& root, const std::string& args, const fs::path& log) {
  const std::string cmd = "GRIT_OUTPUT_ROOT='" + root.string() + "' '" + std::string(GRIT_CLI) + "' " + args + " > '" +
                          log.string() + "' 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

json read_json(const fs::path& p) {
  std::ifstream in(p);
  return json::parse(in);
}

struct DeskRun {
  bool complete = false;
  fs::path root;
};
DeskRun desk;

void desk_pipeline(Checks& c) {
  desk.root = work_dir / "desk";
  fs::remove_all(desk.root);
  fs::create_directories(desk.root);
  const auto& r = desk.root;
  const auto start = Clock::now();
  auto step = [&](const std::string& name, const std::string& args) {
    const auto t0 = Clock::now();
    const int code = run_cli(r, args + " --quiet", r / (name + ".log"));
    std::cerr << "  " << name << ": exit " << code << ", " << fmt(seconds_since(t0), 4) << " s" << std::endl;
    c.expect(code == 0, name + " exited with " + std::to_string(code));
    return code == 0;
  };
  const std::vector<std::string> fusions{"parallel-sigmoid", "grid-only", "region-only"};
  bool ok = step("gen-data", "gen-data --images 512 --val 64") && step("pretrain-detector", "pretrain-detector");
  std::map<std::string, double> val_cider;
  for (const auto& f : fusions) {
    if (!ok) break;
    const std::string ff = " --fusion " + f;
    const std::string xe = (r / ("xe_" + f + ".ckpt")).string(), scst = (r / ("scst_" + f + ".ckpt")).string();
    const std::string caps = (r / ("val_" + f + ".jsonl")).string(), report = (r / ("val_" + f + ".json")).string();
    ok = step("train-xe " + f, "train-xe" + ff + " --init " + (r / "detector.ckpt").string() + " --out " + xe) &&
         step("train-scst " + f, "train-scst" + ff + " --init " + xe + " --out " + scst) &&
         step("caption " + f, "caption" + ff + " --checkpoint " + scst + " --out " + caps) &&
         step("eval " + f, "eval" + ff + " --captions " + caps + " --out " + report);
    if (ok) val_cider[f] = read_json(report)["cider_d"].get<double>();
  }
  // Train-split CIDEr-D of the fused model before and after the self-critical stage.
  double before = NAN, after = NAN;
  for (const char* stage : {"xe", "scst"}) {
    if (!ok) break;
    const std::string ckpt = (r / (std::string(stage) + "_parallel-sigmoid.ckpt")).string();
    const std::string caps = (r / (std::string("train_") + stage + ".jsonl")).string();
    const std::string report = (r / (std::string("train_") + stage + ".json")).string();
    ok = step(std::string("caption train ") + stage, "caption --split train --checkpoint " + ckpt + " --out " + caps) &&
         step(std::string("eval train ") + stage, "eval --split train --captions " + caps + " --out " + report);
    if (ok) (std::string(stage) == "xe" ? before : after) = read_json(report)["cider_d"].get<double>();
  }
  const double minutes = seconds_since(start) / 60.0;
  if (!ok) return;
  desk.complete = true;

  const double map = read_json(r / "detector.ckpt.json")["val_map50"].get<double>();
  const double ps = val_cider["parallel-sigmoid"], go = val_cider["grid-only"], ro = val_cider["region-only"];
  c.expect(minutes < 60.0, "pipeline took " + fmt(minutes) + " min");
  c.expect(map >= 0.6, "held-out mAP@0.5 " + fmt(map));
  c.expect(ps > go && ps > ro, "parallel-sigmoid " + fmt(ps) + " vs grid-only " + fmt(go) + ", region-only " + fmt(ro));
  c.expect(after >= before, "train CIDEr-D fell from " + fmt(before) + " to " + fmt(after));
  c.note(fmt(minutes, 3) + " min, mAP@0.5 " + fmt(map, 3) + ", val CIDEr-D parallel-sigmoid " + fmt(ps, 3) +
         " / grid-only " + fmt(go, 3) + " / region-only " + fmt(ro, 3) + ", train CIDEr-D " + fmt(before, 3) + " -> " +
         fmt(after, 3));
}

void determinism(Checks& c) {
  const auto root = work_dir / "determinism";
  fs::remove_all(root);
  data::generate_dataset(data::SceneSpec{}, 24, 8, root);
  const auto train_split = train::SplitData::from_dataset(data::load_split(root, "train")).head(8);
  const auto val_split = train::SplitData::from_dataset(data::load_split(root, "val"));
  const auto vocab = train::build_vocabulary(train_split, 1);

  ModelConfig mc;
  mc.vocab_size = vocab.size();
  mc.dropout = 0.1;
  mc.beam_size = 3;
  auto config = [](Stage stage) {
    TrainConfig t;
    t.stage = stage;
    t.batch_size = 4;
    t.epochs = 3;
    t.warmup_epochs = 0.0;
    t.eval_each_epoch = true;
    return t;
  };
  auto same_parameters = [](const train::Model& a, const train::Model& b) {
    for (const auto& [path, t] : a.params.entries())
      if (!(t.values() == b.params.at(path).values()).all()) return false;
    return true;
  };

  int traces = 0, resumes = 0;
  for (Stage stage : {Stage::detector_pretrain, Stage::xe, Stage::scst}) {
    const std::string name = to_string(stage);
    auto run = [&](std::uint64_t seed) {
      auto model = std::make_unique<train::Model>(train::Model::create(mc, 9));
      TrainConfig t = config(stage);
      t.seed = seed;
      train::Trainer trainer(*model, vocab, train_split, &val_split, t);
      trainer.run();
      return std::make_pair(trainer.trace().csv(false), std::move(model));
    };
    const auto [trace_a, model_a] = run(5);
    const auto [trace_b, model_b] = run(5);
    const auto [trace_c, model_c] = run(6);
    const bool same = trace_a == trace_b && same_parameters(*model_a, *model_b);
    traces += same;
    c.expect(same, name + ": same seed gives different traces or parameters");
    c.expect(trace_a != trace_c, name + ": a different seed gives the same trace");

    // Stop after four steps, save, reload into a fresh process state, finish.
    auto first = train::Model::create(mc, 9);
    train::Trainer partial(first, vocab, train_split, &val_split, config(stage));
    partial.run(4);
    const auto file = root / (name + ".ckpt");
    ad::save_checkpoint(file.string(), partial.checkpoint());
    auto loaded = train::load_model(ad::load_checkpoint(file.string()));
    loaded.model.config.dropout = mc.dropout;
    train::Trainer resumed(loaded.model, loaded.vocab, train_split, &val_split, config(stage));
    resumed.resume(ad::load_checkpoint(file.string()));
    resumed.run();
    auto straight = train::Model::create(mc, 9);
    train::Trainer whole(straight, vocab, train_split, &val_split, config(stage));
    whole.run();
    const bool exact = resumed.trace().csv(false) == whole.trace().csv(false) && same_parameters(loaded.model, straight);
    resumes += exact;
    c.expect(exact, name + ": resumed run differs from the uninterrupted one");
  }
  c.note("identical traces in " + std::to_string(traces) + "/3 stages, bit-exact resume in " +
         std::to_string(resumes) + "/3 stages");
}

void benchmark_accounting(Checks& c) {
  fs::path root = desk.root, ckpt = desk.root / "scst_parallel-sigmoid.ckpt";
  if (!desk.complete) {
    // Standalone run: a briefly trained model on a small set.
    root = work_dir / "bench";
    fs::remove_all(root);
    fs::create_directories(root);
    const auto cfg = root / "brief.json";
    std::ofstream(cfg) << json{{"detector", {{"max_steps", 20}}}, {"xe", {{"max_steps", 40}}}}.dump();
    const bool ok = run_cli(root, "gen-data --images 64 --val 32 --quiet", root / "gen.log") == 0 &&
                    run_cli(root, "pretrain-detector --quiet --config " + cfg.string(), root / "det.log") == 0 &&
                    run_cli(root, "train-xe --quiet --config " + cfg.string() + " --init " +
                                      (root / "detector.ckpt").string(),
                            root / "xe.log") == 0;
    c.expect(ok, "could not train a model to benchmark");
    if (!ok) return;
    ckpt = root / "xe.ckpt";
  }
  const auto out = root / "bench.json";
  const int code = run_cli(root,
                           "bench --quiet --batch-sizes 1,2,4,8,16,32 --images 32 --repeats 5 --checkpoint " +
                               ckpt.string() + " --out " + out.string(),
                           root / "bench.log");
  c.expect(code == 0, "bench exited with " + std::to_string(code));
  if (code != 0) return;
  const json j = read_json(out);
  const auto schema_error = eval::validate_schema(j, eval::BenchReport::schema());
  c.expect(!schema_error, "schema: " + schema_error.value_or(""));

  // Trend: batching never costs more than 5% per image over batch 1, and some batch size is no slower.
  const auto& rows = j["results"];
  const double unbatched = rows[0]["total_ms_per_image"].get<double>();
  double best_batched = INFINITY, worst_gap = 0.0, worst_rise = 0.0;
  std::string trend;
  for (const auto& r : rows) {
    const double total = r["total_ms_per_image"].get<double>();
    const double phases = r["feature_ms_per_image"].get<double>() + r["caption_ms_per_image"].get<double>();
    const double gap = std::abs(total - phases) / total;
    worst_gap = std::max(worst_gap, gap);
    c.expect(gap <= 0.05, "batch " + r["batch_size"].dump() + ": phases " + fmt(phases) + " vs total " + fmt(total));
    worst_rise = std::max(worst_rise, total / unbatched - 1.0);
    c.expect(total <= unbatched * 1.05,
             "batch " + r["batch_size"].dump() + ": " + fmt(total) + " ms/image vs " + fmt(unbatched) + " at batch 1");
    if (r["batch_size"].get<int>() > 1) best_batched = std::min(best_batched, total);
    trend += (trend.empty() ? "" : ", ") + r["batch_size"].dump() + ":" + fmt(total, 3);
  }
  c.expect(rows[0]["batch_size"] == 1 && best_batched <= unbatched, "no batch size beats batch 1");
  c.note("phase gap <= " + fmt(100.0 * worst_gap, 2) + "%, largest rise over batch 1 " + fmt(100.0 * worst_rise, 2) +
         "%, ms/image by batch " + trend);
}

}  // namespace

int main(int argc, char** argv) {
  struct Criterion {
    int id;
    const char* title;
    void (*run)(Checks&);
  };
  const std::vector<Criterion> criteria{
      {1, "gradient suite", gradient_suite},
      {2, "matcher exactness", matcher_exactness},
      {3, "box-loss oracle", box_loss_oracle},
      {4, "fusion correctness", fusion_correctness},
      {5, "decoding", decoding},
      {6, "metric oracles", metric_oracles},
      {7, "end-to-end desk run", desk_pipeline},
      {8, "determinism and persistence", determinism},
      {9, "benchmark accounting", benchmark_accounting},
  };

  std::set<int> selected;
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    if (arg == "--work" && i + 1 < argc) {
      work_dir = argv[++i];
    } else {
      try {
        selected.insert(std::stoi(arg));
      } catch (const std::exception&) {
        std::cerr << "usage: acceptance [--work DIR] [criterion ...]\n";
        return 2;
      }
    }
  }
  if (work_dir.empty()) work_dir = fs::temp_directory_path() / "grit_acceptance";
  fs::create_directories(work_dir);

  int failures = 0;
  for (const auto& crit : criteria) {
    if (!selected.empty() && !selected.count(crit.id)) continue;
    Checks checks;
    const auto start = Clock::now();
    try {
      crit.run(checks);
    } catch (const std::exception& e) {
      checks.expect(false, std::string("exception: ") + e.what());
    }
    const bool pass = checks.failed == 0;
    failures += !pass;
    std::string detail;
    for (const auto& n : checks.notes) detail += (detail.empty() ? "" : "; ") + n;
    std::cout << (pass ? "PASS" : "FAIL") << " criterion " << crit.id << " (" << crit.title << ", "
              << fmt(seconds_since(start), 3) << " s): " << detail << std::endl;
  }
  return failures == 0 ? 0 : 1;
}
