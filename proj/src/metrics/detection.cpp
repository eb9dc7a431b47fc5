#include "grit/metrics/detection.hpp"

#include <algorithm>
#include <set>
#include <stdexcept>
#include <tuple>

namespace grit::metrics {

double average_precision(const std::vector<bool>& hits, int positives) {
  if (positives <= 0) return 0.0;
  std::vector<double> recall{0.0}, precision{0.0};
  int tp = 0;
  for (std::size_t i = 0; i < hits.size(); ++i) {
    if (hits[i]) ++tp;
    recall.push_back(static_cast<double>(tp) / positives);
    precision.push_back(static_cast<double>(tp) / static_cast<double>(i + 1));
  }
  recall.push_back(1.0);
  precision.push_back(0.0);
  for (std::size_t i = precision.size() - 1; i > 0; --i) precision[i - 1] = std::max(precision[i - 1], precision[i]);
  double ap = 0.0;
  for (std::size_t i = 1; i < recall.size(); ++i) ap += (recall[i] - recall[i - 1]) * precision[i];
  return ap;
}

double map50(const std::vector<std::vector<model::Detection>>& predictions,
             const std::vector<model::DetectionTarget>& targets) {
  if (predictions.size() != targets.size()) throw std::invalid_argument("map50: one prediction list per image required");
  std::set<int> classes;
  for (const auto& t : targets)
    for (const auto& o : t) classes.insert(o.cls);
  if (classes.empty()) return 0.0;

  double total = 0.0;
  for (int c : classes) {
    // (score, image, detection index), best first with a stable order on ties.
    std::vector<std::tuple<double, std::size_t, std::size_t>> ranked;
    for (std::size_t img = 0; img < predictions.size(); ++img)
      for (std::size_t k = 0; k < predictions[img].size(); ++k)
        if (predictions[img][k].cls == c) ranked.emplace_back(predictions[img][k].score, img, k);
    std::stable_sort(ranked.begin(), ranked.end(),
                     [](const auto& a, const auto& b) { return std::get<0>(a) > std::get<0>(b); });

    int positives = 0;
    std::vector<std::vector<char>> used(targets.size());
    for (std::size_t img = 0; img < targets.size(); ++img) {
      used[img].assign(targets[img].size(), 0);
      for (const auto& o : targets[img]) positives += o.cls == c;
    }
    std::vector<bool> hits;
    for (const auto& [score, img, k] : ranked) {
      const auto& det = predictions[img][k];
      double best = 0.5;
      int match = -1;
      for (std::size_t g = 0; g < targets[img].size(); ++g) {
        const auto& o = targets[img][g];
        if (o.cls != c || used[img][g]) continue;
        const double v = model::iou(det.box, o.box);
        if (v >= best) {
          best = v;
          match = static_cast<int>(g);
        }
      }
      if (match >= 0) used[img][static_cast<std::size_t>(match)] = 1;
      hits.push_back(match >= 0);
    }
    total += average_precision(hits, positives);
  }
  return total / static_cast<double>(classes.size());
}

}  // namespace grit::metrics
