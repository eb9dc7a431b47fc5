#pragma once

#include <vector>

#include "grit/model/boxes.hpp"

namespace grit::metrics {

/// Average precision of one confidence-ranked list: all-points interpolation
/// over the precision/recall curve. `hits` flags true positives in rank order.
double average_precision(const std::vector<bool>& hits, int positives);

/// mAP at IoU 0.5 over the classes present in `targets`. Detections are
/// ranked by score per class and greedily matched to the unmatched
/// ground-truth box of highest IoU in the same image.
double map50(const std::vector<std::vector<model::Detection>>& predictions,
             const std::vector<model::DetectionTarget>& targets);

}  // namespace grit::metrics
