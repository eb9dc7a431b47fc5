#pragma once

#include <vector>

#include "grit/autodiff/ops.hpp"

namespace grit::model {

/// Normalized (cx, cy, w, h).
struct Box {
  double cx = 0.5, cy = 0.5, w = 0.0, h = 0.0;

  double x0() const { return cx - 0.5 * w; }
  double y0() const { return cy - 0.5 * h; }
  double x1() const { return cx + 0.5 * w; }
  double y1() const { return cy + 0.5 * h; }
  double area() const { return w * h; }
  static Box from_corners(double x0, double y0, double x1, double y1) {
    return {0.5 * (x0 + x1), 0.5 * (y0 + y1), x1 - x0, y1 - y0};
  }
  bool valid() const;
};

/// Lower clamp for areas in IoU denominators, so zero-area boxes stay finite.
inline constexpr double kMinBoxArea = 1e-8;

struct ObjectLabel {
  int cls = 0;
  int attribute = -1;  // -1 when unlabeled
  Box box;
};
using DetectionTarget = std::vector<ObjectLabel>;

struct Detection {
  int cls = 0;
  int attribute = 0;
  double score = 0.0;
  Box box;
};

struct BoxLossWeights {
  double l1 = 5.0;
  double iou = 2.0;
};

double iou(const Box& a, const Box& b);
/// 1 - GIoU, in [0, 2].
double giou_loss(const Box& a, const Box& b);
double box_l1(const Box& a, const Box& b);
double box_loss(const Box& a, const Box& b, const BoxLossWeights& w = {});

/// Row-wise losses for (M, 4) tensors of (cx, cy, w, h); result shape (M).
template <typename Scalar>
ad::Tensor<Scalar> giou_loss(const ad::Tensor<Scalar>& a, const ad::Tensor<Scalar>& b);
template <typename Scalar>
ad::Tensor<Scalar> box_loss(const ad::Tensor<Scalar>& a, const ad::Tensor<Scalar>& b, const BoxLossWeights& w = {});

/// cost is rows x cols, row-major, rows <= cols. Returns the column assigned to
/// each row, minimizing the total cost.
std::vector<int> hungarian(const std::vector<double>& cost, int rows, int cols);

}  // namespace grit::model
