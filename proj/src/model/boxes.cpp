#include "grit/model/boxes.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace grit::model {

bool Box::valid() const {
  auto in_unit = [](double v) { return std::isfinite(v) && v >= 0.0 && v <= 1.0; };
  return in_unit(cx) && in_unit(cy) && in_unit(w) && in_unit(h) && w > 0.0 && h > 0.0;
}

namespace {
struct Overlap {
  double inter, uni, enclose;
};

Overlap overlap(const Box& a, const Box& b) {
  const double iw = std::max(0.0, std::min(a.x1(), b.x1()) - std::max(a.x0(), b.x0()));
  const double ih = std::max(0.0, std::min(a.y1(), b.y1()) - std::max(a.y0(), b.y0()));
  const double inter = iw * ih;
  // Corner-based areas, so that identical boxes give inter == uni exactly.
  const double area_a = (a.x1() - a.x0()) * (a.y1() - a.y0()), area_b = (b.x1() - b.x0()) * (b.y1() - b.y0());
  const double uni = std::max(std::max(area_a, kMinBoxArea) + std::max(area_b, kMinBoxArea) - inter, kMinBoxArea);
  const double ew = std::max(a.x1(), b.x1()) - std::min(a.x0(), b.x0());
  const double eh = std::max(a.y1(), b.y1()) - std::min(a.y0(), b.y0());
  return {inter, uni, std::max(ew * eh, kMinBoxArea)};
}
}  // namespace

double iou(const Box& a, const Box& b) {
  const auto o = overlap(a, b);
  return o.inter / o.uni;
}

double giou_loss(const Box& a, const Box& b) {
  const auto o = overlap(a, b);
  return 1.0 - (o.inter / o.uni - (o.enclose - o.uni) / o.enclose);
}

double box_l1(const Box& a, const Box& b) {
  return std::abs(a.cx - b.cx) + std::abs(a.cy - b.cy) + std::abs(a.w - b.w) + std::abs(a.h - b.h);
}

double box_loss(const Box& a, const Box& b, const BoxLossWeights& w) {
  return w.l1 * box_l1(a, b) + w.iou * giou_loss(a, b);
}

template <typename Scalar>
ad::Tensor<Scalar> giou_loss(const ad::Tensor<Scalar>& a, const ad::Tensor<Scalar>& b) {
  using ad::maximum;
  using ad::minimum;
  if (a.rank() != 2 || a.dim(1) != 4 || a.shape() != b.shape()) throw std::invalid_argument("giou_loss expects (M, 4) pairs");
  auto col = [](const ad::Tensor<Scalar>& t, int c) { return ad::sum_last(ad::slice(t, 1, c, 1)); };
  const Scalar half(0.5), floor(kMinBoxArea);
  auto corners = [&](const ad::Tensor<Scalar>& t) {
    auto cx = col(t, 0), cy = col(t, 1), w = col(t, 2), h = col(t, 3);
    auto x0 = cx - w * half, y0 = cy - h * half, x1 = cx + w * half, y1 = cy + h * half;
    return std::array<ad::Tensor<Scalar>, 6>{x0, y0, x1, y1, x1 - x0, y1 - y0};
  };
  const auto A = corners(a);
  const auto B = corners(b);
  auto iw = ad::clamp_min(minimum(A[2], B[2]) - maximum(A[0], B[0]), Scalar(0));
  auto ih = ad::clamp_min(minimum(A[3], B[3]) - maximum(A[1], B[1]), Scalar(0));
  auto inter = iw * ih;
  auto area_a = ad::clamp_min(A[4] * A[5], floor);
  auto area_b = ad::clamp_min(B[4] * B[5], floor);
  auto uni = ad::clamp_min(area_a + area_b - inter, floor);
  auto ew = maximum(A[2], B[2]) - minimum(A[0], B[0]);
  auto eh = maximum(A[3], B[3]) - minimum(A[1], B[1]);
  auto enclose = ad::clamp_min(ew * eh, floor);
  return Scalar(1) - (inter / uni - (enclose - uni) / enclose);
}

template <typename Scalar>
ad::Tensor<Scalar> box_loss(const ad::Tensor<Scalar>& a, const ad::Tensor<Scalar>& b, const BoxLossWeights& w) {
  auto l1 = ad::sum_last(ad::abs(a - b));
  return l1 * static_cast<Scalar>(w.l1) + giou_loss(a, b) * static_cast<Scalar>(w.iou);
}

std::vector<int> hungarian(const std::vector<double>& cost, int rows, int cols) {
  if (rows > cols) throw std::invalid_argument("hungarian: more rows than columns");
  if (static_cast<int>(cost.size()) != rows * cols) throw std::invalid_argument("hungarian: cost size mismatch");
  // Shortest augmenting paths with row/column potentials; 1-based with a virtual column 0.
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(rows + 1, 0.0), v(cols + 1, 0.0);
  std::vector<int> p(cols + 1, 0), way(cols + 1, 0);
  for (int i = 1; i <= rows; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(cols + 1, inf);
    std::vector<char> used(cols + 1, 0);
    do {
      used[j0] = 1;
      const int i0 = p[j0];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= cols; ++j) {
        if (used[j]) continue;
        const double cur = cost[(i0 - 1) * cols + (j - 1)] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= cols; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<int> assignment(rows, -1);
  for (int j = 1; j <= cols; ++j) {
    if (p[j] != 0) assignment[p[j] - 1] = j - 1;
  }
  return assignment;
}

template ad::Tensor<double> giou_loss(const ad::Tensor<double>&, const ad::Tensor<double>&);
template ad::Tensor<float> giou_loss(const ad::Tensor<float>&, const ad::Tensor<float>&);
template ad::Tensor<double> box_loss(const ad::Tensor<double>&, const ad::Tensor<double>&, const BoxLossWeights&);
template ad::Tensor<float> box_loss(const ad::Tensor<float>&, const ad::Tensor<float>&, const BoxLossWeights&);

}  // namespace grit::model
