#ifndef IOD_BOX_LOSS_H_
#define IOD_BOX_LOSS_H_

#include <array>

#include "iod/geometry.h"

namespace iod {

struct BoxLossWeights {
  double l1 = 5.0;
  double giou = 2.0;
};

struct BoxLoss {
  double value = 0.0;
  double l1 = 0.0;
  double giou = 0.0;  // the GIoU itself, not 1 - GIoU
  std::array<double, 4> grad{};  // d value / d pred (cx, cy, w, h)
};

// GIoU between two normalized center-form boxes. Throws when either box has a
// non-positive extent.
double generalized_iou(const NormBox& a, const NormBox& b);

// weights.l1 * |pred - target|_1 + weights.giou * (1 - GIoU(target, pred)),
// with the analytic (sub)gradient with respect to pred.
BoxLoss box_regression_loss(const NormBox& target, const NormBox& pred,
                            const BoxLossWeights& weights);

}  // namespace iod

#endif  // IOD_BOX_LOSS_H_
