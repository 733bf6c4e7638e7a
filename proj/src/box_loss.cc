#include "iod/box_loss.h"

#include <algorithm>
#include <cmath>

#include "iod/error.h"

namespace iod {
namespace {

struct Corners {
  double x1, y1, x2, y2;
};

Corners corners(const NormBox& b) {
  Require(std::isfinite(b.cx) && std::isfinite(b.cy) && std::isfinite(b.w) &&
              std::isfinite(b.h) && b.w > 0.0 && b.h > 0.0,
          ErrorCode::kInvalidArgument,
          "regression box must have finite, positive width and height");
  return {b.cx - 0.5 * b.w, b.cy - 0.5 * b.h, b.cx + 0.5 * b.w,
          b.cy + 0.5 * b.h};
}

double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

}  // namespace

double generalized_iou(const NormBox& a, const NormBox& b) {
  const Corners p = corners(a);
  const Corners q = corners(b);
  const double iw = std::max(0.0, std::min(p.x2, q.x2) - std::max(p.x1, q.x1));
  const double ih = std::max(0.0, std::min(p.y2, q.y2) - std::max(p.y1, q.y1));
  const double inter = iw * ih;
  const double uni = a.w * a.h + b.w * b.h - inter;
  const double enclosing = (std::max(p.x2, q.x2) - std::min(p.x1, q.x1)) *
                           (std::max(p.y2, q.y2) - std::min(p.y1, q.y1));
  return inter / uni - (enclosing - uni) / enclosing;
}

BoxLoss box_regression_loss(const NormBox& target, const NormBox& pred,
                            const BoxLossWeights& weights) {
  const Corners t = corners(target);
  const Corners s = corners(pred);
  BoxLoss out;

  for (int k = 0; k < 4; ++k) {
    const double diff = pred[k] - target[k];
    out.l1 += std::abs(diff);
    out.grad[k] = weights.l1 * sign(diff);
  }

  // Intersection extents and their derivatives with respect to the predicted
  // corners (x1, y1, x2, y2).
  const double ix1 = std::max(s.x1, t.x1), ix2 = std::min(s.x2, t.x2);
  const double iy1 = std::max(s.y1, t.y1), iy2 = std::min(s.y2, t.y2);
  const double iw = ix2 - ix1, ih = iy2 - iy1;
  const bool overlap = iw > 0.0 && ih > 0.0;
  const double inter = overlap ? iw * ih : 0.0;

  const double sw = s.x2 - s.x1, sh = s.y2 - s.y1;
  const double uni = sw * sh + (t.x2 - t.x1) * (t.y2 - t.y1) - inter;

  const double cw = std::max(s.x2, t.x2) - std::min(s.x1, t.x1);
  const double ch = std::max(s.y2, t.y2) - std::min(s.y1, t.y1);
  const double enc = cw * ch;

  out.giou = inter / uni - (enc - uni) / enc;
  out.value = weights.l1 * out.l1 + weights.giou * (1.0 - out.giou);

  // d inter / d corner
  std::array<double, 4> d_inter{};
  if (overlap) {
    d_inter[0] = s.x1 > t.x1 ? -ih : 0.0;
    d_inter[2] = s.x2 < t.x2 ? ih : 0.0;
    d_inter[1] = s.y1 > t.y1 ? -iw : 0.0;
    d_inter[3] = s.y2 < t.y2 ? iw : 0.0;
  }
  // d area(pred) / d corner
  const std::array<double, 4> d_area{-sh, -sw, sh, sw};
  // d enclosing / d corner
  const std::array<double, 4> d_enc{s.x1 < t.x1 ? -ch : 0.0,
                                    s.y1 < t.y1 ? -cw : 0.0,
                                    s.x2 > t.x2 ? ch : 0.0,
                                    s.y2 > t.y2 ? cw : 0.0};

  // giou = I/U - 1 + U/E
  std::array<double, 4> d_giou{};
  for (int k = 0; k < 4; ++k) {
    const double d_uni = d_area[k] - d_inter[k];
    d_giou[k] = d_inter[k] / uni - inter * d_uni / (uni * uni) + d_uni / enc -
                uni * d_enc[k] / (enc * enc);
  }
  // Corners (x1, y1, x2, y2) -> center form (cx, cy, w, h).
  const double gx1 = -weights.giou * d_giou[0], gy1 = -weights.giou * d_giou[1];
  const double gx2 = -weights.giou * d_giou[2], gy2 = -weights.giou * d_giou[3];
  out.grad[0] += gx1 + gx2;
  out.grad[1] += gy1 + gy2;
  out.grad[2] += 0.5 * (gx2 - gx1);
  out.grad[3] += 0.5 * (gy2 - gy1);
  return out;
}

}  // namespace iod
