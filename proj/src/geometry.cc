#include "iod/geometry.h"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "iod/error.h"

namespace iod {

BBox::BBox(double x, double y, double w, double h) : x_(x), y_(y), w_(w), h_(h) {
  if (!std::isfinite(x) || !std::isfinite(y) || !std::isfinite(w) ||
      !std::isfinite(h) || w <= 0.0 || h <= 0.0) {
    std::ostringstream msg;
    msg << "degenerate box (x=" << x << ", y=" << y << ", w=" << w
        << ", h=" << h << "): width and height must be finite and positive";
    throw Error(ErrorCode::kInvalidArgument, msg.str());
  }
}

double area(const BBox& b) { return b.w() * b.h(); }

namespace {

double intersection(const BBox& a, const BBox& b) {
  const double iw = std::min(a.right(), b.right()) - std::max(a.x(), b.x());
  const double ih = std::min(a.bottom(), b.bottom()) - std::max(a.y(), b.y());
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  return iw * ih;
}

}  // namespace

double iou(const BBox& a, const BBox& b) {
  const double inter = intersection(a, b);
  if (inter == 0.0) return 0.0;
  return inter / (area(a) + area(b) - inter);
}

double generalized_iou(const BBox& a, const BBox& b) {
  const double inter = intersection(a, b);
  const double uni = area(a) + area(b) - inter;
  const double cw = std::max(a.right(), b.right()) - std::min(a.x(), b.x());
  const double ch = std::max(a.bottom(), b.bottom()) - std::min(a.y(), b.y());
  const double enclosing = cw * ch;
  return inter / uni - (enclosing - uni) / enclosing;
}

NormBox normalize(const BBox& b, double image_width, double image_height) {
  Require(image_width > 0.0 && image_height > 0.0, ErrorCode::kInvalidArgument,
          "image size must be positive");
  return {(b.x() + 0.5 * b.w()) / image_width,
          (b.y() + 0.5 * b.h()) / image_height, b.w() / image_width,
          b.h() / image_height};
}

BBox denormalize(const NormBox& b, double image_width, double image_height) {
  const double w = b.w * image_width;
  const double h = b.h * image_height;
  return BBox(b.cx * image_width - 0.5 * w, b.cy * image_height - 0.5 * h, w, h);
}

}  // namespace iod
