#ifndef IOD_GEOMETRY_H_
#define IOD_GEOMETRY_H_

namespace iod {

// Axis-aligned box in absolute pixels, top-left anchored: (x, y, w, h).
// Construction rejects non-finite values and non-positive extents.
class BBox {
 public:
  BBox(double x, double y, double w, double h);

  double x() const { return x_; }
  double y() const { return y_; }
  double w() const { return w_; }
  double h() const { return h_; }
  double right() const { return x_ + w_; }
  double bottom() const { return y_ + h_; }

  bool operator==(const BBox&) const = default;

 private:
  double x_;
  double y_;
  double w_;
  double h_;
};

// Box in normalized center form (cx, cy, w, h), each divided by the image
// size. Used only inside regression losses; not validated on construction
// because raw predictions may leave the valid region.
struct NormBox {
  double cx = 0.0;
  double cy = 0.0;
  double w = 0.0;
  double h = 0.0;

  double& operator[](int i) { return i == 0 ? cx : i == 1 ? cy : i == 2 ? w : h; }
  double operator[](int i) const {
    return i == 0 ? cx : i == 1 ? cy : i == 2 ? w : h;
  }
  bool operator==(const NormBox&) const = default;
};

double area(const BBox& b);
double iou(const BBox& a, const BBox& b);
double generalized_iou(const BBox& a, const BBox& b);

NormBox normalize(const BBox& b, double image_width, double image_height);
BBox denormalize(const NormBox& b, double image_width, double image_height);

}  // namespace iod

#endif  // IOD_GEOMETRY_H_
