#ifndef IOD_MATRIX_H_
#define IOD_MATRIX_H_

#include <cstddef>
#include <span>
#include <vector>

namespace iod {

// Dense row-major matrix of doubles. Small by construction: query features,
// logits, and cost matrices in this library rarely exceed a few hundred rows.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), values_(rows * cols, fill) {}

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  bool empty() const { return values_.empty(); }

  double& operator()(std::size_t r, std::size_t c) {
    return values_[r * cols_ + c];
  }
  double operator()(std::size_t r, std::size_t c) const {
    return values_[r * cols_ + c];
  }

  std::span<double> row(std::size_t r) {
    return {values_.data() + r * cols_, cols_};
  }
  std::span<const double> row(std::size_t r) const {
    return {values_.data() + r * cols_, cols_};
  }

  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }

  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> values_;
};

// H x W x D feature tensor, stored (y, x, d) row-major.
struct FeatureMap {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t depth = 0;
  std::vector<double> values;

  FeatureMap() = default;
  FeatureMap(std::size_t h, std::size_t w, std::size_t d, double fill = 0.0)
      : height(h), width(w), depth(d), values(h * w * d, fill) {}

  double& at(std::size_t y, std::size_t x, std::size_t d) {
    return values[(y * width + x) * depth + d];
  }
  double at(std::size_t y, std::size_t x, std::size_t d) const {
    return values[(y * width + x) * depth + d];
  }
};

}  // namespace iod

#endif  // IOD_MATRIX_H_
