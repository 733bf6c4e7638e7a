#ifndef IOD_SCALE_H_
#define IOD_SCALE_H_

#include <array>
#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

#include "iod/geometry.h"
#include "iod/records.h"

namespace iod {

// Area boundaries in pixels^2. The defaults coincide with the COCO
// small/medium/large ranges (32^2, 96^2).
struct ScaleConfig {
  double tau_s = 1024.0;
  double tau_m = 9216.0;

  void validate() const;
};

enum class ScaleBucket { kSmall = 0, kMedium = 1, kLarge = 2 };

inline constexpr std::array<ScaleBucket, 3> kAllBuckets = {
    ScaleBucket::kSmall, ScaleBucket::kMedium, ScaleBucket::kLarge};

std::string_view to_string(ScaleBucket bucket);

// Small: area < tau_s; Medium: tau_s <= area < tau_m; Large: area >= tau_m.
ScaleBucket bucket_of(double area, const ScaleConfig& cfg);

// Query indices (row positions in a QueryBatch) per bucket, ascending.
struct ScalePartition {
  std::array<std::vector<std::size_t>, 3> indices;

  const std::vector<std::size_t>& operator[](ScaleBucket b) const {
    return indices[static_cast<std::size_t>(b)];
  }
  std::vector<std::size_t>& operator[](ScaleBucket b) {
    return indices[static_cast<std::size_t>(b)];
  }
  std::size_t total() const {
    return indices[0].size() + indices[1].size() + indices[2].size();
  }
};

// Partitions by the boxes of the batch's detections (the teacher's
// predictions during distillation).
ScalePartition partition(const QueryBatch& batch, const ScaleConfig& cfg);

// Partitions by an explicit box list, e.g. ground truth when the caller asks.
ScalePartition partition(std::span<const BBox> boxes, const ScaleConfig& cfg);

}  // namespace iod

#endif  // IOD_SCALE_H_
