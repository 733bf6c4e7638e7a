#include "iod/scale.h"

#include <cmath>

#include "iod/error.h"

namespace iod {

void ScaleConfig::validate() const {
  Require(std::isfinite(tau_s) && std::isfinite(tau_m) && tau_s > 0.0 &&
              tau_s < tau_m,
          ErrorCode::kInvalidArgument, "scale config requires 0 < tau_s < tau_m");
}

std::string_view to_string(ScaleBucket bucket) {
  switch (bucket) {
    case ScaleBucket::kSmall:
      return "small";
    case ScaleBucket::kMedium:
      return "medium";
    case ScaleBucket::kLarge:
      return "large";
  }
  return "unknown";
}

ScaleBucket bucket_of(double area, const ScaleConfig& cfg) {
  if (area < cfg.tau_s) return ScaleBucket::kSmall;
  if (area < cfg.tau_m) return ScaleBucket::kMedium;
  return ScaleBucket::kLarge;
}

ScalePartition partition(std::span<const BBox> boxes, const ScaleConfig& cfg) {
  cfg.validate();
  ScalePartition out;
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    out[bucket_of(area(boxes[i]), cfg)].push_back(i);
  }
  return out;
}

ScalePartition partition(const QueryBatch& batch, const ScaleConfig& cfg) {
  batch.validate();
  Require(!batch.detections.empty(), ErrorCode::kInvalidArgument,
          "partition: empty query batch");
  std::vector<BBox> boxes;
  boxes.reserve(batch.detections.size());
  for (const Detection& d : batch.detections) boxes.push_back(d.bbox);
  return partition(boxes, cfg);
}

}  // namespace iod
