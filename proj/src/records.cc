#include "iod/records.h"

#include <unordered_set>

#include "iod/error.h"

namespace iod {

void QueryBatch::validate() const {
  Require(features.rows() == detections.size(), ErrorCode::kShapeMismatch,
          "query batch: feature rows (" + std::to_string(features.rows()) +
              ") != detections (" + std::to_string(detections.size()) + ")");
  std::unordered_set<std::size_t> seen;
  for (const Detection& d : detections) {
    Require(d.score >= 0.0 && d.score <= 1.0, ErrorCode::kInvalidArgument,
            "query batch: detection score outside [0, 1]");
    Require(seen.insert(d.query_index).second, ErrorCode::kInvalidArgument,
            "query batch: duplicate query_index " +
                std::to_string(d.query_index));
  }
  if (image_features) {
    Require(image_features->depth == features.cols() || features.rows() == 0,
            ErrorCode::kShapeMismatch,
            "query batch: image feature depth differs from query dimension");
  }
}

}  // namespace iod
