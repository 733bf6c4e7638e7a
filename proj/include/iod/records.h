#ifndef IOD_RECORDS_H_
#define IOD_RECORDS_H_

#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

#include "iod/geometry.h"
#include "iod/matrix.h"

namespace iod {

using ImageId = std::int64_t;

// One query's prediction: box, top score in [0, 1], class, and the query slot
// that produced it.
struct Detection {
  BBox bbox;
  double score = 0.0;
  int class_id = 0;
  std::size_t query_index = 0;
};

// Detection tagged with its image, the unit of the detection stream format.
struct ImageDetection {
  ImageId image_id = 0;
  BBox bbox;
  double score = 0.0;
  int class_id = 0;
};

struct Annotation {
  ImageId image_id = 0;
  BBox bbox;
  int class_id = 0;
  bool is_pseudo = false;
  // Teacher confidence, present on pseudo-labels only.
  std::optional<double> score;
  std::int64_t id = 0;
};

// Decoder output for one image or one batch: N x D query embeddings aligned
// by row with N detections, plus an optional global image feature map.
struct QueryBatch {
  Matrix features;
  std::vector<Detection> detections;
  std::optional<FeatureMap> image_features;

  // Throws on misaligned rows or duplicate query indices.
  void validate() const;
};

}  // namespace iod

#endif  // IOD_RECORDS_H_
