#ifndef IOD_TOPOLOGY_H_
#define IOD_TOPOLOGY_H_

#include <array>
#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "iod/matrix.h"
#include "iod/records.h"
#include "iod/scale.h"

namespace iod {

// Node id used for the background anchor inside a RelationTopology.
inline constexpr int kBackgroundNode = -1;

// Pseudo-label attached to one query: old class plus teacher confidence.
struct QueryLabel {
  int class_id = 0;
  double score = 0.0;
};
using QueryLabels = std::vector<std::optional<QueryLabel>>;

struct Prototype {
  int class_id = 0;
  ScaleBucket bucket = ScaleBucket::kSmall;
  std::vector<double> vector;
  std::size_t support = 0;
};

struct ExcludedClass {
  int class_id = 0;
  ScaleBucket bucket = ScaleBucket::kSmall;
};

// Prototypes ordered by (bucket, class id). Classes whose scores sum to zero
// inside a bucket cannot be normalized and are reported in `excluded`.
struct PrototypeSet {
  std::vector<Prototype> prototypes;
  std::vector<ExcludedClass> excluded;

  std::vector<Prototype> in_bucket(ScaleBucket bucket) const;
};

// Confidence-weighted class centroids per scale bucket:
//   p_c^k = sum_{i in bucket k, y_i = c} (s_i / sum_j s_j) f_i
// with the normalizer running over class-c queries of bucket k. Unlabeled
// queries (nullopt) do not contribute.
PrototypeSet aggregate_prototypes(const QueryBatch& batch,
                                  const ScalePartition& part,
                                  const QueryLabels& labels);
PrototypeSet aggregate_prototypes(const Matrix& features,
                                  const ScalePartition& part,
                                  const QueryLabels& labels);

struct BackgroundAnchor {
  std::vector<double> vector;
};

// Global average pool over the spatial dimensions of an H x W x D map.
BackgroundAnchor background_anchor(const FeatureMap& image_features);

struct RelationTopology {
  ScaleBucket bucket = ScaleBucket::kSmall;
  std::vector<int> node_ids;  // ascending class ids, then kBackgroundNode
  Matrix nodes;               // one row per node
  Matrix distances;           // M: pairwise Euclidean distances
  Matrix affinity;            // P: row softmax of -M / temperature
  double temperature = 1.0;
};

// Builds the relation topology of one bucket. Returns nullopt (degenerate)
// when fewer than two class prototypes are present; the anchor alone never
// makes a bucket non-degenerate. All prototypes must share one bucket.
std::optional<RelationTopology> relation_topology(
    std::span<const Prototype> protos,
    const std::optional<BackgroundAnchor>& anchor, double temperature);

// tau^2 * sum over buckets and rows of KL(P_teacher,u || P_student,u).
// Topologies are matched by bucket and must carry identical node ids.
double std_loss(std::span<const RelationTopology> teacher,
                std::span<const RelationTopology> student);

struct StdConfig {
  double temperature = 1.0;
  bool include_background_anchor = true;
  ScaleConfig scale;

  void validate() const;
};

struct StdResult {
  double loss = 0.0;
  Matrix grad;  // d loss / d student features, N x D
  std::array<double, 3> bucket_loss{};
  std::array<bool, 3> bucket_active{};
};

// Full scale-decoupled topology loss between teacher and student features
// that share one pseudo-label assignment and one scale partition. The
// teacher side and the background anchor are constants.
StdResult std_loss_and_grad(const QueryBatch& teacher,
                            const QueryBatch& student,
                            const QueryLabels& labels,
                            const ScalePartition& part, const StdConfig& cfg);

}  // namespace iod

#endif  // IOD_TOPOLOGY_H_
