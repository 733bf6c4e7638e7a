#ifndef IOD_MATCHING_H_
#define IOD_MATCHING_H_

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "iod/crd.h"
#include "iod/geometry.h"
#include "iod/matrix.h"
#include "iod/records.h"

namespace iod {

struct FocalParams {
  double alpha = 0.25;
  double gamma = 2.0;
};

struct MatchCostConfig {
  double class_weight = 2.0;
  double l1_weight = 5.0;
  double giou_weight = 2.0;
  FocalParams focal;
};

// Training target in normalized center form.
struct Target {
  int class_id = 0;
  NormBox box;
  bool is_pseudo = false;
};

// Converts annotations of one image to training targets.
std::vector<Target> to_targets(std::span<const Annotation> annotations,
                               double image_width, double image_height);

struct MatchResult {
  // assignment[query] = target index, or nullopt for the no-object symbol.
  std::vector<std::optional<std::size_t>> assignment;
  double total_cost = 0.0;
  std::size_t num_targets = 0;
};

// Minimum-cost assignment of every column (target) of an N x T cost matrix to
// a distinct row (query), T <= N. Among optimal assignments the one whose
// per-query target sequence is lexicographically smallest is returned, with
// "unmatched" ordered after every target index.
std::vector<std::optional<std::size_t>> solve_assignment(const Matrix& cost);

// Focal-style alignment cost of predicting `logit` for a positive target.
double focal_alignment_cost(double logit, const FocalParams& focal);

// N x T pairwise matching cost: class alignment + L1 + (1 - GIoU).
Matrix matching_cost(const LayerResponses& preds, std::span<const Target> targets,
                     const MatchCostConfig& cfg);

MatchResult match(const LayerResponses& preds, std::span<const Target> targets,
                  const MatchCostConfig& cfg);

// Keeps a fixed assignment but recomputes its cost for new predictions.
MatchResult rescore(const LayerResponses& preds, std::span<const Target> targets,
                    const MatchResult& m, const MatchCostConfig& cfg);

}  // namespace iod

#endif  // IOD_MATCHING_H_
