#ifndef IOD_DETR_LOSS_H_
#define IOD_DETR_LOSS_H_

#include <span>

#include "iod/box_loss.h"
#include "iod/crd.h"
#include "iod/matching.h"
#include "iod/matrix.h"

namespace iod {

struct DetrLossConfig {
  MatchCostConfig matching;
  FocalParams focal;
  double class_weight = 1.0;
  BoxLossWeights box{5.0, 2.0};
  // Loss multiplier applied to queries matched to pseudo-label targets.
  double pseudo_weight = 1.0;
};

struct DetrLoss {
  double loss = 0.0;
  double align = 0.0;
  double reg = 0.0;
  Matrix logit_grad;  // N x C
  Matrix box_grad;    // N x 4
};

// Sigmoid focal loss of one logit against a binary target, and its
// derivative with respect to the logit.
struct FocalTerm {
  double value = 0.0;
  double grad = 0.0;
};
FocalTerm sigmoid_focal(double logit, bool positive, const FocalParams& focal);

// Set-prediction loss under a precomputed matching: focal alignment on every
// query (all-zero target for unmatched queries) plus L1 + GIoU regression on
// matched queries. Throws if `m` was not produced from these preds/targets.
DetrLoss detr_loss(const LayerResponses& preds, std::span<const Target> targets,
                   const MatchResult& m, const DetrLossConfig& cfg);

struct LossBreakdown {
  double detr = 0.0;
  double std_loss = 0.0;
  double crd = 0.0;
  double crd_align = 0.0;
  double crd_reg = 0.0;
  double lambda1 = 3.0;
  double total = 0.0;
};

// total = detr + lambda1 * std_term + crd.
LossBreakdown total_loss(double detr, double std_term, double crd,
                         double lambda1 = 3.0);

}  // namespace iod

#endif  // IOD_DETR_LOSS_H_
