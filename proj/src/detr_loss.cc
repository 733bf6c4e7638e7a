#include "iod/detr_loss.h"

#include <cmath>
#include <string>
#include <vector>

#include "iod/error.h"

namespace iod {
namespace {

double softplus(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

}  // namespace

FocalTerm sigmoid_focal(double logit, bool positive, const FocalParams& focal) {
  const double p = 1.0 / (1.0 + std::exp(-logit));
  const double g = focal.gamma;
  FocalTerm out;
  if (positive) {
    // -alpha (1-p)^g log p
    const double log_p = -softplus(-logit);
    const double one_minus = 1.0 - p;
    out.value = -focal.alpha * std::pow(one_minus, g) * log_p;
    out.grad = focal.alpha * std::pow(one_minus, g) * (g * p * log_p - one_minus);
  } else {
    // -(1-alpha) p^g log(1-p)
    const double log_q = -softplus(logit);
    out.value = -(1.0 - focal.alpha) * std::pow(p, g) * log_q;
    out.grad = (1.0 - focal.alpha) * std::pow(p, g) * (p - g * (1.0 - p) * log_q);
  }
  return out;
}

DetrLoss detr_loss(const LayerResponses& preds, std::span<const Target> targets,
                   const MatchResult& m, const DetrLossConfig& cfg) {
  preds.validate();
  const std::size_t n = preds.logits.rows();
  const std::size_t classes = preds.logits.cols();
  Require(m.assignment.size() == n && m.num_targets == targets.size(),
          ErrorCode::kInvalidArgument,
          "detection loss: match was computed for a different prediction/target set");

  // Staleness check: the recorded cost must be reproducible from these inputs.
  const Matrix cost = matching_cost(preds, targets, cfg.matching);
  std::vector<bool> seen(targets.size(), false);
  double recomputed = 0.0;
  std::size_t matched = 0;
  for (std::size_t q = 0; q < n; ++q) {
    if (!m.assignment[q]) continue;
    const std::size_t t = *m.assignment[q];
    Require(t < targets.size() && !seen[t], ErrorCode::kInvalidArgument,
            "detection loss: match is not injective over targets");
    seen[t] = true;
    ++matched;
    recomputed += cost(q, t);
  }
  Require(matched == targets.size(), ErrorCode::kInvalidArgument,
          "detection loss: match leaves targets unassigned");
  Require(std::abs(recomputed - m.total_cost) <=
              1e-9 * std::max(1.0, std::abs(recomputed)),
          ErrorCode::kInvalidArgument,
          "detection loss: stale match (cost no longer reproducible)");

  DetrLoss out;
  out.logit_grad = Matrix(n, classes);
  out.box_grad = Matrix(n, 4);
  for (std::size_t q = 0; q < n; ++q) {
    const std::optional<std::size_t> t = m.assignment[q];
    const double weight = (t && targets[*t].is_pseudo) ? cfg.pseudo_weight : 1.0;
    const int positive_class = t ? targets[*t].class_id : -1;

    for (std::size_t c = 0; c < classes; ++c) {
      const FocalTerm f = sigmoid_focal(preds.logits(q, c),
                                        static_cast<int>(c) == positive_class, cfg.focal);
      out.align += weight * cfg.class_weight * f.value;
      out.logit_grad(q, c) = weight * cfg.class_weight * f.grad;
    }
    if (t) {
      const BoxLoss b = box_regression_loss(targets[*t].box, preds.boxes[q], cfg.box);
      out.reg += weight * b.value;
      for (int k = 0; k < 4; ++k) out.box_grad(q, k) = weight * b.grad[k];
    }
  }
  out.loss = out.align + out.reg;
  return out;
}

LossBreakdown total_loss(double detr, double std_term, double crd,
                         double lambda1) {
  Require(std::isfinite(detr) && std::isfinite(std_term) && std::isfinite(crd) &&
              std::isfinite(lambda1),
          ErrorCode::kInvalidArgument, "total loss: non-finite component");
  LossBreakdown out;
  out.detr = detr;
  out.std_loss = std_term;
  out.crd = crd;
  out.lambda1 = lambda1;
  out.total = detr + lambda1 * std_term + crd;
  return out;
}

}  // namespace iod
