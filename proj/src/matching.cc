#include "iod/matching.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "iod/box_loss.h"
#include "iod/error.h"

namespace iod {
namespace {

double softplus(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

// Dual solution of the rectangular assignment problem with targets as rows.
struct HungarianState {
  std::vector<double> u;  // row potentials, 1-based
  std::vector<double> v;  // column potentials, 1-based
  std::vector<std::size_t> row_of_col;  // 0 = free column
};

// Shortest augmenting path Hungarian method, O(T^2 N).
HungarianState hungarian(const Matrix& cost /* N x T */) {
  const std::size_t n_cols = cost.rows();
  const std::size_t n_rows = cost.cols();
  const double inf = std::numeric_limits<double>::infinity();
  HungarianState st{std::vector<double>(n_rows + 1, 0.0),
                    std::vector<double>(n_cols + 1, 0.0),
                    std::vector<std::size_t>(n_cols + 1, 0)};
  std::vector<std::size_t> way(n_cols + 1, 0);
  for (std::size_t i = 1; i <= n_rows; ++i) {
    st.row_of_col[0] = i;
    std::size_t j0 = 0;
    std::vector<double> min_v(n_cols + 1, inf);
    std::vector<bool> used(n_cols + 1, false);
    do {
      used[j0] = true;
      const std::size_t i0 = st.row_of_col[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n_cols; ++j) {
        if (used[j]) continue;
        const double cur = cost(j - 1, i0 - 1) - st.u[i0] - st.v[j];
        if (cur < min_v[j]) {
          min_v[j] = cur;
          way[j] = j0;
        }
        if (min_v[j] < delta) {
          delta = min_v[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n_cols; ++j) {
        if (used[j]) {
          st.u[st.row_of_col[j]] += delta;
          st.v[j] -= delta;
        } else {
          min_v[j] -= delta;
        }
      }
      j0 = j1;
    } while (st.row_of_col[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      st.row_of_col[j0] = st.row_of_col[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  return st;
}

// Kuhn's augmenting-path bipartite matching restricted to allowed edges.
class BipartiteMatcher {
 public:
  BipartiteMatcher(std::size_t left, std::size_t right)
      : adj_(left), match_right_(right, kNone) {}

  void add_edge(std::size_t l, std::size_t r) { adj_[l].push_back(r); }

  // Size of a maximum matching covering the given left vertices.
  std::size_t max_matching(std::span<const std::size_t> lefts) {
    std::fill(match_right_.begin(), match_right_.end(), kNone);
    std::size_t size = 0;
    for (std::size_t l : lefts) {
      std::vector<bool> seen(match_right_.size(), false);
      if (augment(l, seen)) ++size;
    }
    return size;
  }

 private:
  static constexpr std::size_t kNone = std::numeric_limits<std::size_t>::max();

  bool augment(std::size_t l, std::vector<bool>& seen) {
    for (std::size_t r : adj_[l]) {
      if (seen[r]) continue;
      seen[r] = true;
      if (match_right_[r] == kNone || augment(match_right_[r], seen)) {
        match_right_[r] = l;
        return true;
      }
    }
    return false;
  }

  std::vector<std::vector<std::size_t>> adj_;
  std::vector<std::size_t> match_right_;
};

}  // namespace

std::vector<Target> to_targets(std::span<const Annotation> annotations,
                               double image_width, double image_height) {
  std::vector<Target> out;
  out.reserve(annotations.size());
  for (const Annotation& a : annotations) {
    out.push_back({a.class_id, normalize(a.bbox, image_width, image_height),
                   a.is_pseudo});
  }
  return out;
}

std::vector<std::optional<std::size_t>> solve_assignment(const Matrix& cost) {
  const std::size_t n = cost.rows();
  const std::size_t t = cost.cols();
  Require(t <= n, ErrorCode::kInvalidArgument,
          "matching: " + std::to_string(t) + " targets exceed " +
              std::to_string(n) + " queries");
  std::vector<std::optional<std::size_t>> assignment(n);
  if (t == 0) return assignment;
  for (double c : cost.values()) {
    Require(std::isfinite(c), ErrorCode::kInvalidArgument,
            "matching: non-finite cost");
  }

  const HungarianState st = hungarian(cost);

  // Every optimal assignment uses only tight edges (zero reduced cost) and
  // matches every query whose potential is negative. Search that equality
  // subgraph for the lexicographically smallest complete assignment.
  double scale = 1.0;
  for (double c : cost.values()) scale = std::max(scale, std::abs(c));
  const double tol = 1e-9 * scale;
  const auto tight = [&](std::size_t q, std::size_t tg) {
    return cost(q, tg) - st.u[tg + 1] - st.v[q + 1] <= tol;
  };
  std::vector<bool> must_match(n);
  for (std::size_t q = 0; q < n; ++q) must_match[q] = st.v[q + 1] < -tol;

  std::vector<bool> target_used(t, false);
  // Feasibility of completing the assignment for queries > q.
  const auto completable = [&](std::size_t q) {
    std::vector<std::size_t> free_targets;
    for (std::size_t tg = 0; tg < t; ++tg) {
      if (!target_used[tg]) free_targets.push_back(tg);
    }
    BipartiteMatcher by_target(t, n);
    BipartiteMatcher by_query(n, t);
    std::vector<std::size_t> forced;
    for (std::size_t r = q + 1; r < n; ++r) {
      if (must_match[r]) forced.push_back(r);
      for (std::size_t tg : free_targets) {
        if (!tight(r, tg)) continue;
        by_target.add_edge(tg, r);
        by_query.add_edge(r, tg);
      }
    }
    // Both sides saturable separately implies a matching saturating both.
    return by_target.max_matching(free_targets) == free_targets.size() &&
           by_query.max_matching(forced) == forced.size();
  };

  for (std::size_t q = 0; q < n; ++q) {
    bool placed = false;
    for (std::size_t tg = 0; tg < t && !placed; ++tg) {
      if (target_used[tg] || !tight(q, tg)) continue;
      target_used[tg] = true;
      if (completable(q)) {
        assignment[q] = tg;
        placed = true;
      } else {
        target_used[tg] = false;
      }
    }
    if (!placed) {
      Require(!must_match[q] && completable(q), ErrorCode::kInvalidArgument,
              "matching: equality subgraph search failed (numerical tolerance)");
    }
  }
  return assignment;
}

double focal_alignment_cost(double logit, const FocalParams& focal) {
  const double p = 1.0 / (1.0 + std::exp(-logit));
  const double pos = focal.alpha * std::pow(1.0 - p, focal.gamma) * softplus(-logit);
  const double neg = (1.0 - focal.alpha) * std::pow(p, focal.gamma) * softplus(logit);
  return pos - neg;
}

Matrix matching_cost(const LayerResponses& preds, std::span<const Target> targets,
                     const MatchCostConfig& cfg) {
  preds.validate();
  const std::size_t n = preds.logits.rows();
  Matrix cost(n, targets.size());
  const BoxLossWeights weights{cfg.l1_weight, cfg.giou_weight};
  for (std::size_t j = 0; j < targets.size(); ++j) {
    const int c = targets[j].class_id;
    Require(c >= 0 && static_cast<std::size_t>(c) < preds.logits.cols(),
            ErrorCode::kInvalidArgument,
            "matching: target class " + std::to_string(c) + " has no logit column");
    for (std::size_t i = 0; i < n; ++i) {
      cost(i, j) = cfg.class_weight * focal_alignment_cost(preds.logits(i, c), cfg.focal) +
                   box_regression_loss(targets[j].box, preds.boxes[i], weights).value;
    }
  }
  return cost;
}

MatchResult match(const LayerResponses& preds, std::span<const Target> targets,
                  const MatchCostConfig& cfg) {
  Require(targets.size() <= preds.logits.rows(), ErrorCode::kInvalidArgument,
          "matching: more targets (" + std::to_string(targets.size()) +
              ") than queries (" + std::to_string(preds.logits.rows()) + ")");
  const Matrix cost = matching_cost(preds, targets, cfg);
  MatchResult out;
  out.assignment = solve_assignment(cost);
  out.num_targets = targets.size();
  for (std::size_t q = 0; q < out.assignment.size(); ++q) {
    if (out.assignment[q]) out.total_cost += cost(q, *out.assignment[q]);
  }
  return out;
}

MatchResult rescore(const LayerResponses& preds, std::span<const Target> targets,
                    const MatchResult& m, const MatchCostConfig& cfg) {
  Require(m.assignment.size() == preds.logits.rows() && m.num_targets == targets.size(),
          ErrorCode::kShapeMismatch, "rescore: assignment does not fit the inputs");
  const Matrix cost = matching_cost(preds, targets, cfg);
  MatchResult out = m;
  out.total_cost = 0.0;
  for (std::size_t q = 0; q < out.assignment.size(); ++q) {
    if (out.assignment[q]) out.total_cost += cost(q, *out.assignment[q]);
  }
  return out;
}

}  // namespace iod
