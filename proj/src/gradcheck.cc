#include "iod/gradcheck.h"

#include <algorithm>
#include <cmath>

#include "iod/box_loss.h"
#include "iod/error.h"
#include "iod/parallel.h"
#include "iod/rng.h"
#include "iod/scale.h"

namespace iod {
namespace {

constexpr double kKinkGap = 1e-3;

double norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

NormBox random_box(Rng& rng) {
  return {rng.uniform(0.25, 0.75), rng.uniform(0.25, 0.75), rng.uniform(0.05, 0.4),
          rng.uniform(0.05, 0.4)};
}

bool far(double a, double b) { return std::abs(a - b) >= kKinkGap; }

// True when L1 and GIoU between the two boxes are smooth in a neighborhood.
bool smooth_pair(const NormBox& t, const NormBox& s) {
  for (int k = 0; k < 4; ++k) {
    if (!far(t[k], s[k])) return false;
  }
  const double tx[2] = {t.cx - t.w / 2, t.cx + t.w / 2};
  const double ty[2] = {t.cy - t.h / 2, t.cy + t.h / 2};
  const double sx[2] = {s.cx - s.w / 2, s.cx + s.w / 2};
  const double sy[2] = {s.cy - s.h / 2, s.cy + s.h / 2};
  for (int i = 0; i < 2; ++i) {
    for (int j = 0; j < 2; ++j) {
      if (!far(tx[i], sx[j]) || !far(ty[i], sy[j])) return false;
    }
  }
  return true;
}

Matrix random_matrix(Rng& rng, std::size_t rows, std::size_t cols, double scale) {
  Matrix m(rows, cols);
  for (double& v : m.values()) v = scale * rng.normal();
  return m;
}

// Pixel box with the requested bucket under the default scale config.
BBox box_in_bucket(Rng& rng, ScaleBucket bucket) {
  static constexpr double kSides[3][2] = {{8.0, 28.0}, {36.0, 90.0}, {100.0, 200.0}};
  const auto& r = kSides[static_cast<int>(bucket)];
  return BBox(rng.uniform(0.0, 300.0), rng.uniform(0.0, 300.0), rng.uniform(r[0], r[1]),
              rng.uniform(r[0], r[1]));
}

}  // namespace

double relative_error(std::span<const double> analytic, std::span<const double> numeric) {
  Require(analytic.size() == numeric.size(), ErrorCode::kShapeMismatch,
          "relative_error: length mismatch");
  const double scale = std::max(norm(analytic), norm(numeric));
  if (scale < 1e-12) return 0.0;
  double s = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double d = analytic[i] - numeric[i];
    s += d * d;
  }
  return std::sqrt(s) / scale;
}

std::vector<double> central_difference(
    const std::function<double(std::span<const double>)>& f, std::vector<double> x,
    double step) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double saved = x[i];
    x[i] = saved + step;
    const double up = f(x);
    x[i] = saved - step;
    const double down = f(x);
    x[i] = saved;
    g[i] = (up - down) / (2.0 * step);
  }
  return g;
}

StdInstance make_std_instance(std::uint64_t seed) {
  Rng rng(seed);
  const std::size_t n = 2 + rng.index(7);
  const std::size_t d = 1 + rng.index(4);
  const std::size_t classes = 2 + rng.index(4);
  StdInstance inst;
  inst.cfg.temperature = rng.uniform(0.5, 2.0);
  inst.cfg.include_background_anchor = rng.uniform() < 0.7;
  inst.teacher.features = random_matrix(rng, n, d, 1.0);
  inst.student.features = random_matrix(rng, n, d, 1.0);

  std::vector<BBox> boxes;
  inst.labels.assign(n, std::nullopt);
  for (std::size_t i = 0; i < n; ++i) {
    // The first two queries share a bucket with distinct classes so at least
    // one topology is live.
    const auto bucket = static_cast<ScaleBucket>(i < 2 ? 1 : rng.index(3));
    boxes.push_back(box_in_bucket(rng, bucket));
    if (i < 2) {
      inst.labels[i] = QueryLabel{static_cast<int>(i), rng.uniform(0.05, 1.0)};
    } else if (rng.uniform() < 0.8) {
      inst.labels[i] = QueryLabel{static_cast<int>(rng.index(classes)), rng.uniform(0.05, 1.0)};
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    inst.teacher.detections.push_back(Detection{boxes[i], 0.5, 0, i});
  }
  inst.student.detections = inst.teacher.detections;
  FeatureMap map(2, 2, d);
  for (double& v : map.values) v = rng.normal();
  inst.teacher.image_features = map;
  inst.student.image_features = map;
  inst.part = partition(inst.teacher, inst.cfg.scale);
  return inst;
}

CrdInstance make_crd_instance(std::uint64_t seed) {
  Rng rng(seed);
  const std::size_t n = 1 + rng.index(8);
  const std::size_t c = 2 + rng.index(4);
  CrdInstance inst;
  inst.cfg.temperature = rng.uniform(0.5, 2.0);
  inst.cfg.tau_squared = rng.uniform() < 0.5;
  inst.teacher.logits = random_matrix(rng, n, c, 2.0);
  inst.student.logits = random_matrix(rng, n, c, 2.0);
  for (std::size_t i = 0; i < n; ++i) {
    const NormBox t = random_box(rng);
    NormBox s = random_box(rng);
    while (!smooth_pair(t, s)) s = random_box(rng);
    inst.teacher.boxes.push_back(t);
    inst.student.boxes.push_back(s);
    inst.alpha.push_back(rng.uniform(0.0, 1.0));
  }
  for (std::size_t k = 0; k < c; ++k) {
    if (rng.uniform() < 0.5) inst.old_classes.push_back(static_cast<int>(k));
  }
  if (inst.old_classes.empty()) inst.old_classes.push_back(0);
  return inst;
}

DetrInstance make_detr_instance(std::uint64_t seed) {
  Rng rng(seed);
  const std::size_t n = 1 + rng.index(8);
  const std::size_t c = 1 + rng.index(5);
  const std::size_t t = rng.index(n + 1);
  DetrInstance inst;
  inst.preds.logits = random_matrix(rng, n, c, 2.0);
  for (std::size_t i = 0; i < n; ++i) inst.preds.boxes.push_back(random_box(rng));
  for (std::size_t j = 0; j < t; ++j) {
    NormBox box = random_box(rng);
    const auto smooth = [&](const NormBox& b) {
      for (const NormBox& p : inst.preds.boxes) {
        if (!smooth_pair(b, p)) return false;
      }
      return true;
    };
    while (!smooth(box)) box = random_box(rng);
    inst.targets.push_back(
        Target{static_cast<int>(rng.index(c)), box, rng.uniform() < 0.3});
  }
  inst.cfg.pseudo_weight = rng.uniform(0.5, 1.5);
  return inst;
}

GradProblem std_problem(const StdInstance& inst) {
  GradProblem p;
  const auto values = inst.student.features.values();
  p.x.assign(values.begin(), values.end());
  const StdResult r =
      std_loss_and_grad(inst.teacher, inst.student, inst.labels, inst.part, inst.cfg);
  p.analytic.assign(r.grad.values().begin(), r.grad.values().end());
  p.loss = [inst](std::span<const double> x) {
    QueryBatch student = inst.student;
    std::copy(x.begin(), x.end(), student.features.values().begin());
    return std_loss_and_grad(inst.teacher, student, inst.labels, inst.part, inst.cfg).loss;
  };
  return p;
}

GradProblem crd_align_problem(const CrdInstance& inst) {
  GradProblem p;
  const auto values = inst.student.logits.values();
  p.x.assign(values.begin(), values.end());
  const CrdAlign a = crd_align(inst.teacher, inst.student, inst.old_classes, inst.cfg);
  p.analytic.assign(a.grad.values().begin(), a.grad.values().end());
  p.loss = [inst](std::span<const double> x) {
    LayerResponses student = inst.student;
    std::copy(x.begin(), x.end(), student.logits.values().begin());
    return crd_align(inst.teacher, student, inst.old_classes, inst.cfg).loss;
  };
  return p;
}

GradProblem crd_reg_problem(const CrdInstance& inst) {
  GradProblem p;
  for (const NormBox& b : inst.student.boxes) {
    for (int k = 0; k < 4; ++k) p.x.push_back(b[k]);
  }
  const CrdReg r = crd_reg(inst.teacher, inst.student, inst.alpha, inst.cfg);
  p.analytic.assign(r.grad.values().begin(), r.grad.values().end());
  p.loss = [inst](std::span<const double> x) {
    LayerResponses student = inst.student;
    for (std::size_t i = 0; i < student.boxes.size(); ++i) {
      for (int k = 0; k < 4; ++k) student.boxes[i][k] = x[i * 4 + static_cast<std::size_t>(k)];
    }
    return crd_reg(inst.teacher, student, inst.alpha, inst.cfg).loss;
  };
  return p;
}

GradProblem detr_problem(const DetrInstance& inst) {
  const std::size_t n = inst.preds.logits.rows();
  const std::size_t c = inst.preds.logits.cols();
  const MatchResult m = match(inst.preds, inst.targets, inst.cfg.matching);
  const auto unpack = [n, c](const LayerResponses& base, std::span<const double> x) {
    LayerResponses out = base;
    std::copy(x.begin(), x.begin() + static_cast<std::ptrdiff_t>(n * c),
              out.logits.values().begin());
    for (std::size_t i = 0; i < n; ++i) {
      for (int k = 0; k < 4; ++k) {
        out.boxes[i][k] = x[n * c + i * 4 + static_cast<std::size_t>(k)];
      }
    }
    return out;
  };

  GradProblem p;
  const auto logits = inst.preds.logits.values();
  p.x.assign(logits.begin(), logits.end());
  for (const NormBox& b : inst.preds.boxes) {
    for (int k = 0; k < 4; ++k) p.x.push_back(b[k]);
  }
  const DetrLoss l = detr_loss(inst.preds, inst.targets, m, inst.cfg);
  p.analytic.assign(l.logit_grad.values().begin(), l.logit_grad.values().end());
  p.analytic.insert(p.analytic.end(), l.box_grad.values().begin(), l.box_grad.values().end());
  p.loss = [inst, m, unpack](std::span<const double> x) {
    const LayerResponses preds = unpack(inst.preds, x);
    const MatchResult held = rescore(preds, inst.targets, m, inst.cfg.matching);
    return detr_loss(preds, inst.targets, held, inst.cfg).loss;
  };
  return p;
}

std::vector<std::string> gradcheck_suites() { return {"std", "crd-align", "crd-reg", "detr"}; }

SuiteResult run_gradcheck(const std::string& suite, const GradcheckOptions& opts) {
  const auto build = [&](std::uint64_t seed) -> GradProblem {
    if (suite == "std") return std_problem(make_std_instance(seed));
    if (suite == "crd-align") return crd_align_problem(make_crd_instance(seed));
    if (suite == "crd-reg") return crd_reg_problem(make_crd_instance(seed));
    if (suite == "detr") return detr_problem(make_detr_instance(seed));
    throw Error(ErrorCode::kInvalidArgument, "unknown gradcheck suite '" + suite + "'");
  };
  build(opts.base_seed);  // validates the suite name before fanning out

  std::vector<double> errors(opts.seeds);
  parallel_for(opts.seeds, opts.workers, [&](std::size_t i) {
    const GradProblem p = build(opts.base_seed + i);
    errors[i] = relative_error(p.analytic, central_difference(p.loss, p.x, opts.step));
  });

  SuiteResult out;
  out.name = suite;
  out.cases = opts.seeds;
  for (std::size_t i = 0; i < errors.size(); ++i) {
    if (!(errors[i] < opts.tolerance)) ++out.failures;
    if (i == 0 || errors[i] > out.worst_error || std::isnan(errors[i])) {
      out.worst_error = errors[i];
      out.worst_seed = opts.base_seed + i;
    }
  }
  return out;
}

}  // namespace iod
