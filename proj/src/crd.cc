#include "iod/crd.h"

#include <algorithm>
#include <cmath>
#include <string>

#include "iod/error.h"

namespace iod {
namespace {

void log_softmax(std::span<const double> logits, double temperature,
                 std::vector<double>& out) {
  out.resize(logits.size());
  double peak = logits[0] / temperature;
  for (double z : logits) peak = std::max(peak, z / temperature);
  double sum = 0.0;
  for (double z : logits) sum += std::exp(z / temperature - peak);
  const double log_norm = peak + std::log(sum);
  for (std::size_t c = 0; c < logits.size(); ++c) {
    out[c] = logits[c] / temperature - log_norm;
  }
}

void check_pair(const LayerResponses& teacher, const LayerResponses& student) {
  teacher.validate();
  student.validate();
  Require(teacher.logits.rows() == student.logits.rows() &&
              teacher.logits.cols() == student.logits.cols(),
          ErrorCode::kShapeMismatch,
          "response distillation: teacher and student logits differ in shape");
  Require(teacher.boxes.size() == student.boxes.size(),
          ErrorCode::kShapeMismatch,
          "response distillation: teacher and student box counts differ");
}

}  // namespace

void LayerResponses::validate() const {
  Require(boxes.size() == logits.rows(), ErrorCode::kShapeMismatch,
          "layer responses: " + std::to_string(logits.rows()) +
              " logit rows but " + std::to_string(boxes.size()) + " boxes");
}

void CrdConfig::validate() const {
  Require(std::isfinite(temperature) && temperature > 0.0,
          ErrorCode::kInvalidArgument, "crd.temperature must be positive");
}

CrdAlign crd_align(const LayerResponses& teacher, const LayerResponses& student,
                   std::span<const int> old_classes, const CrdConfig& cfg) {
  cfg.validate();
  check_pair(teacher, student);
  Require(!old_classes.empty(), ErrorCode::kInvalidArgument,
          "response distillation needs at least one old class");
  const std::size_t n = student.logits.rows();
  const std::size_t classes = student.logits.cols();
  for (int c : old_classes) {
    Require(c >= 0 && static_cast<std::size_t>(c) < classes,
            ErrorCode::kInvalidArgument,
            "response distillation: old class " + std::to_string(c) +
                " outside the logit columns");
  }

  const double tau = cfg.temperature;
  const double scale = cfg.tau_squared ? tau * tau : 1.0;
  CrdAlign out;
  out.grad = Matrix(n, classes);
  out.alpha.resize(n);
  std::vector<double> log_t, log_s;
  for (std::size_t i = 0; i < n; ++i) {
    log_softmax(teacher.logits.row(i), tau, log_t);
    log_softmax(student.logits.row(i), tau, log_s);
    double alpha = 0.0;
    for (int c : old_classes) alpha = std::max(alpha, std::exp(log_t[c]));
    out.alpha[i] = alpha;

    double kl = 0.0;
    for (std::size_t c = 0; c < classes; ++c) {
      const double pt = std::exp(log_t[c]);
      kl += pt * (log_t[c] - log_s[c]);
      out.grad(i, c) = scale * alpha * (std::exp(log_s[c]) - pt) / tau;
    }
    out.loss += scale * alpha * kl;
  }
  return out;
}

CrdReg crd_reg(const LayerResponses& teacher, const LayerResponses& student,
               std::span<const double> alpha, const CrdConfig& cfg) {
  check_pair(teacher, student);
  Require(alpha.size() == student.boxes.size(), ErrorCode::kShapeMismatch,
          "regression distillation: one weight per query required");
  const BoxLossWeights weights{cfg.bbox_l1_weight, cfg.bbox_giou_weight};
  CrdReg out;
  out.grad = Matrix(student.boxes.size(), 4);
  for (std::size_t i = 0; i < student.boxes.size(); ++i) {
    const BoxLoss term = box_regression_loss(teacher.boxes[i], student.boxes[i], weights);
    out.loss += alpha[i] * term.value;
    for (int k = 0; k < 4; ++k) out.grad(i, k) = alpha[i] * term.grad[k];
  }
  return out;
}

CrdTotal crd_total(std::span<const LayerResponses> teacher,
                   std::span<const LayerResponses> student,
                   std::span<const int> old_classes, const CrdConfig& cfg) {
  Require(teacher.size() == student.size(), ErrorCode::kShapeMismatch,
          "response distillation: teacher has " + std::to_string(teacher.size()) +
              " layers, student " + std::to_string(student.size()));
  CrdTotal out;
  for (std::size_t l = 0; l < teacher.size(); ++l) {
    CrdLayerTerms terms;
    terms.align = crd_align(teacher[l], student[l], old_classes, cfg);
    terms.reg = crd_reg(teacher[l], student[l], terms.align.alpha, cfg);
    out.align += terms.align.loss;
    out.reg += terms.reg.loss;
    out.layers.push_back(std::move(terms));
  }
  out.total = out.align + out.reg;
  return out;
}

}  // namespace iod
