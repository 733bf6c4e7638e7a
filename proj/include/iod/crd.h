#ifndef IOD_CRD_H_
#define IOD_CRD_H_

#include <span>
#include <vector>

#include "iod/box_loss.h"
#include "iod/geometry.h"
#include "iod/matrix.h"

namespace iod {

// One decoder layer's outputs: N x C class logits and N normalized boxes.
struct LayerResponses {
  Matrix logits;
  std::vector<NormBox> boxes;
  int layer_index = 0;

  void validate() const;
};

struct CrdConfig {
  double temperature = 1.0;
  double bbox_l1_weight = 5.0;
  double bbox_giou_weight = 2.0;
  // Multiply the alignment KL by temperature^2 (off by default).
  bool tau_squared = false;

  void validate() const;
};

struct CrdAlign {
  double loss = 0.0;
  Matrix grad;                // d loss / d student logits
  std::vector<double> alpha;  // per-query confidence weight
};

// sum_i alpha_i KL(softmax(t_i / tau) || softmax(s_i / tau)), where alpha_i
// is the teacher's largest tempered probability over the old classes. Query
// i of the teacher corresponds to query i of the student.
CrdAlign crd_align(const LayerResponses& teacher, const LayerResponses& student,
                   std::span<const int> old_classes, const CrdConfig& cfg);

struct CrdReg {
  double loss = 0.0;
  Matrix grad;  // d loss / d student boxes, N x 4 (cx, cy, w, h)
};

// sum_i alpha_i * L_bbox(teacher box i, student box i).
CrdReg crd_reg(const LayerResponses& teacher, const LayerResponses& student,
               std::span<const double> alpha, const CrdConfig& cfg);

struct CrdLayerTerms {
  CrdAlign align;
  CrdReg reg;
};

struct CrdTotal {
  double align = 0.0;
  double reg = 0.0;
  double total = 0.0;
  std::vector<CrdLayerTerms> layers;
};

// Sums alignment and regression distillation over all decoder layers.
CrdTotal crd_total(std::span<const LayerResponses> teacher,
                   std::span<const LayerResponses> student,
                   std::span<const int> old_classes, const CrdConfig& cfg);

}  // namespace iod

#endif  // IOD_CRD_H_
