#ifndef IOD_METRICS_H_
#define IOD_METRICS_H_

#include <array>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "iod/coco.h"
#include "iod/incremental.h"
#include "iod/records.h"
#include "iod/scale.h"
#include "json.hpp"

namespace iod {

inline constexpr std::size_t kNumIouThresholds = 10;
inline constexpr std::size_t kNumRecallThresholds = 101;

// 0.50, 0.55, ..., 0.95 and 0.00, 0.01, ..., 1.00, generated the way the
// reference COCO toolkit generates them.
double iou_threshold(std::size_t t);
double recall_threshold(std::size_t r);

enum class AreaRange { kAll = 0, kSmall = 1, kMedium = 2, kLarge = 3 };

struct EvalConfig {
  std::size_t max_dets = 100;  // per image per class
  ScaleConfig areas;           // small/medium/large boundaries
  std::size_t workers = 1;
};

struct ClassEval {
  int class_id = 0;
  // AP over all areas at each IoU threshold; nullopt when the class has no GT.
  std::array<std::optional<double>, kNumIouThresholds> ap_at_iou{};
  std::optional<double> ap;   // mean over the ten thresholds
  std::optional<double> ap50;
  std::optional<double> ap75;
  std::optional<double> ap_small;
  std::optional<double> ap_medium;
  std::optional<double> ap_large;
  // Interpolated precision at the 101 recall thresholds, all areas.
  std::array<std::vector<double>, kNumIouThresholds> precision;
};

struct GroupMetrics {
  std::size_t num_classes = 0;
  std::optional<double> map;
  std::optional<double> map50;
  std::optional<double> map75;
  std::optional<double> map_small;
  std::optional<double> map_medium;
  std::optional<double> map_large;
};

struct EvalReport {
  std::size_t stage = 0;
  std::vector<ClassEval> classes;
  GroupMetrics all;                      // mAP^A
  std::optional<GroupMetrics> previous;  // mAP^P, absent at stage 1
  GroupMetrics current;                  // mAP^C

  const ClassEval* find(int class_id) const;
};

// COCO-protocol AP for the listed classes. Detections of other known
// categories are ignored; detections of unknown categories are an error.
std::vector<ClassEval> evaluate_classes(std::span<const ImageDetection> detections,
                                        const CocoDataset& gt,
                                        std::span<const int> class_ids,
                                        const EvalConfig& cfg);

GroupMetrics group_metrics(std::span<const ClassEval> classes,
                           std::span<const int> class_ids);

// Evaluates every class seen up to `stage` and groups them into all /
// previous-task / current-task means.
EvalReport evaluate(std::span<const ImageDetection> detections, const CocoDataset& gt,
                    const TaskSchedule& schedule, std::size_t stage,
                    const EvalConfig& cfg);

struct ForgettingDelta {
  int class_id = 0;
  double ap = 0.0;
  double ap50 = 0.0;
  double ap75 = 0.0;
};

// Per-class AP drop (before - after).
std::vector<ForgettingDelta> forgetting_delta(const EvalReport& before,
                                              const EvalReport& after,
                                              std::span<const int> classes);

nlohmann::json to_json(const EvalReport& report);
std::string format_table(const EvalReport& report);
// class_id, iou_threshold, recall, precision rows for plotting.
std::string pr_curve_csv(const EvalReport& report);

}  // namespace iod

#endif  // IOD_METRICS_H_
