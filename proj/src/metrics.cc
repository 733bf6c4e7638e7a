#include "iod/metrics.h"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>
#include <unordered_map>

#include "iod/error.h"
#include "iod/parallel.h"

namespace iod {
namespace {

struct ImageData {
  std::vector<BBox> gt;
  std::vector<const ImageDetection*> dets;  // score-descending, truncated
};

// Per-class inputs grouped by image in ascending image id.
using ClassImages = std::map<ImageId, ImageData>;

bool in_range(double a, AreaRange range, const ScaleConfig& areas) {
  switch (range) {
    case AreaRange::kAll:
      return true;
    case AreaRange::kSmall:
      return bucket_of(a, areas) == ScaleBucket::kSmall;
    case AreaRange::kMedium:
      return bucket_of(a, areas) == ScaleBucket::kMedium;
    case AreaRange::kLarge:
      return bucket_of(a, areas) == ScaleBucket::kLarge;
  }
  return false;
}

struct ScoredHit {
  double score;
  bool tp;
};

// Greedy COCO matching for one image at one IoU threshold and area range.
// Appends the non-ignored detections and returns the non-ignored GT count.
std::size_t match_image(const ImageData& im, double threshold, AreaRange range,
                        const ScaleConfig& areas, std::vector<ScoredHit>& hits) {
  // Non-ignored GT first, stable.
  std::vector<std::size_t> order(im.gt.size());
  std::vector<bool> gt_ignore(im.gt.size());
  for (std::size_t g = 0; g < im.gt.size(); ++g) {
    order[g] = g;
    gt_ignore[g] = !in_range(area(im.gt[g]), range, areas);
  }
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return !gt_ignore[a] && gt_ignore[b];
  });
  std::size_t valid_gt = 0;
  for (bool ig : gt_ignore) valid_gt += ig ? 0 : 1;

  std::vector<bool> gt_taken(im.gt.size(), false);
  for (const ImageDetection* d : im.dets) {
    double best = std::min(threshold, 1.0 - 1e-10);
    std::optional<std::size_t> m;
    for (std::size_t g : order) {
      if (gt_taken[g]) continue;
      if (m && !gt_ignore[*m] && gt_ignore[g]) break;
      const double overlap = iou(d->bbox, im.gt[g]);
      if (overlap < best) continue;
      best = overlap;
      m = g;
    }
    if (m) {
      gt_taken[*m] = true;
      if (!gt_ignore[*m]) hits.push_back({d->score, true});
    } else if (in_range(area(d->bbox), range, areas)) {
      hits.push_back({d->score, false});
    }
  }
  return valid_gt;
}

// 101-point interpolated precision; empty when there is no valid GT.
std::optional<std::vector<double>> interpolated_precision(
    const ClassImages& images, double threshold, AreaRange range,
    const ScaleConfig& areas) {
  std::vector<ScoredHit> hits;
  std::size_t valid_gt = 0;
  for (const auto& [id, im] : images) {
    valid_gt += match_image(im, threshold, range, areas, hits);
  }
  if (valid_gt == 0) return std::nullopt;
  std::stable_sort(hits.begin(), hits.end(),
                   [](const ScoredHit& a, const ScoredHit& b) { return a.score > b.score; });

  std::vector<double> recall(hits.size()), precision(hits.size());
  double tp = 0.0, fp = 0.0;
  for (std::size_t i = 0; i < hits.size(); ++i) {
    (hits[i].tp ? tp : fp) += 1.0;
    recall[i] = tp / static_cast<double>(valid_gt);
    precision[i] = tp / (tp + fp);
  }
  for (std::size_t i = hits.size(); i-- > 1;) {
    precision[i - 1] = std::max(precision[i - 1], precision[i]);
  }
  std::vector<double> out(kNumRecallThresholds, 0.0);
  for (std::size_t r = 0; r < kNumRecallThresholds; ++r) {
    const auto it = std::lower_bound(recall.begin(), recall.end(), recall_threshold(r));
    if (it != recall.end()) out[r] = precision[it - recall.begin()];
  }
  return out;
}

double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

std::optional<double> mean_ap_over_thresholds(const ClassImages& images, AreaRange range,
                                              const ScaleConfig& areas) {
  double total = 0.0;
  for (std::size_t t = 0; t < kNumIouThresholds; ++t) {
    const auto p = interpolated_precision(images, iou_threshold(t), range, areas);
    if (!p) return std::nullopt;
    total += mean(*p);
  }
  return total / kNumIouThresholds;
}

ClassEval evaluate_one(int class_id, const ClassImages& images, const EvalConfig& cfg) {
  ClassEval out;
  out.class_id = class_id;
  bool defined = true;
  double total = 0.0;
  for (std::size_t t = 0; t < kNumIouThresholds; ++t) {
    auto p = interpolated_precision(images, iou_threshold(t), AreaRange::kAll, cfg.areas);
    if (!p) {
      defined = false;
      out.precision[t].assign(kNumRecallThresholds, 0.0);
      continue;
    }
    out.ap_at_iou[t] = mean(*p);
    total += *out.ap_at_iou[t];
    out.precision[t] = std::move(*p);
  }
  if (defined) {
    out.ap = total / kNumIouThresholds;
    out.ap50 = out.ap_at_iou[0];
    out.ap75 = out.ap_at_iou[5];
  }
  out.ap_small = mean_ap_over_thresholds(images, AreaRange::kSmall, cfg.areas);
  out.ap_medium = mean_ap_over_thresholds(images, AreaRange::kMedium, cfg.areas);
  out.ap_large = mean_ap_over_thresholds(images, AreaRange::kLarge, cfg.areas);
  return out;
}

std::optional<double> mean_of(std::span<const ClassEval> classes,
                              std::span<const int> ids,
                              std::optional<double> ClassEval::*field) {
  double total = 0.0;
  std::size_t count = 0;
  for (const ClassEval& c : classes) {
    if (std::find(ids.begin(), ids.end(), c.class_id) == ids.end()) continue;
    if (!(c.*field)) continue;
    total += *(c.*field);
    ++count;
  }
  if (count == 0) return std::nullopt;
  return total / static_cast<double>(count);
}

nlohmann::json opt(const std::optional<double>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

nlohmann::json group_json(const GroupMetrics& g) {
  return {{"num_classes", g.num_classes}, {"mAP", opt(g.map)},
          {"mAP50", opt(g.map50)},        {"mAP75", opt(g.map75)},
          {"mAP_s", opt(g.map_small)},    {"mAP_m", opt(g.map_medium)},
          {"mAP_l", opt(g.map_large)}};
}

std::string pct(const std::optional<double>& v) {
  if (!v) return "-";
  std::ostringstream s;
  s << std::fixed << std::setprecision(1) << 100.0 * *v;
  return s.str();
}

}  // namespace

double iou_threshold(std::size_t t) {
  if (t + 1 == kNumIouThresholds) return 0.95;
  return static_cast<double>(t) * (0.45 / 9.0) + 0.5;
}

double recall_threshold(std::size_t r) {
  if (r + 1 == kNumRecallThresholds) return 1.0;
  return static_cast<double>(r) * (1.0 / 100.0);
}

const ClassEval* EvalReport::find(int class_id) const {
  for (const auto& c : classes) {
    if (c.class_id == class_id) return &c;
  }
  return nullptr;
}

std::vector<ClassEval> evaluate_classes(std::span<const ImageDetection> detections,
                                        const CocoDataset& gt,
                                        std::span<const int> class_ids,
                                        const EvalConfig& cfg) {
  cfg.areas.validate();
  const std::set<int> wanted(class_ids.begin(), class_ids.end());
  std::unordered_map<int, ClassImages> per_class;
  for (int c : wanted) per_class[c];

  for (const auto& a : gt.annotations) {
    if (wanted.count(a.class_id)) per_class[a.class_id][a.image_id].gt.push_back(a.bbox);
  }
  for (const auto& d : detections) {
    Require(gt.category(d.class_id) != nullptr, ErrorCode::kNotFound,
            "evaluation: detection class " + std::to_string(d.class_id) +
                " is not a ground-truth category");
    if (wanted.count(d.class_id)) per_class[d.class_id][d.image_id].dets.push_back(&d);
  }
  for (auto& [c, images] : per_class) {
    for (auto& [id, im] : images) {
      std::stable_sort(im.dets.begin(), im.dets.end(),
                       [](const ImageDetection* a, const ImageDetection* b) {
                         return a->score > b->score;
                       });
      if (im.dets.size() > cfg.max_dets) im.dets.resize(cfg.max_dets);
    }
  }

  const std::vector<int> ids(wanted.begin(), wanted.end());
  std::vector<ClassEval> out(ids.size());
  parallel_for(ids.size(), cfg.workers, [&](std::size_t i) {
    out[i] = evaluate_one(ids[i], per_class.at(ids[i]), cfg);
  });
  return out;
}

GroupMetrics group_metrics(std::span<const ClassEval> classes,
                           std::span<const int> class_ids) {
  GroupMetrics g;
  g.num_classes = class_ids.size();
  g.map = mean_of(classes, class_ids, &ClassEval::ap);
  g.map50 = mean_of(classes, class_ids, &ClassEval::ap50);
  g.map75 = mean_of(classes, class_ids, &ClassEval::ap75);
  g.map_small = mean_of(classes, class_ids, &ClassEval::ap_small);
  g.map_medium = mean_of(classes, class_ids, &ClassEval::ap_medium);
  g.map_large = mean_of(classes, class_ids, &ClassEval::ap_large);
  return g;
}

EvalReport evaluate(std::span<const ImageDetection> detections, const CocoDataset& gt,
                    const TaskSchedule& schedule, std::size_t stage,
                    const EvalConfig& cfg) {
  schedule.validate();
  const std::vector<int> seen = schedule.classes_through(stage);
  EvalReport report;
  report.stage = stage;
  report.classes = evaluate_classes(detections, gt, seen, cfg);
  report.all = group_metrics(report.classes, seen);
  report.current = group_metrics(report.classes, schedule.classes_of(stage));
  if (stage > 1) {
    report.previous = group_metrics(report.classes, schedule.classes_before(stage));
  }
  return report;
}

std::vector<ForgettingDelta> forgetting_delta(const EvalReport& before,
                                              const EvalReport& after,
                                              std::span<const int> classes) {
  std::vector<ForgettingDelta> out;
  for (int c : classes) {
    const ClassEval* b = before.find(c);
    const ClassEval* a = after.find(c);
    Require(b && a && b->ap && a->ap, ErrorCode::kNotFound,
            "forgetting: class " + std::to_string(c) + " missing from a report");
    out.push_back({c, *b->ap - *a->ap, *b->ap50 - *a->ap50, *b->ap75 - *a->ap75});
  }
  return out;
}

nlohmann::json to_json(const EvalReport& report) {
  nlohmann::json doc;
  doc["stage"] = report.stage;
  doc["all"] = group_json(report.all);
  doc["current"] = group_json(report.current);
  doc["previous"] = report.previous ? group_json(*report.previous) : nlohmann::json(nullptr);
  doc["classes"] = nlohmann::json::array();
  for (const auto& c : report.classes) {
    nlohmann::json per_iou = nlohmann::json::array();
    for (const auto& v : c.ap_at_iou) per_iou.push_back(opt(v));
    doc["classes"].push_back({{"class_id", c.class_id},
                              {"AP", opt(c.ap)},
                              {"AP50", opt(c.ap50)},
                              {"AP75", opt(c.ap75)},
                              {"AP_s", opt(c.ap_small)},
                              {"AP_m", opt(c.ap_medium)},
                              {"AP_l", opt(c.ap_large)},
                              {"AP_per_iou", per_iou}});
  }
  return doc;
}

std::string format_table(const EvalReport& report) {
  std::ostringstream out;
  const auto row = [&](const std::string& label, const std::string& a, const std::string& b,
                       const std::string& c, const std::string& d, const std::string& e,
                       const std::string& f) {
    out << std::left << std::setw(12) << label << std::right << std::setw(8) << a
        << std::setw(8) << b << std::setw(8) << c << std::setw(8) << d << std::setw(8) << e
        << std::setw(8) << f << '\n';
  };
  row("", "AP", "AP50", "AP75", "AP_s", "AP_m", "AP_l");
  for (const auto& c : report.classes) {
    row("class " + std::to_string(c.class_id), pct(c.ap), pct(c.ap50), pct(c.ap75),
        pct(c.ap_small), pct(c.ap_medium), pct(c.ap_large));
  }
  const auto group = [&](const std::string& label, const GroupMetrics& g) {
    row(label, pct(g.map), pct(g.map50), pct(g.map75), pct(g.map_small), pct(g.map_medium),
        pct(g.map_large));
  };
  group("mAP^A", report.all);
  if (report.previous) group("mAP^P", *report.previous);
  group("mAP^C", report.current);
  return out.str();
}

std::string pr_curve_csv(const EvalReport& report) {
  std::ostringstream out;
  out << "class_id,iou_threshold,recall,precision\n";
  for (const auto& c : report.classes) {
    for (std::size_t t = 0; t < kNumIouThresholds; ++t) {
      for (std::size_t r = 0; r < c.precision[t].size(); ++r) {
        out << c.class_id << ',' << format_double(iou_threshold(t)) << ','
            << format_double(recall_threshold(r)) << ',' << format_double(c.precision[t][r])
            << '\n';
      }
    }
  }
  return out.str();
}

}  // namespace iod
