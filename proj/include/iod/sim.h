#ifndef IOD_SIM_H_
#define IOD_SIM_H_

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "iod/config.h"
#include "iod/incremental.h"
#include "iod/metrics.h"
#include "iod/rng.h"
#include "json.hpp"

namespace iod {

struct SimImage {
  ImageId id = 0;
  Matrix semantic;    // Q x D
  Matrix positional;  // Q x 4, logits of the normalized box plus noise
  std::vector<std::optional<int>> object_class;  // per query, nullopt = background
  std::vector<BBox> query_box;                   // per query, pixels
  std::vector<Annotation> annotations;           // labels visible in this split
  FeatureMap image_features;
};

struct World {
  WorldConfig cfg;
  TaskSchedule schedule;
  Matrix means;  // row = class * 3 + bucket
  std::vector<std::vector<SimImage>> train;  // per stage
  std::vector<SimImage> test;
  CocoDataset test_gt;
  std::vector<std::string> warnings;

  const double* mean(int class_id, ScaleBucket bucket) const;
};

World generate_world(const WorldConfig& cfg);

// Number of training images of `stage` (1-based) that contain an object of an
// earlier stage's class.
std::size_t count_cooccurrence(const World& world, std::size_t stage);

// Linear detector head over world features. With the adapter, class logits
// are W (A s) + b and boxes sigmoid(Wb [A s; pos] + bb); without it A stays
// the identity and is never updated.
struct StudentHead {
  std::size_t num_classes = 0;
  std::size_t dim = 0;
  bool adapter = true;
  Matrix adapter_w;  // D x D
  Matrix class_w;    // K x D
  std::vector<double> class_b;
  Matrix box_w;      // 4 x (D + 4)
  std::vector<double> box_b;

  static StudentHead init(std::size_t num_classes, std::size_t dim, bool adapter,
                          double init_bias);
  std::size_t num_params() const;
  std::vector<double> flat() const;
  void assign(std::span<const double> params);
  bool operator==(const StudentHead&) const = default;
};

struct HeadOutput {
  Matrix features;  // Q x D adapter output
  Matrix logits;    // Q x seen_classes
  std::vector<NormBox> boxes;
};

HeadOutput forward(const StudentHead& head, const SimImage& image, std::size_t seen_classes);

// Gradient of the head parameters (flat layout) given output gradients.
std::vector<double> backward(const StudentHead& head, const SimImage& image,
                             const HeadOutput& out, const Matrix& d_features,
                             const Matrix& d_logits, const Matrix& d_boxes);

// One detection per query: the best class among the first seen_classes.
std::vector<Detection> detect(const HeadOutput& out, double image_width,
                              double image_height);

enum class Mode { kFinetune, kCrd, kCpg, kCrdCpg, kFull };
Mode parse_mode(const std::string& name);
std::string to_string(Mode mode);
bool uses_crd(Mode mode);
bool uses_cpg(Mode mode);
bool uses_std(Mode mode);

struct EpochRecord {
  std::size_t epoch = 0;
  LossBreakdown loss;  // per-image mean over the epoch
  std::size_t pseudo_labels = 0;
};

struct StageRecord {
  std::size_t stage = 0;
  std::vector<EpochRecord> epochs;
  ThresholdTable thresholds;  // final CPG thresholds, empty without CPG
  EvalReport report;
};

struct ModeRecord {
  Mode mode = Mode::kFinetune;
  std::vector<StageRecord> stages;
};

struct RunLedger {
  std::uint64_t seed = 0;
  std::vector<std::string> warnings;
  std::string config;  // effective config dump
  std::vector<ModeRecord> modes;
};

struct StageContext {
  const World* world = nullptr;
  std::size_t stage = 1;
  const RunConfig* cfg = nullptr;
  std::size_t workers = 1;
};

// Trains `student` on one stage. The teacher is required for every mode
// except finetune and stays untouched.
StageRecord train_stage(StudentHead& student, const StudentHead* teacher, Mode mode,
                        const StageContext& ctx);

EvalReport evaluate_head(const StudentHead& head, const World& world, std::size_t stage,
                         const RunConfig& cfg, std::size_t workers);

// All stages for every configured mode. Stage 1 is shared by all modes.
RunLedger run_experiment(const RunConfig& cfg, std::size_t workers);

nlohmann::json to_json(const RunLedger& ledger);
nlohmann::json summary_json(const RunLedger& ledger);
std::string forgetting_csv(const RunLedger& ledger);
std::string pr_curves_csv(const RunLedger& ledger);

// Writes ledger.json, report.json, forgetting.csv, pr_curves.csv, and
// effective.conf into `dir`.
void write_outputs(const RunLedger& ledger, const std::string& dir);

}  // namespace iod

#endif  // IOD_SIM_H_
