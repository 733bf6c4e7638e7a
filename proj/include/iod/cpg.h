#ifndef IOD_CPG_H_
#define IOD_CPG_H_

#include <cstddef>
#include <deque>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "iod/records.h"

namespace iod {

struct CpgConfig {
  double delta_min = 0.3;
  std::size_t capacity = 20000;
  double theta_nms = 0.7;
  std::size_t min_samples = 50;
  double fallback_threshold = 0.4;

  void validate() const;
};

// Bounded FIFO of one class's teacher confidences. Only scores strictly above
// delta_min are stored; the oldest entries are evicted first once full.
class ScoreBank {
 public:
  ScoreBank(int class_id, std::size_t capacity, double delta_min);

  void update(std::span<const double> batch_scores);

  int class_id() const { return class_id_; }
  std::size_t capacity() const { return capacity_; }
  double delta_min() const { return delta_min_; }
  std::size_t size() const { return scores_.size(); }
  const std::deque<double>& scores() const { return scores_; }

 private:
  int class_id_;
  std::size_t capacity_;
  double delta_min_;
  std::deque<double> scores_;
};

ScoreBank bank_update(ScoreBank bank, std::span<const double> batch_scores);

// Optimal two-cluster partition of a 1-D sample under within-cluster sum of
// squares. `threshold` is the smallest member of the high cluster.
struct TwoMeansSplit {
  double threshold = 0.0;
  double low_centroid = 0.0;
  double high_centroid = 0.0;
  double wcss = 0.0;
  std::size_t low_count = 0;
  std::size_t high_count = 0;
};

// Exact 1-D 2-means: sorts, then scans every boundary between distinct
// values with prefix sums. Ties in WCSS resolve to the lower threshold.
// Returns nullopt when fewer than two distinct values exist.
std::optional<TwoMeansSplit> two_means_split(std::span<const double> values);

// two_means_split over a bank, gated by cfg.min_samples. nullopt means the
// caller must fall back to cfg.fallback_threshold.
std::optional<TwoMeansSplit> kmeans2_threshold(const ScoreBank& bank,
                                               const CpgConfig& cfg);

enum class ThresholdSource { kClustered, kFallback };

struct ClassThreshold {
  double tau = 0.0;
  ThresholdSource source = ThresholdSource::kFallback;
  std::size_t bank_size = 0;
};

struct ThresholdTable {
  std::map<int, ClassThreshold> entries;

  const ClassThreshold* find(int class_id) const;
};

// Per-class score banks with the update/threshold cycle of the generator.
class ScoreBankSet {
 public:
  explicit ScoreBankSet(CpgConfig cfg);

  // Adds every prediction of an old class whose score exceeds delta_min.
  void observe(std::span<const Detection> preds, std::span<const int> old_classes);
  void observe(int class_id, std::span<const double> scores);

  ThresholdTable thresholds(std::span<const int> old_classes) const;

  const CpgConfig& config() const { return cfg_; }
  const std::map<int, ScoreBank>& banks() const { return banks_; }

  std::string to_json() const;
  static ScoreBankSet from_json(const std::string& text, const CpgConfig& cfg);
  void save(const std::string& path) const;
  // Missing file -> empty set.
  static ScoreBankSet load(const std::string& path, const CpgConfig& cfg);

 private:
  ScoreBank& bank(int class_id);

  CpgConfig cfg_;
  std::map<int, ScoreBank> banks_;
};

// Keeps predictions of old classes with score >= tau_c. Predictions of other
// classes are dropped; an old class without a threshold is an error.
std::vector<Annotation> generate_pseudo_labels(ImageId image_id,
                                               std::span<const Detection> preds,
                                               const ThresholdTable& thresholds,
                                               std::span<const int> old_classes);

// Drops pseudo-labels whose IoU with any ground-truth box of the same image
// reaches theta_nms. Class-agnostic; order preserved.
std::vector<Annotation> deduplicate(std::span<const Annotation> pseudo,
                                    std::span<const Annotation> gt,
                                    double theta_nms);

}  // namespace iod

#endif  // IOD_CPG_H_
