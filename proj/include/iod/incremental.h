#ifndef IOD_INCREMENTAL_H_
#define IOD_INCREMENTAL_H_

#include <cstddef>
#include <string>
#include <vector>

#include "iod/coco.h"

namespace iod {

// Ordered, pairwise-disjoint class sets C_1 ... C_n. Stages are 1-based.
struct TaskSchedule {
  std::string name;
  std::vector<std::vector<int>> stages;

  void validate() const;
  std::size_t num_stages() const { return stages.size(); }
  const std::vector<int>& classes_of(std::size_t stage) const;
  // Union of C_1 .. C_{stage-1}, ascending.
  std::vector<int> classes_before(std::size_t stage) const;
  // Union of C_1 .. C_stage, ascending.
  std::vector<int> classes_through(std::size_t stage) const;
  // 1-based stage owning the class, 0 when unscheduled.
  std::size_t stage_of(int class_id) const;
};

// Schedule expressed with category names, before resolution.
struct NamedSchedule {
  std::string name;
  std::vector<std::vector<std::string>> stages;
};

// Plain text: one stage per line, comma-separated class names. Blank lines
// and '#' comments are ignored.
NamedSchedule parse_schedule(const std::string& text, const std::string& name);
NamedSchedule load_schedule(const std::string& path);

// Resolves names against categories, ignoring case and punctuation. A name
// that matches no category exactly may match the tail of exactly one
// category name ("service-area" -> "Expressway-Service-area").
TaskSchedule resolve_schedule(const NamedSchedule& schedule,
                              const std::vector<CocoCategory>& categories);

// "dior-10+10", "dior-5+5+5+5", "dota-5+5+5".
std::vector<NamedSchedule> schedule_presets();
const NamedSchedule* find_preset(const std::string& name);

// Training set for one stage: images with at least one stage class, carrying
// only stage-class annotations. Categories are kept in full; "info" records
// the source hash, schedule name, and stage.
CocoDataset build_stage_dataset(const CocoDataset& gt, const TaskSchedule& schedule,
                                std::size_t stage);

struct SplitStats {
  std::size_t stage = 0;
  std::size_t only_old = 0;
  std::size_t only_new = 0;
  std::size_t cooccurrence = 0;

  std::size_t total() const { return only_old + only_new + cooccurrence; }
  // Fraction of the stage's training images (Only-New + Co-occurrence) that
  // also contain old classes.
  double cooccurrence_rate() const;
  double only_old_fraction() const;
  double only_new_fraction() const;
  double cooccurrence_fraction() const;
};

SplitStats cooccurrence_stats(const CocoDataset& gt, const TaskSchedule& schedule,
                              std::size_t stage);

// 64-bit FNV-1a over bytes, rendered as 16 hex digits.
std::string fnv1a_hex(const std::string& bytes);

}  // namespace iod

#endif  // IOD_INCREMENTAL_H_
