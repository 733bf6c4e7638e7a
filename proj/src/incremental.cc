#include "iod/incremental.h"

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <set>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "iod/error.h"

namespace iod {
namespace {

std::string canonical_name(const std::string& name) {
  std::string out;
  for (unsigned char ch : name) {
    if (std::isalnum(ch)) out.push_back(static_cast<char>(std::tolower(ch)));
  }
  return out;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

void check_stage(const TaskSchedule& schedule, std::size_t stage) {
  Require(stage >= 1 && stage <= schedule.num_stages(), ErrorCode::kInvalidArgument,
          "stage " + std::to_string(stage) + " outside [1, " +
              std::to_string(schedule.num_stages()) + "]");
}

void check_against(const CocoDataset& gt, const TaskSchedule& schedule) {
  schedule.validate();
  for (const auto& stage : schedule.stages) {
    for (int c : stage) {
      Require(gt.category(c) != nullptr, ErrorCode::kNotFound,
              "schedule class " + std::to_string(c) + " is not a category of the source");
    }
  }
}

}  // namespace

void TaskSchedule::validate() const {
  Require(!stages.empty(), ErrorCode::kInvalidArgument, "schedule has no stages");
  std::set<int> seen;
  for (std::size_t s = 0; s < stages.size(); ++s) {
    Require(!stages[s].empty(), ErrorCode::kInvalidArgument,
            "schedule stage " + std::to_string(s + 1) + " is empty");
    for (int c : stages[s]) {
      Require(seen.insert(c).second, ErrorCode::kInvalidArgument,
              "schedule stages overlap on class " + std::to_string(c));
    }
  }
}

const std::vector<int>& TaskSchedule::classes_of(std::size_t stage) const {
  check_stage(*this, stage);
  return stages[stage - 1];
}

std::vector<int> TaskSchedule::classes_before(std::size_t stage) const {
  check_stage(*this, stage);
  std::vector<int> out;
  for (std::size_t s = 0; s + 1 < stage; ++s) {
    out.insert(out.end(), stages[s].begin(), stages[s].end());
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<int> TaskSchedule::classes_through(std::size_t stage) const {
  check_stage(*this, stage);
  std::vector<int> out;
  for (std::size_t s = 0; s < stage; ++s) {
    out.insert(out.end(), stages[s].begin(), stages[s].end());
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::size_t TaskSchedule::stage_of(int class_id) const {
  for (std::size_t s = 0; s < stages.size(); ++s) {
    if (std::find(stages[s].begin(), stages[s].end(), class_id) != stages[s].end()) {
      return s + 1;
    }
  }
  return 0;
}

NamedSchedule parse_schedule(const std::string& text, const std::string& name) {
  NamedSchedule out{name, {}};
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    const std::string body = trim(line.substr(0, line.find('#')));
    if (body.empty()) continue;
    std::vector<std::string> stage;
    std::istringstream fields(body);
    std::string field;
    while (std::getline(fields, field, ',')) {
      field = trim(field);
      if (!field.empty()) stage.push_back(field);
    }
    out.stages.push_back(std::move(stage));
  }
  Require(!out.stages.empty(), ErrorCode::kParse, "schedule '" + name + "' has no stages");
  return out;
}

NamedSchedule load_schedule(const std::string& path) {
  if (const NamedSchedule* preset = find_preset(path)) return *preset;
  return parse_schedule(read_file(path), std::filesystem::path(path).stem().string());
}

TaskSchedule resolve_schedule(const NamedSchedule& schedule,
                              const std::vector<CocoCategory>& categories) {
  TaskSchedule out{schedule.name, {}};
  for (const auto& stage : schedule.stages) {
    std::vector<int> ids;
    for (const auto& name : stage) {
      const std::string key = canonical_name(name);
      Require(!key.empty(), ErrorCode::kParse, "empty class name in schedule");
      const CocoCategory* found = nullptr;
      for (const auto& c : categories) {
        if (canonical_name(c.name) == key) found = &c;
      }
      if (found == nullptr) {
        std::vector<const CocoCategory*> tails;
        for (const auto& c : categories) {
          const std::string cn = canonical_name(c.name);
          if (cn.size() > key.size() &&
              cn.compare(cn.size() - key.size(), key.size(), key) == 0) {
            tails.push_back(&c);
          }
        }
        Require(tails.size() <= 1, ErrorCode::kInvalidArgument,
                "schedule class '" + name + "' is ambiguous");
        if (tails.size() == 1) found = tails.front();
      }
      Require(found != nullptr, ErrorCode::kNotFound,
              "schedule class '" + name + "' matches no category");
      ids.push_back(found->id);
    }
    out.stages.push_back(std::move(ids));
  }
  out.validate();
  return out;
}

std::vector<NamedSchedule> schedule_presets() {
  return {
      {"dior-10+10",
       {{"airplane", "airport", "bridge", "service-area", "toll-station", "harbor",
         "overpass", "ship", "trainstation", "vehicle"},
        {"baseballfield", "basketballcourt", "chimney", "dam", "golffield",
         "groundtrackfield", "stadium", "storagetank", "tenniscourt", "windmill"}}},
      {"dior-5+5+5+5",
       {{"airplane", "airport", "bridge", "service-area", "toll-station"},
        {"baseball field", "basketball court", "golf field", "chimney", "dam"},
        {"ground track field", "stadium", "storage tank", "tennis court", "windmill"},
        {"harbor", "overpass", "ship", "train station", "vehicle"}}},
      {"dota-5+5+5",
       {{"small-vehicle", "large-vehicle", "plane", "baseball-diamond",
         "ground-track-field"},
        {"helicopter", "ship", "bridge", "soccer-ball-field", "tennis-court"},
        {"storage-tank", "harbor", "roundabout", "basketball-court", "swimming-pool"}}},
  };
}

const NamedSchedule* find_preset(const std::string& name) {
  static const std::vector<NamedSchedule> presets = schedule_presets();
  for (const auto& p : presets) {
    if (p.name == name) return &p;
  }
  return nullptr;
}

std::string fnv1a_hex(const std::string& bytes) {
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char ch : bytes) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

CocoDataset build_stage_dataset(const CocoDataset& gt, const TaskSchedule& schedule,
                                std::size_t stage) {
  check_against(gt, schedule);
  const auto& current = schedule.classes_of(stage);
  const std::unordered_set<int> keep(current.begin(), current.end());

  CocoDataset out;
  out.categories = gt.categories;
  std::unordered_set<ImageId> images_with_stage;
  for (const auto& a : gt.annotations) {
    if (keep.count(a.class_id)) {
      out.annotations.push_back(a);
      images_with_stage.insert(a.image_id);
    }
  }
  for (const auto& im : gt.images) {
    if (images_with_stage.count(im.id)) out.images.push_back(im);
  }
  out.info = gt.info;
  out.info["source_hash"] = fnv1a_hex(to_json(gt).dump());
  out.info["schedule"] = schedule.name;
  out.info["stage"] = stage;
  return out;
}

double SplitStats::cooccurrence_rate() const {
  const std::size_t train = only_new + cooccurrence;
  return train == 0 ? 0.0 : static_cast<double>(cooccurrence) / train;
}
double SplitStats::only_old_fraction() const {
  return total() == 0 ? 0.0 : static_cast<double>(only_old) / total();
}
double SplitStats::only_new_fraction() const {
  return total() == 0 ? 0.0 : static_cast<double>(only_new) / total();
}
double SplitStats::cooccurrence_fraction() const {
  return total() == 0 ? 0.0 : static_cast<double>(cooccurrence) / total();
}

SplitStats cooccurrence_stats(const CocoDataset& gt, const TaskSchedule& schedule,
                              std::size_t stage) {
  check_against(gt, schedule);
  check_stage(schedule, stage);
  struct Presence {
    bool old_class = false;
    bool new_class = false;
  };
  std::unordered_map<ImageId, Presence> presence;
  for (const auto& a : gt.annotations) {
    const std::size_t owner = schedule.stage_of(a.class_id);
    if (owner == 0 || owner > stage) continue;
    auto& p = presence[a.image_id];
    (owner == stage ? p.new_class : p.old_class) = true;
  }
  SplitStats out;
  out.stage = stage;
  for (const auto& [id, p] : presence) {
    if (p.old_class && p.new_class) {
      ++out.cooccurrence;
    } else if (p.new_class) {
      ++out.only_new;
    } else {
      ++out.only_old;
    }
  }
  return out;
}

}  // namespace iod
