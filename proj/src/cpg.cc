#include "iod/cpg.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "iod/error.h"
#include "json.hpp"

namespace iod {

void CpgConfig::validate() const {
  Require(delta_min > 0.0 && delta_min < fallback_threshold &&
              fallback_threshold < 1.0,
          ErrorCode::kInvalidArgument,
          "cpg config requires 0 < delta_min < fallback_threshold < 1");
  Require(theta_nms > 0.0 && theta_nms <= 1.0, ErrorCode::kInvalidArgument,
          "cpg.theta_nms must lie in (0, 1]");
  Require(capacity > 0, ErrorCode::kInvalidArgument,
          "cpg.capacity must be positive");
}

ScoreBank::ScoreBank(int class_id, std::size_t capacity, double delta_min)
    : class_id_(class_id), capacity_(capacity), delta_min_(delta_min) {
  Require(capacity > 0, ErrorCode::kInvalidArgument,
          "score bank capacity must be positive");
}

void ScoreBank::update(std::span<const double> batch_scores) {
  for (double s : batch_scores) {
    if (!(s > delta_min_) || s > 1.0) continue;
    scores_.push_back(s);
  }
  while (scores_.size() > capacity_) scores_.pop_front();
}

ScoreBank bank_update(ScoreBank bank, std::span<const double> batch_scores) {
  bank.update(batch_scores);
  return bank;
}

std::optional<TwoMeansSplit> two_means_split(std::span<const double> values) {
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  const std::size_t n = sorted.size();
  if (n < 2 || sorted.front() == sorted.back()) return std::nullopt;

  // Centering before accumulating keeps the prefix-sum WCSS accurate for
  // banks of tens of thousands of scores.
  long double shift = 0.0L;
  for (double v : sorted) shift += v;
  shift /= static_cast<long double>(n);

  std::vector<long double> sum(n + 1, 0.0L), sum_sq(n + 1, 0.0L);
  for (std::size_t i = 0; i < n; ++i) {
    const long double c = sorted[i] - shift;
    sum[i + 1] = sum[i] + c;
    sum_sq[i + 1] = sum_sq[i] + c * c;
  }
  const auto segment_wcss = [&](std::size_t lo, std::size_t hi) {
    const long double s = sum[hi] - sum[lo];
    const long double q = sum_sq[hi] - sum_sq[lo];
    const long double count = static_cast<long double>(hi - lo);
    return std::max(0.0L, q - s * s / count);
  };

  const long double tolerance = 1e-12L * std::max(1.0L, sum_sq[n]);
  std::optional<std::size_t> best;
  long double best_wcss = 0.0L;
  // Ascending split position = ascending threshold, so a strict improvement
  // is required to move off an earlier (lower-threshold) tie.
  for (std::size_t k = 1; k < n; ++k) {
    if (sorted[k - 1] == sorted[k]) continue;
    const long double w = segment_wcss(0, k) + segment_wcss(k, n);
    if (!best || w < best_wcss - tolerance) {
      best = k;
      best_wcss = w;
    }
  }

  const std::size_t k = *best;
  TwoMeansSplit out;
  out.threshold = sorted[k];
  out.low_count = k;
  out.high_count = n - k;
  out.low_centroid = static_cast<double>(sum[k] / k + shift);
  out.high_centroid =
      static_cast<double>((sum[n] - sum[k]) / static_cast<long double>(n - k) + shift);
  out.wcss = static_cast<double>(best_wcss);
  return out;
}

std::optional<TwoMeansSplit> kmeans2_threshold(const ScoreBank& bank,
                                               const CpgConfig& cfg) {
  if (bank.size() < std::max<std::size_t>(cfg.min_samples, 2)) return std::nullopt;
  const std::vector<double> values(bank.scores().begin(), bank.scores().end());
  return two_means_split(values);
}

const ClassThreshold* ThresholdTable::find(int class_id) const {
  const auto it = entries.find(class_id);
  return it == entries.end() ? nullptr : &it->second;
}

ScoreBankSet::ScoreBankSet(CpgConfig cfg) : cfg_(cfg) { cfg_.validate(); }

ScoreBank& ScoreBankSet::bank(int class_id) {
  auto it = banks_.find(class_id);
  if (it == banks_.end()) {
    it = banks_.emplace(class_id, ScoreBank(class_id, cfg_.capacity, cfg_.delta_min))
             .first;
  }
  return it->second;
}

void ScoreBankSet::observe(int class_id, std::span<const double> scores) {
  bank(class_id).update(scores);
}

void ScoreBankSet::observe(std::span<const Detection> preds,
                           std::span<const int> old_classes) {
  std::map<int, std::vector<double>> grouped;
  for (const Detection& d : preds) {
    if (std::find(old_classes.begin(), old_classes.end(), d.class_id) ==
        old_classes.end()) {
      continue;
    }
    if (d.score > cfg_.delta_min) grouped[d.class_id].push_back(d.score);
  }
  for (const auto& [class_id, scores] : grouped) observe(class_id, scores);
}

ThresholdTable ScoreBankSet::thresholds(std::span<const int> old_classes) const {
  ThresholdTable table;
  for (int c : old_classes) {
    ClassThreshold entry{cfg_.fallback_threshold, ThresholdSource::kFallback, 0};
    const auto it = banks_.find(c);
    if (it != banks_.end()) {
      entry.bank_size = it->second.size();
      if (const auto split = kmeans2_threshold(it->second, cfg_)) {
        entry.tau = split->threshold;
        entry.source = ThresholdSource::kClustered;
      }
    }
    table.entries[c] = entry;
  }
  return table;
}

std::string ScoreBankSet::to_json() const {
  nlohmann::json doc;
  doc["capacity"] = cfg_.capacity;
  doc["delta_min"] = cfg_.delta_min;
  doc["banks"] = nlohmann::json::array();
  for (const auto& [class_id, bank] : banks_) {
    doc["banks"].push_back(
        {{"class_id", class_id},
         {"scores", std::vector<double>(bank.scores().begin(), bank.scores().end())}});
  }
  return doc.dump(1);
}

ScoreBankSet ScoreBankSet::from_json(const std::string& text,
                                     const CpgConfig& cfg) {
  ScoreBankSet set(cfg);
  try {
    const auto doc = nlohmann::json::parse(text);
    for (const auto& entry : doc.at("banks")) {
      const int class_id = entry.at("class_id").get<int>();
      const auto scores = entry.at("scores").get<std::vector<double>>();
      set.observe(class_id, scores);
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kParse, std::string("score bank state: ") + e.what());
  }
  return set;
}

void ScoreBankSet::save(const std::string& path) const {
  std::ofstream out(path);
  Require(static_cast<bool>(out), ErrorCode::kIo, "cannot write " + path);
  out << to_json() << '\n';
}

ScoreBankSet ScoreBankSet::load(const std::string& path, const CpgConfig& cfg) {
  std::ifstream in(path);
  if (!in) return ScoreBankSet(cfg);
  std::stringstream buffer;
  buffer << in.rdbuf();
  return from_json(buffer.str(), cfg);
}

std::vector<Annotation> generate_pseudo_labels(ImageId image_id,
                                               std::span<const Detection> preds,
                                               const ThresholdTable& thresholds,
                                               std::span<const int> old_classes) {
  std::vector<Annotation> out;
  for (const Detection& d : preds) {
    if (std::find(old_classes.begin(), old_classes.end(), d.class_id) ==
        old_classes.end()) {
      continue;
    }
    const ClassThreshold* entry = thresholds.find(d.class_id);
    Require(entry != nullptr, ErrorCode::kNotFound,
            "pseudo-labels: no threshold for old class " +
                std::to_string(d.class_id));
    if (d.score >= entry->tau) {
      out.push_back({image_id, d.bbox, d.class_id, true, d.score, 0});
    }
  }
  return out;
}

std::vector<Annotation> deduplicate(std::span<const Annotation> pseudo,
                                    std::span<const Annotation> gt,
                                    double theta_nms) {
  std::vector<Annotation> out;
  for (const Annotation& p : pseudo) {
    double overlap = 0.0;
    for (const Annotation& g : gt) {
      if (g.image_id == p.image_id) overlap = std::max(overlap, iou(p.bbox, g.bbox));
    }
    if (overlap < theta_nms) out.push_back(p);
  }
  return out;
}

}  // namespace iod
