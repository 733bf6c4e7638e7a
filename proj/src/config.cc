#include "iod/config.h"

#include <cerrno>
#include <cmath>
#include <cstdlib>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <sstream>

#include "iod/coco.h"
#include "iod/error.h"
#include "iod/parallel.h"

namespace iod {
namespace {

double parse_double(const std::string& text) {
  const char* begin = text.c_str();
  char* end = nullptr;
  errno = 0;
  const double v = std::strtod(begin, &end);
  Require(end != begin && *end == '\0' && errno == 0 && std::isfinite(v),
          ErrorCode::kParse, "expected a finite number, got '" + text + "'");
  return v;
}

std::uint64_t parse_uint(const std::string& text) {
  Require(!text.empty() && text.find_first_not_of("0123456789") == std::string::npos,
          ErrorCode::kParse, "expected a non-negative integer, got '" + text + "'");
  errno = 0;
  const auto v = std::strtoull(text.c_str(), nullptr, 10);
  Require(errno == 0, ErrorCode::kParse, "integer out of range: '" + text + "'");
  return v;
}

bool parse_bool(const std::string& text) {
  if (text == "true") return true;
  if (text == "false") return false;
  throw Error(ErrorCode::kParse, "expected true or false, got '" + text + "'");
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    item = trim(item);
    Require(!item.empty(), ErrorCode::kParse, "empty list item in '" + text + "'");
    out.push_back(item);
  }
  return out;
}

template <typename T>
std::string join(const std::vector<T>& items) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i) out += ",";
    if constexpr (std::is_same_v<T, std::string>) {
      out += items[i];
    } else {
      out += std::to_string(items[i]);
    }
  }
  return out;
}

std::string bool_text(bool v) { return v ? "true" : "false"; }

struct Entry {
  std::string name;
  std::string doc;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

template <typename Field>
Entry real(std::string name, std::string doc, Field field) {
  return {std::move(name), std::move(doc),
          [field](const RunConfig& c) { return format_double(field(const_cast<RunConfig&>(c))); },
          [field](RunConfig& c, const std::string& v) { field(c) = parse_double(v); }};
}

template <typename Field>
Entry count(std::string name, std::string doc, Field field) {
  return {std::move(name), std::move(doc),
          [field](const RunConfig& c) { return std::to_string(field(const_cast<RunConfig&>(c))); },
          [field](RunConfig& c, const std::string& v) {
            field(c) = static_cast<std::remove_reference_t<decltype(field(c))>>(parse_uint(v));
          }};
}

template <typename Field>
Entry flag(std::string name, std::string doc, Field field) {
  return {std::move(name), std::move(doc),
          [field](const RunConfig& c) { return bool_text(field(const_cast<RunConfig&>(c))); },
          [field](RunConfig& c, const std::string& v) { field(c) = parse_bool(v); }};
}

const std::vector<Entry>& entries() {
  static const std::vector<Entry> table = [] {
    std::vector<Entry> t;
    // std
    t.push_back(real("std.temperature", "affinity softmax temperature",
                     [](RunConfig& c) -> double& { return c.std_cfg.temperature; }));
    t.push_back(flag("std.include_background_anchor",
                     "append the pooled image feature as a topology node",
                     [](RunConfig& c) -> bool& { return c.std_cfg.include_background_anchor; }));
    t.push_back(real("std.weight", "weight of the topology loss (alias of loss.lambda1)",
                     [](RunConfig& c) -> double& { return c.lambda1; }));
    t.push_back(real("std.tau_s", "small/medium area boundary in pixels^2",
                     [](RunConfig& c) -> double& { return c.std_cfg.scale.tau_s; }));
    t.push_back(real("std.tau_m", "medium/large area boundary in pixels^2",
                     [](RunConfig& c) -> double& { return c.std_cfg.scale.tau_m; }));
    // crd
    t.push_back(real("crd.temperature", "response softmax temperature",
                     [](RunConfig& c) -> double& { return c.crd.temperature; }));
    t.push_back(real("crd.bbox_l1_weight", "L1 weight of box distillation",
                     [](RunConfig& c) -> double& { return c.crd.bbox_l1_weight; }));
    t.push_back(real("crd.bbox_giou_weight", "GIoU weight of box distillation",
                     [](RunConfig& c) -> double& { return c.crd.bbox_giou_weight; }));
    t.push_back(flag("crd.tau_squared", "scale the alignment KL by temperature^2",
                     [](RunConfig& c) -> bool& { return c.crd.tau_squared; }));
    // cpg
    t.push_back(real("cpg.delta_min", "scores at or below this never enter a bank",
                     [](RunConfig& c) -> double& { return c.cpg.delta_min; }));
    t.push_back(count("cpg.capacity", "per-class bank capacity",
                      [](RunConfig& c) -> std::size_t& { return c.cpg.capacity; }));
    t.push_back(real("cpg.theta_nms", "IoU at which a pseudo-label duplicates ground truth",
                     [](RunConfig& c) -> double& { return c.cpg.theta_nms; }));
    t.push_back(count("cpg.min_samples", "bank size needed before clustering",
                      [](RunConfig& c) -> std::size_t& { return c.cpg.min_samples; }));
    t.push_back(real("cpg.fallback_threshold", "threshold used before clustering",
                     [](RunConfig& c) -> double& { return c.cpg.fallback_threshold; }));
    // loss
    t.push_back(real("loss.lambda1", "weight of the topology loss in the total",
                     [](RunConfig& c) -> double& { return c.lambda1; }));
    t.push_back(real("loss.focal_alpha", "focal alpha for loss and matching cost",
                     [](RunConfig& c) -> double& { return c.detr.focal.alpha; }));
    t.push_back(real("loss.focal_gamma", "focal gamma for loss and matching cost",
                     [](RunConfig& c) -> double& { return c.detr.focal.gamma; }));
    t.push_back(real("loss.pseudo_weight", "loss multiplier for pseudo-label targets",
                     [](RunConfig& c) -> double& { return c.detr.pseudo_weight; }));
    t.push_back(real("loss.class_weight", "weight of the focal alignment loss",
                     [](RunConfig& c) -> double& { return c.detr.class_weight; }));
    t.push_back(real("loss.bbox_l1_weight", "weight of the L1 box loss",
                     [](RunConfig& c) -> double& { return c.detr.box.l1; }));
    t.push_back(real("loss.bbox_giou_weight", "weight of the GIoU box loss",
                     [](RunConfig& c) -> double& { return c.detr.box.giou; }));
    t.push_back(real("loss.match_class_weight", "class term of the matching cost",
                     [](RunConfig& c) -> double& { return c.detr.matching.class_weight; }));
    t.push_back(real("loss.match_l1_weight", "L1 term of the matching cost",
                     [](RunConfig& c) -> double& { return c.detr.matching.l1_weight; }));
    t.push_back(real("loss.match_giou_weight", "GIoU term of the matching cost",
                     [](RunConfig& c) -> double& { return c.detr.matching.giou_weight; }));
    // world
    t.push_back({"world.classes_per_stage", "number of new classes in each stage",
                 [](const RunConfig& c) { return join(c.world.classes_per_stage); },
                 [](RunConfig& c, const std::string& v) {
                   std::vector<std::size_t> out;
                   for (const auto& item : split_list(v)) out.push_back(parse_uint(item));
                   c.world.classes_per_stage = out;
                 }});
    t.push_back(count("world.feature_dim", "semantic feature dimension",
                      [](RunConfig& c) -> std::size_t& { return c.world.feature_dim; }));
    t.push_back(count("world.queries_per_image", "queries per image",
                      [](RunConfig& c) -> std::size_t& { return c.world.queries_per_image; }));
    t.push_back(count("world.min_objects", "fewest annotated-class objects per image",
                      [](RunConfig& c) -> std::size_t& { return c.world.min_objects; }));
    t.push_back(count("world.max_objects", "most annotated-class objects per image",
                      [](RunConfig& c) -> std::size_t& { return c.world.max_objects; }));
    t.push_back(count("world.train_images_per_stage", "training images per stage",
                      [](RunConfig& c) -> std::size_t& { return c.world.train_images_per_stage; }));
    t.push_back(count("world.test_images", "held-out images covering every class",
                      [](RunConfig& c) -> std::size_t& { return c.world.test_images; }));
    t.push_back(real("world.image_width", "image width in pixels",
                     [](RunConfig& c) -> double& { return c.world.image_width; }));
    t.push_back(real("world.image_height", "image height in pixels",
                     [](RunConfig& c) -> double& { return c.world.image_height; }));
    t.push_back(real("world.mean_scale", "standard deviation of the class centers",
                     [](RunConfig& c) -> double& { return c.world.mean_scale; }));
    t.push_back(real("world.bucket_shift", "spread of the per-bucket offsets of a class",
                     [](RunConfig& c) -> double& { return c.world.bucket_shift; }));
    t.push_back(real("world.margin", "minimum distance between class centers",
                     [](RunConfig& c) -> double& { return c.world.margin; }));
    t.push_back(real("world.noise", "object feature noise",
                     [](RunConfig& c) -> double& { return c.world.noise; }));
    t.push_back(real("world.background_noise", "background query feature noise",
                     [](RunConfig& c) -> double& { return c.world.background_noise; }));
    t.push_back(real("world.box_noise", "noise on positional channels",
                     [](RunConfig& c) -> double& { return c.world.box_noise; }));
    t.push_back(real("world.cooccurrence_rate",
                     "fraction of later-stage images with unlabeled old objects",
                     [](RunConfig& c) -> double& { return c.world.cooccurrence_rate; }));
    t.push_back(count("world.map_size", "side of the image feature map",
                      [](RunConfig& c) -> std::size_t& { return c.world.map_size; }));
    t.push_back(count("world.seed", "random seed",
                      [](RunConfig& c) -> std::uint64_t& { return c.world.seed; }));
    // train
    t.push_back({"train.modes", "ablation modes: finetune, crd, cpg, crd+cpg, full",
                 [](const RunConfig& c) { return join(c.train.modes); },
                 [](RunConfig& c, const std::string& v) { c.train.modes = split_list(v); }});
    t.push_back(count("train.epochs", "epochs per stage",
                      [](RunConfig& c) -> std::size_t& { return c.train.epochs; }));
    t.push_back(count("train.batch_size", "images per optimizer step",
                      [](RunConfig& c) -> std::size_t& { return c.train.batch_size; }));
    t.push_back(real("train.learning_rate", "gradient descent step size",
                     [](RunConfig& c) -> double& { return c.train.learning_rate; }));
    t.push_back(real("train.box_learning_rate", "step size of the box-regression head",
                     [](RunConfig& c) -> double& { return c.train.box_learning_rate; }));
    t.push_back(real("train.momentum", "heavy-ball momentum, 0 disables",
                     [](RunConfig& c) -> double& { return c.train.momentum; }));
    t.push_back(flag("train.adapter", "train a feature adapter ahead of the heads",
                     [](RunConfig& c) -> bool& { return c.train.adapter; }));
    t.push_back(real("train.init_bias", "initial class-head bias",
                     [](RunConfig& c) -> double& { return c.train.init_bias; }));
    // io
    t.push_back({"io.out_dir", "output directory",
                 [](const RunConfig& c) { return c.io.out_dir; },
                 [](RunConfig& c, const std::string& v) {
                   Require(!v.empty(), ErrorCode::kParse, "empty output directory");
                   c.io.out_dir = v;
                 }});
    t.push_back(count("io.workers", "worker threads, 0 = available parallel units",
                      [](RunConfig& c) -> std::size_t& { return c.io.workers; }));
    return t;
  }();
  return table;
}

const Entry& entry(const std::string& key) {
  for (const auto& e : entries()) {
    if (e.name == key) return e;
  }
  throw Error(ErrorCode::kNotFound, "unknown config key '" + key + "'");
}

}  // namespace

std::size_t WorldConfig::num_classes() const {
  std::size_t n = 0;
  for (auto c : classes_per_stage) n += c;
  return n;
}

void WorldConfig::validate() const {
  Require(!classes_per_stage.empty(), ErrorCode::kInvalidArgument,
          "world.classes_per_stage must list at least one stage");
  for (auto c : classes_per_stage) {
    Require(c > 0, ErrorCode::kInvalidArgument, "world.classes_per_stage entries must be > 0");
  }
  Require(feature_dim > 0, ErrorCode::kInvalidArgument, "world.feature_dim must be > 0");
  Require(min_objects >= 1 && min_objects <= max_objects, ErrorCode::kInvalidArgument,
          "world.min_objects must be in [1, max_objects]");
  // Co-occurrence images carry up to max_objects old objects on top.
  Require(queries_per_image >= 2 * max_objects, ErrorCode::kInvalidArgument,
          "world.queries_per_image must be at least 2 * world.max_objects");
  Require(train_images_per_stage > 0 && test_images > 0, ErrorCode::kInvalidArgument,
          "world image counts must be > 0");
  Require(image_width >= 256 && image_height >= 256, ErrorCode::kInvalidArgument,
          "world image sides must be at least 256 pixels");
  Require(mean_scale > 0 && bucket_shift >= 0 && margin >= 0 && noise >= 0 && background_noise >= 0 &&
              box_noise >= 0,
          ErrorCode::kInvalidArgument, "world spreads must be non-negative");
  Require(cooccurrence_rate >= 0 && cooccurrence_rate <= 1, ErrorCode::kInvalidArgument,
          "world.cooccurrence_rate must be in [0, 1]");
  Require(map_size > 0, ErrorCode::kInvalidArgument, "world.map_size must be > 0");
}

void TrainConfig::validate() const {
  static const std::set<std::string> known{"finetune", "crd", "cpg", "crd+cpg", "full"};
  Require(!modes.empty(), ErrorCode::kInvalidArgument, "train.modes is empty");
  for (const auto& m : modes) {
    Require(known.count(m) > 0, ErrorCode::kInvalidArgument, "unknown mode '" + m + "'");
  }
  Require(batch_size > 0, ErrorCode::kInvalidArgument, "train.batch_size must be > 0");
  Require(learning_rate >= 0 && box_learning_rate >= 0, ErrorCode::kInvalidArgument,
          "train learning rates must be >= 0");
  Require(momentum >= 0 && momentum < 1, ErrorCode::kInvalidArgument,
          "train.momentum must be in [0, 1)");
}

void RunConfig::validate() const {
  std_cfg.validate();
  crd.validate();
  cpg.validate();
  Require(lambda1 >= 0, ErrorCode::kInvalidArgument, "loss.lambda1 must be >= 0");
  Require(detr.focal.alpha >= 0 && detr.focal.alpha <= 1 && detr.focal.gamma >= 0,
          ErrorCode::kInvalidArgument, "focal parameters out of range");
  Require(detr.pseudo_weight >= 0 && detr.class_weight >= 0 && detr.box.l1 >= 0 &&
              detr.box.giou >= 0,
          ErrorCode::kInvalidArgument, "loss weights must be >= 0");
  world.validate();
  train.validate();
}

std::vector<ConfigKey> config_schema() {
  const RunConfig defaults;
  std::vector<ConfigKey> out;
  for (const auto& e : entries()) out.push_back({e.name, e.doc, e.get(defaults)});
  return out;
}

void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value) {
  entry(key).set(cfg, value);
}

std::string get_config_value(const RunConfig& cfg, const std::string& key) {
  return entry(key).get(cfg);
}

RunConfig parse_config(const std::string& text, const std::string& source) {
  RunConfig cfg;
  std::string section;
  std::map<std::string, std::pair<std::string, std::size_t>> seen;
  std::istringstream in(text);
  std::string raw;
  std::size_t line_no = 0;
  const auto fail = [&](const std::string& what) {
    throw Error(ErrorCode::kParse, source + ":" + std::to_string(line_no) + ": " + what);
  };
  while (std::getline(in, raw)) {
    ++line_no;
    std::string line = raw;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') fail("malformed section header '" + line + "'");
      section = trim(line.substr(1, line.size() - 2));
      if (section.empty()) fail("empty section name");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) fail("expected 'key = value', got '" + line + "'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) fail("missing key");
    const std::string full = key.find('.') == std::string::npos
                                 ? (section.empty() ? key : section + "." + key)
                                 : key;
    if (seen.count(full)) {
      fail("duplicate key '" + full + "' (first set on line " +
           std::to_string(seen[full].second) + ")");
    }
    seen[full] = {value, line_no};
    try {
      entry(full).set(cfg, value);
    } catch (const Error& e) {
      fail(e.code() == ErrorCode::kNotFound ? "unknown key '" + full + "'"
                                            : full + ": " + e.what());
    }
  }
  if (seen.count("std.weight") && seen.count("loss.lambda1")) {
    const auto a = parse_double(seen["std.weight"].first);
    const auto b = parse_double(seen["loss.lambda1"].first);
    if (a != b) {
      line_no = seen["loss.lambda1"].second;
      fail("loss.lambda1 conflicts with std.weight (set on line " +
           std::to_string(seen["std.weight"].second) + ")");
    }
  }
  cfg.detr.matching.focal = cfg.detr.focal;
  try {
    cfg.validate();
  } catch (const Error& e) {
    throw Error(e.code(), source + ": " + e.what());
  }
  return cfg;
}

RunConfig load_config(const std::string& path) {
  return parse_config(read_file(path), path);
}

std::string dump_config(const RunConfig& cfg) {
  std::ostringstream out;
  std::string section;
  for (const auto& e : entries()) {
    const auto dot = e.name.find('.');
    const std::string s = e.name.substr(0, dot);
    if (s != section) {
      if (!section.empty()) out << '\n';
      out << '[' << s << "]\n";
      section = s;
    }
    out << "# " << e.doc << '\n' << e.name.substr(dot + 1) << " = " << e.get(cfg) << '\n';
  }
  return out.str();
}

std::size_t resolve_workers(std::size_t requested) {
  return requested == 0 ? default_workers() : requested;
}

}  // namespace iod
