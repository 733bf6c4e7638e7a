#ifndef IOD_CONFIG_H_
#define IOD_CONFIG_H_

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "iod/cpg.h"
#include "iod/crd.h"
#include "iod/detr_loss.h"
#include "iod/topology.h"

namespace iod {

// Synthetic world used by the simulator.
struct WorldConfig {
  std::vector<std::size_t> classes_per_stage{5, 5};
  std::size_t feature_dim = 8;
  std::size_t queries_per_image = 12;
  std::size_t min_objects = 1;
  std::size_t max_objects = 3;
  std::size_t train_images_per_stage = 240;
  std::size_t test_images = 200;
  double image_width = 512.0;
  double image_height = 512.0;
  double mean_scale = 2.0;    // spread of the class centers
  double bucket_shift = 0.8;  // spread of each bucket's offset from its class center
  double margin = 1.5;        // minimum distance between any two class centers
  double noise = 0.6;        // per-dimension feature noise
  double background_noise = 1.0;
  double box_noise = 0.02;   // noise on the positional channels (logit space)
  double cooccurrence_rate = 0.5;
  std::size_t map_size = 4;  // image feature map is map_size x map_size
  std::uint64_t seed = 17;

  std::size_t num_classes() const;
  void validate() const;
};

struct TrainConfig {
  std::vector<std::string> modes{"finetune", "crd", "cpg", "crd+cpg", "full"};
  std::size_t epochs = 20;
  std::size_t batch_size = 8;
  double learning_rate = 0.02;
  double box_learning_rate = 1e-5;  // step size of the box head
  double momentum = 0.9;
  bool adapter = true;
  double init_bias = -4.6;  // prior logit of the class head

  void validate() const;
};

struct IoConfig {
  std::string out_dir = "runs";
  std::size_t workers = 0;  // 0 = available parallel units
};

// Every tunable of a run. Keys are "section.name"; see config_schema().
struct RunConfig {
  StdConfig std_cfg;
  CrdConfig crd;
  CpgConfig cpg;
  DetrLossConfig detr;
  double lambda1 = 3.0;
  WorldConfig world;
  TrainConfig train;
  IoConfig io;

  void validate() const;
};

struct ConfigKey {
  std::string name;  // "section.key"
  std::string doc;
  std::string default_value;
};

// Documented schema in dump order.
std::vector<ConfigKey> config_schema();

// Parses "key = value" lines under "[section]" headers on top of defaults.
// '#' starts a comment. Unknown keys, malformed values, and conflicting
// aliases are errors that name `source` and the line.
RunConfig parse_config(const std::string& text, const std::string& source = "<config>");
RunConfig load_config(const std::string& path);

// Fully resolved config with doc comments; parse_config(dump_config(c)) == c.
std::string dump_config(const RunConfig& cfg);

// Sets one key from its textual value ("train.epochs", "3").
void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value);
std::string get_config_value(const RunConfig& cfg, const std::string& key);

// Name of the environment variable holding the default config path.
inline constexpr const char* kConfigEnvVar = "IOD_CONFIG";

std::size_t resolve_workers(std::size_t requested);

}  // namespace iod

#endif  // IOD_CONFIG_H_
