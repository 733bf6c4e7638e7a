#include "iod/sim.h"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include "iod/box_loss.h"
#include "iod/coco.h"
#include "iod/cpg.h"
#include "iod/crd.h"
#include "iod/detr_loss.h"
#include "iod/error.h"
#include "iod/matching.h"
#include "iod/parallel.h"
#include "iod/scale.h"
#include "iod/topology.h"

namespace iod {
namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
double logit(double p) { return std::log(p / (1.0 - p)); }

// Area ranges that sit strictly inside each bucket of the default scale
// config, so jitter never moves a box across a boundary.
constexpr double kAreaRange[3][2] = {{256.0, 900.0}, {1200.0, 8000.0}, {10500.0, 40000.0}};

BBox sample_box(Rng& rng, ScaleBucket bucket, double width, double height) {
  const auto& range = kAreaRange[static_cast<int>(bucket)];
  const double a = rng.uniform(range[0], range[1]);
  const double ratio = std::exp(rng.uniform(std::log(0.5), std::log(2.0)));
  const double w = std::sqrt(a * ratio);
  const double h = a / w;
  return BBox(rng.uniform(0.0, width - w), rng.uniform(0.0, height - h), w, h);
}

struct Placed {
  std::optional<int> class_id;
  bool visible = false;
};

class WorldBuilder {
 public:
  WorldBuilder(const WorldConfig& cfg, World& world) : cfg_(cfg), world_(world), rng_(cfg.seed) {}

  void build_means() {
    const std::size_t k = cfg_.num_classes();
    const std::size_t d = cfg_.feature_dim;
    Matrix centers(k, d);
    bool crowded = false;
    for (std::size_t c = 0; c < k; ++c) {
      for (int attempt = 0; attempt < 1000; ++attempt) {
        for (std::size_t j = 0; j < d; ++j) centers(c, j) = cfg_.mean_scale * rng_.normal();
        if (min_distance(centers, c) >= cfg_.margin) break;
        if (attempt == 999) crowded = true;
      }
    }
    world_.means = Matrix(k * 3, d);
    for (std::size_t c = 0; c < k; ++c) {
      for (std::size_t b = 0; b < 3; ++b) {
        for (std::size_t j = 0; j < d; ++j) {
          world_.means(c * 3 + b, j) = centers(c, j) + cfg_.bucket_shift * rng_.normal();
        }
      }
    }
    if (crowded) {
      world_.warnings.push_back("some class centers are closer than world.margin");
    }
    if (cfg_.margin <= cfg_.noise) {
      world_.warnings.push_back("world.margin <= world.noise: classes may be inseparable");
    }
  }

  SimImage image(ImageId id, const std::vector<Placed>& objects) {
    const std::size_t q = cfg_.queries_per_image;
    const std::size_t d = cfg_.feature_dim;
    SimImage img;
    img.id = id;
    img.semantic = Matrix(q, d);
    img.positional = Matrix(q, 4);
    img.object_class.assign(q, std::nullopt);

    std::vector<std::size_t> slots(q);
    std::iota(slots.begin(), slots.end(), 0);
    rng_.shuffle(slots);
    std::vector<std::optional<std::size_t>> owner(q);
    for (std::size_t o = 0; o < objects.size(); ++o) owner[slots[o]] = o;

    for (std::size_t s = 0; s < q; ++s) {
      const auto bucket = static_cast<ScaleBucket>(rng_.index(3));
      const BBox box = sample_box(rng_, bucket, cfg_.image_width, cfg_.image_height);
      img.query_box.push_back(box);
      if (owner[s]) {
        const Placed& obj = objects[*owner[s]];
        img.object_class[s] = obj.class_id;
        const double* mu = world_.mean(*obj.class_id, bucket);
        for (std::size_t j = 0; j < d; ++j) img.semantic(s, j) = mu[j] + cfg_.noise * rng_.normal();
        if (obj.visible) {
          img.annotations.push_back(
              Annotation{id, box, *obj.class_id, false, std::nullopt, next_annotation_++});
        }
      } else {
        for (std::size_t j = 0; j < d; ++j) img.semantic(s, j) = cfg_.background_noise * rng_.normal();
      }
      const NormBox nb = normalize(box, cfg_.image_width, cfg_.image_height);
      for (int j = 0; j < 4; ++j) img.positional(s, j) = logit(nb[j]) + cfg_.box_noise * rng_.normal();
    }

    const std::size_t m = cfg_.map_size;
    img.image_features = FeatureMap(m, m, d);
    for (std::size_t y = 0; y < m; ++y) {
      for (std::size_t x = 0; x < m; ++x) {
        const std::size_t src = rng_.index(q);
        for (std::size_t j = 0; j < d; ++j) {
          img.image_features.at(y, x, j) = img.semantic(src, j) + cfg_.noise * rng_.normal();
        }
      }
    }
    return img;
  }

  int pick(const std::vector<int>& classes) { return classes[rng_.index(classes.size())]; }
  std::size_t count() {
    return cfg_.min_objects + rng_.index(cfg_.max_objects - cfg_.min_objects + 1);
  }
  Rng& rng() { return rng_; }

 private:
  static double min_distance(const Matrix& m, std::size_t r) {
    double best = INFINITY;
    for (std::size_t o = 0; o < r; ++o) {
      double ss = 0.0;
      for (std::size_t j = 0; j < m.cols(); ++j) {
        const double diff = m(r, j) - m(o, j);
        ss += diff * diff;
      }
      best = std::min(best, std::sqrt(ss));
    }
    return best;
  }

  const WorldConfig& cfg_;
  World& world_;
  Rng rng_;
  std::int64_t next_annotation_ = 1;
};

// Detections from the first `columns` logits of each query.
std::vector<Detection> detect_columns(const HeadOutput& out, std::size_t columns,
                                      double width, double height) {
  std::vector<Detection> dets;
  for (std::size_t q = 0; q < out.logits.rows(); ++q) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < columns; ++c) {
      if (out.logits(q, c) > out.logits(q, best)) best = c;
    }
    NormBox nb = out.boxes[q];
    nb.w = std::max(nb.w, 1e-9);
    nb.h = std::max(nb.h, 1e-9);
    dets.push_back(Detection{denormalize(nb, width, height), sigmoid(out.logits(q, best)),
                             static_cast<int>(best), q});
  }
  return dets;
}

std::uint64_t mix(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  std::uint64_t h = seed ^ 0x9e3779b97f4a7c15ULL;
  for (std::uint64_t v : {a, b}) {
    h ^= v + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
    h *= 0xbf58476d1ce4e5b9ULL;
  }
  return h;
}

LayerResponses responses(const HeadOutput& out) {
  return LayerResponses{out.logits, out.boxes, 0};
}

struct ImageStep {
  double detr = 0.0;
  double crd = 0.0;
  double crd_align = 0.0;
  double crd_reg = 0.0;
  std::vector<double> grad;
};

}  // namespace

const double* World::mean(int class_id, ScaleBucket bucket) const {
  return means.row(static_cast<std::size_t>(class_id) * 3 + static_cast<std::size_t>(bucket))
      .data();
}

World generate_world(const WorldConfig& cfg) {
  cfg.validate();
  World world;
  world.cfg = cfg;
  world.schedule.name = "sim";
  int next_class = 0;
  for (std::size_t n : cfg.classes_per_stage) {
    std::vector<int> ids;
    for (std::size_t i = 0; i < n; ++i) ids.push_back(next_class++);
    world.schedule.stages.push_back(ids);
  }

  WorldBuilder builder(cfg, world);
  builder.build_means();

  for (std::size_t s = 1; s <= world.schedule.num_stages(); ++s) {
    const auto& fresh = world.schedule.classes_of(s);
    const auto old = world.schedule.classes_before(s);
    const std::size_t n = cfg.train_images_per_stage;
    const auto co = old.empty() ? 0
                                : static_cast<std::size_t>(std::llround(
                                      cfg.cooccurrence_rate * static_cast<double>(n)));
    std::vector<bool> has_old(n, false);
    {
      std::vector<std::size_t> order(n);
      std::iota(order.begin(), order.end(), 0);
      builder.rng().shuffle(order);
      for (std::size_t i = 0; i < co; ++i) has_old[order[i]] = true;
    }
    std::vector<SimImage> images;
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<Placed> objects;
      const std::size_t k = builder.count();
      for (std::size_t o = 0; o < k; ++o) objects.push_back({builder.pick(fresh), true});
      if (has_old[i]) {
        const std::size_t extra = 1 + builder.rng().index(cfg.max_objects);
        for (std::size_t o = 0; o < extra; ++o) objects.push_back({builder.pick(old), false});
      }
      images.push_back(builder.image(static_cast<ImageId>(s * 1000000 + i), objects));
    }
    world.train.push_back(std::move(images));
  }

  std::vector<int> all = world.schedule.classes_through(world.schedule.num_stages());
  for (std::size_t i = 0; i < cfg.test_images; ++i) {
    std::vector<Placed> objects;
    const std::size_t k = builder.count();
    for (std::size_t o = 0; o < k; ++o) objects.push_back({builder.pick(all), true});
    world.test.push_back(builder.image(static_cast<ImageId>(i + 1), objects));
  }

  world.test_gt.info = {{"description", "synthetic test split"}, {"seed", cfg.seed}};
  for (int c : all) world.test_gt.categories.push_back({c, "class_" + std::to_string(c)});
  for (const auto& img : world.test) {
    world.test_gt.images.push_back(
        {img.id, "test_" + std::to_string(img.id), cfg.image_width, cfg.image_height});
    for (const auto& a : img.annotations) world.test_gt.annotations.push_back(a);
  }
  return world;
}

std::size_t count_cooccurrence(const World& world, std::size_t stage) {
  std::size_t n = 0;
  for (const auto& img : world.train.at(stage - 1)) {
    for (const auto& c : img.object_class) {
      if (c && world.schedule.stage_of(*c) < stage) {
        ++n;
        break;
      }
    }
  }
  return n;
}

StudentHead StudentHead::init(std::size_t num_classes, std::size_t dim, bool adapter,
                              double init_bias) {
  StudentHead h;
  h.num_classes = num_classes;
  h.dim = dim;
  h.adapter = adapter;
  h.adapter_w = Matrix(dim, dim);
  for (std::size_t i = 0; i < dim; ++i) h.adapter_w(i, i) = 1.0;
  h.class_w = Matrix(num_classes, dim);
  h.class_b.assign(num_classes, init_bias);
  // The box head starts by reading the positional channels directly.
  h.box_w = Matrix(4, dim + 4);
  for (std::size_t k = 0; k < 4; ++k) h.box_w(k, dim + k) = 1.0;
  h.box_b.assign(4, 0.0);
  return h;
}

std::size_t StudentHead::num_params() const {
  return dim * dim + num_classes * dim + num_classes + 4 * (dim + 4) + 4;
}

std::vector<double> StudentHead::flat() const {
  std::vector<double> out;
  out.reserve(num_params());
  out.insert(out.end(), adapter_w.values().begin(), adapter_w.values().end());
  out.insert(out.end(), class_w.values().begin(), class_w.values().end());
  out.insert(out.end(), class_b.begin(), class_b.end());
  out.insert(out.end(), box_w.values().begin(), box_w.values().end());
  out.insert(out.end(), box_b.begin(), box_b.end());
  return out;
}

void StudentHead::assign(std::span<const double> params) {
  Require(params.size() == num_params(), ErrorCode::kShapeMismatch,
          "student head: parameter vector has the wrong length");
  auto it = params.begin();
  const auto take = [&](std::span<double> dst) {
    std::copy(it, it + static_cast<std::ptrdiff_t>(dst.size()), dst.begin());
    it += static_cast<std::ptrdiff_t>(dst.size());
  };
  take(adapter_w.values());
  take(class_w.values());
  take(class_b);
  take(box_w.values());
  take(box_b);
}

HeadOutput forward(const StudentHead& head, const SimImage& image, std::size_t seen_classes) {
  Require(seen_classes >= 1 && seen_classes <= head.num_classes, ErrorCode::kInvalidArgument,
          "forward: seen class count out of range");
  Require(image.semantic.cols() == head.dim, ErrorCode::kShapeMismatch,
          "forward: feature dimension does not match the head");
  const std::size_t q = image.semantic.rows();
  const std::size_t d = head.dim;
  HeadOutput out;
  out.features = Matrix(q, d);
  out.logits = Matrix(q, seen_classes);
  for (std::size_t i = 0; i < q; ++i) {
    for (std::size_t r = 0; r < d; ++r) {
      double z = 0.0;
      for (std::size_t e = 0; e < d; ++e) z += head.adapter_w(r, e) * image.semantic(i, e);
      out.features(i, r) = z;
    }
    for (std::size_t c = 0; c < seen_classes; ++c) {
      double v = head.class_b[c];
      for (std::size_t r = 0; r < d; ++r) v += head.class_w(c, r) * out.features(i, r);
      out.logits(i, c) = v;
    }
    NormBox box;
    for (std::size_t k = 0; k < 4; ++k) {
      double u = head.box_b[k];
      for (std::size_t r = 0; r < d; ++r) u += head.box_w(k, r) * out.features(i, r);
      for (std::size_t j = 0; j < 4; ++j) u += head.box_w(k, d + j) * image.positional(i, j);
      box[static_cast<int>(k)] = sigmoid(u);
    }
    out.boxes.push_back(box);
  }
  return out;
}

std::vector<double> backward(const StudentHead& head, const SimImage& image,
                             const HeadOutput& out, const Matrix& d_features,
                             const Matrix& d_logits, const Matrix& d_boxes) {
  const std::size_t q = image.semantic.rows();
  const std::size_t d = head.dim;
  const std::size_t k = head.num_classes;
  const std::size_t seen = out.logits.cols();
  std::vector<double> grad(head.num_params(), 0.0);
  double* g_adapter = grad.data();
  double* g_class_w = g_adapter + d * d;
  double* g_class_b = g_class_w + k * d;
  double* g_box_w = g_class_b + k;
  double* g_box_b = g_box_w + 4 * (d + 4);

  std::vector<double> dz(d);
  for (std::size_t i = 0; i < q; ++i) {
    for (std::size_t r = 0; r < d; ++r) dz[r] = d_features.empty() ? 0.0 : d_features(i, r);
    for (std::size_t c = 0; c < seen; ++c) {
      const double g = d_logits(i, c);
      if (g == 0.0) continue;
      g_class_b[c] += g;
      for (std::size_t r = 0; r < d; ++r) {
        g_class_w[c * d + r] += g * out.features(i, r);
        dz[r] += g * head.class_w(c, r);
      }
    }
    for (std::size_t j = 0; j < 4; ++j) {
      const double b = out.boxes[i][static_cast<int>(j)];
      const double gu = d_boxes(i, j) * b * (1.0 - b);
      if (gu == 0.0) continue;
      g_box_b[j] += gu;
      for (std::size_t r = 0; r < d; ++r) {
        g_box_w[j * (d + 4) + r] += gu * out.features(i, r);
        dz[r] += gu * head.box_w(j, r);
      }
      for (std::size_t e = 0; e < 4; ++e) {
        g_box_w[j * (d + 4) + d + e] += gu * image.positional(i, e);
      }
    }
    if (head.adapter) {
      for (std::size_t r = 0; r < d; ++r) {
        for (std::size_t e = 0; e < d; ++e) g_adapter[r * d + e] += dz[r] * image.semantic(i, e);
      }
    }
  }
  return grad;
}

std::vector<Detection> detect(const HeadOutput& out, double image_width,
                              double image_height) {
  return detect_columns(out, out.logits.cols(), image_width, image_height);
}

Mode parse_mode(const std::string& name) {
  if (name == "finetune") return Mode::kFinetune;
  if (name == "crd") return Mode::kCrd;
  if (name == "cpg") return Mode::kCpg;
  if (name == "crd+cpg") return Mode::kCrdCpg;
  if (name == "full") return Mode::kFull;
  throw Error(ErrorCode::kInvalidArgument, "unknown mode '" + name + "'");
}

std::string to_string(Mode mode) {
  switch (mode) {
    case Mode::kFinetune: return "finetune";
    case Mode::kCrd: return "crd";
    case Mode::kCpg: return "cpg";
    case Mode::kCrdCpg: return "crd+cpg";
    case Mode::kFull: return "full";
  }
  return "?";
}

bool uses_crd(Mode mode) {
  return mode == Mode::kCrd || mode == Mode::kCrdCpg || mode == Mode::kFull;
}
bool uses_cpg(Mode mode) {
  return mode == Mode::kCpg || mode == Mode::kCrdCpg || mode == Mode::kFull;
}
bool uses_std(Mode mode) { return mode == Mode::kFull; }

StageRecord train_stage(StudentHead& student, const StudentHead* teacher, Mode mode,
                        const StageContext& ctx) {
  const World& world = *ctx.world;
  const RunConfig& cfg = *ctx.cfg;
  const std::size_t stage = ctx.stage;
  Require(stage >= 1 && stage <= world.train.size(), ErrorCode::kInvalidArgument,
          "train_stage: stage out of range");
  Require(mode == Mode::kFinetune || teacher != nullptr, ErrorCode::kInvalidArgument,
          "train_stage: mode '" + to_string(mode) + "' needs a teacher");

  const auto old = world.schedule.classes_before(stage);
  const std::size_t seen = world.schedule.classes_through(stage).size();
  const std::size_t num_old = old.size();
  const bool crd = uses_crd(mode) && num_old > 0;
  const bool cpg = uses_cpg(mode) && num_old > 0;
  const bool topo = uses_std(mode) && num_old > 0;
  const bool need_teacher = crd || cpg || topo;
  const double width = world.cfg.image_width;
  const double height = world.cfg.image_height;
  const std::size_t q = world.cfg.queries_per_image;
  const std::size_t d = world.cfg.feature_dim;

  const auto& images = world.train[stage - 1];
  ScoreBankSet banks(cfg.cpg);
  std::vector<double> params = student.flat();
  std::vector<double> velocity(params.size(), 0.0);
  // Box-head parameters sit at the end of the flat layout.
  const std::size_t box_begin = params.size() - 4 * (d + 4) - 4;

  StageRecord record;
  record.stage = stage;
  for (std::size_t epoch = 1; epoch <= cfg.train.epochs; ++epoch) {
    std::vector<std::size_t> order(images.size());
    std::iota(order.begin(), order.end(), 0);
    Rng(mix(world.cfg.seed, stage, epoch)).shuffle(order);

    double sum_detr = 0.0, sum_std = 0.0, sum_crd = 0.0, sum_align = 0.0, sum_reg = 0.0;
    double sum_total = 0.0;
    std::size_t pseudo_count = 0;

    for (std::size_t start = 0; start < order.size(); start += cfg.train.batch_size) {
      const std::size_t b = std::min(cfg.train.batch_size, order.size() - start);
      const auto img = [&](std::size_t i) -> const SimImage& { return images[order[start + i]]; };

      std::vector<HeadOutput> s_out(b), t_out(need_teacher ? b : 0);
      parallel_for(b, ctx.workers, [&](std::size_t i) {
        s_out[i] = forward(student, img(i), seen);
        if (need_teacher) t_out[i] = forward(*teacher, img(i), seen);
      });

      // Pseudo-labels from the teacher, with banks updated in image order.
      std::vector<std::vector<Annotation>> pseudo(b);
      std::vector<QueryLabels> labels(b, QueryLabels(q));
      if (cpg) {
        std::vector<std::vector<Detection>> t_dets(b);
        for (std::size_t i = 0; i < b; ++i) {
          t_dets[i] = detect_columns(t_out[i], num_old, width, height);
          banks.observe(t_dets[i], old);
        }
        const ThresholdTable table = banks.thresholds(old);
        for (std::size_t i = 0; i < b; ++i) {
          std::vector<std::pair<double, std::size_t>> kept;
          std::vector<std::optional<Annotation>> per_query(q);
          for (const Detection& det : t_dets[i]) {
            const auto p = generate_pseudo_labels(img(i).id, std::span(&det, 1), table, old);
            const auto survivors = deduplicate(p, img(i).annotations, cfg.cpg.theta_nms);
            if (survivors.empty()) continue;
            per_query[det.query_index] = survivors.front();
            kept.push_back({det.score, det.query_index});
          }
          // Never more targets than queries.
          const std::size_t room = q - img(i).annotations.size();
          if (kept.size() > room) {
            std::stable_sort(kept.begin(), kept.end(),
                             [](const auto& a, const auto& c) { return a.first > c.first; });
            kept.resize(room);
            std::sort(kept.begin(), kept.end(),
                      [](const auto& a, const auto& c) { return a.second < c.second; });
          }
          for (const auto& [score, query] : kept) {
            pseudo[i].push_back(*per_query[query]);
            labels[i][query] = QueryLabel{per_query[query]->class_id, score};
          }
          pseudo_count += kept.size();
        }
      }

      // Topology distillation over the whole batch.
      std::vector<Matrix> d_features(b);
      double batch_std = 0.0;
      if (topo) {
        QueryBatch tb, sb;
        tb.features = Matrix(b * q, d);
        sb.features = Matrix(b * q, d);
        std::vector<BBox> boxes;
        QueryLabels all_labels;
        const std::size_t m = world.cfg.map_size;
        FeatureMap map(m * b, m, d);
        for (std::size_t i = 0; i < b; ++i) {
          const auto t_dets = detect_columns(t_out[i], num_old, width, height);
          for (std::size_t r = 0; r < q; ++r) {
            std::copy_n(t_out[i].features.row(r).begin(), d, tb.features.row(i * q + r).begin());
            std::copy_n(s_out[i].features.row(r).begin(), d, sb.features.row(i * q + r).begin());
            boxes.push_back(t_dets[r].bbox);
            all_labels.push_back(labels[i][r]);
          }
          std::copy(img(i).image_features.values.begin(), img(i).image_features.values.end(),
                    map.values.begin() + static_cast<std::ptrdiff_t>(i * m * m * d));
        }
        tb.image_features = map;
        sb.image_features = map;
        const ScalePartition part = partition(std::span<const BBox>(boxes), cfg.std_cfg.scale);
        const StdResult r = std_loss_and_grad(tb, sb, all_labels, part, cfg.std_cfg);
        batch_std = r.loss;
        for (std::size_t i = 0; i < b; ++i) {
          d_features[i] = Matrix(q, d);
          for (std::size_t row = 0; row < q; ++row) {
            for (std::size_t j = 0; j < d; ++j) {
              d_features[i](row, j) = cfg.lambda1 * r.grad(i * q + row, j);
            }
          }
        }
      }

      std::vector<ImageStep> steps(b);
      parallel_for(b, ctx.workers, [&](std::size_t i) {
        std::vector<Annotation> anns = img(i).annotations;
        anns.insert(anns.end(), pseudo[i].begin(), pseudo[i].end());
        const auto targets = to_targets(anns, width, height);
        const LayerResponses preds = responses(s_out[i]);
        const MatchResult m = match(preds, targets, cfg.detr.matching);
        const DetrLoss dl = detr_loss(preds, targets, m, cfg.detr);
        Matrix d_logits = dl.logit_grad;
        Matrix d_boxes = dl.box_grad;
        ImageStep& step = steps[i];
        step.detr = dl.loss;
        if (crd) {
          const LayerResponses t = responses(t_out[i]);
          const CrdTotal ct = crd_total(std::span(&t, 1), std::span(&preds, 1), old, cfg.crd);
          step.crd = ct.total;
          step.crd_align = ct.align;
          step.crd_reg = ct.reg;
          const auto& layer = ct.layers.front();
          for (std::size_t k = 0; k < d_logits.values().size(); ++k) {
            d_logits.values()[k] += layer.align.grad.values()[k];
          }
          for (std::size_t k = 0; k < d_boxes.values().size(); ++k) {
            d_boxes.values()[k] += layer.reg.grad.values()[k];
          }
        }
        step.grad = backward(student, img(i), s_out[i], d_features[i], d_logits, d_boxes);
      });

      std::vector<double> grad(params.size(), 0.0);
      double batch_detr = 0.0, batch_crd = 0.0;
      for (const ImageStep& step : steps) {
        batch_detr += step.detr;
        batch_crd += step.crd;
        sum_align += step.crd_align;
        sum_reg += step.crd_reg;
        for (std::size_t k = 0; k < grad.size(); ++k) grad[k] += step.grad[k];
      }
      const LossBreakdown batch = total_loss(batch_detr, batch_std, batch_crd, cfg.lambda1);
      sum_detr += batch_detr;
      sum_std += batch_std;
      sum_crd += batch_crd;
      sum_total += batch.total;

      const double scale = 1.0 / static_cast<double>(b);
      for (std::size_t k = 0; k < params.size(); ++k) {
        velocity[k] = cfg.train.momentum * velocity[k] + grad[k] * scale;
        const double lr = k < box_begin ? cfg.train.learning_rate : cfg.train.box_learning_rate;
        params[k] -= lr * velocity[k];
      }
      student.assign(params);
    }

    const double n = static_cast<double>(images.size());
    EpochRecord er;
    er.epoch = epoch;
    er.loss = total_loss(sum_detr / n, sum_std / n, sum_crd / n, cfg.lambda1);
    er.loss.crd_align = sum_align / n;
    er.loss.crd_reg = sum_reg / n;
    er.loss.total = sum_total / n;
    er.pseudo_labels = pseudo_count;
    record.epochs.push_back(er);
  }
  if (cpg) record.thresholds = banks.thresholds(old);
  return record;
}

EvalReport evaluate_head(const StudentHead& head, const World& world, std::size_t stage,
                         const RunConfig& cfg, std::size_t workers) {
  const std::size_t seen = world.schedule.classes_through(stage).size();
  std::vector<std::vector<ImageDetection>> per_image(world.test.size());
  parallel_for(world.test.size(), workers, [&](std::size_t i) {
    const SimImage& img = world.test[i];
    for (const Detection& d :
         detect(forward(head, img, seen), world.cfg.image_width, world.cfg.image_height)) {
      per_image[i].push_back({img.id, d.bbox, d.score, d.class_id});
    }
  });
  std::vector<ImageDetection> dets;
  for (auto& v : per_image) dets.insert(dets.end(), v.begin(), v.end());
  EvalConfig ec;
  ec.areas = cfg.std_cfg.scale;
  ec.workers = workers;
  return evaluate(dets, world.test_gt, world.schedule, stage, ec);
}

RunLedger run_experiment(const RunConfig& cfg, std::size_t workers) {
  cfg.validate();
  const World world = generate_world(cfg.world);
  RunLedger ledger;
  ledger.seed = cfg.world.seed;
  ledger.config = dump_config(cfg);
  ledger.warnings = world.warnings;

  StudentHead base = StudentHead::init(cfg.world.num_classes(), cfg.world.feature_dim,
                                       cfg.train.adapter, cfg.train.init_bias);
  StageContext ctx{&world, 1, &cfg, workers};
  StageRecord first = train_stage(base, nullptr, Mode::kFinetune, ctx);
  first.report = evaluate_head(base, world, 1, cfg, workers);

  for (const auto& name : cfg.train.modes) {
    ModeRecord mr;
    mr.mode = parse_mode(name);
    mr.stages.push_back(first);
    StudentHead student = base;
    for (std::size_t s = 2; s <= world.schedule.num_stages(); ++s) {
      const StudentHead teacher = student;
      ctx.stage = s;
      StageRecord rec = train_stage(student, &teacher, mr.mode, ctx);
      rec.report = evaluate_head(student, world, s, cfg, workers);
      mr.stages.push_back(std::move(rec));
    }
    ledger.modes.push_back(std::move(mr));
  }
  return ledger;
}

namespace {

nlohmann::json loss_json(const LossBreakdown& l) {
  return {{"detr", l.detr},   {"std", l.std_loss},   {"crd", l.crd},
          {"crd_align", l.crd_align}, {"crd_reg", l.crd_reg}, {"lambda1", l.lambda1},
          {"total", l.total}};
}

nlohmann::json opt_json(const std::optional<double>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

}  // namespace

nlohmann::json to_json(const RunLedger& ledger) {
  nlohmann::json doc;
  doc["seed"] = ledger.seed;
  doc["config"] = ledger.config;
  doc["warnings"] = ledger.warnings;
  doc["modes"] = nlohmann::json::array();
  for (const auto& mr : ledger.modes) {
    nlohmann::json stages = nlohmann::json::array();
    for (const auto& sr : mr.stages) {
      nlohmann::json epochs = nlohmann::json::array();
      for (const auto& er : sr.epochs) {
        epochs.push_back(
            {{"epoch", er.epoch}, {"loss", loss_json(er.loss)}, {"pseudo_labels", er.pseudo_labels}});
      }
      nlohmann::json thresholds = nlohmann::json::array();
      for (const auto& [c, t] : sr.thresholds.entries) {
        thresholds.push_back(
            {{"class_id", c},
             {"tau", t.tau},
             {"source", t.source == ThresholdSource::kClustered ? "clustered" : "fallback"},
             {"bank_size", t.bank_size}});
      }
      stages.push_back({{"stage", sr.stage},
                        {"epochs", epochs},
                        {"thresholds", thresholds},
                        {"report", to_json(sr.report)}});
    }
    doc["modes"].push_back({{"mode", to_string(mr.mode)}, {"stages", stages}});
  }
  return doc;
}

nlohmann::json summary_json(const RunLedger& ledger) {
  nlohmann::json doc;
  doc["seed"] = ledger.seed;
  doc["modes"] = nlohmann::json::array();
  for (const auto& mr : ledger.modes) {
    nlohmann::json stages = nlohmann::json::array();
    for (const auto& sr : mr.stages) {
      const EvalReport& r = sr.report;
      nlohmann::json s = {{"stage", sr.stage},
                          {"mAP_A", opt_json(r.all.map)},
                          {"mAP50_A", opt_json(r.all.map50)},
                          {"mAP_C", opt_json(r.current.map)},
                          {"mAP50_C", opt_json(r.current.map50)}};
      if (r.previous) {
        s["mAP_P"] = opt_json(r.previous->map);
        s["mAP50_P"] = opt_json(r.previous->map50);
      }
      stages.push_back(s);
    }
    doc["modes"].push_back({{"mode", to_string(mr.mode)}, {"stages", stages}});
  }
  return doc;
}

std::string forgetting_csv(const RunLedger& ledger) {
  std::ostringstream out;
  out << "mode,stage,class_id,ap,ap50,ap75,drop_since_learned\n";
  for (const auto& mr : ledger.modes) {
    for (const auto& sr : mr.stages) {
      for (const auto& c : sr.report.classes) {
        if (!c.ap) continue;
        // AP at the stage where the class was learned.
        std::optional<double> learned;
        for (const auto& earlier : mr.stages) {
          if (const ClassEval* e = earlier.report.find(c.class_id); e && e->ap) {
            learned = e->ap;
            break;
          }
        }
        out << to_string(mr.mode) << ',' << sr.stage << ',' << c.class_id << ','
            << format_double(*c.ap) << ',' << format_double(*c.ap50) << ','
            << format_double(*c.ap75) << ',' << format_double(*learned - *c.ap) << '\n';
      }
    }
  }
  return out.str();
}

std::string pr_curves_csv(const RunLedger& ledger) {
  std::ostringstream out;
  out << "mode,stage,class_id,iou_threshold,recall,precision\n";
  for (const auto& mr : ledger.modes) {
    for (const auto& sr : mr.stages) {
      std::istringstream rows(pr_curve_csv(sr.report));
      std::string line;
      std::getline(rows, line);  // header
      while (std::getline(rows, line)) {
        out << to_string(mr.mode) << ',' << sr.stage << ',' << line << '\n';
      }
    }
  }
  return out.str();
}

void write_outputs(const RunLedger& ledger, const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  Require(!ec, ErrorCode::kIo, "cannot create output directory '" + dir + "'");
  const auto write = [&](const std::string& name, const std::string& text) {
    const std::string path = (std::filesystem::path(dir) / name).string();
    std::ofstream out(path, std::ios::binary);
    Require(static_cast<bool>(out), ErrorCode::kIo, "cannot write '" + path + "'");
    out << text;
  };
  write("ledger.json", to_json(ledger).dump(1) + "\n");
  nlohmann::json report = summary_json(ledger);
  report["reports"] = nlohmann::json::array();
  for (const auto& mr : ledger.modes) {
    for (const auto& sr : mr.stages) {
      nlohmann::json r = to_json(sr.report);
      r["mode"] = to_string(mr.mode);
      report["reports"].push_back(r);
    }
  }
  write("report.json", report.dump(1) + "\n");
  write("forgetting.csv", forgetting_csv(ledger));
  write("pr_curves.csv", pr_curves_csv(ledger));
  write("effective.conf", ledger.config);
}

}  // namespace iod
