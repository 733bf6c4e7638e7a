#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "iod/error.h"
#include "iod/sim.h"
#include "oracles/finite_diff.h"

namespace iod {
namespace {

RunConfig small_config() {
  RunConfig c;
  c.world.classes_per_stage = {3, 2};
  c.world.train_images_per_stage = 48;
  c.world.test_images = 30;
  c.world.seed = 5;
  c.train.epochs = 2;
  c.train.batch_size = 8;
  return c;
}

TEST(WorldTest, DeterministicGivenSeed) {
  const WorldConfig cfg = small_config().world;
  const World a = generate_world(cfg), b = generate_world(cfg);
  EXPECT_EQ(a.means, b.means);
  ASSERT_EQ(a.train.size(), 2u);
  for (std::size_t s = 0; s < 2; ++s) {
    ASSERT_EQ(a.train[s].size(), b.train[s].size());
    for (std::size_t i = 0; i < a.train[s].size(); ++i) {
      EXPECT_EQ(a.train[s][i].semantic, b.train[s][i].semantic);
      EXPECT_EQ(a.train[s][i].positional, b.train[s][i].positional);
    }
  }
  EXPECT_EQ(to_json(a.test_gt).dump(), to_json(b.test_gt).dump());
}

TEST(WorldTest, ScheduleAndAnnotations) {
  const World w = generate_world(small_config().world);
  EXPECT_EQ(w.schedule.stages, (std::vector<std::vector<int>>{{0, 1, 2}, {3, 4}}));
  for (std::size_t s = 1; s <= 2; ++s) {
    for (const SimImage& img : w.train[s - 1]) {
      EXPECT_EQ(img.semantic.rows(), w.cfg.queries_per_image);
      EXPECT_EQ(img.positional.cols(), 4u);
      std::size_t objects = 0;
      for (std::size_t q = 0; q < img.object_class.size(); ++q) {
        if (img.object_class[q]) ++objects;
      }
      EXPECT_GE(objects, img.annotations.size());
      for (const Annotation& a : img.annotations) {
        EXPECT_EQ(w.schedule.stage_of(a.class_id), s);
      }
    }
  }
  EXPECT_EQ(w.test_gt.images.size(), 30u);
  EXPECT_EQ(w.test_gt.categories.size(), 5u);
}

TEST(WorldTest, BoxesStayInsideTheirBucket) {
  const World w = generate_world(small_config().world);
  const ScaleConfig scale;
  for (const SimImage& img : w.test) {
    for (std::size_t q = 0; q < img.object_class.size(); ++q) {
      if (!img.object_class[q]) continue;
      const BBox& b = img.query_box[q];
      EXPECT_GE(b.x(), 0.0);
      EXPECT_LE(b.right(), w.cfg.image_width);
      const double a = area(b);
      EXPECT_TRUE(a < 900 || (a >= 1200 && a <= 8000) || a >= 10500) << a;
      (void)scale;
    }
  }
}

TEST(WorldTest, ZeroNoiseGivesExactMeans) {
  WorldConfig cfg = small_config().world;
  cfg.noise = 0.0;
  cfg.margin = 0.0;
  const World w = generate_world(cfg);
  const ScaleConfig scale;
  for (const auto& stage : w.train) {
    for (const SimImage& img : stage) {
      for (std::size_t q = 0; q < img.object_class.size(); ++q) {
        if (!img.object_class[q]) continue;
        const double* mean = w.mean(*img.object_class[q], bucket_of(area(img.query_box[q]), scale));
        for (std::size_t k = 0; k < cfg.feature_dim; ++k) EXPECT_EQ(img.semantic(q, k), mean[k]);
      }
    }
  }
}

TEST(WorldTest, CooccurrenceRates) {
  WorldConfig cfg = small_config().world;
  cfg.cooccurrence_rate = 0.0;
  EXPECT_EQ(count_cooccurrence(generate_world(cfg), 2), 0u);
  cfg = WorldConfig{};
  const World w = generate_world(cfg);
  const double measured =
      double(count_cooccurrence(w, 2)) / double(cfg.train_images_per_stage);
  EXPECT_NEAR(measured, cfg.cooccurrence_rate, 0.02);
  EXPECT_EQ(count_cooccurrence(w, 1), 0u);
}

TEST(WorldTest, CrowdedCentersProduceAWarning) {
  WorldConfig cfg = small_config().world;
  cfg.margin = 50.0;
  EXPECT_FALSE(generate_world(cfg).warnings.empty());
}

TEST(StudentHeadTest, FlatRoundTrip) {
  StudentHead h = StudentHead::init(4, 3, true, -2.0);
  std::vector<double> p = h.flat();
  EXPECT_EQ(p.size(), h.num_params());
  for (std::size_t i = 0; i < p.size(); ++i) p[i] = 0.01 * double(i);
  StudentHead g = h;
  g.assign(p);
  EXPECT_EQ(g.flat(), p);
  EXPECT_THROW(g.assign(std::vector<double>(3)), Error);
}

TEST(StudentHeadTest, BackwardMatchesFiniteDifferences) {
  const World w = generate_world(small_config().world);
  const SimImage& img = w.train[1][0];
  StudentHead head = StudentHead::init(5, w.cfg.feature_dim, true, -1.0);
  std::vector<double> p = head.flat();
  Rng rng(3);
  for (double& v : p) v += 0.1 * rng.normal();
  head.assign(p);
  const std::size_t seen = 5;
  const HeadOutput out = forward(head, img, seen);
  // A fixed random linear functional of every output.
  Matrix wf(out.features.rows(), out.features.cols()), wl(out.logits.rows(), out.logits.cols()),
      wb(out.boxes.size(), 4);
  for (double& v : wf.values()) v = rng.normal();
  for (double& v : wl.values()) v = rng.normal();
  for (double& v : wb.values()) v = rng.normal();
  const auto objective = [&](const std::vector<double>& params) {
    StudentHead h = head;
    h.assign(params);
    const HeadOutput o = forward(h, img, seen);
    double s = 0;
    for (std::size_t i = 0; i < wf.values().size(); ++i) s += wf.values()[i] * o.features.values()[i];
    for (std::size_t i = 0; i < wl.values().size(); ++i) s += wl.values()[i] * o.logits.values()[i];
    for (std::size_t i = 0; i < o.boxes.size(); ++i) {
      for (int k = 0; k < 4; ++k) s += wb(i, k) * o.boxes[i][k];
    }
    return s;
  };
  const std::vector<double> analytic = backward(head, img, out, wf, wl, wb);
  EXPECT_LT(oracle::rel_error(analytic, oracle::numeric_gradient(objective, p, 1e-5)), 1e-6);
}

TEST(ModeTest, NamesRoundTrip) {
  for (const char* name : {"finetune", "crd", "cpg", "crd+cpg", "full"}) {
    EXPECT_EQ(to_string(parse_mode(name)), name);
  }
  EXPECT_THROW(parse_mode("fast"), Error);
  EXPECT_TRUE(uses_crd(Mode::kFull));
  EXPECT_TRUE(uses_cpg(Mode::kFull));
  EXPECT_TRUE(uses_std(Mode::kFull));
  EXPECT_FALSE(uses_std(Mode::kCrdCpg));
  EXPECT_FALSE(uses_cpg(Mode::kCrd));
}

class TrainStageTest : public ::testing::Test {
 protected:
  void SetUp() override {
    cfg_ = small_config();
    world_ = generate_world(cfg_.world);
    base_ = StudentHead::init(world_.cfg.num_classes(), world_.cfg.feature_dim, true,
                              cfg_.train.init_bias);
    StageContext ctx{&world_, 1, &cfg_, 1};
    train_stage(base_, nullptr, Mode::kFinetune, ctx);
  }
  RunConfig cfg_;
  World world_;
  StudentHead base_;
};

TEST_F(TrainStageTest, TeacherIsRequiredAndUntouched) {
  StageContext ctx{&world_, 2, &cfg_, 2};
  StudentHead student = base_;
  EXPECT_THROW(train_stage(student, nullptr, Mode::kFull, ctx), Error);
  const StudentHead teacher = base_;
  const std::vector<double> before = teacher.flat();
  train_stage(student, &teacher, Mode::kFull, ctx);
  EXPECT_EQ(teacher.flat(), before);
  EXPECT_NE(student.flat(), before);
}

TEST_F(TrainStageTest, LossDecomposition) {
  for (Mode mode : {Mode::kFinetune, Mode::kCrd, Mode::kCpg, Mode::kFull}) {
    StageContext ctx{&world_, 2, &cfg_, 1};
    StudentHead student = base_;
    const StudentHead teacher = base_;
    const StageRecord r = train_stage(student, &teacher, mode, ctx);
    ASSERT_EQ(r.epochs.size(), cfg_.train.epochs);
    for (const EpochRecord& e : r.epochs) {
      EXPECT_NEAR(e.loss.total, e.loss.detr + cfg_.lambda1 * e.loss.std_loss + e.loss.crd, 1e-9);
      EXPECT_NEAR(e.loss.crd, e.loss.crd_align + e.loss.crd_reg, 1e-9);
      if (!uses_crd(mode)) EXPECT_EQ(e.loss.crd, 0.0);
      if (!uses_std(mode)) EXPECT_EQ(e.loss.std_loss, 0.0);
      if (!uses_cpg(mode)) EXPECT_EQ(e.pseudo_labels, 0u);
    }
    if (uses_cpg(mode)) {
      EXPECT_EQ(r.thresholds.entries.size(), 3u);
    }
  }
}

TEST_F(TrainStageTest, ZeroLearningRateLeavesParameters) {
  RunConfig c = cfg_;
  c.train.learning_rate = 0.0;
  c.train.box_learning_rate = 0.0;
  c.train.epochs = 3;
  StageContext ctx{&world_, 2, &c, 1};
  StudentHead student = base_;
  const StudentHead teacher = base_;
  const StageRecord r = train_stage(student, &teacher, Mode::kFull, ctx);
  EXPECT_EQ(student.flat(), base_.flat());
  for (const EpochRecord& e : r.epochs) {
    // Teacher and student coincide, so the topology term is exactly zero.
    EXPECT_EQ(e.loss.std_loss, 0.0);
  }

  // Without pseudo-labels nothing changes between epochs.
  StudentHead frozen = base_;
  const StageRecord d = train_stage(frozen, &teacher, Mode::kCrd, ctx);
  EXPECT_EQ(frozen.flat(), base_.flat());
  for (const EpochRecord& e : d.epochs) {
    EXPECT_NEAR(e.loss.total, d.epochs[0].loss.total, 1e-12 * std::abs(d.epochs[0].loss.total));
  }
}

TEST_F(TrainStageTest, TopologyTermStartsNearZero) {
  RunConfig c = cfg_;
  c.train.epochs = 1;
  c.train.batch_size = 48;  // one step: the first batch sees teacher == student
  StageContext ctx{&world_, 2, &c, 1};
  StudentHead student = base_;
  const StudentHead teacher = base_;
  const StageRecord r = train_stage(student, &teacher, Mode::kFull, ctx);
  EXPECT_EQ(r.epochs[0].loss.std_loss, 0.0);
  EXPECT_GT(r.epochs[0].loss.detr, 0.0);
}

TEST_F(TrainStageTest, WorkerCountInvariance) {
  for (Mode mode : {Mode::kCrdCpg, Mode::kFull}) {
    StudentHead a = base_, b = base_;
    const StudentHead teacher = base_;
    StageContext one{&world_, 2, &cfg_, 1}, four{&world_, 2, &cfg_, 4};
    const StageRecord ra = train_stage(a, &teacher, mode, one);
    const StageRecord rb = train_stage(b, &teacher, mode, four);
    EXPECT_EQ(a.flat(), b.flat());
    for (std::size_t e = 0; e < ra.epochs.size(); ++e) {
      EXPECT_EQ(ra.epochs[e].loss.total, rb.epochs[e].loss.total);
    }
  }
}

TEST(RunExperimentTest, SingleStageRun) {
  RunConfig c = small_config();
  c.world.classes_per_stage = {3};
  c.train.modes = {"finetune", "full"};
  const RunLedger l = run_experiment(c, 2);
  ASSERT_EQ(l.modes.size(), 2u);
  for (const ModeRecord& m : l.modes) {
    ASSERT_EQ(m.stages.size(), 1u);
    const EvalReport& r = m.stages[0].report;
    EXPECT_FALSE(r.previous);
    EXPECT_EQ(r.current.map, r.all.map);
  }
  const auto j = to_json(l);
  EXPECT_TRUE(j["modes"][0]["stages"][0]["report"]["previous"].is_null());
}

TEST(RunExperimentTest, DeterministicLedgers) {
  RunConfig c = small_config();
  c.train.modes = {"cpg", "full"};
  const std::string a = to_json(run_experiment(c, 1)).dump();
  const std::string b = to_json(run_experiment(c, 3)).dump();
  const std::string again = to_json(run_experiment(c, 3)).dump();
  EXPECT_EQ(a, b);
  EXPECT_EQ(b, again);
}

TEST(RunExperimentTest, WritesOutputs) {
  RunConfig c = small_config();
  c.train.modes = {"finetune"};
  c.train.epochs = 1;
  const RunLedger l = run_experiment(c, 1);
  const auto dir = std::filesystem::temp_directory_path() / "iod_sim_outputs";
  std::filesystem::remove_all(dir);
  write_outputs(l, dir.string());
  for (const char* f : {"ledger.json", "report.json", "forgetting.csv", "pr_curves.csv",
                        "effective.conf"}) {
    EXPECT_TRUE(std::filesystem::exists(dir / f)) << f;
  }
  std::ifstream conf(dir / "effective.conf");
  const std::string text((std::istreambuf_iterator<char>(conf)), std::istreambuf_iterator<char>());
  EXPECT_EQ(dump_config(parse_config(text)), text);
  EXPECT_EQ(forgetting_csv(l).rfind("mode,stage,class_id,ap,ap50,ap75,drop_since_learned", 0), 0u);
  std::filesystem::remove_all(dir);
}

}  // namespace
}  // namespace iod
