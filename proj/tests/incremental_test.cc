#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <set>
#include <sstream>

#include "iod/coco.h"
#include "iod/error.h"
#include "iod/incremental.h"
#include "scenarios.h"

namespace iod {
namespace {

CocoDataset small_dataset() {
  CocoDataset d;
  d.categories = {{0, "airplane"}, {1, "Expressway-Service-area"}, {2, "ship"}, {3, "dam"}};
  for (ImageId id = 1; id <= 4; ++id) d.images.push_back({id, "im", 100, 100});
  // 1: old only; 2: mixed; 3: new only; 4: nothing.
  d.annotations = {{1, BBox(0, 0, 5, 5), 0, false, std::nullopt, 1},
                   {2, BBox(0, 0, 5, 5), 1, false, std::nullopt, 2},
                   {2, BBox(5, 5, 5, 5), 2, false, std::nullopt, 3},
                   {3, BBox(1, 1, 5, 5), 3, false, std::nullopt, 4}};
  return d;
}

const TaskSchedule kSchedule{"s", {{0, 1}, {2, 3}}};

TEST(TaskScheduleTest, Accessors) {
  EXPECT_NO_THROW(kSchedule.validate());
  EXPECT_EQ(kSchedule.classes_before(1), std::vector<int>{});
  EXPECT_EQ(kSchedule.classes_before(2), (std::vector<int>{0, 1}));
  EXPECT_EQ(kSchedule.classes_through(2), (std::vector<int>{0, 1, 2, 3}));
  EXPECT_EQ(kSchedule.stage_of(3), 2u);
  EXPECT_EQ(kSchedule.stage_of(9), 0u);
  EXPECT_THROW(kSchedule.classes_of(3), Error);
  EXPECT_THROW(kSchedule.classes_of(0), Error);
}

TEST(TaskScheduleTest, RejectsOverlapAndEmptyStages) {
  EXPECT_THROW((TaskSchedule{"x", {{0, 1}, {1}}}.validate()), Error);
  EXPECT_THROW((TaskSchedule{"x", {{0}, {}}}.validate()), Error);
  EXPECT_THROW((TaskSchedule{"x", {}}.validate()), Error);
}

TEST(ScheduleParsingTest, TextFormatAndResolution) {
  const NamedSchedule n =
      parse_schedule("# comment\nAirplane, service-area\n\n  ship ,DAM # trailing\n", "mine");
  EXPECT_EQ(n.name, "mine");
  ASSERT_EQ(n.stages.size(), 2u);
  EXPECT_EQ(n.stages[0], (std::vector<std::string>{"Airplane", "service-area"}));
  const TaskSchedule t = resolve_schedule(n, small_dataset().categories);
  EXPECT_EQ(t.stages, (std::vector<std::vector<int>>{{0, 1}, {2, 3}}));
  EXPECT_THROW(parse_schedule("# nothing\n", "x"), Error);
  EXPECT_THROW(resolve_schedule(NamedSchedule{"x", {{"tank"}}}, small_dataset().categories), Error);
  EXPECT_THROW(resolve_schedule(NamedSchedule{"x", {{"ship"}, {"Ship"}}}, small_dataset().categories),
               Error);
}

TEST(SchedulePresetsTest, ContentsAndDisjointness) {
  const NamedSchedule* dior = find_preset("dior-5+5+5+5");
  ASSERT_NE(dior, nullptr);
  EXPECT_EQ(dior->stages[0], (std::vector<std::string>{"airplane", "airport", "bridge",
                                                       "service-area", "toll-station"}));
  const NamedSchedule* dota = find_preset("dota-5+5+5");
  ASSERT_NE(dota, nullptr);
  ASSERT_EQ(dota->stages.size(), 3u);
  EXPECT_EQ(dota->stages[2], (std::vector<std::string>{"storage-tank", "harbor", "roundabout",
                                                       "basketball-court", "swimming-pool"}));
  ASSERT_NE(find_preset("dior-10+10"), nullptr);
  EXPECT_EQ(find_preset("nope"), nullptr);
  for (const auto& p : schedule_presets()) {
    std::set<std::string> names;
    std::size_t total = 0;
    for (const auto& stage : p.stages) {
      EXPECT_FALSE(stage.empty());
      for (const auto& n : stage) {
        std::string key;
        for (char c : n) {
          if (std::isalnum(static_cast<unsigned char>(c))) key += std::tolower(c);
        }
        names.insert(key);
        ++total;
      }
    }
    EXPECT_EQ(names.size(), total) << p.name;
  }
  EXPECT_EQ(find_preset("dior-10+10")->stages.size(), 2u);
}

TEST(BuildStageDatasetTest, Examples) {
  const CocoDataset gt = small_dataset();
  const CocoDataset s2 = build_stage_dataset(gt, kSchedule, 2);
  // Image 1 (old only) and 4 (empty) dropped; image 2 keeps only class 2.
  ASSERT_EQ(s2.images.size(), 2u);
  EXPECT_EQ(s2.images[0].id, 2);
  EXPECT_EQ(s2.images[1].id, 3);
  ASSERT_EQ(s2.annotations.size(), 2u);
  for (const auto& a : s2.annotations) EXPECT_TRUE(a.class_id == 2 || a.class_id == 3);
  EXPECT_EQ(s2.categories.size(), 4u);
  EXPECT_EQ(s2.info["stage"], 2);
  EXPECT_EQ(s2.info["schedule"], "s");
  EXPECT_EQ(s2.info["source_hash"].get<std::string>().size(), 16u);

  const TaskSchedule all{"all", {{0, 1, 2, 3}}};
  const CocoDataset s1 = build_stage_dataset(gt, all, 1);
  EXPECT_EQ(s1.annotations.size(), gt.annotations.size());
  EXPECT_THROW(build_stage_dataset(gt, TaskSchedule{"x", {{0}, {7}}}, 1), Error);
}

TEST(CooccurrenceStatsTest, Examples) {
  const CocoDataset gt = small_dataset();
  const SplitStats s = cooccurrence_stats(gt, kSchedule, 2);
  EXPECT_EQ(s.only_old, 1u);
  EXPECT_EQ(s.only_new, 1u);
  EXPECT_EQ(s.cooccurrence, 1u);
  EXPECT_DOUBLE_EQ(s.cooccurrence_rate(), 0.5);

  const SplitStats s1 = cooccurrence_stats(gt, kSchedule, 1);
  EXPECT_EQ(s1.cooccurrence, 0u);
  EXPECT_EQ(s1.cooccurrence_rate(), 0.0);

  const CocoDataset clean = testing::planted_cooccurrence(1, 50, 0.0, 10);
  EXPECT_EQ(cooccurrence_stats(clean, testing::two_stage_schedule(), 2).cooccurrence, 0u);
}

TEST(CooccurrenceStatsTest, PlantedRates) {
  for (double rate : {0.1, 0.235, 0.5, 0.574, 0.9}) {
    const CocoDataset d = testing::planted_cooccurrence(7, 400, rate, 60);
    const SplitStats s = cooccurrence_stats(d, testing::two_stage_schedule(), 2);
    EXPECT_NEAR(s.cooccurrence_rate(), rate, 0.02);
    EXPECT_EQ(s.only_old, 60u);
    EXPECT_EQ(s.total(), 460u);
  }
}

TEST(IncrementalProperties, StageCoverage) {
  const CocoDataset d = testing::planted_cooccurrence(3, 100, 0.3, 20);
  const TaskSchedule sched = testing::two_stage_schedule();
  std::set<ImageId> covered;
  for (std::size_t stage = 1; stage <= 2; ++stage) {
    const CocoDataset s = build_stage_dataset(d, sched, stage);
    for (const auto& a : s.annotations) EXPECT_EQ(sched.stage_of(a.class_id), stage);
    for (const auto& im : s.images) covered.insert(im.id);
  }
  std::set<ImageId> labelled;
  for (const auto& a : d.annotations) labelled.insert(a.image_id);
  EXPECT_EQ(covered, labelled);
}

TEST(CocoIoTest, RoundTrip) {
  CocoDataset d = testing::planted_cooccurrence(5, 20, 0.5, 5);
  d.annotations[0].is_pseudo = true;
  d.annotations[0].score = 0.875;
  d.info["note"] = "x";
  const CocoDataset back = parse_coco(to_json(d).dump());
  ASSERT_EQ(back.images.size(), d.images.size());
  ASSERT_EQ(back.annotations.size(), d.annotations.size());
  for (std::size_t i = 0; i < d.annotations.size(); ++i) {
    const auto &a = d.annotations[i], &b = back.annotations[i];
    EXPECT_EQ(a.id, b.id);
    EXPECT_EQ(a.image_id, b.image_id);
    EXPECT_EQ(a.class_id, b.class_id);
    EXPECT_EQ(a.bbox, b.bbox);
    EXPECT_EQ(a.is_pseudo, b.is_pseudo);
    EXPECT_EQ(a.score, b.score);
  }
  EXPECT_EQ(back.categories.size(), 4u);
  EXPECT_EQ(back.info["note"], "x");
  const auto path = std::filesystem::temp_directory_path() / "iod_roundtrip.json";
  save_coco(d, path.string());
  EXPECT_EQ(to_json(load_coco(path.string())).dump(), to_json(d).dump());
  std::filesystem::remove(path);
}

TEST(CocoIoTest, RejectsCrowdAndBadBoxes) {
  EXPECT_THROW(parse_coco(R"({"images":[],"categories":[],"annotations":[
      {"id":1,"image_id":1,"category_id":0,"bbox":[0,0,5,5],"iscrowd":1}]})"),
               Error);
  EXPECT_THROW(parse_coco(R"({"images":[],"categories":[],"annotations":[
      {"id":1,"image_id":1,"category_id":0,"bbox":[0,0,0,5]}]})"),
               Error);
  EXPECT_THROW(parse_coco("{"), Error);
  EXPECT_THROW(parse_coco(R"({"images":[]})"), Error);
}

TEST(DetectionStreamTest, ParseAndWrite) {
  std::istringstream in("# header\n1 10 20 30 40 0.5 2\n\n2,1,1,4,4,0.25,0\n");
  const auto dets = parse_detection_stream(in);
  ASSERT_EQ(dets.size(), 2u);
  EXPECT_EQ(dets[0].image_id, 1);
  EXPECT_EQ(dets[0].bbox, BBox(10, 20, 30, 40));
  EXPECT_EQ(dets[1].class_id, 0);
  std::ostringstream out;
  write_detection_stream(out, dets);
  std::istringstream again(out.str());
  const auto back = parse_detection_stream(again);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[1].score, 0.25);
  std::istringstream bad("1 2 3 4 5 1.5 0\n");
  EXPECT_THROW(parse_detection_stream(bad), Error);
  std::istringstream short_line("1 2 3\n");
  EXPECT_THROW(parse_detection_stream(short_line), Error);
}

TEST(FormatDoubleTest, RoundTrips) {
  for (double v : {0.1, 1.0 / 3.0, 1e-300, 12345.678, -2.5}) {
    EXPECT_EQ(std::stod(format_double(v)), v);
  }
  EXPECT_EQ(fnv1a_hex(""), "cbf29ce484222325");
}

}  // namespace
}  // namespace iod
