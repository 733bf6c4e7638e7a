#include "iod/cli.h"

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>

#include "CLI11.hpp"
#include "iod/coco.h"
#include "iod/config.h"
#include "iod/cpg.h"
#include "iod/error.h"
#include "iod/gradcheck.h"
#include "iod/incremental.h"
#include "iod/metrics.h"
#include "iod/sim.h"

namespace iod {
namespace {

struct Streams {
  std::ostream& out;
  std::ostream& err;
};

void write_text(const std::string& path, const std::string& text) {
  if (const auto parent = std::filesystem::path(path).parent_path(); !parent.empty()) {
    std::filesystem::create_directories(parent);
  }
  std::ofstream out(path, std::ios::binary);
  Require(static_cast<bool>(out), ErrorCode::kIo, "cannot write '" + path + "'");
  out << text;
}

RunConfig config_from(const std::string& path) {
  if (!path.empty()) return load_config(path);
  if (const char* env = std::getenv(kConfigEnvVar); env != nullptr && *env != '\0') {
    return load_config(env);
  }
  return RunConfig{};
}

TaskSchedule schedule_for(const std::string& spec, const CocoDataset& gt) {
  TaskSchedule s = resolve_schedule(load_schedule(spec), gt.categories);
  s.validate();
  return s;
}

std::vector<std::size_t> stages_of(const TaskSchedule& s, std::size_t stage) {
  if (stage == 0) {
    std::vector<std::size_t> all(s.num_stages());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i + 1;
    return all;
  }
  Require(stage <= s.num_stages(), ErrorCode::kInvalidArgument,
          "stage " + std::to_string(stage) + " exceeds the schedule's " +
              std::to_string(s.num_stages()) + " stages");
  return {stage};
}

std::string pct(double v) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(2) << 100.0 * v;
  return s.str();
}

std::string pct(const std::optional<double>& v) { return v ? pct(*v) : "-"; }

}  // namespace

int dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  Streams io{out, err};
  CLI::App app{"Incremental object detection toolkit", "iodkit"};
  app.fallthrough();
  app.require_subcommand(1);
  app.failure_message(CLI::FailureMessage::help);
  std::size_t workers = 0;
  app.add_option("--workers", workers, "Worker threads (0 = available parallel units)");

  // split
  auto* split = app.add_subcommand("split", "Write per-stage training sets");
  std::string split_gt, split_schedule, split_out;
  std::size_t split_stage = 0;
  split->add_option("--gt", split_gt, "COCO annotation file")->required();
  split->add_option("--schedule", split_schedule, "Schedule file or preset name")->required();
  split->add_option("--stage", split_stage, "Stage to write (default: all)");
  split->add_option("--out-dir", split_out, "Output directory")->required();

  // stats
  auto* stats = app.add_subcommand("stats", "Only-Old / Only-New / Co-occurrence counts");
  std::string stats_gt, stats_schedule, stats_json;
  std::size_t stats_stage = 0;
  stats->add_option("--gt", stats_gt, "COCO annotation file")->required();
  stats->add_option("--schedule", stats_schedule, "Schedule file or preset name")->required();
  stats->add_option("--stage", stats_stage, "Stage to report (default: all)");
  stats->add_option("--json", stats_json, "Also write the statistics as JSON");

  // pseudo
  auto* pseudo = app.add_subcommand("pseudo", "Generate pseudo-labels for old classes");
  std::string ps_dets, ps_gt, ps_banks, ps_out, ps_report, ps_config, ps_schedule;
  std::size_t ps_stage = 0;
  std::vector<int> ps_old;
  pseudo->add_option("--detections", ps_dets, "Teacher detection stream")->required();
  pseudo->add_option("--gt", ps_gt, "COCO annotation file of the current stage")->required();
  pseudo->add_option("--banks", ps_banks, "Score bank state file (created if missing)")
      ->required();
  pseudo->add_option("--out", ps_out, "Augmented COCO annotation file")->required();
  pseudo->add_option("--report", ps_report, "Threshold report CSV (default: stdout)");
  pseudo->add_option("--config", ps_config, "Config file")->envname(kConfigEnvVar);
  pseudo->add_option("--old-classes", ps_old, "Old class ids")->delimiter(',');
  pseudo->add_option("--schedule", ps_schedule, "Schedule; old classes precede --stage");
  pseudo->add_option("--stage", ps_stage, "Current stage (with --schedule)");

  // eval
  auto* eval = app.add_subcommand("eval", "COCO-protocol incremental evaluation");
  std::string ev_dets, ev_gt, ev_schedule, ev_out, ev_csv, ev_config;
  std::size_t ev_stage = 0, ev_max_dets = 100;
  eval->add_option("--detections", ev_dets, "Detection stream")->required();
  eval->add_option("--gt", ev_gt, "COCO annotation file")->required();
  eval->add_option("--schedule", ev_schedule, "Schedule file or preset name")->required();
  eval->add_option("--stage", ev_stage, "Stage reached (default: last)");
  eval->add_option("--out", ev_out, "Report JSON path");
  eval->add_option("--pr-csv", ev_csv, "PR-curve CSV path");
  eval->add_option("--max-dets", ev_max_dets, "Detections kept per image and class");
  eval->add_option("--config", ev_config, "Config file (area boundaries)")->envname(kConfigEnvVar);

  // simulate
  auto* sim = app.add_subcommand("simulate", "Run the synthetic incremental experiment");
  std::string sim_config, sim_out;
  std::vector<std::string> sim_modes, sim_sets;
  std::optional<std::uint64_t> sim_seed;
  bool sim_print = false;
  sim->add_option("--config", sim_config, "Config file")->envname(kConfigEnvVar);
  sim->add_option("--mode", sim_modes, "Ablation mode (repeatable)")->delimiter(',');
  sim->add_option("--seed", sim_seed, "World seed");
  sim->add_option("--out-dir", sim_out, "Output directory");
  sim->add_option("--set", sim_sets, "Override a config key: section.key=value");
  sim->add_flag("--print-config", sim_print, "Print the effective config and exit");

  // gradcheck
  auto* grad = app.add_subcommand("gradcheck", "Finite-difference gradient suites");
  GradcheckOptions gopts;
  std::vector<std::string> suites;
  grad->add_option("--seeds", gopts.seeds, "Random instances per suite");
  grad->add_option("--base-seed", gopts.base_seed, "First seed");
  grad->add_option("--suite", suites, "Suite to run (default: all)")
      ->check(CLI::IsMember(gradcheck_suites()));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, io.out, io.err);
    return code == 0 ? 0 : 2;
  }

  try {
    workers = resolve_workers(workers);

    if (*split) {
      const CocoDataset gt = load_coco(split_gt);
      const TaskSchedule schedule = schedule_for(split_schedule, gt);
      for (std::size_t s : stages_of(schedule, split_stage)) {
        const CocoDataset part = build_stage_dataset(gt, schedule, s);
        const std::string path =
            (std::filesystem::path(split_out) / ("stage" + std::to_string(s) + ".json")).string();
        std::filesystem::create_directories(split_out);
        save_coco(part, path);
        io.out << "stage " << s << ": " << part.images.size() << " images, "
               << part.annotations.size() << " annotations -> " << path << '\n';
      }
      return 0;
    }

    if (*stats) {
      const CocoDataset gt = load_coco(stats_gt);
      const TaskSchedule schedule = schedule_for(stats_schedule, gt);
      nlohmann::json doc = nlohmann::json::array();
      io.out << std::left << std::setw(7) << "stage" << std::right << std::setw(10) << "only_old"
             << std::setw(10) << "only_new" << std::setw(10) << "co_occ" << std::setw(10)
             << "co_rate%" << '\n';
      for (std::size_t s : stages_of(schedule, stats_stage)) {
        const SplitStats st = cooccurrence_stats(gt, schedule, s);
        io.out << std::left << std::setw(7) << s << std::right << std::setw(10) << st.only_old
               << std::setw(10) << st.only_new << std::setw(10) << st.cooccurrence
               << std::setw(10) << pct(st.cooccurrence_rate()) << '\n';
        doc.push_back({{"stage", s},
                       {"only_old", st.only_old},
                       {"only_new", st.only_new},
                       {"cooccurrence", st.cooccurrence},
                       {"cooccurrence_rate", st.cooccurrence_rate()}});
      }
      if (!stats_json.empty()) write_text(stats_json, doc.dump(1) + "\n");
      return 0;
    }

    if (*pseudo) {
      const RunConfig cfg = config_from(ps_config);
      CocoDataset gt = load_coco(ps_gt);
      std::vector<int> old = ps_old;
      if (!ps_schedule.empty()) {
        Require(ps_stage >= 2, ErrorCode::kInvalidArgument,
                "--schedule needs --stage of at least 2");
        old = schedule_for(ps_schedule, gt).classes_before(ps_stage);
      }
      Require(!old.empty(), ErrorCode::kInvalidArgument,
              "no old classes: pass --old-classes or --schedule with --stage");
      std::sort(old.begin(), old.end());

      std::map<ImageId, std::vector<Detection>> per_image;
      for (const auto& d : load_detections(ps_dets)) {
        auto& v = per_image[d.image_id];
        v.push_back(Detection{d.bbox, d.score, d.class_id, v.size()});
      }
      ScoreBankSet banks = ScoreBankSet::load(ps_banks, cfg.cpg);
      for (const auto& [id, dets] : per_image) banks.observe(dets, old);
      banks.save(ps_banks);
      const ThresholdTable table = banks.thresholds(old);

      std::map<ImageId, std::vector<Annotation>> gt_by_image;
      std::int64_t next_id = 1;
      for (const auto& a : gt.annotations) {
        gt_by_image[a.image_id].push_back(a);
        next_id = std::max(next_id, a.id + 1);
      }
      std::size_t added = 0;
      for (const auto& [id, dets] : per_image) {
        Require(gt.image(id) != nullptr, ErrorCode::kNotFound,
                "detection for unknown image " + std::to_string(id));
        const auto labels = deduplicate(generate_pseudo_labels(id, dets, table, old),
                                        gt_by_image[id], cfg.cpg.theta_nms);
        for (Annotation a : labels) {
          a.id = next_id++;
          gt.annotations.push_back(a);
          ++added;
        }
      }
      save_coco(gt, ps_out);

      std::ostringstream report;
      report << "class_id,tau,source,bank_size\n";
      for (const auto& [c, t] : table.entries) {
        report << c << ',' << format_double(t.tau) << ','
               << (t.source == ThresholdSource::kClustered ? "clustered" : "fallback") << ','
               << t.bank_size << '\n';
      }
      if (ps_report.empty()) {
        io.out << report.str();
      } else {
        write_text(ps_report, report.str());
      }
      io.err << added << " pseudo-labels written to " << ps_out << '\n';
      return 0;
    }

    if (*eval) {
      const RunConfig cfg = config_from(ev_config);
      const CocoDataset gt = load_coco(ev_gt);
      const TaskSchedule schedule = schedule_for(ev_schedule, gt);
      const std::size_t stage = ev_stage == 0 ? schedule.num_stages() : ev_stage;
      stages_of(schedule, stage);
      EvalConfig ec;
      ec.max_dets = ev_max_dets;
      ec.areas = cfg.std_cfg.scale;
      ec.workers = workers;
      const EvalReport report = evaluate(load_detections(ev_dets), gt, schedule, stage, ec);
      io.out << format_table(report);
      if (!ev_out.empty()) write_text(ev_out, to_json(report).dump(1) + "\n");
      if (!ev_csv.empty()) write_text(ev_csv, pr_curve_csv(report));
      return 0;
    }

    if (*sim) {
      RunConfig cfg = config_from(sim_config);
      for (const auto& kv : sim_sets) {
        const auto eq = kv.find('=');
        Require(eq != std::string::npos, ErrorCode::kInvalidArgument,
                "--set expects section.key=value, got '" + kv + "'");
        set_config_value(cfg, kv.substr(0, eq), kv.substr(eq + 1));
      }
      if (!sim_modes.empty()) cfg.train.modes = sim_modes;
      if (sim_seed) cfg.world.seed = *sim_seed;
      if (!sim_out.empty()) cfg.io.out_dir = sim_out;
      cfg.detr.matching.focal = cfg.detr.focal;
      cfg.validate();
      if (sim_print) {
        io.out << dump_config(cfg);
        return 0;
      }
      const std::size_t sim_workers =
          app.get_option("--workers")->count() > 0 ? workers : resolve_workers(cfg.io.workers);
      const RunLedger ledger = run_experiment(cfg, sim_workers);
      for (const auto& w : ledger.warnings) io.err << "warning: " << w << '\n';
      write_outputs(ledger, cfg.io.out_dir);

      io.out << std::left << std::setw(10) << "mode" << std::right << std::setw(7) << "stage"
             << std::setw(9) << "mAP^A" << std::setw(9) << "mAP^P" << std::setw(9) << "mAP^C"
             << '\n';
      for (const auto& mr : ledger.modes) {
        const StageRecord& last = mr.stages.back();
        const EvalReport& r = last.report;
        io.out << std::left << std::setw(10) << to_string(mr.mode) << std::right << std::setw(7)
               << last.stage << std::setw(9) << pct(r.all.map) << std::setw(9)
               << (r.previous ? pct(r.previous->map) : "-") << std::setw(9)
               << pct(r.current.map) << '\n';
      }
      io.err << "outputs written to " << cfg.io.out_dir << '\n';
      return 0;
    }

    if (*grad) {
      gopts.workers = workers;
      if (suites.empty()) suites = gradcheck_suites();
      bool ok = true;
      for (const auto& name : suites) {
        const SuiteResult r = run_gradcheck(name, gopts);
        ok = ok && r.passed();
        io.out << (r.passed() ? "PASS " : "FAIL ") << std::left << std::setw(10) << r.name
               << std::right << " cases=" << r.cases << " failures=" << r.failures
               << " worst_rel_error=" << std::scientific << std::setprecision(3)
               << r.worst_error << std::defaultfloat << " (seed " << r.worst_seed << ")\n";
      }
      return ok ? 0 : 1;
    }
  } catch (const Error& e) {
    io.err << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    io.err << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}

}  // namespace iod
