#include <cmath>
#include <vector>

#include "doctest.h"

#include "desimpl/detector_sim.hpp"
#include "desimpl/experiment_config.hpp"
#include "desimpl/report.hpp"

using namespace desimpl;

namespace {

SimulationConfig small_config() {
  SimulationConfig cfg;
  cfg.epochs = 3;
  cfg.train_images = 40;
  cfg.eval_images = 40;
  cfg.source_images = 8;
  return cfg;
}

LossRecord rec(double cls, double loc) {
  LossRecord r;
  r.cls_loss = cls;
  r.loc_loss = loc;
  r.confidence = 0.9;
  r.is_true_positive = true;
  return r;
}

}  // namespace

TEST_CASE("generate_scene") {
  SceneConfig cfg;
  cfg.min_boxes = 0;
  cfg.max_boxes = 0;
  Rng rng(Seed{1});
  CHECK(generate_scene(rng, cfg, Domain::target, "e").gt.empty());

  cfg.min_boxes = 3;
  cfg.max_boxes = 3;
  for (int i = 0; i < 50; ++i) {
    const auto s = generate_scene(rng, cfg, Domain::target, "x");
    CHECK(s.gt.size() == 3);
    CHECK(s.latents.size() == 3);
    CHECK(s.gt.kind == LabelKind::ground_truth);
    for (const auto& d : s.gt.detections) {
      CHECK(box_area(d.bbox) >= 1e-4);
      CHECK(d.class_id < cfg.class_count);
    }
  }

  Rng a(Seed{9});
  Rng b(Seed{9});
  const auto sa = generate_scene(a, SceneConfig{}, Domain::source, "s");
  const auto sb = generate_scene(b, SceneConfig{}, Domain::source, "s");
  CHECK(sa.gt == sb.gt);
  CHECK(sa.distractors == sb.distractors);

  SceneConfig bad;
  bad.min_size = 1.5;
  CHECK_THROWS_AS(generate_scene(rng, bad, Domain::target, "x"), ValidationError);
  bad = SceneConfig{};
  bad.min_boxes = 5;
  bad.max_boxes = 2;
  CHECK_THROWS_AS(bad.validate(), ValidationError);
}

TEST_CASE("render_scene stays in range") {
  Rng rng(Seed{2});
  const auto s = generate_scene(rng, SceneConfig{}, Domain::target, "r");
  const auto img = render_scene(s, 16, 3, rng);
  CHECK(img.width() == 16);
  CHECK(img.channels() == 1);
  for (double v : img.values()) CHECK((v >= 0.0 && v <= 1.0));
}

TEST_CASE("simulate_detections limits") {
  SceneConfig sc;
  sc.min_boxes = 3;
  sc.max_boxes = 5;
  Rng rng(Seed{3});
  DetectionModel model;

  DetectorState blind{0.0, 1.0, 0.0, 1.5, Domain::target};
  DetectorState clean{0.0, 0.0, 0.0, 1.5, Domain::target};
  for (int i = 0; i < 50; ++i) {
    const auto s = generate_scene(rng, sc, Domain::target, "x");
    CHECK(simulate_detections(s, blind, model, rng).empty());
    const auto d = simulate_detections(s, clean, model, rng);
    REQUIRE(d.size() == s.gt.size());
    for (const auto& det : d.detections) {
      bool found = false;
      for (const auto& g : s.gt.detections) found = found || (g.bbox == det.bbox && g.class_id == det.class_id);
      CHECK(found);
    }
  }
}

TEST_CASE("simulated miss fraction") {
  SceneConfig sc;
  DetectionModel model;
  const DetectorState state{0.01, 0.3, 0.0, 1.5, Domain::target};
  std::size_t objects = 0;
  std::size_t found = 0;
  for (std::uint64_t i = 0; i < 1000; ++i) {
    Rng rng = Rng::derive(Seed{4}, {i});
    const auto s = generate_scene(rng, sc, Domain::target, "m");
    objects += s.gt.size();
    found += simulate_detections(s, state, model, rng).size();
  }
  const double miss = 1.0 - static_cast<double>(found) / static_cast<double>(objects);
  CHECK(miss == doctest::Approx(0.3).epsilon(0.02 / 0.3));
}

TEST_CASE("train_step") {
  const DetectorState start{0.03, 0.35, 1.0, 1.5, Domain::target};
  TrainingDynamics dyn;
  const LossWeights w;

  CHECK(train_step(start, {}, dyn, w) == start);

  // Equal mean loss (0.25); the second set has half its records above the simple threshold.
  const std::vector<LossRecord> easy{rec(0.1, 0.15), rec(0.1, 0.15), rec(0.1, 0.15), rec(0.1, 0.15)};
  const std::vector<LossRecord> mixed{rec(0.0, 0.05), rec(0.0, 0.05), rec(0.2, 0.25), rec(0.2, 0.25)};
  const auto a = train_step(start, easy, dyn, w);
  const auto b = train_step(start, mixed, dyn, w);
  CHECK(a.loc_noise_sigma < start.loc_noise_sigma);
  CHECK(b.loc_noise_sigma < a.loc_noise_sigma);
  CHECK(b.miss_rate < a.miss_rate);
  CHECK(b.fp_rate < a.fp_rate);

  const DetectorState floored{dyn.floor_loc, dyn.floor_miss, dyn.floor_fp, 1.5, Domain::target};
  CHECK(train_step(floored, mixed, dyn, w) == floored);

  const auto distilled = distill_to_floors(start, dyn, LabelQuality{});
  CHECK(distilled.loc_noise_sigma == dyn.floor_loc);
  CHECK(distilled.miss_rate == dyn.floor_miss);
}

TEST_CASE("label quality feeds the floors") {
  TrainingDynamics dyn;
  LabelQuality q;
  q.valid = true;
  q.recall = 0.6;
  q.fp_per_image = 2.0;
  q.loc_sigma = 0.02;
  const auto f = effective_floors(dyn, q);
  CHECK(f.loc == doctest::Approx(0.02));
  CHECK(f.miss == doctest::Approx(0.2));
  CHECK(f.fp == doctest::Approx(0.8));
  const auto base = effective_floors(dyn, LabelQuality{});
  CHECK(base.loc == dyn.floor_loc);
}

TEST_CASE("update schedule") {
  CHECK(is_update_epoch(1, 1));
  CHECK(is_update_epoch(2, 1));
  CHECK(is_update_epoch(1, 10));
  CHECK_FALSE(is_update_epoch(2, 10));
  CHECK(is_update_epoch(10, 10));
  auto cfg = small_config();
  cfg.update_interval = 0;
  CHECK_THROWS_AS(run_self_training(cfg, Seed{1}), ValidationError);
}

TEST_CASE("zero epochs yields the initial row only") {
  auto cfg = small_config();
  cfg.epochs = 0;
  const auto report = run_self_training(cfg, Seed{5});
  REQUIRE(report.rows.size() == 1);
  CHECK(report.rows[0].epoch == 0);
  CHECK(report.rows[0].student_ap50.has_value());
}

TEST_CASE("runs are deterministic and complete") {
  const auto cfg = small_config();
  const auto a = run_self_training(cfg, Seed{6});
  const auto b = run_self_training(cfg, Seed{6});
  CHECK(report_csv({a}) == report_csv({b}));
  REQUIRE(a.rows.size() == 4);
  for (const auto& row : a.rows) {
    CHECK(row.simple.value >= 0.0);
    CHECK(row.simple.value <= 1.0);
    CHECK(row.fp_hist.bins() == cfg.fp_bin_edges.size() - 1);
  }
  CHECK(run_self_training(cfg, Seed{7}).rows.back().teacher_ap50 != a.rows.back().teacher_ap50);
}

TEST_CASE("noiseless limit gives perfect pseudo labels") {
  auto cfg = small_config();
  cfg.epochs = 1;
  cfg.source_teacher = DetectorState{0.0, 0.0, 0.0, 1.5, Domain::source};
  cfg.domain_gap = DomainGap{0.0, 0.0, 0.0};
  cfg.detection.logit_noise = 0.0;
  cfg.dynamics.floor_loc = 0.0;
  cfg.dynamics.floor_miss = 0.0;
  cfg.dynamics.floor_fp = 0.0;
  const auto report = run_self_training(cfg, Seed{8});
  REQUIRE(report.rows.size() == 2);
  CHECK(report.rows[1].bank_updated);
  CHECK(report.rows[1].pseudo_map50 == doctest::Approx(1.0));
}

TEST_CASE("a larger hard-sample bonus never hurts") {
  auto cfg = small_config();
  cfg.epochs = 5;
  double prev = -1.0;
  for (double bonus : {0.0, 0.5, 1.0, 2.0}) {
    cfg.dynamics.hard_sample_bonus = bonus;
    const auto report = run_self_training(cfg, Seed{9});
    const double sigma = report.rows.back().teacher.loc_noise_sigma;
    if (prev >= 0.0) CHECK(sigma <= prev + 1e-12);
    prev = sigma;
  }
}

TEST_CASE("fusion bank with adaptive loss and FGSM beats MEV-C") {
  const auto runs = resolve_runs(make_preset("paper-dynamics"));
  REQUIRE(runs.size() == 3);
  const auto desimpl = run_self_training(runs[0], Seed{20240917});
  const auto mevc = run_self_training(runs[1], Seed{20240917});
  CHECK(desimpl.rows.back().simple.value < mevc.rows.back().simple.value);
  CHECK(desimpl.student_ap50 > mevc.student_ap50);
}
