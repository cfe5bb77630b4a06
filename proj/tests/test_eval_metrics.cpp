#include <cmath>
#include <vector>

#include "doctest.h"
#include "oracles/oracles.hpp"

#include "desimpl/eval_metrics.hpp"
#include "desimpl/rng.hpp"

using namespace desimpl;

namespace {

const BBox kBox{0.1, 0.1, 0.4, 0.4};

LabelSet dets(const std::string& id, std::vector<Detection> d) {
  return make_label_set(id, std::move(d), LabelKind::prediction);
}
LabelSet gts(const std::string& id, std::vector<Detection> d) {
  return make_label_set(id, std::move(d), LabelKind::ground_truth);
}

// Small instances on a coarse grid so IoU ties and score ties both occur.
std::vector<oracle::Instance> random_instances(Rng& rng) {
  std::vector<oracle::Instance> out;
  const int images = static_cast<int>(rng.uniform_int(1, 2));
  for (int i = 0; i < images; ++i) {
    oracle::Instance inst;
    inst.image_id = "i" + std::to_string(i);
    auto box = [&] {
      const double x = 0.1 * static_cast<double>(rng.uniform_int(0, 4));
      const double y = 0.1 * static_cast<double>(rng.uniform_int(0, 4));
      return BBox{x, y, x + 0.1 * static_cast<double>(rng.uniform_int(1, 4)), y + 0.3};
    };
    const int ng = static_cast<int>(rng.uniform_int(0, 3));
    for (int g = 0; g < ng; ++g) inst.gts.push_back({box(), static_cast<int>(rng.uniform_int(0, 1)), 1.0});
    const int nd = static_cast<int>(rng.uniform_int(0, 5));
    for (int d = 0; d < nd; ++d) {
      inst.dets.push_back({box(), static_cast<int>(rng.uniform_int(0, 1)), 0.1 * static_cast<double>(rng.uniform_int(1, 10))});
    }
    out.push_back(inst);
  }
  return out;
}

void split(const std::vector<oracle::Instance>& inst, std::vector<LabelSet>& d, std::vector<LabelSet>& g) {
  for (const auto& i : inst) {
    d.push_back(dets(i.image_id, i.dets));
    g.push_back(gts(i.image_id, i.gts));
  }
}

}  // namespace

TEST_CASE("match_tp_fp examples") {
  const BBox shifted{0.1, 0.1, 0.4, 0.4 * 0.6 + 0.1 * 0.4};  // shorter box, IoU 0.6
  REQUIRE(oracle::iou(kBox, shifted) == doctest::Approx(0.6));
  auto m = match_tp_fp(dets("a", {{shifted, 0, 0.9}}), gts("a", {{kBox, 0, 1}}), 0.5);
  CHECK(m.is_tp == std::vector<bool>{true});
  CHECK(m.matched_gt[0] == std::optional<std::size_t>(0));

  m = match_tp_fp(dets("a", {{kBox, 0, 0.9}, {shifted, 0, 0.8}}), gts("a", {{kBox, 0, 1}}), 0.5);
  CHECK(m.is_tp == std::vector<bool>{true, false});
  CHECK(m.tp_count() == 1);

  m = match_tp_fp(dets("a", {{kBox, 1, 0.9}}), gts("a", {{kBox, 0, 1}}), 0.5);
  CHECK(m.is_tp == std::vector<bool>{false});
  CHECK(m.gt_matched == std::vector<bool>{false});

  CHECK_THROWS_AS(match_tp_fp(dets("a", {}), gts("b", {}), 0.5), ValidationError);
}

TEST_CASE("average_precision examples") {
  const std::vector<LabelSet> g{gts("a", {{kBox, 0, 1}})};
  const std::vector<LabelSet> tp{dets("a", {{kBox, 0, 0.9}})};
  CHECK(average_precision(tp, g, 0).ap == std::optional<double>(1.0));

  const std::vector<LabelSet> tp_fp{dets("a", {{kBox, 0, 0.9}, {{0.6, 0.6, 0.9, 0.9}, 0, 0.5}})};
  CHECK(average_precision(tp_fp, g, 0).ap == std::optional<double>(1.0));

  const std::vector<LabelSet> none{dets("a", {})};
  CHECK(average_precision(none, g, 0).ap == std::optional<double>(0.0));

  CHECK_FALSE(average_precision(none, std::vector<LabelSet>{gts("a", {})}, 0).ap.has_value());
  CHECK(average_precision(tp, std::vector<LabelSet>{gts("a", {})}, 0).ap == std::optional<double>(0.0));

  // FP ranked first: precision envelope at recall 1 is 0.5.
  const std::vector<LabelSet> fp_first{dets("a", {{kBox, 0, 0.5}, {{0.6, 0.6, 0.9, 0.9}, 0, 0.9}})};
  CHECK(average_precision(fp_first, g, 0).ap == std::optional<double>(0.5));
}

TEST_CASE("pr curve invariants") {
  Rng rng(Seed{51});
  for (int t = 0; t < 500; ++t) {
    std::vector<LabelSet> d, g;
    split(random_instances(rng), d, g);
    const auto curve = average_precision(d, g, 0);
    for (std::size_t i = 0; i < curve.recall.size(); ++i) {
      if (i > 0) CHECK(curve.recall[i] >= curve.recall[i - 1]);
      CHECK(curve.precision[i] >= 0.0);
      CHECK(curve.precision[i] <= 1.0);
    }
    if (curve.ap) CHECK((*curve.ap >= 0.0 && *curve.ap <= 1.0));
  }
}

TEST_CASE("average_precision equals the enumeration oracle") {
  Rng rng(Seed{52});
  for (int t = 0; t < 3000; ++t) {
    const auto inst = random_instances(rng);
    std::vector<LabelSet> d, g;
    split(inst, d, g);
    for (int cls = 0; cls < 2; ++cls) {
      CHECK(average_precision(d, g, cls).ap == oracle::average_precision(inst, cls));
    }
  }
}

TEST_CASE("AP depends only on score ranks") {
  Rng rng(Seed{53});
  for (int t = 0; t < 500; ++t) {
    auto inst = random_instances(rng);
    std::vector<LabelSet> d, g;
    split(inst, d, g);
    const auto before = average_precision(d, g, 0).ap;
    for (auto& i : inst) {
      for (auto& det : i.dets) det.score = std::pow(det.score, 3.0) * 0.5;
    }
    std::vector<LabelSet> d2, g2;
    split(inst, d2, g2);
    const auto after = average_precision(d2, g2, 0).ap;
    REQUIRE(before.has_value() == after.has_value());
    if (before) CHECK(*after == doctest::Approx(*before).epsilon(1e-12));
  }
}

TEST_CASE("a low-scored duplicate FP never raises AP") {
  Rng rng(Seed{54});
  for (int t = 0; t < 500; ++t) {
    auto inst = random_instances(rng);
    std::vector<LabelSet> d, g;
    split(inst, d, g);
    const auto before = average_precision(d, g, 0).ap;
    if (!before) continue;
    inst[0].dets.push_back({{0.95, 0.95, 1.0, 1.0}, 0, 0.01});
    std::vector<LabelSet> d2, g2;
    split(inst, d2, g2);
    CHECK(*average_precision(d2, g2, 0).ap <= *before + 1e-15);
  }
}

TEST_CASE("map50 examples") {
  const std::vector<LabelSet> g{gts("a", {{kBox, 0, 1}, {{0.6, 0.6, 0.9, 0.9}, 1, 1}})};
  const std::vector<LabelSet> only0{dets("a", {{kBox, 0, 0.9}})};
  const auto m = map50(only0, g, 3);
  CHECK(m.map == 0.5);
  CHECK(m.per_class[0] == std::optional<double>(1.0));
  CHECK(m.per_class[1] == std::optional<double>(0.0));
  CHECK_FALSE(m.per_class[2].has_value());

  const std::vector<LabelSet> g0{gts("a", {{kBox, 0, 1}})};
  CHECK(map50(only0, g0, 2).map == 1.0);
  const std::vector<LabelSet> empty{gts("a", {})};
  CHECK_THROWS_AS(map50(std::vector<LabelSet>{dets("a", {})}, empty, 2), ValidationError);
}

TEST_CASE("fp histogram") {
  const std::vector<double> edges{0.0, 0.3, 1.0};
  const std::vector<LabelSet> g{gts("a", {{kBox, 0, 1}})};
  const std::vector<LabelSet> fp{dets("a", {{{0.6, 0.6, 0.9, 0.9}, 0, 0.2}})};
  const auto h = fp_by_confidence(fp, g, edges);
  CHECK(h.rate(0) == 1.0);
  CHECK(h.empty_bin(1));
  CHECK(h.rate(1) == 0.0);
  CHECK(h.aggregate_rate(0.3, true) == 1.0);
  CHECK(h.aggregate_rate(0.3, false) == 0.0);

  const std::vector<LabelSet> all_tp{dets("a", {{kBox, 0, 0.9}})};
  const auto clean = fp_by_confidence(all_tp, g, edges);
  CHECK(clean.rate(0) == 0.0);
  CHECK(clean.rate(1) == 0.0);

  CHECK(confidence_bin(edges, 0.0) == 0);
  CHECK(confidence_bin(edges, 0.3) == 0);
  CHECK(confidence_bin(edges, 0.31) == 1);
  CHECK(confidence_bin(edges, 1.0) == 1);

  CHECK_THROWS_AS(validate_bin_edges(std::vector<double>{0.0, 0.5, 0.5, 1.0}), ValidationError);
  CHECK_THROWS_AS(validate_bin_edges(std::vector<double>{0.1, 1.0}), ValidationError);
  CHECK_THROWS_AS(validate_bin_edges(std::vector<double>{0.0}), ValidationError);

  Rng rng(Seed{55});
  const std::vector<double> ten{0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0};
  for (int t = 0; t < 200; ++t) {
    std::vector<LabelSet> d, gg;
    split(random_instances(rng), d, gg);
    const auto hist = fp_by_confidence(d, gg, ten);
    std::size_t total = 0;
    std::size_t n = 0;
    for (auto x : hist.total) total += x;
    for (const auto& s : d) n += s.size();
    CHECK(total == n);
    for (std::size_t b = 0; b < hist.bins(); ++b) CHECK(hist.fp[b] <= hist.total[b]);
  }
}

TEST_CASE("simple_proportion") {
  auto rec = [](double cls, double loc, bool tp) {
    LossRecord r;
    r.cls_loss = cls;
    r.loc_loss = loc;
    r.confidence = 0.9;
    r.is_true_positive = tp;
    return r;
  };
  const LossWeights w{};
  const std::vector<LossRecord> all_simple{rec(0.1, 0.1, true), rec(0.0, 0.0, false)};
  CHECK(simple_proportion(all_simple, w, false).value == 1.0);

  const std::vector<LossRecord> half{rec(0.1, 0.1, true), rec(1.0, 0.1, true), rec(0.0, 0.0, true),
                                     rec(0.2, 0.5, true), rec(0.0, 0.0, false)};
  CHECK(simple_proportion(half, w, true).value == 0.5);

  const std::vector<LossRecord> no_tp{rec(0.1, 0.1, false)};
  const auto p = simple_proportion(no_tp, w, true);
  CHECK(p.value == 0.0);
  CHECK(p.empty);
}

TEST_CASE("detection_quality") {
  const std::vector<LabelSet> g{gts("a", {{kBox, 0, 1}, {{0.6, 0.6, 0.9, 0.9}, 0, 1}})};
  const std::vector<LabelSet> d{dets("a", {{kBox, 0, 0.9}, {{0.0, 0.6, 0.2, 0.9}, 0, 0.2}})};
  const auto q = detection_quality(d, g);
  CHECK(q.tp == 1);
  CHECK(q.fp == 1);
  CHECK(q.precision == 0.5);
  CHECK(q.recall == 0.5);
  CHECK(q.f1 == 0.5);
  const auto filtered = detection_quality(d, g, 0.5);
  CHECK(filtered.precision == 1.0);
}
