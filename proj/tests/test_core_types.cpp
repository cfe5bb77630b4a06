#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include "doctest.h"

#include "desimpl/core_types.hpp"
#include "desimpl/detection_io.hpp"
#include "desimpl/image_io.hpp"
#include "desimpl/parallel.hpp"
#include "desimpl/rng.hpp"

using namespace desimpl;

TEST_CASE("clip_box examples") {
  CHECK(clip_box({0.1, 0.1, 0.5, 0.5}) == BBox{0.1, 0.1, 0.5, 0.5});
  CHECK(clip_box({-0.2, 0.0, 1.3, 0.5}) == BBox{0.0, 0.0, 1.0, 0.5});
  CHECK(clip_box({0.6, 0.2, 0.4, 0.3}) == BBox{0.4, 0.2, 0.6, 0.3});
  CHECK_THROWS_AS(clip_box({std::nan(""), 0, 1, 1}), ValidationError);
  CHECK_THROWS_AS(clip_box({0, 0, std::numeric_limits<double>::infinity(), 1}), ValidationError);
}

TEST_CASE("box_area examples") {
  CHECK(box_area({0, 0, 1, 1}) == 1.0);
  CHECK(box_area({0.2, 0.2, 0.2, 0.7}) == 0.0);
  CHECK(box_area({0.1, 0.1, 0.4, 0.5}) == doctest::Approx(0.12).epsilon(1e-12));
}

TEST_CASE("clip_box is idempotent and yields non-negative area") {
  Rng rng(Seed{11});
  for (int i = 0; i < 2000; ++i) {
    const BBox b{rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-2, 2)};
    const BBox c = clip_box(b);
    CHECK(clip_box(c) == c);
    CHECK(box_area(c) >= 0.0);
    CHECK(c.x1 <= c.x2);
    CHECK(c.y1 <= c.y2);
    CHECK(c.x1 >= 0.0);
    CHECK(c.y2 <= 1.0);
  }
}

TEST_CASE("center and pixel ingest") {
  const BBox b = box_from_center(0.5, 0.5, 0.2, 0.4);
  CHECK(b.x1 == doctest::Approx(0.4));
  CHECK(b.y2 == doctest::Approx(0.7));
  const BBox p = box_from_pixels(10, 20, 110, 70, 200, 100);
  CHECK(p == BBox{0.05, 0.2, 0.55, 0.7});
  CHECK_THROWS_AS(box_from_pixels(0, 0, 1, 1, 0, 10), ValidationError);
}

TEST_CASE("validate_detection") {
  CHECK_NOTHROW(validate_detection({{0, 0, 1, 1}, 2, 0.5}, 3));
  CHECK_THROWS_AS(validate_detection({{0, 0, 1, 1}, 3, 0.5}, 3), ValidationError);
  CHECK_THROWS_AS(validate_detection({{0, 0, 1, 1}, -1, 0.5}), ValidationError);
  CHECK_THROWS_AS(validate_detection({{0, 0, 1, 1}, 0, 1.5}), ValidationError);
  CHECK_THROWS_AS(validate_detection({{0.5, 0, 0.2, 1}, 0, 0.5}), ValidationError);
}

TEST_CASE("label set ordering") {
  auto set = make_label_set("img", {{{0.2, 0, 1, 1}, 1, 0.5}, {{0.1, 0, 1, 1}, 1, 0.5}, {{0, 0, 1, 1}, 0, 0.9}},
                            LabelKind::prediction);
  REQUIRE(set.size() == 3);
  CHECK(set.detections[0].score == 0.9);
  CHECK(set.detections[1].bbox.x1 == 0.1);
  CHECK(set.detections[2].bbox.x1 == 0.2);
  auto again = set;
  normalize(again);
  CHECK(again == set);

  auto gt = make_label_set("img", {{{0, 0, 1, 1}, 0, 0.3}}, LabelKind::ground_truth);
  CHECK(gt.detections[0].score == 1.0);

  CHECK(parse_label_kind(to_string(LabelKind::pseudo_label)) == LabelKind::pseudo_label);
  CHECK_THROWS_AS(parse_label_kind("bogus"), ValidationError);
}

TEST_CASE("rng substreams are reproducible and distinct") {
  Rng a = Rng::derive(Seed{5}, {1, 2, 3});
  Rng b = Rng::derive(Seed{5}, {1, 2, 3});
  Rng c = Rng::derive(Seed{5}, {1, 2, 4});
  Rng d = Rng::derive(Seed{5}, {12, 3});
  bool differs = false;
  bool differs_d = false;
  for (int i = 0; i < 16; ++i) {
    const auto x = a.next_u64();
    CHECK(x == b.next_u64());
    differs = differs || x != c.next_u64();
    differs_d = differs_d || x != d.next_u64();
  }
  CHECK(differs);
  CHECK(differs_d);
}

TEST_CASE("rng distributions") {
  Rng rng(Seed{42});
  const int n = 200000;
  double sum = 0.0;
  double sq = 0.0;
  double pois = 0.0;
  int hits = 0;
  for (int i = 0; i < n; ++i) {
    const double z = rng.normal();
    sum += z;
    sq += z * z;
    pois += rng.poisson(1.5);
    hits += rng.bernoulli(0.3);
    const double u = rng.uniform();
    CHECK((u >= 0.0 && u < 1.0));
  }
  CHECK(sum / n == doctest::Approx(0.0).epsilon(0.01).scale(1.0));
  CHECK(sq / n == doctest::Approx(1.0).epsilon(0.01));
  CHECK(pois / n == doctest::Approx(1.5).epsilon(0.01));
  CHECK(static_cast<double>(hits) / n == doctest::Approx(0.3).epsilon(0.02));

  std::set<std::int64_t> seen;
  for (int i = 0; i < 1000; ++i) {
    const auto k = rng.uniform_int(-2, 2);
    CHECK((k >= -2 && k <= 2));
    seen.insert(k);
  }
  CHECK(seen.size() == 5);
  CHECK(rng.poisson(0.0) == 0);
}

TEST_CASE("parallel_for visits each index once and rethrows the lowest failure") {
  std::vector<int> visits(1000, 0);
  parallel_for(visits.size(), [&](std::size_t i) { visits[i] += 1; }, 4);
  for (int v : visits) CHECK(v == 1);

  try {
    parallel_for(
        100,
        [](std::size_t i) {
          if (i == 17 || i == 80) throw std::runtime_error(std::to_string(i));
        },
        4);
    FAIL("expected an exception");
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()) == "17");
  }
}

TEST_CASE("detection JSONL round trip") {
  const std::string text =
      "{\"image_id\":\"b\",\"class_id\":1,\"bbox\":[0.1,0.2,0.3,0.4],\"score\":0.25,\"extra\":7}\n"
      "\n"
      "{\"image_id\":\"a\",\"class_id\":0,\"bbox\":[0,0,0.5,0.5],\"score\":0.9}\n"
      "{\"image_id\":\"b\",\"class_id\":0,\"bbox\":[0.5,0.5,1,1],\"score\":0.75}\n";
  std::istringstream in(text);
  const auto sets = parse_detections(in, LabelKind::prediction, 2);
  REQUIRE(sets.size() == 2);
  CHECK(sets[0].image_id == "a");
  CHECK(sets[1].detections[0].score == 0.75);

  std::ostringstream out;
  write_detections(out, sets);
  std::istringstream back(out.str());
  CHECK(parse_detections(back, LabelKind::prediction, 2) == sets);

  std::istringstream reread(out.str());
  std::ostringstream again;
  write_detections(again, parse_detections(reread, LabelKind::prediction));
  CHECK(again.str() == out.str());
}

TEST_CASE("detection JSONL errors name the line") {
  auto expect_line = [](const std::string& text, const std::string& needle) {
    std::istringstream in(text);
    try {
      parse_detections(in, LabelKind::prediction, 2);
      FAIL("expected a validation error");
    } catch (const ValidationError& e) {
      CHECK(std::string(e.what()).find(needle) != std::string::npos);
    }
  };
  expect_line("{\"image_id\":\"a\",\"class_id\":0,\"bbox\":[0,0,1,1],\"score\":0.5}\nnot json\n", "line 2");
  expect_line("{\"image_id\":\"a\",\"class_id\":0,\"bbox\":[0,0,1],\"score\":0.5}\n", "line 1");
  expect_line("{\"image_id\":\"a\",\"class_id\":5,\"bbox\":[0,0,1,1],\"score\":0.5}\n", "line 1");
  expect_line("{\"image_id\":\"a\",\"class_id\":0,\"bbox\":[0,0,1,1],\"score\":1.5}\n", "line 1");
}

TEST_CASE("ground truth files omit scores") {
  std::istringstream in("{\"image_id\":\"a\",\"class_id\":0,\"bbox\":[0,0,1,1]}\n");
  const auto gt = parse_detections(in, LabelKind::ground_truth);
  REQUIRE(gt.size() == 1);
  CHECK(gt[0].detections[0].score == 1.0);
  std::ostringstream out;
  write_detections(out, gt);
  CHECK(out.str().find("score") == std::string::npos);
}

TEST_CASE("file helpers") {
  const auto dir = std::filesystem::temp_directory_path() / "desimpl_core_test";
  std::filesystem::remove_all(dir);
  CHECK_THROWS_AS(read_detections(dir / "missing.jsonl", LabelKind::prediction), IoError);

  const auto path = dir / "nested" / "out.jsonl";
  write_detections_file(path, {make_label_set("x", {{{0, 0, 1, 1}, 0, 0.5}}, LabelKind::prediction)});
  CHECK(read_detections(path, LabelKind::prediction).size() == 1);

  ImageTensor img(3, 2, 3);
  for (std::size_t i = 0; i < img.size(); ++i) img.values()[i] = static_cast<double>(i) / 32.0;
  write_image_raw(dir / "img", img);
  CHECK(read_image_raw(dir / "img") == img);
  write_pnm(dir / "img.ppm", img);
  CHECK(std::filesystem::file_size(dir / "img.ppm") > img.size());
  std::filesystem::remove_all(dir);
}

TEST_CASE("format_double round trips") {
  for (double v : {0.1, 1.0 / 3.0, 1e-17, 0.0, 123456.789}) {
    CHECK(std::stod(format_double(v)) == v);
  }
}
