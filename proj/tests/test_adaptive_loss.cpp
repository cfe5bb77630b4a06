#include <algorithm>
#include <cmath>
#include <vector>

#include "doctest.h"
#include "oracles/oracles.hpp"

#include "desimpl/adaptive_loss.hpp"
#include "desimpl/rng.hpp"

using namespace desimpl;

namespace {

LossRecord rec(double cls, double loc, double c, bool tp = true) {
  LossRecord r;
  r.image_id = "img";
  r.cls_loss = cls;
  r.loc_loss = loc;
  r.confidence = c;
  r.is_true_positive = tp;
  return r;
}

std::vector<LossRecord> random_records(Rng& rng, std::size_t n) {
  std::vector<LossRecord> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(rec(rng.uniform(0, 3), rng.uniform(0, 1), rng.uniform()));
  return out;
}

}  // namespace

TEST_CASE("label_weight examples") {
  CHECK(label_weight(0.8, 0.3) == 1.0);
  CHECK(label_weight(0.3, 0.3) == 0.3);
  CHECK(label_weight(0.1, 0.3) == 0.1);
  CHECK_THROWS_AS(label_weight(1.2, 0.3), ValidationError);
  CHECK_THROWS_AS(label_weight(0.5, -0.1), ValidationError);
}

TEST_CASE("label_weight is piecewise monotone") {
  Rng rng(Seed{31});
  std::vector<double> cs;
  for (int i = 0; i < 1000; ++i) cs.push_back(rng.uniform());
  std::sort(cs.begin(), cs.end());
  double prev = 0.0;
  for (double c : cs) {
    const double w = label_weight(c, 0.3);
    CHECK(w >= prev);
    if (c > 0.3) CHECK(w == 1.0);
    prev = w;
  }
}

TEST_CASE("total_loss examples") {
  const std::vector<LossRecord> one{rec(0.5, 0.4, 0.2)};
  CHECK(total_loss(1.0, one, 0.3) == doctest::Approx(1.58).epsilon(1e-14));
  CHECK(total_loss(1.25, std::vector<LossRecord>{}, 0.3) == 1.25);

  const std::vector<LossRecord> confident{rec(0.5, 0.4, 0.9), rec(0.1, 0.2, 0.31)};
  CHECK(total_loss(0.0, confident, 0.3) == doctest::Approx(1.2).epsilon(1e-14));

  LossWeights plain;
  plain.adaptive = false;
  CHECK(total_loss(1.0, one, plain) == doctest::Approx(1.9).epsilon(1e-14));
}

TEST_CASE("total_loss matches the summation oracle") {
  Rng rng(Seed{32});
  for (int t = 0; t < 200; ++t) {
    const auto records = random_records(rng, static_cast<std::size_t>(rng.uniform_int(0, 300)));
    const double ls = rng.uniform(0, 5);
    const double got = total_loss(ls, records, 0.3);
    const double want = static_cast<double>(oracle::total_loss(ls, records, 0.3));
    CHECK(std::abs(got - want) <= 1e-12 * std::max(1.0, std::abs(want)));
  }
}

TEST_CASE("total_loss properties") {
  Rng rng(Seed{33});
  for (int t = 0; t < 200; ++t) {
    auto records = random_records(rng, 20);
    for (auto& r : records) r.confidence = std::max(r.confidence, 1e-6);

    double unweighted = 0.5;
    for (const auto& r : records) unweighted += r.cls_loss + r.loc_loss;
    CHECK(total_loss(0.5, records, 0.0) == doctest::Approx(unweighted).epsilon(1e-12));

    const double base = total_loss(0.5, records, 0.3);
    CHECK(total_loss(0.5, records, 0.1) >= base - 1e-12);

    auto bumped = records;
    const auto k = static_cast<std::size_t>(rng.uniform_int(0, 19));
    bumped[k].loc_loss += 0.1;
    bumped[k].cls_loss += 0.1;
    CHECK(total_loss(0.5, bumped, 0.3) >= base);

    auto reversed = records;
    std::reverse(reversed.begin(), reversed.end());
    CHECK(std::abs(total_loss(0.5, reversed, 0.3) - base) <= 1e-12);
  }
}

TEST_CASE("surrogate losses") {
  const Detection a{{0, 0, 0.5, 0.5}, 0, 0.7};
  const auto same = surrogate_losses(a, a, 1.0);
  CHECK(same.cls_loss == 0.0);
  CHECK(same.loc_loss == 0.0);
  CHECK(same.confidence == 0.7);

  const Detection far{{0.6, 0.6, 0.9, 0.9}, 0, 0.4};
  CHECK(surrogate_losses(a, far, 0.5).loc_loss == 1.0);
  CHECK(surrogate_losses(a, a, std::exp(-1.0)).cls_loss == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(surrogate_losses(a, a, 1e-300).cls_loss == kMaxClsLoss);
  CHECK_THROWS_AS(surrogate_losses(a, a, 0.0), ValidationError);
  CHECK(missed_losses(far, 0.5).loc_loss == 1.0);
}

TEST_CASE("classify_simple examples") {
  const LossWeights w{};
  CHECK(classify_simple(rec(0.1, 0.1, 0.9), w));
  CHECK(classify_simple(rec(0.15, 0.15, 0.9), w));
  CHECK_FALSE(classify_simple(rec(0.5, 0.0, 0.9), w));
  // Low confidence shrinks the localization term.
  CHECK(classify_simple(rec(0.1, 0.8, 0.2), w));

  LossWeights loc_only = w;
  loc_only.mode = SimpleLossMode::loc_only;
  CHECK_FALSE(classify_simple(rec(0.0, 0.8, 0.9), loc_only));
  CHECK(classify_simple(rec(2.0, 0.1, 0.9), loc_only));
  CHECK(parse_simple_loss_mode(to_string(SimpleLossMode::cls_only)) == SimpleLossMode::cls_only);
}

TEST_CASE("validation") {
  CHECK_THROWS_AS(validate_record(rec(-0.1, 0.0, 0.5)), ValidationError);
  CHECK_THROWS_AS(validate_record(rec(0.1, std::nan(""), 0.5)), ValidationError);
  CHECK_THROWS_AS(validate_record(rec(0.1, 0.1, 1.5)), ValidationError);
  LossWeights w;
  w.tau = 2.0;
  CHECK_THROWS_AS(w.validate(), ValidationError);
}

TEST_CASE("compensated sum recovers cancelled terms") {
  CompensatedSum s;
  s.add(1e100);
  s.add(1.0);
  s.add(-1e100);
  CHECK(s.value() == 1.0);
}
