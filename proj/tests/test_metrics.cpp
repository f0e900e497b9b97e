#include <doctest.h>

#include <cmath>

#include "lsp/metrics.hpp"
#include "oracles/oracles.hpp"

using namespace lsp;

namespace {

CostMatrix from_rows(const std::vector<std::vector<double>>& rows, std::size_t cols) {
  CostMatrix c(rows.size(), cols);
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < cols; ++j) c(i, j) = rows[i][j];
  return c;
}

BinaryMask block(int w, int h, int x0, int y0, int bw, int bh) {
  std::vector<std::uint32_t> idx;
  for (int y = y0; y < y0 + bh; ++y)
    for (int x = x0; x < x0 + bw; ++x) idx.push_back(static_cast<std::uint32_t>(y * w + x));
  return BinaryMask(w, h, idx);
}

std::vector<std::vector<double>> iou_table(const std::vector<BinaryMask>& g,
                                           const std::vector<BinaryMask>& p,
                                           const BinaryMask* u) {
  std::vector<std::vector<double>> s(g.size(), std::vector<double>(p.size()));
  for (std::size_t i = 0; i < g.size(); ++i)
    for (std::size_t j = 0; j < p.size(); ++j)
      s[i][j] = u ? oracle::masked_iou_by_sets(g[i], p[j], *u) : oracle::iou_by_sets(g[i], p[j]);
  return s;
}

}  // namespace

TEST_CASE("score matching picks the optimal total") {
  const auto m = match_scores(from_rows({{0.6, 0.55}, {0.0, 0.58}}, 2));
  REQUIRE(m.tp.size() == 2);
  CHECK(m.tp[0].pred == 0);
  CHECK(m.tp[1].pred == 1);
  const auto brute = oracle::brute_force_pairing({{0.6, 0.55}, {0.0, 0.58}}, 0.5);
  CHECK(counts_of(m).score_sum == doctest::Approx(brute.best_sum));

  // Greedy would take 0.9 and strand the second row.
  const auto g = match_scores(from_rows({{0.9, 0.8}, {0.85, 0.0}}, 2));
  CHECK(counts_of(g).tp == 2);
  CHECK(counts_of(g).score_sum == doctest::Approx(1.65));

  const auto none = match_scores(from_rows({{0.5, 0.2}}, 2));
  CHECK(none.tp.empty());
  CHECK(none.fn == std::vector<std::size_t>{0});
  CHECK(none.fp == std::vector<std::size_t>{0, 1});
}

TEST_CASE("score matching equals exhaustive search") {
  Rng rng(12);
  for (int t = 0; t < 300; ++t) {
    const std::size_t m = rng.below(6), n = rng.below(6);
    std::vector<std::vector<double>> s(m, std::vector<double>(n));
    for (auto& row : s)
      for (auto& v : row) v = rng.uniform() < 0.5 ? rng.uniform(0.5, 1.0) : rng.uniform(0, 0.5);
    const auto got = counts_of(match_scores(from_rows(s, n)));
    const auto best = oracle::brute_force_pairing(s, 0.5);
    CHECK(got.score_sum == doctest::Approx(best.best_sum).epsilon(1e-12));
    CHECK(got.tp + got.fn == m);
    CHECK(got.tp + got.fp == n);
  }
}

TEST_CASE("iou matching") {
  const int w = 12, h = 12;
  const std::vector<BinaryMask> g{block(w, h, 0, 0, 4, 4), block(w, h, 6, 6, 3, 3)};
  auto m = match_by_iou(g, g);
  CHECK(m.tp.size() == 2);
  for (const auto& p : m.tp) CHECK(p.score == 1.0);
  m = match_by_iou(g, {});
  CHECK(m.fn.size() == 2);
  CHECK(m.fp.empty());
  CHECK(match_by_iou({}, g).fp.size() == 2);
  CHECK_THROWS_AS(match_by_iou(g, std::vector<BinaryMask>{BinaryMask(5, 5)}), std::invalid_argument);
}

TEST_CASE("panoptic quality formula") {
  const std::vector<double> perfect{1, 1, 1};
  auto q = panoptic_quality(perfect, 0, 0);
  REQUIRE(q);
  CHECK(q->pq == 1.0);
  const std::vector<double> one{0.8};
  q = panoptic_quality(one, 1, 1);
  REQUIRE(q);
  CHECK(q->sq == 0.8);
  CHECK(q->rq == 0.5);
  CHECK(q->pq == 0.4);
  q = panoptic_quality(std::vector<double>{}, 2, 1);
  REQUIRE(q);
  CHECK(q->pq == 0.0);
  CHECK_FALSE(panoptic_quality(std::vector<double>{}, 0, 0));
}

TEST_CASE("hand-built scene with one TP at 0.8, one FP and one FN") {
  const int w = 20, h = 10;
  // GT A: 5x2 = 10 px; prediction covers 8 of them -> IoU 0.8.
  const auto a = block(w, h, 0, 0, 5, 2);
  const auto pa = block(w, h, 0, 0, 4, 2);
  const auto b = block(w, h, 8, 0, 2, 2);    // missed
  const auto fp = block(w, h, 14, 5, 3, 3);  // spurious
  const InstanceSet gt{w, h, {a, b}, {0, 0}};
  const InstanceSet pred{w, h, {pa, fp}, {0, 0}};
  const auto ev = evaluate_image(gt, pred, 1);
  const auto rep = aggregate(std::span(&ev, 1), AggregationMode::kMacro);
  REQUIRE(rep.mpq);
  CHECK(*rep.mpq == 0.4);
  CHECK(*rep.bpq == 0.4);
  CHECK(rep.classes[0].quality->sq == 0.8);
  CHECK(rep.classes[0].quality->rq == 0.5);
}

TEST_CASE("ground truth against itself") {
  Rng rng(5);
  for (int t = 0; t < 30; ++t) {
    auto [gt, pred] = oracle::noisy_pair(rng, 6, 3);
    const auto ev = evaluate_image(gt, gt, 3);
    for (auto mode : {AggregationMode::kMicro, AggregationMode::kMacro}) {
      const auto rep = aggregate(std::span(&ev, 1), mode);
      REQUIRE(rep.bpq);
      CHECK(*rep.mpq == 1.0);
      CHECK(*rep.bpq == 1.0);
      CHECK(*rep.mmpq == 1.0);
      CHECK(*rep.bmpq == 1.0);
      for (const auto& c : rep.classes) {
        if (c.quality) CHECK(c.quality->pq == 1.0);
      }
    }
  }
}

TEST_CASE("masked variants never fall below the plain ones") {
  Rng rng(6);
  for (int t = 0; t < 100; ++t) {
    auto [gt, pred] = oracle::noisy_pair(rng, 6, 2);
    const auto ev = evaluate_image(gt, pred, 2);
    const auto rep = aggregate(std::span(&ev, 1), AggregationMode::kMacro);
    if (rep.mpq) CHECK(*rep.mmpq >= *rep.mpq);
    if (rep.bpq) CHECK(*rep.bmpq >= *rep.bpq);
    for (const auto& c : rep.classes) {
      if (c.quality) {
        CHECK(c.quality->pq == c.quality->sq * c.quality->rq);
        CHECK(c.masked_quality->pq >= c.quality->pq);
      }
    }
  }
}

TEST_CASE("binary counts agree with exhaustive pairing") {
  Rng rng(7);
  for (int t = 0; t < 60; ++t) {
    auto [gt, pred] = oracle::noisy_pair(rng, 6, 1);
    const auto u = mask_union(gt.masks, gt.width, gt.height);
    for (const BinaryMask* un : {static_cast<const BinaryMask*>(nullptr), &u}) {
      const auto got = counts_of(match_by_iou(gt.masks, pred.masks, un));
      const auto best = oracle::brute_force_pairing(iou_table(gt.masks, pred.masks, un), 0.5);
      CHECK(got.score_sum == doctest::Approx(best.best_sum).epsilon(1e-12));
      CHECK(got.tp == best.tp);
    }

    // Dropping one prediction moves exactly one count.
    if (pred.masks.empty()) continue;
    const auto before = counts_of(match_by_iou(gt.masks, pred.masks));
    const std::size_t drop = rng.below(pred.masks.size());
    auto fewer = pred.masks;
    fewer.erase(fewer.begin() + static_cast<std::ptrdiff_t>(drop));
    const auto after = counts_of(match_by_iou(gt.masks, fewer));
    const bool lost_fp = after.fp + 1 == before.fp && after.tp == before.tp;
    const bool lost_tp = after.tp + 1 == before.tp && after.fn == before.fn + 1;
    CHECK((lost_fp || lost_tp));
    const auto best = oracle::brute_force_pairing(iou_table(gt.masks, fewer, nullptr), 0.5);
    const double pq_after = oracle::pq_from(best.best_sum, best.tp, fewer.size() - best.tp,
                                            gt.masks.size() - best.tp);
    const auto q = panoptic_quality(after);
    if (q) CHECK(q->pq == doctest::Approx(pq_after).epsilon(1e-12));
  }
}

TEST_CASE("masked IoU equals IoU with a single ground-truth instance") {
  Rng rng(8);
  for (int t = 0; t < 50; ++t) {
    const auto g = oracle::random_blob(rng, 16, 16, 2.0, 6.0);
    const auto p = oracle::random_blob(rng, 16, 16, 2.0, 6.0);
    if (g.empty()) continue;
    CHECK(masked_iou(g, p, g) == iou(g, p));
    const std::vector<BinaryMask> gs{g}, ps{p};
    const auto a = counts_of(match_by_iou(gs, ps));
    const auto b = counts_of(match_by_iou(gs, ps, &g));
    CHECK(a.tp == b.tp);
    CHECK(a.score_sum == b.score_sum);
  }
}

TEST_CASE("aggregation modes") {
  ImageEvaluation a, b;
  a.per_class = {PqCounts{1, 1, 1, 0.8}};
  a.per_class_masked = a.per_class;
  a.binary = a.per_class[0];
  a.binary_masked = a.binary;
  b.per_class = {PqCounts{1, 0, 0, 0.8}};
  b.per_class_masked = b.per_class;
  b.binary = b.per_class[0];
  b.binary_masked = b.binary;
  const std::vector<ImageEvaluation> both{a, b};
  const auto macro = aggregate(both, AggregationMode::kMacro);
  CHECK(*macro.bpq == doctest::Approx(0.6));
  CHECK(*macro.mpq == doctest::Approx(0.6));
  const auto micro = aggregate(both, AggregationMode::kMicro);
  CHECK(*micro.bpq == doctest::Approx(1.6 / 2 * (2.0 / 3.0)));
  CHECK(*micro.bpq != doctest::Approx(*macro.bpq));

  // Counts 10 vs 30 nuclei.
  ImageEvaluation c, d;
  c.per_class = {PqCounts{8, 2, 2, 8 * 0.7}};
  d.per_class = {PqCounts{20, 10, 10, 20 * 0.9}};
  for (auto* e : {&c, &d}) {
    e->per_class_masked = e->per_class;
    e->binary = e->per_class[0];
    e->binary_masked = e->binary;
  }
  const std::vector<ImageEvaluation> pair{c, d};
  const auto mi = aggregate(pair, AggregationMode::kMicro);
  const double pooled = oracle::pq_from(8 * 0.7 + 20 * 0.9, 28, 12, 12);
  CHECK(*mi.bpq == doctest::Approx(pooled).epsilon(1e-12));
  const auto ma = aggregate(pair, AggregationMode::kMacro);
  CHECK(*ma.bpq == doctest::Approx(0.5 * (oracle::pq_from(5.6, 8, 2, 2) + oracle::pq_from(18, 20, 10, 10))));
  CHECK(*mi.bpq != doctest::Approx(*ma.bpq));

  // A class present in no image is left out of mPQ.
  ImageEvaluation e;
  e.per_class = {PqCounts{1, 0, 0, 0.9}, PqCounts{}};
  e.per_class_masked = e.per_class;
  e.binary = e.per_class[0];
  e.binary_masked = e.binary;
  const auto r = aggregate(std::span(&e, 1), AggregationMode::kMacro);
  CHECK(*r.mpq == doctest::Approx(0.9));
  CHECK_FALSE(r.classes[1].quality);

  CHECK(parse_aggregation_mode("micro") == AggregationMode::kMicro);
  CHECK(to_string(AggregationMode::kMacro) == "macro");
  CHECK_THROWS_AS(parse_aggregation_mode("mean"), std::invalid_argument);
}

TEST_CASE("detection threshold at 3 um") {
  const std::vector<Vec2> gt{{100, 100}};
  const std::vector<double> score{0.9};
  for (auto [dist, match] : {std::pair{11.0, true}, {12.0, true}, {13.0, false}}) {
    const std::vector<Vec2> pred{{100 + dist, 100}};
    const auto rep = detection_match(gt, pred, score, 0.25);
    CHECK(rep.radius_px == 12.0);
    CHECK((rep.tp == 1) == match);
  }
  // 3-4-5 offset at 0.5 um/px and 2.5 um: exactly on the circle.
  const std::vector<Vec2> diag{{103, 104}};
  CHECK(detection_match(gt, diag, score, 0.5, 2.5).tp == 1);
  const std::vector<Vec2> beyond{{103, 104.001}};
  CHECK(detection_match(gt, beyond, score, 0.5, 2.5).tp == 0);
}

TEST_CASE("detection greedy order and scores") {
  const std::vector<Vec2> gt{{0, 0}, {10, 0}};
  const std::vector<Vec2> pred{{4, 0}, {6, 0}, {50, 50}};
  // The higher-scoring prediction takes its nearest GT first.
  auto rep = detection_match(gt, pred, std::vector<double>{0.2, 0.9, 0.5}, 1.0, 8.0);
  CHECK(rep.tp == 2);
  CHECK(rep.fp == 1);
  CHECK(rep.fn == 0);
  CHECK(rep.matches[0] == std::pair<std::size_t, std::size_t>{1, 1});
  CHECK(rep.matches[1] == std::pair<std::size_t, std::size_t>{0, 0});
  CHECK(rep.precision == doctest::Approx(2.0 / 3));
  CHECK(rep.recall == 1.0);
  CHECK(rep.f1 == doctest::Approx(0.8));

  rep = detection_match(gt, gt, std::vector<double>{1, 1}, 0.25);
  CHECK(rep.f1 == 1.0);
  rep = detection_match({}, {}, {}, 0.25);
  CHECK(rep.f1 == 0.0);
  CHECK_THROWS_AS(detection_match(gt, pred, std::vector<double>{1.0}, 0.25), std::invalid_argument);
  CHECK_THROWS_AS(detection_match(gt, gt, std::vector<double>{1, 1}, 0.0), std::invalid_argument);
}
