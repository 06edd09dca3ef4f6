#include <set>
#include <sstream>
#include <tuple>

#include <gtest/gtest.h>

#include "ovseg/metrics.hpp"
#include "ovseg/testkit.hpp"
#include "oracles.hpp"

namespace ovseg {
namespace {

void fill_box(LabelVolume& v, Label l, int z0, int z1, int y0, int y1, int x0, int x1) {
  for (int z = z0; z <= z1; ++z)
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x) v.at(z, y, x) = l;
}

LabelVolume small_gt(std::uint64_t seed) {
  testkit::SynthSpec s;
  s.dims = {8, 14, 14};
  s.n_cells = 3 + seed % 8;
  s.seed = seed;
  s.anisotropy = {1.0, 1.0, 1.0};
  return testkit::generate_voronoi_volume(s);
}

/// A corrupted copy: random splits, merges, boundary shifts and deletions.
LabelVolume corrupt(const LabelVolume& gt, std::uint64_t seed) {
  LabelVolume v = gt;
  Rng rng(seed);
  const Dims d = v.dims();
  Label next = v.max_label() + 1;
  const Label n = gt.max_label();
  for (int op = 0; op < 4; ++op) {
    const Label a = Label(1 + rng.below(n));
    switch (rng.below(4)) {
      case 0: {  // split at a random x
        const std::size_t cut = rng.below(d.x);
        for (std::size_t z = 0; z < d.z; ++z)
          for (std::size_t y = 0; y < d.y; ++y)
            for (std::size_t x = cut; x < d.x; ++x)
              if (v.at(z, y, x) == a) v.at(z, y, x) = next;
        ++next;
        break;
      }
      case 1:  // merge into another label
        v.relabel(a, Label(1 + rng.below(n)));
        break;
      case 2: {  // grow a slab of a
        const std::size_t y0 = rng.below(d.y);
        for (std::size_t z = 0; z < d.z; ++z)
          for (std::size_t y = y0; y < std::min(d.y, y0 + 3); ++y)
            for (std::size_t x = 0; x < d.x / 2; ++x)
              if (v.at(z, y, x) != kBackground) v.at(z, y, x) = a;
        break;
      }
      default:  // delete a
        v.relabel(a, kBackground);
    }
  }
  return v;
}

TEST(MatchCells, IdentityIsPerfect) {
  const LabelVolume gt = small_gt(3);
  const auto m = match_cells(gt, gt, 0.75);
  EXPECT_EQ(m.fp(), 0u);
  EXPECT_EQ(m.fn(), 0u);
  for (const auto& x : m.matches) {
    EXPECT_EQ(x.pred, x.gt);
    EXPECT_DOUBLE_EQ(x.iou, 1.0);
  }
  EXPECT_DOUBLE_EQ(mean_ap(gt, gt), 1.0);
  EXPECT_DOUBLE_EQ(jaccard(gt, gt), 1.0);
}

TEST(MatchCells, DimensionMismatchThrows) {
  EXPECT_THROW(match_cells(LabelVolume(Dims{2, 3, 3}), LabelVolume(Dims{2, 3, 4}), 0.5), InvalidArgument);
}

TEST(MatchCells, SinglePredictionTakesBestPartner) {
  LabelVolume gt(Dims{1, 1, 10}), pred(Dims{1, 1, 10});
  fill_box(gt, 1, 0, 0, 0, 0, 0, 4);
  fill_box(gt, 2, 0, 0, 0, 0, 5, 9);
  fill_box(pred, 7, 0, 0, 0, 0, 0, 5);  // IoU 5/6 with 1, 1/9 with 2
  const auto m = match_cells(pred, gt, 0.1);
  ASSERT_EQ(m.tp(), 1u);
  EXPECT_EQ(m.matches[0].pred, 7u);
  EXPECT_EQ(m.matches[0].gt, 1u);
  EXPECT_NEAR(m.matches[0].iou, 5.0 / 6.0, 1e-12);
  EXPECT_EQ(m.unmatched_gt, std::vector<Label>{2});
  EXPECT_TRUE(m.unmatched_pred.empty());
}

TEST(MatchCells, PrefersMorePairsOverOneGreedyPick) {
  // gt 1 = x 0..9, gt 2 = x 10..19; pred 5 = x 4..13, pred 6 = x 0..3.
  LabelVolume gt(Dims{1, 1, 20}), pred(Dims{1, 1, 20});
  fill_box(gt, 1, 0, 0, 0, 0, 0, 9);
  fill_box(gt, 2, 0, 0, 0, 0, 10, 19);
  fill_box(pred, 5, 0, 0, 0, 0, 4, 13);
  fill_box(pred, 6, 0, 0, 0, 0, 0, 3);
  // Taking the best pair (5, 1) at IoU 6/14 first would leave 6 and 2 unmatched.
  const auto m = match_cells(pred, gt, 0.25);
  ASSERT_EQ(m.tp(), 2u);
  EXPECT_DOUBLE_EQ(average_precision(m), 1.0);
  const JaccardScores j = jaccard_scores(overlap_table(pred, gt));
  EXPECT_NEAR(j.penalized, (4.0 / 10.0 + 4.0 / 16.0) / 2.0, 1e-15);
  EXPECT_NEAR(j.penalized, oracle::exhaustive_jaccard(pred, gt), 1e-15);
}

/// Accept overlapping pairs in decreasing IoU order, skipping used labels.
std::size_t greedy_tp(const OverlapTable& t, double thr) {
  std::vector<std::tuple<double, Label, Label>> all;
  for (const auto& [k, n] : t.inter) all.emplace_back(-t.iou(k.first, k.second), k.first, k.second);
  std::sort(all.begin(), all.end());
  std::set<Label> up, ug;
  std::size_t tp = 0;
  for (const auto& [neg, p, g] : all)
    if (-neg >= thr && !up.contains(p) && !ug.contains(g)) {
      up.insert(p);
      ug.insert(g);
      ++tp;
    }
  return tp;
}

TEST(MatchCells, AgreesWithGreedyAboveOneHalf) {
  for (std::uint64_t s = 0; s < 30; ++s) {
    const LabelVolume gt = small_gt(s);
    const OverlapTable t = overlap_table(corrupt(gt, s + 300), gt);
    for (double thr : {0.5, 0.6, 0.75, 0.9}) EXPECT_EQ(match_cells(t, thr).tp(), greedy_tp(t, thr)) << s << " " << thr;
  }
}

TEST(MatchCells, InjectiveAndAboveThreshold) {
  for (std::uint64_t s = 0; s < 20; ++s) {
    const LabelVolume gt = small_gt(s);
    const OverlapTable t = overlap_table(corrupt(gt, s + 700), gt);
    for (double thr : kApThresholds) {
      const auto m = match_cells(t, thr);
      std::set<Label> p, g;
      for (const auto& x : m.matches) {
        EXPECT_GE(x.iou, thr);
        EXPECT_TRUE(p.insert(x.pred).second);
        EXPECT_TRUE(g.insert(x.gt).second);
      }
      EXPECT_EQ(m.tp() + m.fp(), t.pred_size.size());
      EXPECT_EQ(m.tp() + m.fn(), t.gt_size.size());
    }
  }
}

TEST(AveragePrecision, EmptyVolumes) {
  const LabelVolume e(Dims{2, 4, 4});
  EXPECT_DOUBLE_EQ(average_precision(e, e, 0.5), 1.0);
  EXPECT_DOUBLE_EQ(mean_ap(e, e), 1.0);
  LabelVolume one = e;
  one.at(0, 0, 0) = 1;
  EXPECT_DOUBLE_EQ(average_precision(e, one, 0.5), 0.0);
  EXPECT_DOUBLE_EQ(average_precision(one, e, 0.5), 0.0);
}

TEST(AveragePrecision, CountsByHand) {
  // gt: 1, 2, 3. pred: exact 1, half of 2, stray 9.
  LabelVolume gt(Dims{1, 4, 8}), pred(Dims{1, 4, 8});
  fill_box(gt, 1, 0, 0, 0, 0, 0, 7);
  fill_box(gt, 2, 0, 0, 1, 1, 0, 7);
  fill_box(gt, 3, 0, 0, 2, 2, 0, 7);
  fill_box(pred, 1, 0, 0, 0, 0, 0, 7);
  fill_box(pred, 2, 0, 0, 1, 1, 0, 3);
  fill_box(pred, 9, 0, 0, 3, 3, 0, 7);
  EXPECT_DOUBLE_EQ(average_precision(pred, gt, 0.25), 2.0 / 4.0);  // TP 2, FP 1, FN 1
  EXPECT_DOUBLE_EQ(average_precision(pred, gt, 0.5), 2.0 / 4.0);
  EXPECT_DOUBLE_EQ(average_precision(pred, gt, 0.75), 1.0 / 5.0);  // TP 1, FP 2, FN 2
  EXPECT_DOUBLE_EQ(mean_ap(pred, gt), (0.5 + 0.5 + 0.2) / 3.0);
}

TEST(AveragePrecision, NonIncreasingInThreshold) {
  for (std::uint64_t s = 0; s < 20; ++s) {
    const LabelVolume gt = small_gt(s);
    const LabelVolume pred = corrupt(gt, s + 100);
    const OverlapTable table = overlap_table(pred, gt);
    double prev = 2.0;
    for (double t = 0.5; t <= 1.0 + 1e-12; t += 0.05) {
      const double ap = average_precision(match_cells(table, t));
      EXPECT_LE(ap, prev + 1e-15) << "seed " << s << " t " << t;
      prev = ap;
    }
  }
}

TEST(AveragePrecision, MatchesExhaustiveOracle) {
  for (std::uint64_t s = 0; s < 30; ++s) {
    const LabelVolume gt = small_gt(s);
    const LabelVolume pred = corrupt(gt, s + 500);
    for (double t : kApThresholds)
      EXPECT_DOUBLE_EQ(average_precision(pred, gt, t), oracle::exhaustive_ap(pred, gt, t))
          << "seed " << s << " t " << t;
  }
}

TEST(Jaccard, HalfCoverIsHalf) {
  LabelVolume gt(Dims{2, 6, 8}), pred(Dims{2, 6, 8});
  fill_box(gt, 1, 0, 1, 0, 2, 0, 7);
  fill_box(gt, 2, 0, 1, 3, 5, 0, 7);
  fill_box(pred, 5, 0, 1, 0, 2, 0, 3);
  fill_box(pred, 6, 0, 1, 3, 5, 4, 7);
  const JaccardScores j = jaccard_scores(overlap_table(pred, gt));
  EXPECT_DOUBLE_EQ(j.matched, 0.5);
  EXPECT_DOUBLE_EQ(j.penalized, 0.5);
}

TEST(Jaccard, UnmatchedGroundTruthCountsZero) {
  LabelVolume gt(Dims{1, 2, 4}), pred(Dims{1, 2, 4});
  fill_box(gt, 1, 0, 0, 0, 0, 0, 3);
  fill_box(gt, 2, 0, 0, 1, 1, 0, 3);
  fill_box(pred, 1, 0, 0, 0, 0, 0, 3);
  const JaccardScores j = jaccard_scores(overlap_table(pred, gt));
  EXPECT_DOUBLE_EQ(j.matched, 1.0);
  EXPECT_DOUBLE_EQ(j.penalized, 0.5);
}

TEST(Jaccard, EmptyGroundTruthThrows) {
  LabelVolume gt(Dims{1, 2, 2}), pred(Dims{1, 2, 2});
  pred.at(0, 0, 0) = 1;
  EXPECT_THROW(jaccard(pred, gt), InvalidArgument);
}

TEST(Jaccard, MatchesExhaustiveOracle) {
  for (std::uint64_t s = 0; s < 30; ++s) {
    const LabelVolume gt = small_gt(s);
    const LabelVolume pred = corrupt(gt, s + 900);
    EXPECT_NEAR(jaccard(pred, gt), oracle::exhaustive_jaccard(pred, gt), 1e-12) << "seed " << s;
  }
}

TEST(SegmentationMetrics, JsonFields) {
  const LabelVolume gt = small_gt(4);
  const auto j = segmentation_metrics(corrupt(gt, 8), gt).to_json();
  for (const char* k : {"ap_0.25", "ap_0.50", "ap_0.75", "map", "jaccard_matched", "jaccard_penalized", "n_pred", "n_gt"})
    EXPECT_TRUE(j.contains(k)) << k;
  EXPECT_NEAR(j["map"].get<double>(),
              (j["ap_0.25"].get<double>() + j["ap_0.50"].get<double>() + j["ap_0.75"].get<double>()) / 3, 1e-15);
}

TEST(ClassificationReport, WorkedExample) {
  const auto r = classification_report({true, true, true, true, false, false}, {true, true, true, false, true, false});
  EXPECT_EQ(r.tp, 3u);
  EXPECT_EQ(r.fp, 1u);
  EXPECT_EQ(r.fn, 1u);
  EXPECT_EQ(r.tn, 1u);
  EXPECT_DOUBLE_EQ(r.recall, 0.75);
  EXPECT_DOUBLE_EQ(r.precision, 0.75);
  EXPECT_DOUBLE_EQ(r.f1, 0.75);
}

TEST(ClassificationReport, ZeroDenominators) {
  const auto none = classification_report({false, false}, {false, false});
  EXPECT_DOUBLE_EQ(none.recall, 1.0);
  EXPECT_DOUBLE_EQ(none.precision, 1.0);
  EXPECT_DOUBLE_EQ(none.f1, 1.0);
  const auto miss = classification_report({false}, {true});
  EXPECT_DOUBLE_EQ(miss.recall, 0.0);
  EXPECT_DOUBLE_EQ(miss.precision, 1.0);
  EXPECT_DOUBLE_EQ(miss.f1, 0.0);
  EXPECT_THROW(classification_report({true}, {}), InvalidArgument);
}

TEST(ReviewCsv, OneRowPerDecisionWithBoxes) {
  LabelVolume v(Dims{6, 6, 6}, Anisotropy{1, 1, 1});
  fill_box(v, 1, 0, 1, 1, 3, 1, 3);
  fill_box(v, 2, 3, 5, 1, 3, 1, 3);
  fill_box(v, 3, 0, 5, 5, 5, 5, 5);
  const CellIndex index = build_cell_index(v);
  CandidatePair pair;
  pair.label_a = 1;
  pair.label_b = 2;
  pair.gap_first = 2;
  pair.gap_size = 1;
  std::vector<CorrectionDecision> ds{make_decision(index, pair, Verdict::Merge, 0.9)};
  const CorrectionResult res = apply_corrections(v, ds);
  std::ostringstream os;
  write_review_csv(os, res.log, v, res.volume);
  std::istringstream is(os.str());
  std::string header, row, extra;
  std::getline(is, header);
  std::getline(is, row);
  EXPECT_FALSE(std::getline(is, extra));
  EXPECT_NE(header.find("expert_verdict"), std::string::npos);
  EXPECT_EQ(row, "1,2,merge,0.900000,merged,2,1,0:5 1:3 1:3,0:5 1:3 1:3,9,0,,");
}

}  // namespace
}  // namespace ovseg
