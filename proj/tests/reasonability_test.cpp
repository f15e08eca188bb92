#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "gradia/error.hpp"
#include "gradia/reasonability.hpp"

namespace gradia {
namespace {

double pct2(double fraction) { return std::round(10000.0 * fraction) / 100.0; }

Verdict verdict(bool q1, bool q2) {
  Verdict v;
  v.q1_sufficient = q1;
  v.q2_contextual = q2;
  return v;
}

TEST(Quadrants, Classification) {
  EXPECT_EQ(classify_instance(true, verdict(true, false)), Quadrant::kRA);
  EXPECT_EQ(classify_instance(true, verdict(false, false)), Quadrant::kUA);
  EXPECT_EQ(classify_instance(true, verdict(true, true)), Quadrant::kUA);
  EXPECT_EQ(classify_instance(false, verdict(true, false)), Quadrant::kRIA);
  EXPECT_EQ(classify_instance(false, verdict(false, true)), Quadrant::kUIA);
  for (Quadrant q : kAllQuadrants) EXPECT_EQ(parse_quadrant(to_string(q)), q);
  EXPECT_FALSE(parse_quadrant("XX"));
}

TEST(Matrix, BuildPartitionsRecords) {
  std::vector<ReasonabilityRecord> records = {
      {"b", true, verdict(true, false)},
      {"a", true, verdict(true, false)},
      {"c", false, verdict(false, true)},
      {"d", true, verdict(false, true)},
  };
  const ReasonabilityMatrix m = build_matrix(records);
  EXPECT_EQ(m.total, 4u);
  EXPECT_EQ(m.count(Quadrant::kRA), 2u);
  EXPECT_EQ(m.members(Quadrant::kRA), (std::vector<std::string>{"a", "b"}));
  EXPECT_EQ(m.count(Quadrant::kUA), 1u);
  EXPECT_EQ(m.count(Quadrant::kRIA), 0u);
  EXPECT_EQ(m.count(Quadrant::kUIA), 1u);
  records.push_back({"a", false, verdict(true, true)});
  EXPECT_THROW(build_matrix(records), DataError);
}

TEST(Matrix, EmptyMetricsUndefined) {
  EXPECT_THROW(m1_accuracy(ReasonabilityMatrix{}), UndefinedMetricError);
}

struct TableRow {
  std::size_t ra, ua, ria, uia;
  double m1, m2;
};

// Quadrant counts and percentages as printed in the published tables.
// The third row's M1 prints as 81.86 there; (497 + 117) / 750 = 81.8667%.
// The last row's M1 prints as 82.93; (515 + 108) / 750 = 83.0667%.
TEST(Metrics, PublishedTables) {
  const std::vector<TableRow> rows = {
      {306, 310, 33, 101, 82.13, 40.80}, {456, 163, 87, 44, 82.53, 60.80},
      {497, 117, 99, 37, 81.87, 66.27},  {518, 104, 94, 34, 82.93, 69.07},
      {147, 462, 25, 116, 81.20, 19.60}, {515, 108, 97, 30, 83.07, 68.67},
  };
  for (const auto& r : rows) {
    const ReasonabilityMatrix m = matrix_from_counts(r.ra, r.ua, r.ria, r.uia);
    EXPECT_EQ(m.total, 750u);
    EXPECT_DOUBLE_EQ(pct2(m1_accuracy(m)), r.m1);
    EXPECT_DOUBLE_EQ(pct2(m2_ra_performance(m)), r.m2);
    const double m4 = m4_attention_accuracy(m);
    EXPECT_DOUBLE_EQ(m4, static_cast<double>(r.ra + r.ria) / 750.0);
    EXPECT_LE(m2_ra_performance(m), m1_accuracy(m));
    EXPECT_LE(m2_ra_performance(m), m4);
  }
}

BinaryMask random_mask(std::size_t h, std::size_t w, double p, std::mt19937_64& rng) {
  std::bernoulli_distribution bit(p);
  BinaryMask m(h, w);
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t c = 0; c < w; ++c) m.set(r, c, bit(rng));
  }
  return m;
}

TEST(Iou, MatchesBitCounts) {
  std::mt19937_64 rng(3);
  for (int t = 0; t < 1000; ++t) {
    const std::size_t h = 1 + rng() % 16, w = 1 + rng() % 16;
    const double p = (t % 7) / 6.0;
    const BinaryMask a = random_mask(h, w, p, rng);
    const BinaryMask b = random_mask(h, w, 1.0 - p, rng);
    std::size_t both = 0, either = 0;
    for (std::size_t i = 0; i < h * w; ++i) {
      both += a[i] && b[i];
      either += a[i] || b[i];
    }
    const double expected = either == 0 ? 1.0 : static_cast<double>(both) / either;
    EXPECT_EQ(iou(a, b), expected);
  }
  EXPECT_THROW(iou(BinaryMask(2, 2), BinaryMask(2, 3)), InputError);
}

TEST(MajorityVote, TiesLeanUnreasonable) {
  const Verdict split = majority_vote({verdict(true, false), verdict(false, true)});
  EXPECT_FALSE(split.q1_sufficient);
  EXPECT_TRUE(split.q2_contextual);
  const Verdict two_one =
      majority_vote({verdict(true, false), verdict(true, false), verdict(false, true)});
  EXPECT_TRUE(two_one.q1_sufficient);
  EXPECT_FALSE(two_one.q2_contextual);
  EXPECT_THROW(majority_vote({}), InputError);
}

TEST(Metrics, ReportAndFormat) {
  const ReasonabilityMatrix m = matrix_from_counts(2, 1, 1, 0);
  const MetricsReport r = make_report(m, {0.2, 0.4, 0.6});
  EXPECT_DOUBLE_EQ(r.m1_accuracy, 0.75);
  EXPECT_DOUBLE_EQ(r.m2_ra_performance, 0.5);
  EXPECT_DOUBLE_EQ(r.m4_attention_accuracy, 0.75);
  EXPECT_NEAR(r.m3_mean_iou, 0.4, 1e-15);
  EXPECT_NEAR(r.m3_std_iou, std::sqrt(0.08 / 3.0), 1e-15);
  const std::string text = format_report(r);
  EXPECT_NE(text.find("m1_accuracy=0.75\n"), std::string::npos);
  EXPECT_NE(text.find("m4_attention_accuracy=0.75\n"), std::string::npos);
}

}  // namespace
}  // namespace gradia
