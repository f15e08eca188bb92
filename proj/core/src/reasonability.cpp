#include "gradia/reasonability.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>
#include <unordered_set>

#include "gradia/error.hpp"

namespace gradia {

const char* to_string(Quadrant q) {
  switch (q) {
    case Quadrant::kRA:
      return "RA";
    case Quadrant::kUA:
      return "UA";
    case Quadrant::kRIA:
      return "RIA";
    case Quadrant::kUIA:
      return "UIA";
  }
  return "?";
}

std::optional<Quadrant> parse_quadrant(std::string_view text) {
  for (Quadrant q : kAllQuadrants) {
    if (text == to_string(q)) return q;
  }
  return std::nullopt;
}

Quadrant classify_instance(bool prediction_correct, const Verdict& verdict) {
  const bool reasonable = verdict.reasonable();
  if (prediction_correct) return reasonable ? Quadrant::kRA : Quadrant::kUA;
  return reasonable ? Quadrant::kRIA : Quadrant::kUIA;
}

ReasonabilityMatrix build_matrix(
    const std::vector<ReasonabilityRecord>& records) {
  ReasonabilityMatrix matrix;
  std::unordered_set<std::string> seen;
  for (const auto& record : records) {
    if (!seen.insert(record.instance_id).second) {
      throw DataError("duplicate instance id in reasonability records: " +
                      record.instance_id);
    }
    const auto q = static_cast<int>(classify_instance(record.correct, record.verdict));
    matrix.counts[q] += 1;
    matrix.ids[q].push_back(record.instance_id);
  }
  for (auto& list : matrix.ids) std::sort(list.begin(), list.end());
  matrix.total = records.size();
  return matrix;
}

ReasonabilityMatrix matrix_from_counts(std::size_t ra, std::size_t ua,
                                       std::size_t ria, std::size_t uia) {
  ReasonabilityMatrix matrix;
  matrix.counts = {ra, ua, ria, uia};
  matrix.total = ra + ua + ria + uia;
  return matrix;
}

namespace {

double fraction(std::size_t part, const ReasonabilityMatrix& matrix,
                const char* metric) {
  if (matrix.total == 0) {
    throw UndefinedMetricError(std::string(metric) +
                               " is undefined for an empty matrix");
  }
  return static_cast<double>(part) / static_cast<double>(matrix.total);
}

}  // namespace

double m1_accuracy(const ReasonabilityMatrix& matrix) {
  return fraction(matrix.count(Quadrant::kRA) + matrix.count(Quadrant::kUA),
                  matrix, "M1");
}

double m2_ra_performance(const ReasonabilityMatrix& matrix) {
  return fraction(matrix.count(Quadrant::kRA), matrix, "M2");
}

double m4_attention_accuracy(const ReasonabilityMatrix& matrix) {
  return fraction(matrix.count(Quadrant::kRA) + matrix.count(Quadrant::kRIA),
                  matrix, "M4");
}

double iou(const BinaryMask& a, const BinaryMask& b) {
  if (a.height() != b.height() || a.width() != b.width()) {
    throw InputError("iou: mask dimensions differ");
  }
  std::size_t inter = 0;
  std::size_t uni = 0;
  const auto& x = a.bits();
  const auto& y = b.bits();
  for (std::size_t i = 0; i < x.size(); ++i) {
    inter += x[i] & y[i];
    uni += x[i] | y[i];
  }
  if (uni == 0) return 1.0;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

Verdict majority_vote(const std::vector<Verdict>& verdicts) {
  if (verdicts.empty()) throw InputError("majority_vote: no verdicts");
  std::size_t q1_yes = 0;
  std::size_t q2_yes = 0;
  for (const auto& v : verdicts) {
    q1_yes += v.q1_sufficient;
    q2_yes += v.q2_contextual;
  }
  const std::size_t n = verdicts.size();
  Verdict out;
  out.q1_sufficient = 2 * q1_yes > n;
  out.q2_contextual = 2 * q2_yes >= n;
  out.annotator_id = "majority";
  for (const auto& v : verdicts) out.timestamp = std::max(out.timestamp, v.timestamp);
  return out;
}

MetricsReport make_report(const ReasonabilityMatrix& matrix,
                          const std::vector<double>& ious) {
  MetricsReport report;
  report.m1_accuracy = m1_accuracy(matrix);
  report.m2_ra_performance = m2_ra_performance(matrix);
  report.m4_attention_accuracy = m4_attention_accuracy(matrix);
  if (!ious.empty()) {
    double total = 0.0;
    for (double v : ious) total += v;
    const double mean = total / static_cast<double>(ious.size());
    double sq = 0.0;
    for (double v : ious) sq += (v - mean) * (v - mean);
    report.m3_mean_iou = mean;
    report.m3_std_iou = std::sqrt(sq / static_cast<double>(ious.size()));
  }
  return report;
}

std::string format_report(const MetricsReport& report) {
  std::ostringstream out;
  out << std::setprecision(17);
  out << "m1_accuracy=" << report.m1_accuracy << '\n';
  out << "m2_ra_performance=" << report.m2_ra_performance << '\n';
  out << "m3_mean_iou=" << report.m3_mean_iou << '\n';
  out << "m3_std_iou=" << report.m3_std_iou << '\n';
  out << "m4_attention_accuracy=" << report.m4_attention_accuracy << '\n';
  if (report.auc) out << "auc=" << *report.auc << '\n';
  return out.str();
}

}  // namespace gradia
