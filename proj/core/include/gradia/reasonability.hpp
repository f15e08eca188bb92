#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "gradia/attention.hpp"

namespace gradia {

// Answers to the two reasonability questions: does the focus area contain
// the details needed to classify (q1), and does it contain unrelated
// contextual details (q2).
struct Verdict {
  bool q1_sufficient = false;
  bool q2_contextual = false;
  std::string annotator_id;
  std::int64_t timestamp = 0;

  bool reasonable() const { return q1_sufficient && !q2_contextual; }
  bool operator==(const Verdict&) const = default;
};

enum class Quadrant { kRA = 0, kUA = 1, kRIA = 2, kUIA = 3 };

inline constexpr std::array<Quadrant, 4> kAllQuadrants = {
    Quadrant::kRA, Quadrant::kUA, Quadrant::kRIA, Quadrant::kUIA};

const char* to_string(Quadrant q);
std::optional<Quadrant> parse_quadrant(std::string_view text);

Quadrant classify_instance(bool prediction_correct, const Verdict& verdict);

struct ReasonabilityRecord {
  std::string instance_id;
  bool correct = false;
  Verdict verdict;
};

// Rows: accurate / inaccurate. Columns: reasonable / unreasonable.
struct ReasonabilityMatrix {
  std::array<std::size_t, 4> counts{};
  std::array<std::vector<std::string>, 4> ids;
  std::size_t total = 0;

  std::size_t count(Quadrant q) const { return counts[static_cast<int>(q)]; }
  const std::vector<std::string>& members(Quadrant q) const {
    return ids[static_cast<int>(q)];
  }
  bool operator==(const ReasonabilityMatrix&) const = default;
};

// Throws DataError on duplicate instance ids. Member lists are sorted.
ReasonabilityMatrix build_matrix(const std::vector<ReasonabilityRecord>& records);
// A matrix that only carries counts (e.g. published tables).
ReasonabilityMatrix matrix_from_counts(std::size_t ra, std::size_t ua,
                                       std::size_t ria, std::size_t uia);

double m1_accuracy(const ReasonabilityMatrix& matrix);
double m2_ra_performance(const ReasonabilityMatrix& matrix);
double m4_attention_accuracy(const ReasonabilityMatrix& matrix);

// |a & b| / |a | b|; two empty masks agree perfectly (1.0).
double iou(const BinaryMask& a, const BinaryMask& b);

// Per-question majority; ties lean unreasonable (q1 -> no, q2 -> yes).
Verdict majority_vote(const std::vector<Verdict>& verdicts);

struct MetricsReport {
  double m1_accuracy = 0.0;
  double m2_ra_performance = 0.0;
  double m3_mean_iou = 0.0;
  double m3_std_iou = 0.0;
  double m4_attention_accuracy = 0.0;
  std::optional<double> auc;
};

// M1, M2 and M4 from the matrix; M3 from per-instance IoU values.
MetricsReport make_report(const ReasonabilityMatrix& matrix,
                          const std::vector<double>& ious);

// One "key=value" line per metric.
std::string format_report(const MetricsReport& report);

}  // namespace gradia
