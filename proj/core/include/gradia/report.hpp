#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "gradia/model.hpp"
#include "gradia/reasonability.hpp"
#include "gradia/trainer.hpp"

namespace gradia {

// {"RA": {"count": n, "ids": [...]}, ..., "total": n}
std::string matrix_to_json(const ReasonabilityMatrix& matrix);
ReasonabilityMatrix matrix_from_json(const std::string& text);

std::string metrics_to_json(const MetricsReport& metrics);
MetricsReport metrics_from_json(const std::string& text);

// Condition, wall time and the before/after matrices and metrics.
std::string run_report_json(const RunReport& report);
RunReport run_report_from_json(const std::string& text);

// File names inside a run directory.
inline constexpr const char* kRunConfig = "config.ini";
inline constexpr const char* kRunReport = "report.json";
inline constexpr const char* kRunMetrics = "metrics.txt";
inline constexpr const char* kRunMatrix = "matrix.json";
inline constexpr const char* kRunLossCurve = "loss_curve.csv";
inline constexpr const char* kRunParams = "params.bin";

// Writes the config snapshot, report, metrics and matrix of the latest
// evaluation, loss curve and (when given) the parameter archive.
void write_run(const std::filesystem::path& directory, const RunReport& report,
               const Parameters* params);

struct ConditionRow {
  std::string label;
  ReasonabilityMatrix matrix;
  MetricsReport metrics;
  // Rows built from published counts carry no IoU; M3 prints as "-".
  bool has_iou = true;
};

// Side-by-side table: M1, M2, M3 (mean +- std), M4 and the four quadrant
// counts, percentages to two decimals.
std::string format_condition_table(const std::vector<ConditionRow>& rows);

std::string few_shot_json(const std::vector<FewShotResult>& studies,
                          const std::vector<ArmSummary>& sweep,
                          std::size_t sweep_shots);

}  // namespace gradia
