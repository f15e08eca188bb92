#include "gradia/report.hpp"

#include <cstdio>
#include <nlohmann/json.hpp>
#include <sstream>

#include "gradia/error.hpp"
#include "gradia/io.hpp"

namespace gradia {
using nlohmann::ordered_json;

namespace {

ordered_json matrix_json(const ReasonabilityMatrix& m) {
  ordered_json out;
  for (Quadrant q : kAllQuadrants) {
    out[to_string(q)] = {{"count", m.count(q)}, {"ids", m.members(q)}};
  }
  out["total"] = m.total;
  return out;
}

ReasonabilityMatrix matrix_value(const nlohmann::json& j) {
  ReasonabilityMatrix m;
  for (Quadrant q : kAllQuadrants) {
    const auto& cell = j.at(to_string(q));
    const int i = static_cast<int>(q);
    m.counts[i] = cell.at("count").get<std::size_t>();
    m.ids[i] = cell.value("ids", std::vector<std::string>{});
  }
  m.total = j.at("total").get<std::size_t>();
  return m;
}

ordered_json metrics_json(const MetricsReport& r) {
  ordered_json out;
  out["m1_accuracy"] = r.m1_accuracy;
  out["m2_ra_performance"] = r.m2_ra_performance;
  out["m3_mean_iou"] = r.m3_mean_iou;
  out["m3_std_iou"] = r.m3_std_iou;
  out["m4_attention_accuracy"] = r.m4_attention_accuracy;
  out["auc"] = r.auc ? ordered_json(*r.auc) : ordered_json(nullptr);
  return out;
}

MetricsReport metrics_value(const nlohmann::json& j) {
  MetricsReport r;
  r.m1_accuracy = j.at("m1_accuracy").get<double>();
  r.m2_ra_performance = j.at("m2_ra_performance").get<double>();
  r.m3_mean_iou = j.at("m3_mean_iou").get<double>();
  r.m3_std_iou = j.at("m3_std_iou").get<double>();
  r.m4_attention_accuracy = j.at("m4_attention_accuracy").get<double>();
  if (j.contains("auc") && !j.at("auc").is_null()) r.auc = j.at("auc").get<double>();
  return r;
}

template <typename F>
auto parse_or_throw(const std::string& text, const char* what, F&& f) {
  try {
    return f(nlohmann::json::parse(text));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed ") + what + ": " + e.what());
  }
}

ordered_json arm_json(const ArmSummary& arm) {
  return {{"attention_weight", arm.attention_weight},
          {"mean_auc", arm.mean_auc},
          {"std_auc", arm.std_auc},
          {"per_seed", arm.per_seed}};
}

}  // namespace

std::string matrix_to_json(const ReasonabilityMatrix& matrix) {
  return matrix_json(matrix).dump(2);
}

ReasonabilityMatrix matrix_from_json(const std::string& text) {
  return parse_or_throw(text, "matrix", matrix_value);
}

std::string metrics_to_json(const MetricsReport& metrics) {
  return metrics_json(metrics).dump(2);
}

MetricsReport metrics_from_json(const std::string& text) {
  return parse_or_throw(text, "metrics", metrics_value);
}

std::string run_report_json(const RunReport& report) {
  ordered_json out;
  out["condition"] = report.condition;
  out["wall_time_seconds"] = report.wall_time_seconds;
  auto stage = [](const std::optional<Evaluation>& ev) -> ordered_json {
    if (!ev) return nullptr;
    return {{"metrics", metrics_json(ev->metrics)}, {"matrix", matrix_json(ev->matrix)}};
  };
  out["before"] = stage(report.before);
  out["after"] = stage(report.after);
  return out.dump(2);
}

RunReport run_report_from_json(const std::string& text) {
  return parse_or_throw(text, "run report", [](const nlohmann::json& j) {
    RunReport r;
    r.condition = j.at("condition").get<std::string>();
    r.wall_time_seconds = j.at("wall_time_seconds").get<double>();
    auto stage = [&j](const char* key) -> std::optional<Evaluation> {
      if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
      Evaluation ev;
      ev.metrics = metrics_value(j.at(key).at("metrics"));
      ev.matrix = matrix_value(j.at(key).at("matrix"));
      return ev;
    };
    r.before = stage("before");
    r.after = stage("after");
    return r;
  });
}

void write_run(const std::filesystem::path& directory, const RunReport& report,
               const Parameters* params) {
  std::filesystem::create_directories(directory);
  if (!report.config_snapshot.empty()) {
    write_text(directory / kRunConfig, report.config_snapshot);
  }
  write_text(directory / kRunReport, run_report_json(report) + "\n");
  const std::optional<Evaluation>& latest = report.after ? report.after : report.before;
  if (latest) {
    write_text(directory / kRunMetrics, format_report(latest->metrics));
    write_text(directory / kRunMatrix, matrix_to_json(latest->matrix) + "\n");
  }
  if (!report.curve.empty()) {
    write_text(directory / kRunLossCurve, format_loss_csv(report.curve));
  }
  if (params != nullptr) save_parameters(*params, directory / kRunParams);
}

std::string format_condition_table(const std::vector<ConditionRow>& rows) {
  std::ostringstream out;
  char line[256];
  std::snprintf(line, sizeof line, "%-12s %8s %8s %15s %8s %6s %6s %6s %6s\n",
                "condition", "M1(%)", "M2(%)", "M3", "M4(%)", "RA", "UA", "RIA", "UIA");
  out << line;
  for (const auto& row : rows) {
    const MetricsReport& m = row.metrics;
    char m3[32] = "-";
    if (row.has_iou) {
      std::snprintf(m3, sizeof m3, "%.3f+-%.3f", m.m3_mean_iou, m.m3_std_iou);
    }
    std::snprintf(line, sizeof line,
                  "%-12s %8.2f %8.2f %15s %8.2f %6zu %6zu %6zu %6zu\n",
                  row.label.c_str(), 100.0 * m.m1_accuracy, 100.0 * m.m2_ra_performance,
                  m3, 100.0 * m.m4_attention_accuracy, row.matrix.count(Quadrant::kRA),
                  row.matrix.count(Quadrant::kUA), row.matrix.count(Quadrant::kRIA),
                  row.matrix.count(Quadrant::kUIA));
    out << line;
  }
  return out.str();
}

std::string few_shot_json(const std::vector<FewShotResult>& studies,
                          const std::vector<ArmSummary>& sweep,
                          std::size_t sweep_shots) {
  ordered_json out;
  out["studies"] = ordered_json::array();
  for (const auto& s : studies) {
    out["studies"].push_back({{"shots_per_class", s.scenario.shots_per_class},
                              {"num_seeds", s.scenario.num_seeds},
                              {"baseline", arm_json(s.baseline)},
                              {"gradia", arm_json(s.gradia)}});
  }
  out["sweep_shots"] = sweep_shots;
  out["sweep"] = ordered_json::array();
  for (const auto& arm : sweep) out["sweep"].push_back(arm_json(arm));
  return out.dump(2);
}

}  // namespace gradia
