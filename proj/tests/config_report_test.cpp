#include <gtest/gtest.h>

#include <filesystem>
#include <nlohmann/json.hpp>

#include "gradia/config.hpp"
#include "gradia/error.hpp"
#include "gradia/io.hpp"
#include "gradia/report.hpp"

namespace gradia {
namespace {

namespace fs = std::filesystem;

TEST(Config, DefaultsRoundTrip) {
  const WorkbenchConfig c;
  const std::string text = format_config(c);
  const WorkbenchConfig back = parse_config(text);
  EXPECT_EQ(format_config(back), text);
  EXPECT_EQ(back.scene, c.scene);
  EXPECT_EQ(back.model, c.model);
}

TEST(Config, OverridesAreApplied) {
  const WorkbenchConfig c = parse_config(R"(
[scene]
seed = 7
p_train = 0.8
class1_shape = ring

[model]
conv_stack = 4:3:1:1:max2,8:3:1:1:none

[finetune]
condition = C3
alpha = 0.1
higher_order = off
divergence = squared

[fewshot]
shots = 1,5
sweep_weights = 0,0.5
)");
  EXPECT_EQ(c.scene.seed, 7u);
  EXPECT_EQ(c.scene.context_cooccurrence_train, 0.8);
  EXPECT_EQ(c.scene.class1_shape, Glyph::kRing);
  ASSERT_EQ(c.model.conv_stack.size(), 2u);
  EXPECT_EQ(c.model.conv_stack[1].out_maps, 8u);
  EXPECT_EQ(c.model.conv_stack[0].pool, Pooling::kMax2);
  EXPECT_EQ(c.finetune.condition, Condition::kC3);
  EXPECT_EQ(c.finetune.factors.alpha, 0.1);
  EXPECT_FALSE(c.finetune.higher_order);
  EXPECT_EQ(c.finetune.divergence, Divergence::kSquared);
  EXPECT_EQ(c.fewshot.shots, (std::vector<std::size_t>{1, 5}));
  EXPECT_EQ(c.fewshot.sweep_weights, (std::vector<double>{0.0, 0.5}));
  EXPECT_EQ(parse_config(format_config(c)).finetune.factors.alpha, 0.1);
}

TEST(Config, RejectsUnknownAndMalformed) {
  EXPECT_THROW(parse_config("[nope]\nx = 1\n"), ConfigError);
  EXPECT_THROW(parse_config("[scene]\ncolour = red\n"), ConfigError);
  EXPECT_THROW(parse_config("[scene]\nseed = many\n"), ConfigError);
  EXPECT_THROW(parse_config("[finetune]\ncondition = C9\n"), ConfigError);
  EXPECT_THROW(parse_config("[finetune]\nalpha = 2\n"), ConfigError);
  EXPECT_THROW(parse_config("[baseline]\nepochs = 0\n"), ConfigError);
  EXPECT_THROW(parse_config("[scene\n"), ConfigError);
  EXPECT_THROW(load_config("/nonexistent/gradia.ini"), ConfigError);
}

TEST(Config, ConvStackText) {
  const auto stack = parse_conv_stack("8:3:1:1:max2,16:5:2:2:none");
  ASSERT_EQ(stack.size(), 2u);
  EXPECT_EQ(stack[1].kernel, 5u);
  EXPECT_EQ(stack[1].stride, 2u);
  EXPECT_EQ(format_conv_stack(stack), "8:3:1:1:max2,16:5:2:2:none");
  EXPECT_THROW(parse_conv_stack("8:3:1"), ConfigError);
  EXPECT_THROW(parse_conv_stack("8:3:1:1:avg"), ConfigError);
}

ReasonabilityMatrix sample_matrix() {
  std::vector<ReasonabilityRecord> records;
  Verdict good;
  good.q1_sufficient = true;
  records.push_back({"a", true, good});
  records.push_back({"b", false, good});
  records.push_back({"c", true, Verdict{}});
  return build_matrix(records);
}

TEST(Report, JsonRoundTrips) {
  const ReasonabilityMatrix m = sample_matrix();
  EXPECT_EQ(matrix_from_json(matrix_to_json(m)), m);
  MetricsReport r = make_report(m, {0.5, 0.25});
  r.auc = 0.75;
  const MetricsReport back = metrics_from_json(metrics_to_json(r));
  EXPECT_EQ(back.m1_accuracy, r.m1_accuracy);
  EXPECT_EQ(back.m3_std_iou, r.m3_std_iou);
  EXPECT_EQ(back.auc, r.auc);
  EXPECT_THROW(matrix_from_json("{"), DataError);

  RunReport run;
  run.condition = "C4";
  run.wall_time_seconds = 1.5;
  run.after = Evaluation{m, r, {}};
  const RunReport rb = run_report_from_json(run_report_json(run));
  EXPECT_EQ(rb.condition, "C4");
  EXPECT_FALSE(rb.before.has_value());
  ASSERT_TRUE(rb.after.has_value());
  EXPECT_EQ(rb.after->matrix, m);
}

TEST(Report, WriteRunLayout) {
  const fs::path dir = fs::temp_directory_path() / "gradia-test-run";
  fs::remove_all(dir);
  RunReport run;
  run.condition = "C1";
  run.config_snapshot = format_config(WorkbenchConfig{});
  run.curve = {{0, "total", 1.0}};
  run.after = Evaluation{sample_matrix(), make_report(sample_matrix(), {1.0}), {}};
  Parameters p = init_model(ModelConfig{}, 0);
  write_run(dir, run, &p);
  for (const char* f : {kRunConfig, kRunReport, kRunMetrics, kRunMatrix, kRunLossCurve,
                        kRunParams}) {
    EXPECT_TRUE(fs::exists(dir / f)) << f;
  }
  EXPECT_EQ(read_text(dir / kRunLossCurve), "step,term,value\n0,total,1\n");
  EXPECT_EQ(load_parameters(dir / kRunParams, ModelConfig{}).tensors, p.tensors);
  EXPECT_EQ(parse_config(read_text(dir / kRunConfig)).scene, SceneSpec{});
}

TEST(Report, ConditionTable) {
  ConditionRow row{"C4", matrix_from_counts(518, 104, 94, 34), {}, false};
  row.metrics = make_report(row.matrix, {});
  const std::string table = format_condition_table({row});
  EXPECT_NE(table.find("M1(%)"), std::string::npos);
  EXPECT_NE(table.find("82.93"), std::string::npos);
  EXPECT_NE(table.find("69.07"), std::string::npos);
  EXPECT_NE(table.find("518"), std::string::npos);
}

TEST(Report, FewShotJson) {
  FewShotResult r;
  r.scenario = {5, 2};
  r.baseline = {0.0, 0.6, 0.1, {0.5, 0.7}};
  r.gradia = {0.5, 0.8, 0.0, {0.8, 0.8}};
  const auto j = nlohmann::json::parse(few_shot_json({r}, {r.baseline, r.gradia}, 10));
  EXPECT_EQ(j["studies"][0]["shots_per_class"], 5);
  EXPECT_EQ(j["studies"][0]["gradia"]["mean_auc"], 0.8);
  EXPECT_EQ(j["sweep"].size(), 2u);
  EXPECT_EQ(j["sweep_shots"], 10);
}

}  // namespace
}  // namespace gradia
