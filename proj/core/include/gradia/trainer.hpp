#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "gradia/alignment_loss.hpp"
#include "gradia/attention.hpp"
#include "gradia/model.hpp"
#include "gradia/reasonability.hpp"
#include "gradia/synthetic.hpp"

namespace gradia {

enum class OptimizerKind { kSgd, kMomentum };

const char* to_string(OptimizerKind kind);
std::optional<OptimizerKind> parse_optimizer(std::string_view text);

struct TrainConfig {
  OptimizerKind optimizer = OptimizerKind::kMomentum;
  double learning_rate = 0.05;
  double momentum = 0.9;
  std::size_t epochs = 20;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
  bool higher_order = true;
  Divergence divergence = Divergence::kAbsolute;
  BalanceFactors factors;
  Condition condition = Condition::kC4;

  static TrainConfig baseline_defaults();
  static TrainConfig finetune_defaults();
  void validate() const;
};

// Plain or heavy-ball SGD over every parameter tensor.
class Optimizer {
 public:
  Optimizer(const TrainConfig& config, const Parameters& params);
  void step(Parameters& params, const std::vector<Tensor>& grads);

 private:
  OptimizerKind kind_;
  double learning_rate_;
  double momentum_;
  std::vector<Tensor> velocity_;
};

struct LossPoint {
  std::size_t step = 0;
  std::string term;
  double value = 0.0;
};

using LossCurve = std::vector<LossPoint>;

// "step,term,value" header plus one row per point.
std::string format_loss_csv(const LossCurve& curve);

// Receives the completed fraction in [0, 1].
using ProgressFn = std::function<void(double)>;
// Called after every optimizer step with the updated parameters.
using StepFn = std::function<void(std::size_t step, const Parameters& params)>;

struct TrainResult {
  Parameters params;
  LossCurve curve;
};

// Prediction-loss-only optimization from `init`. Throws TrainingError when
// the loss stops being finite.
TrainResult train_baseline(const Parameters& init,
                           const std::vector<const SyntheticInstance*>& train,
                           const TrainConfig& config,
                           const ProgressFn& progress = {});
// Starts from init_model(model, config.seed).
TrainResult train_baseline(const ModelConfig& model,
                           const std::vector<const SyntheticInstance*>& train,
                           const TrainConfig& config,
                           const ProgressFn& progress = {});

struct StoredAnnotation {
  Verdict verdict;
  std::optional<BinaryMask> mask;
};

// Who answers the reasonability questions and supplies the masks.
struct Annotator {
  enum class Kind { kOracle, kStoredHuman };

  Kind kind = Kind::kOracle;
  OracleConfig oracle;
  std::map<std::string, StoredAnnotation> stored;

  static Annotator oracle_annotator(const OracleConfig& config = {});
  static Annotator stored_human(std::map<std::string, StoredAnnotation> records,
                                const OracleConfig& config = {});
};

// Everything the workbench knows about one instance under one model.
struct InstanceAssessment {
  std::string id;
  std::size_t label = 0;
  Prediction prediction;
  AttentionMap attention;  // normalized, for the predicted class
  Verdict verdict;
  Quadrant quadrant = Quadrant::kRA;
  double iou = 0.0;  // binarized attention vs the reference mask

  bool correct() const { return prediction.class_index == label; }
};

// Batched prediction and Grad-CAM, verdicts from the annotator, IoU against
// the human mask when one is stored and the oracle mask otherwise.
std::vector<InstanceAssessment> assess_instances(
    const Parameters& params, const std::vector<const SyntheticInstance*>& instances,
    const Annotator& annotator);

struct PoolEntry {
  const SyntheticInstance* instance = nullptr;
  Tensor target;  // (u, v)
};

// Instances that need adjusting, grouped by quadrant. RA stays empty.
struct AnnotationPool {
  std::array<std::vector<PoolEntry>, 4> entries;

  const std::vector<PoolEntry>& operator[](Quadrant q) const {
    return entries[static_cast<int>(q)];
  }
  std::vector<PoolEntry>& operator[](Quadrant q) { return entries[static_cast<int>(q)]; }
  std::size_t size() const;
};

struct ValidationResult {
  ReasonabilityMatrix matrix;
  AnnotationPool pool;
  std::vector<InstanceAssessment> assessments;
};

// Throws DataError listing ids when stored-human mode lacks a verdict for
// any instance or a mask for a UA, RIA or UIA instance.
ValidationResult build_validation_matrix(
    const Parameters& params, const std::vector<const SyntheticInstance*>& validation,
    const Annotator& annotator);

// Warm-started fine-tuning on the GRADIA objective. Each step draws one
// train batch and one batch from every nonempty quadrant pool; pools cycle
// through reshuffled orders independently of the train split.
TrainResult finetune_gradia(const Parameters& params,
                            const std::vector<const SyntheticInstance*>& train,
                            const AnnotationPool& pool, const TrainConfig& config,
                            const ProgressFn& progress = {}, const StepFn& on_step = {});

struct Evaluation {
  ReasonabilityMatrix matrix;
  MetricsReport metrics;
  std::vector<InstanceAssessment> assessments;
};

// M1-M4, IoU mean/std and AUC of the class-1 probability.
Evaluation evaluate(const Parameters& params,
                    const std::vector<const SyntheticInstance*>& test,
                    const Annotator& annotator);

struct RunReport {
  std::string condition;
  std::optional<Evaluation> before;
  std::optional<Evaluation> after;
  LossCurve curve;
  std::string config_snapshot;
  double wall_time_seconds = 0.0;
};

// Probability that a random positive outranks a random negative, ties
// counting one half. Throws UndefinedMetricError unless both labels occur.
double roc_auc(const std::vector<double>& scores, const std::vector<int>& labels);

struct FewShotScenario {
  std::size_t shots_per_class = 1;
  std::size_t num_seeds = 10;

  void validate() const;
};

struct FewShotSettings {
  // Optimizer, batch size, divergence and higher-order mode for the
  // per-seed fine-tuning; `epochs` is unused.
  TrainConfig tuning = TrainConfig::finetune_defaults();
  std::size_t steps = 60;
  // Weight of the attention loss; the prediction loss gets the rest.
  double attention_weight = 0.5;
  std::uint64_t seed = 0;
  // Seeds may run on separate threads; results do not depend on this.
  std::size_t jobs = 1;
};

struct ArmSummary {
  double attention_weight = 0.0;
  double mean_auc = 0.0;
  double std_auc = 0.0;
  std::vector<double> per_seed;
};

struct FewShotResult {
  FewShotScenario scenario;
  ArmSummary baseline;
  ArmSummary gradia;
};

// The n-per-class sample drawn for one seed. Throws DataError when a class
// has fewer than n annotated instances.
std::vector<const SyntheticInstance*> sample_shots(
    const std::vector<const SyntheticInstance*>& pool, std::size_t shots_per_class,
    std::uint64_t seed);

// Fine-tunes `base` on each seed's sample with the given attention weight
// and scores test AUC. Weight zero is the attention-free arm.
ArmSummary few_shot_arm(const Parameters& base,
                        const std::vector<const SyntheticInstance*>& pool,
                        const std::vector<const SyntheticInstance*>& test,
                        const FewShotScenario& scenario,
                        const FewShotSettings& settings, double attention_weight);

FewShotResult few_shot_study(const Parameters& base,
                             const std::vector<const SyntheticInstance*>& pool,
                             const std::vector<const SyntheticInstance*>& test,
                             const FewShotScenario& scenario,
                             const FewShotSettings& settings);

std::vector<ArmSummary> sensitivity_sweep(
    const Parameters& base, const std::vector<const SyntheticInstance*>& pool,
    const std::vector<const SyntheticInstance*>& test,
    const std::vector<double>& attention_weights, const FewShotScenario& scenario,
    const FewShotSettings& settings);

// The distribution used to pretrain the few-shot base model: a ring vs
// square task with a cross as uncorrelated context, drawn from another seed.
SceneSpec pretraining_scene(const SceneSpec& target);

// Spearman rank correlation with average ranks for ties.
double spearman(const std::vector<double>& x, const std::vector<double>& y);

}  // namespace gradia
