#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "gradia/attention.hpp"
#include "gradia/autodiff.hpp"
#include "gradia/model.hpp"
#include "gradia/reasonability.hpp"

namespace gradia {

// Which quadrants contribute attention losses during fine-tuning:
// C1 none, C2 {RIA, UIA}, C3 {UA, UIA}, C4 {UA, RIA, UIA}.
enum class Condition { kC1, kC2, kC3, kC4 };

const char* to_string(Condition condition);
std::optional<Condition> parse_condition(std::string_view text);
bool attention_active(Condition condition, Quadrant quadrant);

enum class Divergence { kAbsolute, kSquared };

const char* to_string(Divergence divergence);
std::optional<Divergence> parse_divergence(std::string_view text);

// Each factor weights its quadrant's prediction loss; one minus the factor
// weights the attention loss.
struct BalanceFactors {
  double alpha = 0.2;  // UA
  double beta = 0.5;   // UIA
  double gamma = 0.8;  // RIA

  void validate() const;
  double factor(Quadrant quadrant) const;
};

// A training example seen by the objective. `target` is the (u, v) attention
// label and may be null for samples that only carry a prediction loss.
struct Sample {
  std::string_view id;
  const Tensor* image = nullptr;
  std::size_t label = 0;
  const Tensor* target = nullptr;
};

struct QuadrantBatch {
  Quadrant quadrant = Quadrant::kUA;
  std::vector<Sample> samples;
};

struct LossBreakdown {
  double l_train_p = 0.0;
  double l_ua_p = 0.0;
  double l_uia_p = 0.0;
  double l_ria_p = 0.0;
  double l_ua_a = 0.0;
  double l_uia_a = 0.0;
  double l_ria_a = 0.0;
  double total = 0.0;
};

// l_train_p + a*l_ua_p + b*l_uia_p + g*l_ria_p
//   + (1-a)*l_ua_a + (1-b)*l_uia_a + (1-g)*l_ria_a
double combine_terms(const LossBreakdown& terms, const BalanceFactors& factors);

// Cross-entropy -log softmax(logits)[label].
double prediction_loss(std::span<const double> logits, std::size_t label);
// Mean cross-entropy over a (N, classes) batch.
ad::Var prediction_loss(const ad::Var& logits,
                        const std::vector<std::size_t>& labels);

// Mean elementwise |M - M'| or (M - M')^2.
double attention_loss(const AttentionMap& attention,
                      const TargetAttentionGrid& target,
                      Divergence divergence = Divergence::kAbsolute);
ad::Var attention_loss(const ad::Var& attention, const Tensor& target,
                       Divergence divergence);

struct ObjectiveOptions {
  Divergence divergence = Divergence::kAbsolute;
  // Back-propagate through the Grad-CAM weights; otherwise they are treated
  // as constants.
  bool higher_order = true;
};

// The assembled objective for one optimization step.
struct Objective {
  LossBreakdown breakdown;
  ad::Var total;
  ParamVars params;
  bool stop_gradient = false;
};

// Attention for quadrant samples is recomputed from `params` for the
// ground-truth class. Throws DataError when a sample in an active quadrant
// has no target grid.
Objective gradia_objective(const Parameters& params,
                           std::span<const Sample> train_batch,
                           const QuadrantBatch& ua, const QuadrantBatch& uia,
                           const QuadrantBatch& ria,
                           const BalanceFactors& factors, Condition condition,
                           const ObjectiveOptions& options = {});

// Objective over samples that all carry attention labels:
// prediction_weight * L_p + (1 - prediction_weight) * L_a.
Objective annotated_objective(const Parameters& params,
                              std::span<const Sample> samples,
                              double prediction_weight,
                              const ObjectiveOptions& options = {});

struct ObjectiveGradient {
  std::vector<Tensor> grads;
  bool stop_gradient = false;
};

ObjectiveGradient objective_gradient(const Objective& objective);

}  // namespace gradia
