#include "gradia/alignment_loss.hpp"

#include <algorithm>
#include <cmath>

#include "gradia/error.hpp"

namespace gradia {

const char* to_string(Condition condition) {
  switch (condition) {
    case Condition::kC1:
      return "C1";
    case Condition::kC2:
      return "C2";
    case Condition::kC3:
      return "C3";
    case Condition::kC4:
      return "C4";
  }
  return "?";
}

std::optional<Condition> parse_condition(std::string_view text) {
  for (Condition c : {Condition::kC1, Condition::kC2, Condition::kC3,
                      Condition::kC4}) {
    if (text == to_string(c)) return c;
  }
  return std::nullopt;
}

bool attention_active(Condition condition, Quadrant quadrant) {
  switch (condition) {
    case Condition::kC1:
      return false;
    case Condition::kC2:
      return quadrant == Quadrant::kRIA || quadrant == Quadrant::kUIA;
    case Condition::kC3:
      return quadrant == Quadrant::kUA || quadrant == Quadrant::kUIA;
    case Condition::kC4:
      return quadrant != Quadrant::kRA;
  }
  return false;
}

const char* to_string(Divergence divergence) {
  return divergence == Divergence::kAbsolute ? "absolute" : "squared";
}

std::optional<Divergence> parse_divergence(std::string_view text) {
  if (text == "absolute") return Divergence::kAbsolute;
  if (text == "squared") return Divergence::kSquared;
  return std::nullopt;
}

void BalanceFactors::validate() const {
  for (double f : {alpha, beta, gamma}) {
    if (!(f >= 0.0 && f <= 1.0)) {
      throw ConfigError("balance factors must lie in [0, 1]");
    }
  }
}

double BalanceFactors::factor(Quadrant quadrant) const {
  switch (quadrant) {
    case Quadrant::kUA:
      return alpha;
    case Quadrant::kUIA:
      return beta;
    case Quadrant::kRIA:
      return gamma;
    case Quadrant::kRA:
      break;
  }
  return 1.0;
}

double combine_terms(const LossBreakdown& t, const BalanceFactors& f) {
  return t.l_train_p + f.alpha * t.l_ua_p + f.beta * t.l_uia_p +
         f.gamma * t.l_ria_p + (1.0 - f.alpha) * t.l_ua_a +
         (1.0 - f.beta) * t.l_uia_a + (1.0 - f.gamma) * t.l_ria_a;
}

double prediction_loss(std::span<const double> logits, std::size_t label) {
  if (label >= logits.size()) {
    throw InputError("label " + std::to_string(label) + " out of range");
  }
  const double top = *std::max_element(logits.begin(), logits.end());
  double total = 0.0;
  for (double v : logits) total += std::exp(v - top);
  return top + std::log(total) - logits[label];
}

ad::Var prediction_loss(const ad::Var& logits,
                        const std::vector<std::size_t>& labels) {
  const std::size_t n = logits.shape().at(0);
  if (labels.size() != n || n == 0) {
    throw InputError("prediction_loss: need one label per row");
  }
  const std::size_t classes = logits.shape().at(1);
  for (std::size_t label : labels) {
    if (label >= classes) {
      throw InputError("label " + std::to_string(label) + " out of range");
    }
  }
  ad::Var per_sample = ad::sub(ad::logsumexp_rows(logits), ad::pick(logits, labels));
  return ad::mean(per_sample);
}

double attention_loss(const AttentionMap& attention,
                      const TargetAttentionGrid& target, Divergence divergence) {
  if (attention.grid.shape() != target.grid.shape()) {
    throw InputError("attention_loss: grid " + to_string(attention.grid.shape()) +
                     " does not match target " + to_string(target.grid.shape()));
  }
  if (attention.grid.empty()) throw InputError("attention_loss: empty grid");
  double total = 0.0;
  for (std::size_t i = 0; i < attention.grid.size(); ++i) {
    const double d = attention.grid[i] - target.grid[i];
    total += divergence == Divergence::kAbsolute ? std::abs(d) : d * d;
  }
  return total / static_cast<double>(attention.grid.size());
}

ad::Var attention_loss(const ad::Var& attention, const Tensor& target,
                       Divergence divergence) {
  if (attention.shape() != target.shape()) {
    throw InputError("attention_loss: grid " + to_string(attention.shape()) +
                     " does not match target " + to_string(target.shape()));
  }
  ad::Var diff = ad::sub(attention, ad::constant(target));
  return ad::mean(divergence == Divergence::kAbsolute ? ad::abs(diff)
                                                      : ad::square(diff));
}

namespace {

struct StackedBatch {
  Tensor images;
  std::vector<std::size_t> labels;
};

StackedBatch stack(std::span<const Sample> samples, const ModelConfig& config) {
  std::vector<const Tensor*> images;
  StackedBatch out;
  for (const auto& s : samples) {
    images.push_back(s.image);
    out.labels.push_back(s.label);
  }
  out.images = stack_images(images, config);
  return out;
}

Tensor stack_targets(const QuadrantBatch& batch, std::size_t cells) {
  Tensor targets({batch.samples.size(), cells});
  for (std::size_t i = 0; i < batch.samples.size(); ++i) {
    const Tensor& t = *batch.samples[i].target;
    if (t.size() != cells) {
      throw InputError("target grid for " + std::string(batch.samples[i].id) +
                       " has " + std::to_string(t.size()) +
                       " cells, feature grid has " + std::to_string(cells));
    }
    std::copy(t.data(), t.data() + cells, targets.data() + i * cells);
  }
  return targets;
}

void accumulate(ad::Var& total, const ad::Var& term, double weight) {
  if (weight == 0.0) return;
  ad::Var scaled = weight == 1.0 ? term : ad::scale(term, weight);
  total = total.defined() ? ad::add(total, scaled) : scaled;
}

}  // namespace

Objective gradia_objective(const Parameters& params,
                           std::span<const Sample> train_batch,
                           const QuadrantBatch& ua, const QuadrantBatch& uia,
                           const QuadrantBatch& ria,
                           const BalanceFactors& factors, Condition condition,
                           const ObjectiveOptions& options) {
  factors.validate();
  const FeatureGeometry geometry = feature_geometry(params.config);
  const std::size_t cells = geometry.height * geometry.width;

  Objective objective;
  objective.params = ParamVars::track(params);
  objective.stop_gradient = !options.higher_order;
  ad::Var total;

  if (!train_batch.empty()) {
    StackedBatch batch = stack(train_batch, params.config);
    TapedForward tape = forward_batch(objective.params, params.config, batch.images);
    ad::Var loss = prediction_loss(tape.logits, batch.labels);
    objective.breakdown.l_train_p = loss.item();
    accumulate(total, loss, 1.0);
  }

  struct Slot {
    const QuadrantBatch* batch;
    Quadrant expected;
    double* prediction_term;
    double* attention_term;
  };
  const Slot slots[] = {
      {&ua, Quadrant::kUA, &objective.breakdown.l_ua_p, &objective.breakdown.l_ua_a},
      {&uia, Quadrant::kUIA, &objective.breakdown.l_uia_p, &objective.breakdown.l_uia_a},
      {&ria, Quadrant::kRIA, &objective.breakdown.l_ria_p, &objective.breakdown.l_ria_a},
  };

  for (const Slot& slot : slots) {
    const QuadrantBatch& qb = *slot.batch;
    if (qb.samples.empty()) continue;
    if (qb.quadrant != slot.expected) {
      throw DataError(std::string("quadrant batch tagged ") + to_string(qb.quadrant) +
                      " passed as " + to_string(slot.expected));
    }
    const double factor = factors.factor(qb.quadrant);
    const bool active = attention_active(condition, qb.quadrant);
    if (active) {
      std::vector<std::string> missing;
      for (const auto& s : qb.samples) {
        if (s.target == nullptr) missing.emplace_back(s.id);
      }
      if (!missing.empty()) {
        std::string message = std::string("instances in active quadrant ") +
                              to_string(qb.quadrant) + " lack a target grid:";
        for (const auto& id : missing) message += " " + id;
        throw DataError(message);
      }
    }

    StackedBatch batch = stack(qb.samples, params.config);
    TapedForward tape = forward_batch(objective.params, params.config, batch.images);
    ad::Var lp = prediction_loss(tape.logits, batch.labels);
    *slot.prediction_term = lp.item();
    accumulate(total, lp, factor);

    if (!active) continue;
    const double attention_weight = 1.0 - factor;
    const Tensor targets = stack_targets(qb, cells);
    if (attention_weight == 0.0) {
      // Reported but contributes nothing to the gradient.
      ad::NoGradGuard no_grad;
      ad::Var attention = normalize_rows(grad_cam_batch(tape, batch.labels, false));
      *slot.attention_term = attention_loss(attention, targets, options.divergence).item();
      continue;
    }
    ad::Var attention =
        normalize_rows(grad_cam_batch(tape, batch.labels, options.higher_order));
    ad::Var la = attention_loss(attention, targets, options.divergence);
    *slot.attention_term = la.item();
    accumulate(total, la, attention_weight);
  }

  objective.breakdown.total = combine_terms(objective.breakdown, factors);
  objective.total = total.defined() ? total : ad::constant(Tensor::scalar(0.0));
  return objective;
}

Objective annotated_objective(const Parameters& params,
                              std::span<const Sample> samples,
                              double prediction_weight,
                              const ObjectiveOptions& options) {
  if (!(prediction_weight >= 0.0 && prediction_weight <= 1.0)) {
    throw ConfigError("prediction weight must lie in [0, 1]");
  }
  if (samples.empty()) throw DataError("annotated objective needs samples");
  const FeatureGeometry geometry = feature_geometry(params.config);
  const std::size_t cells = geometry.height * geometry.width;

  Objective objective;
  objective.params = ParamVars::track(params);
  objective.stop_gradient = !options.higher_order;
  ad::Var total;

  StackedBatch batch = stack(samples, params.config);
  TapedForward tape = forward_batch(objective.params, params.config, batch.images);
  ad::Var lp = prediction_loss(tape.logits, batch.labels);
  objective.breakdown.l_train_p = lp.item();
  accumulate(total, lp, prediction_weight);

  const double attention_weight = 1.0 - prediction_weight;
  if (attention_weight > 0.0) {
    QuadrantBatch view{Quadrant::kUA, {samples.begin(), samples.end()}};
    for (const auto& s : samples) {
      if (s.target == nullptr) {
        throw DataError("sample " + std::string(s.id) + " lacks a target grid");
      }
    }
    ad::Var attention =
        normalize_rows(grad_cam_batch(tape, batch.labels, options.higher_order));
    ad::Var la = attention_loss(attention, stack_targets(view, cells),
                                options.divergence);
    objective.breakdown.l_ua_a = la.item();
    accumulate(total, la, attention_weight);
  }
  objective.breakdown.total = prediction_weight * objective.breakdown.l_train_p +
                              attention_weight * objective.breakdown.l_ua_a;
  objective.total = total.defined() ? total : ad::constant(Tensor::scalar(0.0));
  return objective;
}

ObjectiveGradient objective_gradient(const Objective& objective) {
  ObjectiveGradient out;
  out.grads = grad_wrt_params(objective.total, objective.params);
  out.stop_gradient = objective.stop_gradient;
  return out;
}

}  // namespace gradia
