#include "gradia/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>
#include <thread>

#include "gradia/error.hpp"

namespace gradia {

const char* to_string(OptimizerKind kind) {
  return kind == OptimizerKind::kSgd ? "sgd" : "momentum";
}

std::optional<OptimizerKind> parse_optimizer(std::string_view text) {
  if (text == "sgd") return OptimizerKind::kSgd;
  if (text == "momentum") return OptimizerKind::kMomentum;
  return std::nullopt;
}

TrainConfig TrainConfig::baseline_defaults() { return TrainConfig{}; }

TrainConfig TrainConfig::finetune_defaults() {
  TrainConfig config;
  config.epochs = 10;
  // The absolute divergence is nearly minimised by an all-zero map against a
  // sparse target, so ReLU'd maps of the non-salient class tend to collapse.
  config.divergence = Divergence::kSquared;
  return config;
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    throw ConfigError("learning_rate must be positive");
  }
  if (!(momentum >= 0.0 && momentum < 1.0)) {
    throw ConfigError("momentum must lie in [0, 1)");
  }
  if (epochs < 1) throw ConfigError("epochs must be at least 1");
  if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
  factors.validate();
}

Optimizer::Optimizer(const TrainConfig& config, const Parameters& params)
    : kind_(config.optimizer),
      learning_rate_(config.learning_rate),
      momentum_(config.momentum) {
  if (kind_ == OptimizerKind::kMomentum) {
    for (const auto& t : params.tensors) velocity_.emplace_back(t.shape(), 0.0);
  }
}

void Optimizer::step(Parameters& params, const std::vector<Tensor>& grads) {
  if (grads.size() != params.tensors.size()) {
    throw InputError("optimizer: gradient count does not match parameters");
  }
  for (std::size_t i = 0; i < grads.size(); ++i) {
    auto p = params.tensors[i].values();
    auto g = grads[i].values();
    if (kind_ == OptimizerKind::kSgd) {
      for (std::size_t j = 0; j < p.size(); ++j) p[j] -= learning_rate_ * g[j];
      continue;
    }
    auto v = velocity_[i].values();
    for (std::size_t j = 0; j < p.size(); ++j) {
      v[j] = momentum_ * v[j] + g[j];
      p[j] -= learning_rate_ * v[j];
    }
  }
}

std::string format_loss_csv(const LossCurve& curve) {
  std::ostringstream out;
  out.precision(17);
  out << "step,term,value\n";
  for (const auto& point : curve) {
    out << point.step << ',' << point.term << ',' << point.value << '\n';
  }
  return out.str();
}

namespace {

std::vector<std::size_t> shuffled(std::size_t n, std::mt19937_64& rng) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

void check_finite(double value, std::size_t step, const char* what) {
  if (!std::isfinite(value)) {
    std::ostringstream message;
    message << what << " became non-finite (" << value << ") at step " << step
            << "; lower the learning rate";
    throw TrainingError(message.str());
  }
}

// A finite loss can still come with overflowing gradients once the weights
// have blown up.
void step_checked(Optimizer& optimizer, Parameters& params, const Objective& objective,
                  std::size_t step, const char* what) {
  check_finite(objective.breakdown.total, step, what);
  const auto grads = objective_gradient(objective).grads;
  double norm = 0.0;
  for (const auto& g : grads) {
    for (double v : g.values()) norm += v * v;
  }
  check_finite(norm, step, what);
  optimizer.step(params, grads);
}

Sample sample_of(const SyntheticInstance& inst, const Tensor* target = nullptr) {
  return Sample{inst.id, &inst.image, inst.label, target};
}

// Cycles through a reshuffled order, reshuffling each time it wraps.
class Cycler {
 public:
  Cycler(std::size_t n, std::mt19937_64& rng) : n_(n), rng_(&rng) {}

  std::vector<std::size_t> next(std::size_t count) {
    std::vector<std::size_t> out;
    count = std::min(count, n_);
    while (out.size() < count) {
      if (cursor_ == order_.size()) {
        order_ = shuffled(n_, *rng_);
        cursor_ = 0;
      }
      out.push_back(order_[cursor_++]);
    }
    return out;
  }

 private:
  std::size_t n_;
  std::mt19937_64* rng_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
};

void report(const ProgressFn& progress, std::size_t done, std::size_t total) {
  if (progress) progress(static_cast<double>(done) / static_cast<double>(total));
}

}  // namespace

TrainResult train_baseline(const Parameters& init,
                           const std::vector<const SyntheticInstance*>& train,
                           const TrainConfig& config, const ProgressFn& progress) {
  config.validate();
  if (train.empty()) throw DataError("train_baseline: empty train split");
  TrainResult result{init, {}};
  Optimizer optimizer(config, result.params);
  std::mt19937_64 rng(config.seed);
  const std::size_t batches = (train.size() + config.batch_size - 1) / config.batch_size;
  const std::size_t total_steps = batches * config.epochs;
  std::size_t step = 0;

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const std::vector<std::size_t> order = shuffled(train.size(), rng);
    for (std::size_t b = 0; b < batches; ++b) {
      const std::size_t lo = b * config.batch_size;
      const std::size_t hi = std::min(train.size(), lo + config.batch_size);
      std::vector<Sample> batch;
      for (std::size_t i = lo; i < hi; ++i) batch.push_back(sample_of(*train[order[i]]));
      Objective objective = gradia_objective(result.params, batch, {}, {}, {},
                                             BalanceFactors{1.0, 1.0, 1.0},
                                             Condition::kC1);
      step_checked(optimizer, result.params, objective, step, "prediction loss");
      result.curve.push_back({step, "L_train_p", objective.breakdown.l_train_p});
      ++step;
      report(progress, step, total_steps);
    }
  }
  return result;
}

TrainResult train_baseline(const ModelConfig& model,
                           const std::vector<const SyntheticInstance*>& train,
                           const TrainConfig& config, const ProgressFn& progress) {
  return train_baseline(init_model(model, config.seed), train, config, progress);
}

Annotator Annotator::oracle_annotator(const OracleConfig& config) {
  Annotator a;
  a.kind = Kind::kOracle;
  a.oracle = config;
  return a;
}

Annotator Annotator::stored_human(std::map<std::string, StoredAnnotation> records,
                                  const OracleConfig& config) {
  Annotator a;
  a.kind = Kind::kStoredHuman;
  a.oracle = config;
  a.stored = std::move(records);
  return a;
}

std::vector<InstanceAssessment> assess_instances(
    const Parameters& params, const std::vector<const SyntheticInstance*>& instances,
    const Annotator& annotator) {
  annotator.oracle.validate();
  if (annotator.kind == Annotator::Kind::kStoredHuman) {
    std::vector<std::string> missing;
    for (const auto* inst : instances) {
      if (!annotator.stored.contains(inst->id)) missing.push_back(inst->id);
    }
    if (!missing.empty()) {
      std::string message = "no stored verdict for:";
      for (const auto& id : missing) message += " " + id;
      throw DataError(message);
    }
  }

  constexpr std::size_t kChunk = 64;
  std::vector<InstanceAssessment> out;
  out.reserve(instances.size());
  for (std::size_t lo = 0; lo < instances.size(); lo += kChunk) {
    const std::size_t hi = std::min(instances.size(), lo + kChunk);
    std::vector<const Tensor*> images;
    for (std::size_t i = lo; i < hi; ++i) images.push_back(&instances[i]->image);
    const TapedForward tape =
        forward_batch(params, stack_images(images, params.config));

    std::vector<Prediction> predictions;
    std::vector<std::size_t> classes;
    const Tensor& logits = tape.logits.value();
    const std::size_t c = logits.dim(1);
    for (std::size_t i = 0; i < hi - lo; ++i) {
      predictions.push_back(softmax_prediction(
          std::span<const double>(logits.data() + i * c, c)));
      classes.push_back(predictions.back().class_index);
    }
    ad::NoGradGuard no_grad;
    const Tensor grads = grad_wrt_features(tape, classes, false).value();
    const Tensor& features = tape.features.value();
    const Shape& fs = features.shape();
    const std::size_t per = fs[1] * fs[2] * fs[3];

    for (std::size_t i = 0; i < hi - lo; ++i) {
      const SyntheticInstance& inst = *instances[lo + i];
      Tensor a({fs[1], fs[2], fs[3]});
      Tensor g({fs[1], fs[2], fs[3]});
      std::copy_n(features.data() + i * per, per, a.data());
      std::copy_n(grads.data() + i * per, per, g.data());

      InstanceAssessment item;
      item.id = inst.id;
      item.label = inst.label;
      item.prediction = predictions[i];
      item.attention = normalize(grad_cam(a, g), classes[i], inst.id);

      const BinaryMask* reference = &inst.intrinsic_mask;
      if (annotator.kind == Annotator::Kind::kStoredHuman) {
        const StoredAnnotation& stored = annotator.stored.at(inst.id);
        item.verdict = stored.verdict;
        if (stored.mask) reference = &*stored.mask;
      } else {
        item.verdict = oracle_verdict(item.attention, inst, annotator.oracle);
      }
      item.quadrant = classify_instance(item.correct(), item.verdict);
      const BinaryMask focus =
          binarize(upsample(item.attention, reference->height(), reference->width()),
                   annotator.oracle.binarize_tau);
      item.iou = iou(focus, *reference);
      out.push_back(std::move(item));
    }
  }
  return out;
}

namespace {

ReasonabilityMatrix matrix_of(const std::vector<InstanceAssessment>& assessments) {
  std::vector<ReasonabilityRecord> records;
  records.reserve(assessments.size());
  for (const auto& a : assessments) records.push_back({a.id, a.correct(), a.verdict});
  return build_matrix(records);
}

}  // namespace

std::size_t AnnotationPool::size() const {
  std::size_t n = 0;
  for (const auto& e : entries) n += e.size();
  return n;
}

ValidationResult build_validation_matrix(
    const Parameters& params, const std::vector<const SyntheticInstance*>& validation,
    const Annotator& annotator) {
  ValidationResult result;
  result.assessments = assess_instances(params, validation, annotator);
  result.matrix = matrix_of(result.assessments);

  const FeatureGeometry geometry = feature_geometry(params.config);
  std::vector<std::string> missing;
  for (std::size_t i = 0; i < validation.size(); ++i) {
    const InstanceAssessment& a = result.assessments[i];
    if (a.quadrant == Quadrant::kRA) continue;
    const SyntheticInstance& inst = *validation[i];
    const BinaryMask* mask = nullptr;
    if (annotator.kind == Annotator::Kind::kStoredHuman) {
      const auto& stored = annotator.stored.at(inst.id);
      if (!stored.mask) {
        missing.push_back(inst.id);
        continue;
      }
      mask = &*stored.mask;
    } else {
      mask = &inst.intrinsic_mask;
    }
    result.pool[a.quadrant].push_back(
        {&inst, mask_to_target_grid(*mask, geometry.height, geometry.width).grid});
  }
  if (!missing.empty()) {
    std::string message = "no stored mask for instances needing adjustment:";
    for (const auto& id : missing) message += " " + id;
    throw DataError(message);
  }
  return result;
}

TrainResult finetune_gradia(const Parameters& params,
                            const std::vector<const SyntheticInstance*>& train,
                            const AnnotationPool& pool, const TrainConfig& config,
                            const ProgressFn& progress, const StepFn& on_step) {
  config.validate();
  if (train.empty()) throw DataError("finetune_gradia: empty train split");
  TrainResult result{params, {}};
  Optimizer optimizer(config, result.params);
  std::mt19937_64 rng(config.seed);
  const ObjectiveOptions options{config.divergence, config.higher_order};

  constexpr Quadrant kAdjusted[] = {Quadrant::kUA, Quadrant::kUIA, Quadrant::kRIA};
  std::vector<Cycler> cyclers;
  for (Quadrant q : kAdjusted) cyclers.emplace_back(pool[q].size(), rng);

  const std::size_t batches = (train.size() + config.batch_size - 1) / config.batch_size;
  const std::size_t total_steps = batches * config.epochs;
  std::size_t step = 0;

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const std::vector<std::size_t> order = shuffled(train.size(), rng);
    for (std::size_t b = 0; b < batches; ++b) {
      const std::size_t lo = b * config.batch_size;
      const std::size_t hi = std::min(train.size(), lo + config.batch_size);
      std::vector<Sample> batch;
      for (std::size_t i = lo; i < hi; ++i) batch.push_back(sample_of(*train[order[i]]));

      QuadrantBatch quadrant_batches[3];
      for (std::size_t k = 0; k < 3; ++k) {
        const Quadrant q = kAdjusted[k];
        quadrant_batches[k].quadrant = q;
        for (std::size_t idx : cyclers[k].next(config.batch_size)) {
          const PoolEntry& e = pool[q][idx];
          quadrant_batches[k].samples.push_back(sample_of(*e.instance, &e.target));
        }
      }

      Objective objective =
          gradia_objective(result.params, batch, quadrant_batches[0],
                           quadrant_batches[1], quadrant_batches[2], config.factors,
                           config.condition, options);
      const LossBreakdown& t = objective.breakdown;
      step_checked(optimizer, result.params, objective, step, "GRADIA objective");
      if (on_step) on_step(step, result.params);

      const std::pair<const char*, double> terms[] = {
          {"L_train_p", t.l_train_p}, {"L_UA_p", t.l_ua_p},   {"L_UIA_p", t.l_uia_p},
          {"L_RIA_p", t.l_ria_p},     {"L_UA_a", t.l_ua_a},   {"L_UIA_a", t.l_uia_a},
          {"L_RIA_a", t.l_ria_a},     {"total", t.total},
      };
      for (const auto& [name, value] : terms) result.curve.push_back({step, name, value});
      ++step;
      report(progress, step, total_steps);
    }
  }
  return result;
}

Evaluation evaluate(const Parameters& params,
                    const std::vector<const SyntheticInstance*>& test,
                    const Annotator& annotator) {
  if (test.empty()) throw DataError("evaluate: empty test set");
  Evaluation ev;
  ev.assessments = assess_instances(params, test, annotator);
  ev.matrix = matrix_of(ev.assessments);

  std::vector<double> ious;
  std::vector<double> scores;
  std::vector<int> labels;
  for (const auto& a : ev.assessments) {
    ious.push_back(a.iou);
    scores.push_back(a.prediction.probabilities.at(1));
    labels.push_back(a.label == 1 ? 1 : 0);
  }
  ev.metrics = make_report(ev.matrix, ious);
  const bool both = std::count(labels.begin(), labels.end(), 1) > 0 &&
                    std::count(labels.begin(), labels.end(), 0) > 0;
  if (both) ev.metrics.auc = roc_auc(scores, labels);
  return ev;
}

double roc_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
  if (scores.size() != labels.size()) {
    throw InputError("roc_auc: scores and labels differ in length");
  }
  std::size_t positives = 0;
  for (int l : labels) {
    if (l != 0 && l != 1) throw InputError("roc_auc: labels must be 0 or 1");
    positives += static_cast<std::size_t>(l);
  }
  const std::size_t negatives = labels.size() - positives;
  if (positives == 0 || negatives == 0) {
    throw UndefinedMetricError("roc_auc needs both positive and negative labels");
  }
  // Rank-sum form: average ranks over tied groups.
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double positive_rank_sum = 0.0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const double rank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k) {
      if (labels[order[k]] == 1) positive_rank_sum += rank;
    }
    i = j;
  }
  const double p = static_cast<double>(positives);
  const double u = positive_rank_sum - p * (p + 1.0) / 2.0;
  return u / (p * static_cast<double>(negatives));
}

void FewShotScenario::validate() const {
  if (shots_per_class < 1) throw ConfigError("shots_per_class must be at least 1");
  if (num_seeds < 1) throw ConfigError("num_seeds must be at least 1");
}

std::vector<const SyntheticInstance*> sample_shots(
    const std::vector<const SyntheticInstance*>& pool, std::size_t shots_per_class,
    std::uint64_t seed) {
  std::map<std::size_t, std::vector<const SyntheticInstance*>> by_class;
  for (const auto* inst : pool) by_class[inst->label].push_back(inst);
  if (by_class.size() < 2) throw DataError("few-shot pool needs two classes");
  std::mt19937_64 rng(seed);
  std::vector<const SyntheticInstance*> out;
  for (auto& [label, members] : by_class) {
    if (members.size() < shots_per_class) {
      throw DataError("few-shot pool has " + std::to_string(members.size()) +
                      " instances of class " + std::to_string(label) + ", need " +
                      std::to_string(shots_per_class));
    }
    std::shuffle(members.begin(), members.end(), rng);
    out.insert(out.end(), members.begin(),
               members.begin() + static_cast<std::ptrdiff_t>(shots_per_class));
  }
  return out;
}

namespace {

std::uint64_t seed_for(std::uint64_t base, std::size_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(base), static_cast<std::uint32_t>(base >> 32),
                    static_cast<std::uint32_t>(index)};
  std::uint32_t words[2];
  seq.generate(words, words + 2);
  return (static_cast<std::uint64_t>(words[0]) << 32) | words[1];
}

double tune_and_score(const Parameters& base,
                      const std::vector<const SyntheticInstance*>& shots,
                      const std::vector<const SyntheticInstance*>& test,
                      const FewShotSettings& settings, double attention_weight,
                      std::uint64_t seed) {
  const FeatureGeometry geometry = feature_geometry(base.config);
  std::vector<Tensor> targets;
  targets.reserve(shots.size());
  for (const auto* inst : shots) {
    targets.push_back(
        mask_to_target_grid(oracle_mask(*inst), geometry.height, geometry.width).grid);
  }

  Parameters params = base;
  Optimizer optimizer(settings.tuning, params);
  std::mt19937_64 rng(seed);
  const std::size_t batch = settings.tuning.batch_size;
  const ObjectiveOptions options{settings.tuning.divergence, settings.tuning.higher_order};
  Cycler cycler(shots.size(), rng);
  for (std::size_t step = 0; step < settings.steps; ++step) {
    std::vector<Sample> samples;
    for (std::size_t idx : cycler.next(batch)) {
      samples.push_back(sample_of(*shots[idx], &targets[idx]));
    }
    Objective objective =
        annotated_objective(params, samples, 1.0 - attention_weight, options);
    step_checked(optimizer, params, objective, step, "few-shot objective");
  }

  std::vector<double> scores;
  std::vector<int> labels;
  ad::NoGradGuard no_grad;
  constexpr std::size_t kChunk = 128;
  for (std::size_t lo = 0; lo < test.size(); lo += kChunk) {
    const std::size_t hi = std::min(test.size(), lo + kChunk);
    std::vector<const Tensor*> images;
    for (std::size_t i = lo; i < hi; ++i) images.push_back(&test[i]->image);
    const TapedForward tape = forward_batch(params, stack_images(images, params.config));
    const Tensor& logits = tape.logits.value();
    const std::size_t c = logits.dim(1);
    for (std::size_t i = 0; i < hi - lo; ++i) {
      const Prediction p =
          softmax_prediction(std::span<const double>(logits.data() + i * c, c));
      scores.push_back(p.probabilities.at(1));
      labels.push_back(test[lo + i]->label == 1 ? 1 : 0);
    }
  }
  return roc_auc(scores, labels);
}

void summarize(ArmSummary& arm) {
  const double n = static_cast<double>(arm.per_seed.size());
  arm.mean_auc = std::accumulate(arm.per_seed.begin(), arm.per_seed.end(), 0.0) / n;
  double sq = 0.0;
  for (double v : arm.per_seed) sq += (v - arm.mean_auc) * (v - arm.mean_auc);
  arm.std_auc = std::sqrt(sq / n);
}

}  // namespace

ArmSummary few_shot_arm(const Parameters& base,
                        const std::vector<const SyntheticInstance*>& pool,
                        const std::vector<const SyntheticInstance*>& test,
                        const FewShotScenario& scenario,
                        const FewShotSettings& settings, double attention_weight) {
  scenario.validate();
  settings.tuning.validate();
  if (!(attention_weight >= 0.0 && attention_weight <= 1.0)) {
    throw ConfigError("attention weight must lie in [0, 1]");
  }
  if (settings.steps < 1) throw ConfigError("few-shot steps must be at least 1");
  if (test.empty()) throw DataError("few-shot study needs a test set");

  ArmSummary arm;
  arm.attention_weight = attention_weight;
  arm.per_seed.assign(scenario.num_seeds, 0.0);
  // Shots depend only on the seed index, so arms stay paired.
  std::vector<std::vector<const SyntheticInstance*>> shots;
  for (std::size_t s = 0; s < scenario.num_seeds; ++s) {
    shots.push_back(sample_shots(pool, scenario.shots_per_class,
                                 seed_for(settings.seed, 2 * s)));
  }
  auto run = [&](std::size_t s) {
    arm.per_seed[s] = tune_and_score(base, shots[s], test, settings, attention_weight,
                                     seed_for(settings.seed, 2 * s + 1));
  };

  const std::size_t jobs = std::max<std::size_t>(1, std::min(settings.jobs, scenario.num_seeds));
  if (jobs == 1) {
    for (std::size_t s = 0; s < scenario.num_seeds; ++s) run(s);
  } else {
    std::vector<std::exception_ptr> errors(jobs);
    std::vector<std::thread> workers;
    for (std::size_t w = 0; w < jobs; ++w) {
      workers.emplace_back([&, w] {
        try {
          for (std::size_t s = w; s < scenario.num_seeds; s += jobs) run(s);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    }
    for (auto& t : workers) t.join();
    for (auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }
  summarize(arm);
  return arm;
}

FewShotResult few_shot_study(const Parameters& base,
                             const std::vector<const SyntheticInstance*>& pool,
                             const std::vector<const SyntheticInstance*>& test,
                             const FewShotScenario& scenario,
                             const FewShotSettings& settings) {
  FewShotResult result;
  result.scenario = scenario;
  result.baseline = few_shot_arm(base, pool, test, scenario, settings, 0.0);
  result.gradia =
      few_shot_arm(base, pool, test, scenario, settings, settings.attention_weight);
  return result;
}

std::vector<ArmSummary> sensitivity_sweep(
    const Parameters& base, const std::vector<const SyntheticInstance*>& pool,
    const std::vector<const SyntheticInstance*>& test,
    const std::vector<double>& attention_weights, const FewShotScenario& scenario,
    const FewShotSettings& settings) {
  for (double w : attention_weights) {
    if (!(w >= 0.0 && w <= 1.0)) throw ConfigError("sweep weights must lie in [0, 1]");
  }
  std::vector<ArmSummary> out;
  for (double w : attention_weights) {
    out.push_back(few_shot_arm(base, pool, test, scenario, settings, w));
  }
  return out;
}

SceneSpec pretraining_scene(const SceneSpec& target) {
  SceneSpec spec = target;
  spec.class0_shape = Glyph::kRing;
  spec.class1_shape = Glyph::kSquare;
  spec.context_glyph = Glyph::kCross;
  spec.context_cooccurrence_train = 0.5;
  spec.context_cooccurrence_test = 0.5;
  spec.seed = target.seed ^ 0x9e3779b97f4a7c15ULL;
  return spec;
}

namespace {

std::vector<double> average_ranks(const std::vector<double>& x) {
  std::vector<std::size_t> order(x.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> ranks(x.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && x[order[j]] == x[order[i]]) ++j;
    const double rank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k) ranks[order[k]] = rank;
    i = j;
  }
  return ranks;
}

}  // namespace

double spearman(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) {
    throw InputError("spearman: need two equal-length series of at least 2 points");
  }
  const std::vector<double> rx = average_ranks(x);
  const std::vector<double> ry = average_ranks(y);
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) {
    throw UndefinedMetricError("spearman: a series is constant");
  }
  return sxy / std::sqrt(sxx * syy);
}

}  // namespace gradia
