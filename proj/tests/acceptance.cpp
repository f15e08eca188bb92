// Acceptance checks. `acceptance <name>` runs one criterion, `acceptance`
// runs all; each prints one PASS/FAIL line and the exit status is nonzero
// when any selected criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <nlohmann/json.hpp>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "gradia/attention.hpp"
#include "gradia/config.hpp"
#include "gradia/io.hpp"
#include "gradia/reasonability.hpp"
#include "gradia/runtime.hpp"
#include "gradia/service/service.hpp"
#include "gradia/service/store.hpp"
#include "gradia/trainer.hpp"
#include "oracles.hpp"
#include "test_support.hpp"

namespace fs = std::filesystem;
using namespace gradia;
using nlohmann::json;

namespace {

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail << " FAILED{" << what << "}";
    }
  }
};

std::string fmt(const char* f, double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, x);
  return buf;
}

// Rounded to two decimals the way a table prints a percentage.
std::string pct2(double fraction) { return fmt("%.2f", 100.0 * fraction); }

Outcome metric_fidelity() {
  Outcome o;
  struct Row {
    const char* table;
    std::size_t ra, ua, ria, uia;
    const char* m1;
    const char* m2;
  };
  const Row rows[] = {
      {"T1/C1", 306, 310, 33, 101, "82.13", "40.80"},
      {"T1/C2", 456, 163, 87, 44, "82.53", "60.80"},
      {"T1/C3", 497, 117, 99, 37, "81.86", "66.27"},
      {"T1/C4", 518, 104, 94, 34, "82.93", "69.07"},
      {"T2/C1", 147, 462, 25, 116, "81.20", "19.60"},
      {"T2/C4", 515, 108, 97, 30, "82.93", "68.67"},
  };
  std::size_t matched = 0;
  for (const Row& r : rows) {
    const ReasonabilityMatrix m = matrix_from_counts(r.ra, r.ua, r.ria, r.uia);
    const std::string m1 = pct2(m1_accuracy(m));
    const std::string m2 = pct2(m2_ra_performance(m));
    const bool ok = m.total == 750 && m1 == r.m1 && m2 == r.m2;
    matched += ok;
    if (!ok) {
      o.require(false, std::string(r.table) + " M1 " + m1 + " vs " + r.m1 + ", M2 " + m2 +
                           " vs " + r.m2);
    }
  }
  o.detail << " " << matched << "/6 rows match";
  return o;
}

Outcome gradcam_oracle() {
  Outcome o;
  std::mt19937_64 rng(2024);
  double worst_cam = 0.0, worst_weight = 0.0, worst_feature = 0.0;
  for (int t = 0; t < 100; ++t) {
    const Parameters p = testing::random_params(testing::small_config(), 500 + t);
    const Tensor image = testing::random_image(16, 16, rng);
    const testing::NaiveForward naive = testing::naive_forward(p, image);
    const ForwardTrace trace = forward(p, image);
    const FeatureGeometry g = feature_geometry(p.config);
    const std::size_t cells = g.height * g.width;
    for (std::size_t i = 0; i < naive.features.size(); ++i) {
      worst_feature = std::max(worst_feature, std::abs(naive.features[i] - trace.feature_maps[i]));
    }
    const std::size_t c = t % p.config.num_classes;
    Tensor grads({g.maps, g.height, g.width});
    const Tensor autodiff = grad_wrt_features(trace, c);
    for (std::size_t k = 0; k < g.maps; ++k) {
      const double w = p.head_weight()[c * g.maps + k] / static_cast<double>(cells);
      for (std::size_t i = 0; i < cells; ++i) {
        grads[k * cells + i] = w;
        worst_weight = std::max(worst_weight, std::abs(autodiff[k * cells + i] - w));
      }
    }
    const Tensor ref = testing::naive_grad_cam(naive.features, grads);
    const Tensor cam = grad_cam(trace, c);
    for (std::size_t i = 0; i < cam.size(); ++i) {
      worst_cam = std::max(worst_cam, std::abs(cam[i] - ref[i]));
    }
  }
  o.require(worst_cam <= 1e-10, "grad-cam deviation " + fmt("%.3g", worst_cam));
  o.require(worst_weight <= 1e-12, "weight deviation " + fmt("%.3g", worst_weight));
  o.require(worst_feature <= 1e-10, "feature deviation " + fmt("%.3g", worst_feature));
  o.detail << " 100 traces, max |cam - naive| " << fmt("%.2e", worst_cam)
           << ", max |dY/dA - W/uv| " << fmt("%.2e", worst_weight);
  return o;
}

struct TinyBatch {
  std::vector<Tensor> images;
  std::vector<std::size_t> labels;
  Tensor targets;
  Tensor stacked;
};

TinyBatch tiny_batch(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  TinyBatch b;
  b.targets = Tensor({n, 4});
  for (std::size_t i = 0; i < n; ++i) {
    b.images.push_back(testing::random_image(4, 4, rng));
    b.labels.push_back(i % 2);
    for (std::size_t j = 0; j < 4; ++j) b.targets[i * 4 + j] = unit(rng);
  }
  std::vector<const Tensor*> ptrs;
  for (const auto& im : b.images) ptrs.push_back(&im);
  b.stacked = stack_images(ptrs, testing::tiny_config());
  return b;
}

// Draws whose attention maps are flat after normalization have an exactly
// zero gradient; finite differences agree but the relative error is then
// rounding noise over rounding noise, so those draws are skipped.
Outcome gradient_checks() {
  Outcome o;
  double worst_ce = 0.0, worst_att = 0.0;
  std::size_t checked = 0, flat = 0;
  for (std::uint64_t seed = 900; checked < 10; ++seed) {
    const Parameters p = testing::random_params(testing::tiny_config(), seed);
    const TinyBatch b = tiny_batch(3, seed);
    {
      const TapedForward tape = forward_batch(p, b.stacked);
      const auto g = testing::flatten(
          grad_wrt_params(testing::batch_cross_entropy(tape, b.labels), tape.params));
      const auto fd = testing::finite_difference(p, [&](const Parameters& q) {
        ad::NoGradGuard guard;
        return testing::batch_cross_entropy(forward_batch(q, b.stacked), b.labels).item();
      });
      worst_ce = std::max(worst_ce, testing::relative_error(g, fd));
    }
    bool degenerate = false;
    double seed_worst = 0.0;
    for (Divergence d : {Divergence::kAbsolute, Divergence::kSquared}) {
      const TapedForward tape = forward_batch(p, b.stacked);
      const auto g = testing::flatten(grad_wrt_params(
          testing::batch_attention_loss(tape, b.labels, b.targets, d), tape.params));
      const auto fd = testing::finite_difference(p, [&](const Parameters& q) {
        return testing::batch_attention_loss(forward_batch(q, b.stacked), b.labels, b.targets, d)
            .item();
      });
      if (testing::norm(g) < 1e-12 && testing::norm(fd) < 1e-12) {
        degenerate = true;
        continue;
      }
      seed_worst = std::max(seed_worst, testing::relative_error(g, fd));
    }
    if (degenerate) {
      ++flat;
      continue;
    }
    worst_att = std::max(worst_att, seed_worst);
    ++checked;
  }
  o.require(worst_ce <= 1e-4, "cross-entropy rel err " + fmt("%.3g", worst_ce));
  o.require(worst_att <= 1e-3, "attention rel err " + fmt("%.3g", worst_att));
  o.detail << " K=2 u=v=2, cross-entropy rel err " << fmt("%.2e", worst_ce)
           << ", attention (second-order path) rel err " << fmt("%.2e", worst_att) << " over "
           << checked << " draws (" << flat << " flat skipped)";
  return o;
}

// A reduced copy of the default benchmark: one step per epoch so 50 epochs
// give a 50-step trajectory.
Outcome reduction_identity() {
  Outcome o;
  WorkbenchConfig c;
  c.scene.image_size = 32;
  c.scene.shape_size_min = 6;
  c.scene.shape_size_max = 9;
  c.model.input_height = c.model.input_width = 32;
  const auto data = generate_dataset(c.scene, SplitCounts{32, 60, 0});
  const auto train = select_split(data, Split::kTrain);
  const auto validation = select_split(data, Split::kValidation);
  TrainConfig quick = c.baseline;
  quick.epochs = 3;
  const Parameters base = train_baseline(c.model, train, quick).params;
  const ValidationResult v =
      build_validation_matrix(base, validation, Annotator::oracle_annotator(c.oracle));

  TrainConfig c1 = c.finetune;
  c1.epochs = 50;
  c1.batch_size = 32;
  c1.factors = {1.0, 1.0, 1.0};
  c1.condition = Condition::kC1;
  TrainConfig c4 = c1;
  c4.condition = Condition::kC4;
  std::vector<std::vector<double>> t1, t4;
  finetune_gradia(base, train, v.pool, c1, {}, [&](std::size_t, const Parameters& p) {
    t1.push_back(testing::flatten(p.tensors));
  });
  finetune_gradia(base, train, v.pool, c4, {}, [&](std::size_t, const Parameters& p) {
    t4.push_back(testing::flatten(p.tensors));
  });
  double worst = 0.0;
  o.require(t1.size() == 50 && t4.size() == 50, "expected 50 steps each");
  for (std::size_t s = 0; s < std::min(t1.size(), t4.size()); ++s) {
    for (std::size_t i = 0; i < t1[s].size(); ++i) {
      worst = std::max(worst, std::abs(t1[s][i] - t4[s][i]));
    }
  }
  o.require(worst <= 1e-9, "max deviation " + fmt("%.3g", worst));
  o.detail << " 50 steps, pool UA/RIA/UIA " << v.pool[Quadrant::kUA].size() << "/"
           << v.pool[Quadrant::kRIA].size() << "/" << v.pool[Quadrant::kUIA].size()
           << ", max |C1 - C4(1,1,1)| " << fmt("%.2e", worst);
  return o;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

Outcome debiasing() {
  Outcome o;
  double d_iou = 0.0, d_m4 = 0.0;
  std::vector<double> m1_drops;
  const std::size_t seeds = 5;
  for (std::uint64_t seed = 0; seed < seeds; ++seed) {
    const auto start = std::chrono::steady_clock::now();
    WorkbenchConfig c;
    c.scene.seed = c.baseline.seed = c.finetune.seed = seed;
    const auto data = generate_dataset(c.scene, c.counts);
    const auto train = select_split(data, Split::kTrain);
    const auto validation = select_split(data, Split::kValidation);
    const auto test = select_split(data, Split::kTest);
    const Annotator oracle = Annotator::oracle_annotator(c.oracle);
    const Parameters base = train_baseline(c.model, train, c.baseline).params;
    const ValidationResult v = build_validation_matrix(base, validation, oracle);

    TrainConfig c1 = c.finetune;
    c1.condition = Condition::kC1;
    TrainConfig c4 = c.finetune;
    c4.condition = Condition::kC4;
    const Evaluation e1 = evaluate(finetune_gradia(base, train, v.pool, c1).params, test, oracle);
    const Evaluation e4 = evaluate(finetune_gradia(base, train, v.pool, c4).params, test, oracle);
    const double di = e4.metrics.m3_mean_iou - e1.metrics.m3_mean_iou;
    const double dm4 = e4.metrics.m4_attention_accuracy - e1.metrics.m4_attention_accuracy;
    const double drop = e1.metrics.m1_accuracy - e4.metrics.m1_accuracy;
    d_iou += di / seeds;
    d_m4 += dm4 / seeds;
    m1_drops.push_back(drop);
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::fprintf(stderr,
                 "  seed %llu: IoU %.3f -> %.3f, M4 %.3f -> %.3f, M1 %.3f -> %.3f (%.0f s)\n",
                 static_cast<unsigned long long>(seed), e1.metrics.m3_mean_iou,
                 e4.metrics.m3_mean_iou, e1.metrics.m4_attention_accuracy,
                 e4.metrics.m4_attention_accuracy, e1.metrics.m1_accuracy,
                 e4.metrics.m1_accuracy, secs);
    o.require(secs <= 600.0, "seed " + std::to_string(seed) + " took " + fmt("%.0f s", secs));
  }
  const double drop = median(m1_drops);
  o.require(d_iou >= 0.05, "mean IoU gain " + fmt("%+.3f", d_iou) + " < +0.05");
  o.require(d_m4 >= 0.10, "mean M4 gain " + fmt("%+.1f", 100 * d_m4) + " pp < +10 pp");
  o.require(drop <= 0.02, "median M1 drop " + fmt("%.1f", 100 * drop) + " pp > 2 pp");
  o.detail << " 5 seeds, C4 vs C1: IoU " << fmt("%+.3f", d_iou) << ", M4 "
           << fmt("%+.1f", 100 * d_m4) << " pp, median M1 drop " << fmt("%.1f", 100 * drop)
           << " pp";
  return o;
}

Outcome fewshot() {
  Outcome o;
  const auto start = std::chrono::steady_clock::now();
  const WorkbenchConfig c;
  const auto data = generate_dataset(c.scene, c.counts);
  const auto pre = generate_dataset(pretraining_scene(c.scene), c.counts);
  TrainConfig pc = c.baseline;
  pc.epochs = c.fewshot.pretrain_epochs;
  const Parameters base = train_baseline(c.model, select_split(pre, Split::kTrain), pc).params;
  const auto pool = select_split(data, Split::kTrain);
  const auto test = select_split(data, Split::kTest);

  std::map<std::size_t, double> gain;
  for (std::size_t shots : {1, 5, 10, 50}) {
    const FewShotScenario sc{shots, 10};
    const FewShotResult r = few_shot_study(base, pool, test, sc, c.fewshot.settings);
    std::size_t wins = 0;
    for (std::size_t s = 0; s < 10; ++s) wins += r.gradia.per_seed[s] > r.baseline.per_seed[s];
    gain[shots] = r.gradia.mean_auc - r.baseline.mean_auc;
    std::fprintf(stderr, "  %2zu-shot: baseline %.4f, gradia %.4f, gain %+.4f, wins %zu/10\n",
                 shots, r.baseline.mean_auc, r.gradia.mean_auc, gain[shots], wins);
    if (shots <= 5) {
      o.require(wins >= 8, std::to_string(shots) + "-shot wins " + std::to_string(wins) + "/10");
    }
    o.detail << " " << shots << "-shot " << fmt("%+.3f", gain[shots]) << " (" << wins
             << "/10);";
  }
  o.require(gain[1] >= gain[50], "1-shot gain below 50-shot gain");

  const std::vector<double> weights = {0.0, 0.25, 0.5, 0.75};
  const auto sweep =
      sensitivity_sweep(base, pool, test, weights, FewShotScenario{10, 10}, c.fewshot.settings);
  std::vector<double> stds;
  for (const auto& arm : sweep) {
    stds.push_back(arm.std_auc);
    std::fprintf(stderr, "  weight %.2f: mean %.4f std %.4f\n", arm.attention_weight,
                 arm.mean_auc, arm.std_auc);
  }
  const double rho = spearman(weights, stds);
  o.require(rho <= 0.0, "std Spearman " + fmt("%+.2f", rho) + " > 0");
  for (std::size_t i = 1; i < sweep.size(); ++i) {
    for (std::size_t j = i + 1; j < sweep.size(); ++j) {
      const double spread = 2.0 * std::max(sweep[i].std_auc, sweep[j].std_auc);
      if (std::abs(sweep[i].mean_auc - sweep[j].mean_auc) > spread) {
        o.require(false, "means at weights " + fmt("%.2f", weights[i]) + " and " +
                             fmt("%.2f", weights[j]) + " differ by more than 2 std");
      }
    }
  }
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  o.require(secs <= 1800.0, "took " + fmt("%.0f s", secs));
  o.detail << " sweep std rho " << fmt("%+.2f", rho) << "; " << fmt("%.0f s", secs);
  return o;
}

BinaryMask random_mask(std::size_t h, std::size_t w, double p, std::mt19937_64& rng) {
  std::bernoulli_distribution bit(p);
  BinaryMask m(h, w);
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t c = 0; c < w; ++c) m.set(r, c, bit(rng));
  }
  return m;
}

Outcome brute_force_oracles() {
  Outcome o;
  std::mt19937_64 rng(77);
  std::size_t iou_mismatch = 0;
  for (int t = 0; t < 1000; ++t) {
    const std::size_t h = 1 + rng() % 32, w = 1 + rng() % 32;
    const double p = static_cast<double>(rng() % 11) / 10.0;
    const BinaryMask a = random_mask(h, w, p, rng);
    const BinaryMask b = random_mask(h, w, 1.0 - p, rng);
    std::size_t both = 0, either = 0;
    for (std::size_t i = 0; i < h * w; ++i) {
      both += a[i] && b[i];
      either += a[i] || b[i];
    }
    const double expected = either == 0 ? 1.0 : static_cast<double>(both) / either;
    iou_mismatch += iou(a, b) != expected;
  }
  double worst_auc = 0.0;
  for (int t = 0; t < 1000; ++t) {
    const std::size_t n = 2 + rng() % 60;
    std::vector<double> scores(n);
    std::vector<int> labels(n);
    labels[0] = 0;
    labels[1] = 1;
    for (std::size_t i = 0; i < n; ++i) {
      // Coarse scores so ties are common.
      scores[i] = t % 2 ? static_cast<double>(rng() % 5) : std::generate_canonical<double, 53>(rng);
      if (i > 1) labels[i] = static_cast<int>(rng() % 2);
    }
    double favorable = 0.0, pairs = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        if (labels[i] != 1 || labels[j] != 0) continue;
        pairs += 1.0;
        favorable += scores[i] > scores[j] ? 1.0 : scores[i] == scores[j] ? 0.5 : 0.0;
      }
    }
    worst_auc = std::max(worst_auc, std::abs(roc_auc(scores, labels) - favorable / pairs));
  }
  o.require(iou_mismatch == 0, std::to_string(iou_mismatch) + " IoU mismatches");
  o.require(worst_auc <= 1e-12, "AUC deviation " + fmt("%.3g", worst_auc));
  o.detail << " 1000 mask pairs exact; 1000 score vectors, max |auc - pairwise| "
           << fmt("%.2e", worst_auc);
  return o;
}

// --- service contract ------------------------------------------------------

service::Request get(std::string path, std::map<std::string, std::string> query = {}) {
  return {"GET", std::move(path), std::move(query), "", ""};
}

service::Request post(std::string path, const json& body, const std::string& who) {
  return {"POST", std::move(path), {}, body.dump(), "Bearer " + who};
}

Outcome service_contract() {
  Outcome o;
  WorkbenchConfig c;
  c.scene.image_size = 32;
  c.scene.shape_size_min = 6;
  c.scene.shape_size_max = 9;
  c.model.input_height = c.model.input_width = 32;
  c.counts = {30, 30, 30};
  const auto data = generate_dataset(c.scene, c.counts);
  const Parameters params = init_model(c.model, 11);
  const fs::path dir = fs::temp_directory_path() / "gradia-acceptance-service";
  fs::remove_all(dir);
  service::ServiceOptions opts;
  opts.state_dir = dir;
  opts.config = c;
  opts.snapshot_every = 37;
  auto svc = std::make_unique<service::AnnotationService>(data, params, opts);

  std::map<std::string, bool> correct;
  for (const auto& inst : data) correct[inst.id] = predict(params, inst.image).class_index == inst.label;

  std::mt19937_64 rng(5);
  const std::vector<std::string> who = {"a1", "a2", "a3", "a4"};
  std::map<std::pair<std::string, std::string>, Verdict> latest;
  std::size_t matrix_checks = 0, matrix_mismatches = 0, mask_mismatches = 0, masks = 0;

  auto check_matrix = [&] {
    std::map<std::string, std::vector<Verdict>> per;
    for (const auto& [key, v] : latest) per[key.first].push_back(v);
    std::vector<ReasonabilityRecord> records;
    for (const auto& [id, vs] : per) {
      std::size_t q1 = 0, q2 = 0;
      for (const auto& v : vs) {
        q1 += v.q1_sufficient;
        q2 += v.q2_contextual;
      }
      Verdict m;
      m.q1_sufficient = 2 * q1 > vs.size();
      m.q2_contextual = 2 * q2 >= vs.size();
      records.push_back({id, correct[id], m});
    }
    const ReasonabilityMatrix expected = build_matrix(records);
    const json j = json::parse(svc->handle(get("/api/matrix")).body);
    ++matrix_checks;
    if (j["matrix"].is_null() || j["matrix"]["total"] != expected.total) {
      ++matrix_mismatches;
      return;
    }
    for (Quadrant q : kAllQuadrants) {
      const auto ids = j["matrix"][to_string(q)]["ids"].get<std::vector<std::string>>();
      if (ids != expected.members(q)) ++matrix_mismatches;
    }
  };

  for (int op = 0; op < 500; ++op) {
    const std::string id = data[rng() % 25].id;
    const std::string a = who[rng() % who.size()];
    const std::string base = "/api/instances/" + id + "/";
    const int kind = static_cast<int>(rng() % 3);
    if (kind == 0) {
      Verdict v;
      v.q1_sufficient = rng() % 2;
      v.q2_contextual = rng() % 2;
      const auto r = svc->handle(
          post(base + "verdict", {{"q1", v.q1_sufficient}, {"q2", v.q2_contextual}}, a));
      if (r.status == 200) latest[{id, a}] = v;
      o.require(r.status == 200, "verdict rejected: " + r.body);
    } else if (kind == 1) {
      const BinaryMask m = random_mask(32, 32, static_cast<double>(rng() % 10) / 10.0, rng);
      const auto r = svc->handle(post(base + "mask", {{"mask_rle", encode_rle(m)}}, a));
      o.require(r.status == 200, "mask rejected: " + r.body);
      const json detail = json::parse(svc->handle(get("/api/instances/" + id)).body);
      bool found = false;
      for (const auto& ann : detail["annotations"]) {
        if (ann["annotator_id"] == a && !ann["mask_rle"].is_null()) {
          found = decode_rle(ann["mask_rle"].get<std::string>()) == m;
        }
      }
      ++masks;
      mask_mismatches += !found;
    } else {
      const int rating = 1 + static_cast<int>(rng() % 5);
      o.require(svc->handle(post(base + "likert", {{"rating", rating}}, a)).status == 200,
                "likert rejected");
    }
    if (op % 25 == 24) check_matrix();
  }

  const std::string state = svc->store_state();
  const service::AnnotationLog log(dir, 37);
  const bool replay_ok = log.replay_from_empty().serialize() == state;
  const bool recover_ok = log.recover().serialize() == state;
  svc.reset();
  svc = std::make_unique<service::AnnotationService>(data, params, opts);
  const bool restart_ok = svc->store_state() == state;

  o.require(replay_ok, "replay differs from live state");
  o.require(recover_ok, "snapshot recovery differs from live state");
  o.require(restart_ok, "restarted service differs");
  o.require(mask_mismatches == 0, std::to_string(mask_mismatches) + " mask round-trip failures");
  o.require(matrix_mismatches == 0, std::to_string(matrix_mismatches) + " matrix mismatches");
  o.detail << " 500 ops, replay byte-exact " << (replay_ok && recover_ok ? "yes" : "no")
           << ", " << masks << " masks round-tripped, " << matrix_checks
           << " matrix checks";
  return o;
}

const std::vector<std::pair<std::string, std::function<Outcome()>>> kCriteria = {
    {"metric_fidelity", metric_fidelity},
    {"gradcam_oracle", gradcam_oracle},
    {"gradient_checks", gradient_checks},
    {"reduction_identity", reduction_identity},
    {"debiasing", debiasing},
    {"fewshot", fewshot},
    {"brute_force_oracles", brute_force_oracles},
    {"service_contract", service_contract},
};

}  // namespace

int main(int argc, char** argv) {
  tune_allocator();
  std::vector<std::string> wanted(argv + 1, argv + argc);
  bool all_pass = true;
  std::size_t ran = 0;
  for (const auto& [name, run] : kCriteria) {
    if (!wanted.empty() && std::find(wanted.begin(), wanted.end(), name) == wanted.end()) continue;
    ++ran;
    Outcome o;
    try {
      o = run();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail << " exception: " << e.what();
    }
    std::printf("[%s] %s%s\n", o.pass ? "PASS" : "FAIL", name.c_str(), o.detail.str().c_str());
    std::fflush(stdout);
    all_pass = all_pass && o.pass;
  }
  if (ran == 0) {
    std::fprintf(stderr, "unknown criterion\n");
    return 2;
  }
  return all_pass ? 0 : 1;
}
