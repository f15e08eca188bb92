#include "gradia/service/service.hpp"

#include <httplib.h>

#include <algorithm>
#include <chrono>
#include <condition_variable>
#include <mutex>
#include <nlohmann/json.hpp>
#include <shared_mutex>
#include <thread>

#include "gradia/attention.hpp"
#include "gradia/error.hpp"
#include "gradia/io.hpp"
#include "gradia/report.hpp"
#include "gradia/service/store.hpp"
#include "gradia/trainer.hpp"

namespace gradia::service {
using nlohmann::json;
using nlohmann::ordered_json;

namespace {

// Raised inside handlers and mapped onto {code, message} bodies.
struct HttpError {
  int status;
  std::string code;
  std::string message;
};

[[noreturn]] void fail(int status, std::string code, std::string message) {
  throw HttpError{status, std::move(code), std::move(message)};
}

Response json_response(int status, const ordered_json& body) {
  return {status, body.dump()};
}

std::string base64(std::span<const std::uint8_t> bytes) {
  static constexpr char kTable[] =
      "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
  std::string out;
  out.reserve((bytes.size() + 2) / 3 * 4);
  for (std::size_t i = 0; i < bytes.size(); i += 3) {
    const std::uint32_t b0 = bytes[i];
    const std::uint32_t b1 = i + 1 < bytes.size() ? bytes[i + 1] : 0;
    const std::uint32_t b2 = i + 2 < bytes.size() ? bytes[i + 2] : 0;
    const std::uint32_t n = (b0 << 16) | (b1 << 8) | b2;
    out += kTable[(n >> 18) & 63];
    out += kTable[(n >> 12) & 63];
    out += i + 1 < bytes.size() ? kTable[(n >> 6) & 63] : '=';
    out += i + 2 < bytes.size() ? kTable[n & 63] : '=';
  }
  return out;
}

std::vector<std::string> path_segments(const std::string& path) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= path.size()) {
    const std::size_t end = path.find('/', start);
    const std::string part =
        path.substr(start, end == std::string::npos ? std::string::npos : end - start);
    if (!part.empty()) out.push_back(part);
    if (end == std::string::npos) break;
    start = end + 1;
  }
  return out;
}

json parse_body(const Request& request) {
  try {
    return request.body.empty() ? json::object() : json::parse(request.body);
  } catch (const json::exception& e) {
    fail(400, "bad_request", std::string("body is not valid JSON: ") + e.what());
  }
}

std::size_t query_size(const Request& request, const char* key, std::size_t fallback) {
  auto it = request.query.find(key);
  if (it == request.query.end()) return fallback;
  try {
    std::size_t used = 0;
    const long long v = std::stoll(it->second, &used);
    if (used != it->second.size() || v < 1) throw std::invalid_argument(key);
    return static_cast<std::size_t>(v);
  } catch (const std::exception&) {
    fail(400, "bad_request", std::string(key) + " must be a positive integer");
  }
}

ordered_json verdict_json(const Verdict& v) {
  return {{"q1", v.q1_sufficient},
          {"q2", v.q2_contextual},
          {"annotator_id", v.annotator_id},
          {"timestamp", v.timestamp}};
}

enum class JobKind { kFinetune, kEvaluate };
enum class JobState { kQueued, kRunning, kDone, kFailed };

const char* to_string(JobKind kind) {
  return kind == JobKind::kFinetune ? "finetune" : "evaluate";
}

const char* to_string(JobState state) {
  switch (state) {
    case JobState::kQueued:
      return "queued";
    case JobState::kRunning:
      return "running";
    case JobState::kDone:
      return "done";
    case JobState::kFailed:
      return "failed";
  }
  return "?";
}

struct Job {
  std::string id;
  JobKind kind = JobKind::kFinetune;
  JobState state = JobState::kQueued;
  double progress = 0.0;
  std::string result_ref;
  std::string error_message;
  std::optional<Parameters> result;
};

// Parameters plus everything derived from them that list views need.
struct ModelState {
  Parameters params;
  std::vector<Prediction> predictions;  // parallel to the dataset
  std::uint64_t version = 0;
};

}  // namespace

struct AnnotationService::Impl {
  std::vector<SyntheticInstance> dataset;
  std::map<std::string, std::size_t> index;  // sorted ids
  ServiceOptions options;

  mutable std::mutex model_mutex;
  std::shared_ptr<const ModelState> model;

  mutable std::shared_mutex store_mutex;
  AnnotationStore store;
  std::unique_ptr<AnnotationLog> log;

  std::mutex job_mutex;
  std::condition_variable job_cv;
  std::map<std::string, Job> jobs;
  std::vector<std::thread> workers;
  std::size_t next_job = 1;

  std::unique_ptr<httplib::Server> server;
  std::thread server_thread;

  std::shared_ptr<const ModelState> active() const {
    std::lock_guard lock(model_mutex);
    return model;
  }

  std::shared_ptr<const ModelState> prepare(Parameters params, std::uint64_t version) const {
    auto state = std::make_shared<ModelState>();
    state->params = std::move(params);
    state->version = version;
    state->predictions.reserve(dataset.size());
    ad::NoGradGuard no_grad;
    constexpr std::size_t kChunk = 128;
    for (std::size_t lo = 0; lo < dataset.size(); lo += kChunk) {
      const std::size_t hi = std::min(dataset.size(), lo + kChunk);
      std::vector<const Tensor*> images;
      for (std::size_t i = lo; i < hi; ++i) images.push_back(&dataset[i].image);
      const TapedForward tape =
          forward_batch(state->params, stack_images(images, state->params.config));
      const Tensor& logits = tape.logits.value();
      const std::size_t c = logits.dim(1);
      for (std::size_t i = 0; i < hi - lo; ++i) {
        state->predictions.push_back(
            softmax_prediction(std::span<const double>(logits.data() + i * c, c)));
      }
    }
    return state;
  }

  std::int64_t now() const {
    if (options.clock) return options.clock();
    return std::chrono::duration_cast<std::chrono::milliseconds>(
               std::chrono::system_clock::now().time_since_epoch())
        .count();
  }

  const SyntheticInstance& instance(const std::string& id, std::size_t* position = nullptr) const {
    auto it = index.find(id);
    if (it == index.end()) fail(404, "not_found", "unknown instance " + id);
    if (position) *position = it->second;
    return dataset[it->second];
  }

  std::string annotator(const Request& request) const {
    const std::string prefix = "Bearer ";
    if (request.authorization.rfind(prefix, 0) != 0 ||
        request.authorization.size() == prefix.size()) {
      fail(401, "unauthorized", "Authorization: Bearer <annotator id> is required");
    }
    return request.authorization.substr(prefix.size());
  }

  // Quadrant from the majority of annotators' latest verdicts; the caller
  // holds the store lock.
  std::optional<Quadrant> quadrant_of(const ModelState& m, std::size_t position) const {
    const auto& inst = dataset[position];
    const std::vector<Verdict> verdicts = store.verdicts(inst.id);
    if (verdicts.empty()) return std::nullopt;
    const bool correct = m.predictions[position].class_index == inst.label;
    return classify_instance(correct, majority_vote(verdicts));
  }

  ordered_json summary(const ModelState& m, std::size_t position) const {
    const auto& inst = dataset[position];
    const Prediction& p = m.predictions[position];
    const auto q = quadrant_of(m, position);
    return {{"id", inst.id},
            {"split", gradia::to_string(inst.split)},
            {"label", inst.label},
            {"prediction", p.class_index},
            {"probabilities", p.probabilities},
            {"correct", p.class_index == inst.label},
            {"quadrant", q ? ordered_json(gradia::to_string(*q)) : ordered_json(nullptr)},
            {"annotated", !store.annotations(inst.id).empty()}};
  }

  Response list_instances(const Request& request) const {
    std::optional<Split> split;
    if (auto it = request.query.find("split"); it != request.query.end()) {
      split = parse_split(it->second);
      if (!split) fail(400, "bad_request", "unknown split '" + it->second + "'");
    }
    std::optional<Quadrant> quadrant;
    if (auto it = request.query.find("quadrant"); it != request.query.end()) {
      quadrant = parse_quadrant(it->second);
      if (!quadrant) fail(400, "bad_request", "unknown quadrant '" + it->second + "'");
    }
    std::optional<bool> annotated;
    if (auto it = request.query.find("annotated"); it != request.query.end()) {
      if (it->second == "true") {
        annotated = true;
      } else if (it->second == "false") {
        annotated = false;
      } else {
        fail(400, "bad_request", "annotated must be true or false");
      }
    }
    const std::size_t page = query_size(request, "page", 1);
    const std::size_t page_size = std::min<std::size_t>(query_size(request, "page_size", 50), 500);

    const auto m = active();
    std::shared_lock lock(store_mutex);
    std::vector<std::size_t> matches;
    for (const auto& [id, position] : index) {
      const auto& inst = dataset[position];
      if (split && inst.split != *split) continue;
      if (annotated && (!store.annotations(id).empty()) != *annotated) continue;
      if (quadrant && quadrant_of(*m, position) != quadrant) continue;
      matches.push_back(position);
    }
    ordered_json items = ordered_json::array();
    const std::size_t lo = (page - 1) * page_size;
    for (std::size_t i = lo; i < std::min(matches.size(), lo + page_size); ++i) {
      items.push_back(summary(*m, matches[i]));
    }
    return json_response(200, {{"items", items},
                               {"page", page},
                               {"page_size", page_size},
                               {"total", matches.size()},
                               {"pages", (matches.size() + page_size - 1) / page_size},
                               {"model_version", m->version}});
  }

  Response get_instance(const std::string& id) const {
    std::size_t position = 0;
    const SyntheticInstance& inst = instance(id, &position);
    const auto m = active();
    const Prediction& p = m->predictions[position];

    const ForwardTrace trace = forward(m->params, inst.image, inst.id);
    const AttentionMap attention =
        normalize(grad_cam(trace, p.class_index), p.class_index, inst.id);
    const std::size_t u = attention.grid.dim(0);
    const std::size_t v = attention.grid.dim(1);
    ordered_json grid = ordered_json::array();
    for (std::size_t i = 0; i < u; ++i) {
      std::vector<double> row(attention.grid.data() + i * v, attention.grid.data() + (i + 1) * v);
      grid.push_back(row);
    }
    const Tensor overlay = upsample(attention, inst.image.dim(0), inst.image.dim(1));
    const std::vector<std::uint8_t> heatmap =
        encode_png_rgb(heatmap_rgb(overlay), overlay.dim(0), overlay.dim(1));

    std::shared_lock lock(store_mutex);
    ordered_json annotations = ordered_json::array();
    for (const auto& [annotator_id, s] : store.annotations(id)) {
      annotations.push_back(
          {{"annotator_id", annotator_id},
           {"revision", s.revision},
           {"updated_at", s.updated_at},
           {"verdict", s.verdict ? verdict_json(*s.verdict) : ordered_json(nullptr)},
           {"mask_rle", s.mask_rle ? ordered_json(*s.mask_rle) : ordered_json(nullptr)},
           {"likert", s.likert ? ordered_json(*s.likert) : ordered_json(nullptr)}});
    }
    const auto q = quadrant_of(*m, position);
    return json_response(
        200, {{"id", inst.id},
              {"split", gradia::to_string(inst.split)},
              {"label", inst.label},
              {"image_png", base64(encode_png_gray(inst.image))},
              {"prediction", {{"class_index", p.class_index}, {"probabilities", p.probabilities}}},
              {"correct", p.class_index == inst.label},
              {"attention",
               {{"class_index", attention.class_index},
                {"u", u},
                {"v", v},
                {"grid", grid},
                {"heatmap_png", base64(heatmap)}}},
              {"quadrant", q ? ordered_json(gradia::to_string(*q)) : ordered_json(nullptr)},
              {"annotations", annotations},
              {"model_version", m->version}});
  }

  Response append(AnnotationRecord record) {
    std::size_t position = 0;
    instance(record.instance_id, &position);
    const auto m = active();
    std::unique_lock lock(store_mutex);
    record.revision = store.next_revision(record.instance_id, record.annotator_id);
    record.created_at = now();
    if (record.verdict) record.verdict->timestamp = record.created_at;
    try {
      validate_record(record);
    } catch (const InputError& e) {
      fail(400, "bad_request", e.what());
    }
    if (record.revision != store.next_revision(record.instance_id, record.annotator_id)) {
      fail(500, "internal", "revision sequence broken");
    }
    // Write-ahead: the record is durable before it becomes visible.
    log->append(record);
    store.apply(record);
    log->maybe_snapshot(store);
    const auto q = quadrant_of(*m, position);
    return json_response(200, {{"instance_id", record.instance_id},
                               {"annotator_id", record.annotator_id},
                               {"revision", record.revision},
                               {"quadrant", q ? ordered_json(gradia::to_string(*q))
                                              : ordered_json(nullptr)}});
  }

  Response post_verdict(const std::string& id, const Request& request) {
    AnnotationRecord r;
    r.instance_id = id;
    r.annotator_id = annotator(request);
    const json body = parse_body(request);
    if (!body.contains("q1") || !body.at("q1").is_boolean() || !body.contains("q2") ||
        !body.at("q2").is_boolean()) {
      fail(400, "bad_request", "verdict needs boolean q1 and q2");
    }
    Verdict v;
    v.q1_sufficient = body.at("q1").get<bool>();
    v.q2_contextual = body.at("q2").get<bool>();
    v.annotator_id = r.annotator_id;
    r.verdict = v;
    return append(std::move(r));
  }

  Response post_mask(const std::string& id, const Request& request) {
    const SyntheticInstance& inst = instance(id);
    AnnotationRecord r;
    r.instance_id = id;
    r.annotator_id = annotator(request);
    const json body = parse_body(request);
    if (!body.contains("mask_rle") || !body.at("mask_rle").is_string()) {
      fail(400, "bad_request", "mask needs a mask_rle string");
    }
    const std::string rle = body.at("mask_rle").get<std::string>();
    BinaryMask mask;
    try {
      mask = decode_rle(rle);
    } catch (const InputError& e) {
      fail(400, "bad_request", e.what());
    }
    if (mask.height() != inst.image.dim(0) || mask.width() != inst.image.dim(1)) {
      fail(400, "bad_request",
           "mask is " + std::to_string(mask.width()) + "x" + std::to_string(mask.height()) +
               ", image is " + std::to_string(inst.image.dim(1)) + "x" +
               std::to_string(inst.image.dim(0)));
    }
    r.mask_rle = rle;
    return append(std::move(r));
  }

  Response post_likert(const std::string& id, const Request& request) {
    AnnotationRecord r;
    r.instance_id = id;
    r.annotator_id = annotator(request);
    const json body = parse_body(request);
    if (!body.contains("rating") || !body.at("rating").is_number_integer()) {
      fail(400, "bad_request", "likert needs an integer rating");
    }
    const auto rating = body.at("rating").get<long long>();
    if (rating < 1 || rating > 5) fail(400, "bad_request", "rating must lie in 1..5");
    r.likert = static_cast<int>(rating);
    instance(id);
    return append(std::move(r));
  }

  Response get_matrix(const Request& request) const {
    std::optional<Split> split;
    if (auto it = request.query.find("split"); it != request.query.end()) {
      split = parse_split(it->second);
      if (!split) fail(400, "bad_request", "unknown split '" + it->second + "'");
    }
    const auto m = active();
    std::vector<ReasonabilityRecord> records;
    {
      std::shared_lock lock(store_mutex);
      for (const auto& [id, position] : index) {
        const auto& inst = dataset[position];
        if (split && inst.split != *split) continue;
        const std::vector<Verdict> verdicts = store.verdicts(id);
        if (verdicts.empty()) continue;
        records.push_back({id, m->predictions[position].class_index == inst.label,
                           majority_vote(verdicts)});
      }
    }
    const ReasonabilityMatrix matrix = build_matrix(records);
    ordered_json metrics = nullptr;
    if (matrix.total > 0) {
      metrics = {{"m1_accuracy", m1_accuracy(matrix)},
                 {"m2_ra_performance", m2_ra_performance(matrix)},
                 {"m4_attention_accuracy", m4_attention_accuracy(matrix)}};
    }
    return json_response(200, {{"matrix", json::parse(matrix_to_json(matrix))},
                               {"metrics", metrics},
                               {"annotated_only", true},
                               {"no_annotations", matrix.total == 0},
                               {"model_version", m->version}});
  }

  ordered_json job_json(const Job& job) const {
    return {{"job_id", job.id},
            {"kind", to_string(job.kind)},
            {"state", to_string(job.state)},
            {"progress", job.progress},
            {"result_ref", job.result_ref.empty() ? ordered_json(nullptr)
                                                  : ordered_json(job.result_ref)},
            {"error_message", job.error_message.empty() ? ordered_json(nullptr)
                                                        : ordered_json(job.error_message)}};
  }

  TrainConfig job_config(const json& overrides) const {
    TrainConfig c = options.config.finetune;
    try {
      for (const auto& [key, value] : overrides.items()) {
        if (key == "condition") {
          auto parsed = parse_condition(value.get<std::string>());
          if (!parsed) throw ConfigError("unknown condition");
          c.condition = *parsed;
        } else if (key == "alpha") {
          c.factors.alpha = value.get<double>();
        } else if (key == "beta") {
          c.factors.beta = value.get<double>();
        } else if (key == "gamma") {
          c.factors.gamma = value.get<double>();
        } else if (key == "epochs") {
          c.epochs = value.get<std::size_t>();
        } else if (key == "learning_rate") {
          c.learning_rate = value.get<double>();
        } else if (key == "batch_size") {
          c.batch_size = value.get<std::size_t>();
        } else if (key == "seed") {
          c.seed = value.get<std::uint64_t>();
        } else if (key == "higher_order") {
          c.higher_order = value.get<bool>();
        } else if (key == "annotator") {
          const auto a = value.get<std::string>();
          if (a != "human" && a != "oracle") throw ConfigError("annotator must be human or oracle");
        } else {
          throw ConfigError("unknown job config key '" + key + "'");
        }
      }
      c.validate();
    } catch (const json::exception& e) {
      fail(400, "bad_request", std::string("bad job config: ") + e.what());
    } catch (const ConfigError& e) {
      fail(400, "bad_request", e.what());
    }
    return c;
  }

  Annotator human_annotator(const std::vector<const SyntheticInstance*>& instances) const {
    std::shared_lock lock(store_mutex);
    return stored_annotator(store, instances, options.config.oracle);
  }

  void run_job(const std::string& job_id, JobKind kind, TrainConfig config,
               bool human, std::shared_ptr<const ModelState> base) {
    auto progress = [this, &job_id](double f) {
      std::lock_guard lock(job_mutex);
      jobs[job_id].progress = f;
    };
    {
      std::lock_guard lock(job_mutex);
      jobs[job_id].state = JobState::kRunning;
    }
    try {
      const auto clock_start = std::chrono::steady_clock::now();
      const auto train = select_split(dataset, Split::kTrain);
      const auto test = select_split(dataset, Split::kTest);
      const Annotator oracle = Annotator::oracle_annotator(options.config.oracle);
      RunReport report;
      report.config_snapshot = format_config(options.config);
      std::optional<Parameters> result;
      if (kind == JobKind::kFinetune) {
        std::vector<const SyntheticInstance*> validation = select_split(dataset, Split::kValidation);
        Annotator annotator = oracle;
        if (human) {
          annotator = human_annotator(validation);
          std::erase_if(validation, [&annotator](const SyntheticInstance* inst) {
            return !annotator.stored.contains(inst->id);
          });
          if (validation.empty()) throw DataError("no annotated validation instances");
        }
        const ValidationResult v = build_validation_matrix(base->params, validation, annotator);
        TrainResult tuned = finetune_gradia(base->params, train, v.pool, config, progress);
        report.condition = gradia::to_string(config.condition);
        report.before = evaluate(base->params, test, oracle);
        report.after = evaluate(tuned.params, test, oracle);
        report.curve = std::move(tuned.curve);
        result = std::move(tuned.params);
      } else {
        report.condition = "evaluate";
        report.after = evaluate(base->params, test, oracle);
      }
      report.wall_time_seconds = std::chrono::duration<double>(
                                     std::chrono::steady_clock::now() - clock_start)
                                     .count();
      const auto directory = options.state_dir / "runs" / ("job-" + job_id);
      write_run(directory, report, result ? &*result : nullptr);
      std::lock_guard lock(job_mutex);
      Job& job = jobs[job_id];
      job.result = std::move(result);
      job.result_ref = directory.string();
      job.progress = 1.0;
      job.state = JobState::kDone;
    } catch (const std::exception& e) {
      std::lock_guard lock(job_mutex);
      Job& job = jobs[job_id];
      job.error_message = e.what();
      job.state = JobState::kFailed;
    }
    job_cv.notify_all();
  }

  Response submit_job(const Request& request) {
    const json body = parse_body(request);
    if (!body.contains("kind") || !body.at("kind").is_string()) {
      fail(400, "bad_request", "job needs a kind");
    }
    const std::string kind_text = body.at("kind").get<std::string>();
    JobKind kind;
    if (kind_text == "finetune") {
      kind = JobKind::kFinetune;
    } else if (kind_text == "evaluate") {
      kind = JobKind::kEvaluate;
    } else {
      fail(400, "bad_request", "unknown job kind '" + kind_text + "'");
    }
    const json overrides = body.value("config", json::object());
    if (!overrides.is_object()) fail(400, "bad_request", "config must be an object");
    const TrainConfig config = job_config(overrides);
    const bool human = overrides.value("annotator", std::string("human")) == "human";

    std::lock_guard lock(job_mutex);
    for (const auto& [id, job] : jobs) {
      if (job.kind == kind && (job.state == JobState::kQueued || job.state == JobState::kRunning)) {
        fail(409, "conflict", "job " + id + " of kind " + kind_text + " is still active");
      }
    }
    const std::string id = std::to_string(next_job++);
    Job& job = jobs[id];
    job.id = id;
    job.kind = kind;
    workers.emplace_back(&Impl::run_job, this, id, kind, config, human, active());
    return json_response(202, job_json(job));
  }

  Response get_job(const std::string& id) {
    std::lock_guard lock(job_mutex);
    auto it = jobs.find(id);
    if (it == jobs.end()) fail(404, "not_found", "unknown job " + id);
    return json_response(200, job_json(it->second));
  }

  Response activate(const Request& request) {
    const json body = parse_body(request);
    if (!body.contains("job_id")) fail(400, "bad_request", "activation needs a job_id");
    const std::string id = body.at("job_id").is_string() ? body.at("job_id").get<std::string>()
                                                          : body.at("job_id").dump();
    Parameters params;
    {
      std::lock_guard lock(job_mutex);
      auto it = jobs.find(id);
      if (it == jobs.end()) fail(404, "not_found", "unknown job " + id);
      if (it->second.state != JobState::kDone || !it->second.result) {
        fail(409, "conflict", "job " + id + " has no finished parameters to activate");
      }
      params = *it->second.result;
    }
    const std::uint64_t version = active()->version + 1;
    // Derived state is built before the swap, so readers see either the
    // old model or the new one in full.
    auto next = prepare(std::move(params), version);
    {
      std::lock_guard lock(model_mutex);
      model = std::move(next);
    }
    return json_response(200, {{"model_version", version}, {"job_id", id}});
  }

  Response route(const Request& request) {
    const auto parts = path_segments(request.path);
    const bool get = request.method == "GET";
    const bool post = request.method == "POST";
    if (parts.size() < 2 || parts[0] != "api") fail(404, "not_found", "no route " + request.path);
    if (parts[1] == "instances") {
      if (parts.size() == 2 && get) return list_instances(request);
      if (parts.size() == 3 && get) return get_instance(parts[2]);
      if (parts.size() == 4 && post) {
        if (parts[3] == "verdict") return post_verdict(parts[2], request);
        if (parts[3] == "mask") return post_mask(parts[2], request);
        if (parts[3] == "likert") return post_likert(parts[2], request);
      }
    } else if (parts[1] == "matrix" && parts.size() == 2 && get) {
      return get_matrix(request);
    } else if (parts[1] == "jobs") {
      if (parts.size() == 2 && post) return submit_job(request);
      if (parts.size() == 3 && get) return get_job(parts[2]);
    } else if (parts[1] == "model" && parts.size() == 3 && parts[2] == "activate" && post) {
      return activate(request);
    }
    fail(404, "not_found", "no route " + request.method + " " + request.path);
  }
};

AnnotationService::AnnotationService(std::vector<SyntheticInstance> dataset, Parameters params,
                                     ServiceOptions options)
    : impl_(std::make_unique<Impl>()) {
  impl_->dataset = std::move(dataset);
  for (std::size_t i = 0; i < impl_->dataset.size(); ++i) {
    if (!impl_->index.emplace(impl_->dataset[i].id, i).second) {
      throw DataError("duplicate instance id " + impl_->dataset[i].id);
    }
  }
  impl_->options = std::move(options);
  impl_->log = std::make_unique<AnnotationLog>(impl_->options.state_dir,
                                               impl_->options.snapshot_every);
  impl_->store = impl_->log->recover();
  impl_->model = impl_->prepare(std::move(params), 1);
}

AnnotationService::~AnnotationService() {
  stop();
  for (auto& t : impl_->workers) {
    if (t.joinable()) t.join();
  }
}

Response AnnotationService::handle(const Request& request) {
  try {
    return impl_->route(request);
  } catch (const HttpError& e) {
    return json_response(e.status, {{"code", e.code}, {"message", e.message}});
  } catch (const InputError& e) {
    return json_response(400, {{"code", "bad_request"}, {"message", e.what()}});
  } catch (const std::exception& e) {
    return json_response(500, {{"code", "internal"}, {"message", e.what()}});
  }
}

namespace {

void install_routes(httplib::Server& server, AnnotationService& service) {
  auto adapter = [&service](const httplib::Request& req, httplib::Response& res) {
    Request request;
    request.method = req.method;
    request.path = req.path;
    for (const auto& [key, value] : req.params) request.query.emplace(key, value);
    request.body = req.body;
    request.authorization = req.get_header_value("Authorization");
    const Response response = service.handle(request);
    res.status = response.status;
    res.set_content(response.body, "application/json");
  };
  server.Get(".*", adapter);
  server.Post(".*", adapter);
}

}  // namespace

bool AnnotationService::listen(const std::string& host, int port) {
  impl_->server = std::make_unique<httplib::Server>();
  install_routes(*impl_->server, *this);
  return impl_->server->listen(host, port);
}

int AnnotationService::listen_background(const std::string& host) {
  impl_->server = std::make_unique<httplib::Server>();
  install_routes(*impl_->server, *this);
  const int port = impl_->server->bind_to_any_port(host);
  if (port < 0) return -1;
  impl_->server_thread = std::thread([this] { impl_->server->listen_after_bind(); });
  impl_->server->wait_until_ready();
  return port;
}

void AnnotationService::stop() {
  if (impl_->server) impl_->server->stop();
  if (impl_->server_thread.joinable()) impl_->server_thread.join();
}

void AnnotationService::wait_for_jobs() {
  std::unique_lock lock(impl_->job_mutex);
  impl_->job_cv.wait(lock, [this] {
    for (const auto& [id, job] : impl_->jobs) {
      if (job.state == JobState::kQueued || job.state == JobState::kRunning) return false;
    }
    return true;
  });
}

std::string AnnotationService::store_state() const {
  std::shared_lock lock(impl_->store_mutex);
  return impl_->store.serialize();
}

std::filesystem::path AnnotationService::log_path() const { return impl_->log->log_path(); }

}  // namespace gradia::service
