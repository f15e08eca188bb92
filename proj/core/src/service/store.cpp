#include "gradia/service/store.hpp"

#include <nlohmann/json.hpp>
#include <sstream>

#include "gradia/attention.hpp"
#include "gradia/error.hpp"
#include "gradia/io.hpp"

namespace gradia::service {
using nlohmann::ordered_json;

namespace {

ordered_json verdict_json(const Verdict& v) {
  return {{"q1", v.q1_sufficient},
          {"q2", v.q2_contextual},
          {"annotator_id", v.annotator_id},
          {"timestamp", v.timestamp}};
}

Verdict verdict_value(const nlohmann::json& j) {
  Verdict v;
  v.q1_sufficient = j.at("q1").get<bool>();
  v.q2_contextual = j.at("q2").get<bool>();
  v.annotator_id = j.value("annotator_id", "");
  v.timestamp = j.value("timestamp", std::int64_t{0});
  return v;
}

}  // namespace

std::string to_json_line(const AnnotationRecord& r) {
  ordered_json j;
  j["instance_id"] = r.instance_id;
  j["annotator_id"] = r.annotator_id;
  j["revision"] = r.revision;
  j["created_at"] = r.created_at;
  if (r.verdict) j["verdict"] = verdict_json(*r.verdict);
  if (r.mask_rle) j["mask_rle"] = *r.mask_rle;
  if (r.likert) j["likert"] = *r.likert;
  return j.dump();
}

AnnotationRecord record_from_json(const std::string& line) {
  try {
    const auto j = nlohmann::json::parse(line);
    AnnotationRecord r;
    r.instance_id = j.at("instance_id").get<std::string>();
    r.annotator_id = j.at("annotator_id").get<std::string>();
    r.revision = j.at("revision").get<std::uint64_t>();
    r.created_at = j.at("created_at").get<std::int64_t>();
    if (j.contains("verdict")) r.verdict = verdict_value(j.at("verdict"));
    if (j.contains("mask_rle")) r.mask_rle = j.at("mask_rle").get<std::string>();
    if (j.contains("likert")) r.likert = j.at("likert").get<int>();
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed annotation record: ") + e.what());
  }
}

void validate_record(const AnnotationRecord& r) {
  if (r.instance_id.empty() || r.annotator_id.empty()) {
    throw InputError("annotation needs an instance id and an annotator id");
  }
  if (!r.verdict && !r.mask_rle && !r.likert) {
    throw InputError("annotation carries no verdict, mask or rating");
  }
  if (r.likert && (*r.likert < 1 || *r.likert > 5)) {
    throw InputError("rating must lie in 1..5");
  }
}

void AnnotationStore::apply(const AnnotationRecord& r) {
  validate_record(r);
  AnnotationState& state = entries_[{r.instance_id, r.annotator_id}];
  if (r.revision != state.revision + 1) {
    throw DataError("revision " + std::to_string(r.revision) + " for " + r.instance_id +
                    "/" + r.annotator_id + " does not follow " +
                    std::to_string(state.revision));
  }
  state.revision = r.revision;
  state.updated_at = r.created_at;
  if (r.verdict) state.verdict = r.verdict;
  if (r.mask_rle) state.mask_rle = r.mask_rle;
  if (r.likert) state.likert = r.likert;
  ++record_count_;
}

std::uint64_t AnnotationStore::next_revision(const std::string& instance_id,
                                             const std::string& annotator_id) const {
  auto it = entries_.find({instance_id, annotator_id});
  return it == entries_.end() ? 1 : it->second.revision + 1;
}

std::vector<std::pair<std::string, AnnotationState>> AnnotationStore::annotations(
    const std::string& instance_id) const {
  std::vector<std::pair<std::string, AnnotationState>> out;
  for (auto it = entries_.lower_bound({instance_id, std::string()});
       it != entries_.end() && it->first.first == instance_id; ++it) {
    out.emplace_back(it->first.second, it->second);
  }
  return out;
}

std::vector<Verdict> AnnotationStore::verdicts(const std::string& instance_id) const {
  std::vector<Verdict> out;
  for (const auto& [annotator, state] : annotations(instance_id)) {
    if (state.verdict) out.push_back(*state.verdict);
  }
  return out;
}

bool AnnotationStore::has_verdict(const std::string& instance_id) const {
  return !verdicts(instance_id).empty();
}

std::string AnnotationStore::serialize() const {
  ordered_json j;
  j["record_count"] = record_count_;
  j["entries"] = ordered_json::array();
  for (const auto& [key, s] : entries_) {
    ordered_json e;
    e["instance_id"] = key.first;
    e["annotator_id"] = key.second;
    e["revision"] = s.revision;
    e["updated_at"] = s.updated_at;
    e["verdict"] = s.verdict ? verdict_json(*s.verdict) : ordered_json(nullptr);
    e["mask_rle"] = s.mask_rle ? ordered_json(*s.mask_rle) : ordered_json(nullptr);
    e["likert"] = s.likert ? ordered_json(*s.likert) : ordered_json(nullptr);
    j["entries"].push_back(std::move(e));
  }
  return j.dump();
}

AnnotationStore AnnotationStore::deserialize(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    AnnotationStore store;
    store.record_count_ = j.at("record_count").get<std::size_t>();
    for (const auto& e : j.at("entries")) {
      AnnotationState s;
      s.revision = e.at("revision").get<std::uint64_t>();
      s.updated_at = e.at("updated_at").get<std::int64_t>();
      if (!e.at("verdict").is_null()) s.verdict = verdict_value(e.at("verdict"));
      if (!e.at("mask_rle").is_null()) s.mask_rle = e.at("mask_rle").get<std::string>();
      if (!e.at("likert").is_null()) s.likert = e.at("likert").get<int>();
      store.entries_[{e.at("instance_id").get<std::string>(),
                      e.at("annotator_id").get<std::string>()}] = s;
    }
    return store;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed annotation snapshot: ") + e.what());
  }
}

bool AnnotationStore::operator==(const AnnotationStore& other) const {
  return serialize() == other.serialize();
}

Annotator stored_annotator(const AnnotationStore& store,
                           const std::vector<const SyntheticInstance*>& instances,
                           const OracleConfig& oracle) {
  std::map<std::string, StoredAnnotation> records;
  for (const auto* inst : instances) {
    const auto verdicts = store.verdicts(inst->id);
    if (verdicts.empty()) continue;
    StoredAnnotation a;
    a.verdict = majority_vote(verdicts);
    std::int64_t newest = -1;
    for (const auto& [annotator_id, s] : store.annotations(inst->id)) {
      if (s.mask_rle && s.updated_at > newest) {
        newest = s.updated_at;
        a.mask = decode_rle(*s.mask_rle);
      }
    }
    records.emplace(inst->id, std::move(a));
  }
  return Annotator::stored_human(std::move(records), oracle);
}

AnnotationLog::AnnotationLog(std::filesystem::path directory, std::size_t snapshot_every)
    : log_path_(directory / "annotations.ndjson"),
      snapshot_path_(directory / "snapshot.json"),
      snapshot_every_(snapshot_every) {
  std::filesystem::create_directories(directory);
  out_.open(log_path_, std::ios::app | std::ios::binary);
  if (!out_) throw Error("cannot open annotation log " + log_path_.string());
}

std::vector<AnnotationRecord> AnnotationLog::read_records(std::size_t skip) const {
  std::vector<AnnotationRecord> records;
  if (!std::filesystem::exists(log_path_)) return records;
  std::istringstream in(read_text(log_path_));
  std::string line;
  std::size_t index = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (index++ < skip) continue;
    records.push_back(record_from_json(line));
  }
  return records;
}

AnnotationStore AnnotationLog::recover() const {
  AnnotationStore store;
  if (std::filesystem::exists(snapshot_path_)) {
    store = AnnotationStore::deserialize(read_text(snapshot_path_));
  }
  for (const auto& r : read_records(store.record_count())) store.apply(r);
  return store;
}

AnnotationStore AnnotationLog::replay_from_empty() const {
  AnnotationStore store;
  for (const auto& r : read_records(0)) store.apply(r);
  return store;
}

void AnnotationLog::append(const AnnotationRecord& record) {
  out_ << to_json_line(record) << '\n';
  out_.flush();
  if (!out_) throw Error("annotation log write failed");
}

void AnnotationLog::maybe_snapshot(const AnnotationStore& store) {
  if (snapshot_every_ > 0 && store.record_count() % snapshot_every_ == 0) {
    const auto tmp = snapshot_path_.string() + ".tmp";
    write_text(tmp, store.serialize());
    std::filesystem::rename(tmp, snapshot_path_);
  }
}

}  // namespace gradia::service
