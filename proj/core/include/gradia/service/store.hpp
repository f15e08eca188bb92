#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "gradia/reasonability.hpp"
#include "gradia/trainer.hpp"

namespace gradia::service {

// One annotator's submission for one instance. At least one of verdict,
// mask or likert is present.
struct AnnotationRecord {
  std::string instance_id;
  std::string annotator_id;
  std::optional<Verdict> verdict;
  std::optional<std::string> mask_rle;
  std::optional<int> likert;
  std::int64_t created_at = 0;
  std::uint64_t revision = 0;

  bool operator==(const AnnotationRecord&) const = default;
};

// Single-line JSON; the log holds one per line.
std::string to_json_line(const AnnotationRecord& record);
AnnotationRecord record_from_json(const std::string& line);

// The latest values per (instance, annotator); each field remembers the
// revision that set it.
struct AnnotationState {
  std::uint64_t revision = 0;
  std::optional<Verdict> verdict;
  std::optional<std::string> mask_rle;
  std::optional<int> likert;
  std::int64_t updated_at = 0;
};

using AnnotationKey = std::pair<std::string, std::string>;  // instance, annotator

class AnnotationStore {
 public:
  // Validates the record and requires revision = previous + 1 for its key.
  void apply(const AnnotationRecord& record);
  // Next revision for (instance, annotator).
  std::uint64_t next_revision(const std::string& instance_id,
                              const std::string& annotator_id) const;

  const std::map<AnnotationKey, AnnotationState>& entries() const { return entries_; }
  std::size_t record_count() const { return record_count_; }

  // Latest verdict of every annotator for one instance, ordered by annotator.
  std::vector<Verdict> verdicts(const std::string& instance_id) const;
  std::vector<std::pair<std::string, AnnotationState>> annotations(
      const std::string& instance_id) const;
  bool has_verdict(const std::string& instance_id) const;

  // Canonical JSON of the full state; equal stores serialize identically.
  std::string serialize() const;
  static AnnotationStore deserialize(const std::string& text);

  bool operator==(const AnnotationStore&) const;

 private:
  std::map<AnnotationKey, AnnotationState> entries_;
  std::size_t record_count_ = 0;
};

// Throws InputError for empty ids, a record with no payload, or a rating
// outside 1..5.
void validate_record(const AnnotationRecord& record);

// Verdicts and masks reduced to one per instance: the majority verdict and
// the most recently updated mask. Instances without a verdict are left out.
Annotator stored_annotator(const AnnotationStore& store,
                           const std::vector<const SyntheticInstance*>& instances,
                           const OracleConfig& oracle);

// Append-only newline-delimited log with periodic snapshots.
class AnnotationLog {
 public:
  // Opens (creating) `directory`/annotations.ndjson.
  explicit AnnotationLog(std::filesystem::path directory, std::size_t snapshot_every = 100);

  // Replays snapshot plus the log tail into a store.
  AnnotationStore recover() const;
  // Replays the entire log from empty, ignoring snapshots.
  AnnotationStore replay_from_empty() const;

  // Writes and flushes one record line.
  void append(const AnnotationRecord& record);
  // Writes a snapshot when the store's record count hits the interval.
  void maybe_snapshot(const AnnotationStore& store);

  const std::filesystem::path& log_path() const { return log_path_; }
  const std::filesystem::path& snapshot_path() const { return snapshot_path_; }

 private:
  std::vector<AnnotationRecord> read_records(std::size_t skip) const;

  std::filesystem::path log_path_;
  std::filesystem::path snapshot_path_;
  std::size_t snapshot_every_;
  std::ofstream out_;
};

}  // namespace gradia::service
