#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "gradia/config.hpp"
#include "gradia/model.hpp"
#include "gradia/synthetic.hpp"

namespace gradia::service {

// Transport-neutral request: the HTTP adapter fills it from the socket,
// tests build it directly.
struct Request {
  std::string method;  // "GET" | "POST"
  std::string path;    // e.g. /api/instances/train-00001
  std::map<std::string, std::string> query;
  std::string body;
  std::string authorization;  // raw Authorization header value
};

struct Response {
  int status = 200;
  std::string body;  // JSON
};

struct ServiceOptions {
  // Where the annotation log, snapshots and job run directories live.
  std::filesystem::path state_dir;
  WorkbenchConfig config;
  std::size_t snapshot_every = 100;
  // Milliseconds since the epoch; injectable for deterministic tests.
  std::function<std::int64_t()> clock;
};

// Instances, predictions and attention overlays from the active model,
// annotation intake, the live Reasonability Matrix and fine-tuning jobs.
class AnnotationService {
 public:
  AnnotationService(std::vector<SyntheticInstance> dataset, Parameters params,
                    ServiceOptions options);
  ~AnnotationService();
  AnnotationService(const AnnotationService&) = delete;
  AnnotationService& operator=(const AnnotationService&) = delete;

  Response handle(const Request& request);

  // Serves HTTP until stop(). Returns false when the port cannot be bound.
  bool listen(const std::string& host, int port);
  // Binds an ephemeral port and serves on a background thread; returns the
  // port, or -1 on failure.
  int listen_background(const std::string& host);
  void stop();

  // Blocks until no job is queued or running.
  void wait_for_jobs();
  // Canonical serialization of the in-memory annotation store.
  std::string store_state() const;
  std::filesystem::path log_path() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace gradia::service
