#pragma once

// In-memory store for respond-async aggregation jobs.

#include <chrono>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <string>

#include "memagg/engine.hpp"

namespace memagg::service {

enum class JobState { running, complete };

struct JobRecord {
  std::string job_id;
  std::chrono::steady_clock::time_point created_at;
  JobState state = JobState::running;
  engine::AggregationOutcome outcome_so_far;
  std::size_t resolved = 0;
  std::size_t total = 0;
  /// Serialization requested by the client: link, json or cdxj.
  std::string format;
};

class JobStore {
 public:
  using Clock = std::chrono::steady_clock;
  using Now = std::function<Clock::time_point()>;

  explicit JobStore(std::chrono::seconds ttl = std::chrono::seconds(300),
                    Now now = [] { return Clock::now(); });

  /// Registers a running job and returns its id.
  std::string create(std::string format, engine::AggregationOutcome initial, std::size_t total);
  /// Replaces the snapshot of a running job; completed jobs are left as is.
  void update(const std::string& id, const linkfmt::TimeMapDocument& snapshot,
              std::size_t resolved);
  void complete(const std::string& id, engine::AggregationOutcome outcome);

  /// Copy of the record, or nullopt when unknown or expired.
  std::optional<JobRecord> get(const std::string& id);
  std::size_t purge_expired();
  std::size_t size() const;
  std::chrono::seconds ttl() const noexcept { return ttl_; }

 private:
  bool expired(const JobRecord& job, Clock::time_point now) const;

  std::chrono::seconds ttl_;
  Now now_;
  mutable std::mutex mu_;
  std::map<std::string, JobRecord> jobs_;
};

}  // namespace memagg::service
