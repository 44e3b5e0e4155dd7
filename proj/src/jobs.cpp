#include "memagg/jobs.hpp"

#include "memagg/trace.hpp"

namespace memagg::service {

JobStore::JobStore(std::chrono::seconds ttl, Now now) : ttl_(ttl), now_(std::move(now)) {}

bool JobStore::expired(const JobRecord& job, Clock::time_point now) const {
  return now - job.created_at >= ttl_;
}

std::string JobStore::create(std::string format, engine::AggregationOutcome initial,
                             std::size_t total) {
  std::lock_guard lock(mu_);
  std::string id;
  do {
    id = trace::random_hex128();
  } while (jobs_.count(id));
  jobs_.emplace(id, JobRecord{id, now_(), JobState::running, std::move(initial), 0, total,
                              std::move(format)});
  return id;
}

void JobStore::update(const std::string& id, const linkfmt::TimeMapDocument& snapshot,
                      std::size_t resolved) {
  std::lock_guard lock(mu_);
  auto it = jobs_.find(id);
  if (it == jobs_.end() || it->second.state == JobState::complete) return;
  it->second.outcome_so_far.document = snapshot;
  it->second.resolved = resolved;
}

void JobStore::complete(const std::string& id, engine::AggregationOutcome outcome) {
  std::lock_guard lock(mu_);
  auto it = jobs_.find(id);
  if (it == jobs_.end() || it->second.state == JobState::complete) return;
  it->second.resolved = it->second.total;
  it->second.outcome_so_far = std::move(outcome);
  it->second.state = JobState::complete;
}

std::optional<JobRecord> JobStore::get(const std::string& id) {
  std::lock_guard lock(mu_);
  auto it = jobs_.find(id);
  if (it == jobs_.end()) return std::nullopt;
  if (expired(it->second, now_())) {
    jobs_.erase(it);
    return std::nullopt;
  }
  return it->second;
}

std::size_t JobStore::purge_expired() {
  std::lock_guard lock(mu_);
  const auto now = now_();
  return std::erase_if(jobs_, [&](const auto& kv) { return expired(kv.second, now); });
}

std::size_t JobStore::size() const {
  std::lock_guard lock(mu_);
  return jobs_.size();
}

}  // namespace memagg::service
