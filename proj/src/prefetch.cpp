#include "callisto/prefetch.hpp"

#include <chrono>

#include "callisto/error.hpp"

namespace callisto {

Prefetcher::Prefetcher(PrefetchLoadFn load_fn, PrefetchConfig config)
    : load_fn_(std::move(load_fn)), config_(config) {
  if (!config_.synchronous)
    event_thread_.emplace([this] { event_loop(); });
}

Prefetcher::~Prefetcher() {
  if (event_thread_) {
    {
      std::lock_guard lock(channel_mutex_);
      stopping_ = true;
    }
    channel_cv_.notify_all();
  }
}

void Prefetcher::begin_batch(const std::vector<QueryGroup>& groups) {
  std::lock_guard lock(mutex_);
  ++epoch_;
  groups_.clear();
  groups_.resize(groups.size());
  for (size_t g = 0; g < groups.size(); ++g) {
    groups_[g].member_count = groups[g].members.size();
    groups_[g].metadata = groups[g].prefetch;
  }
}

void Prefetcher::post(Event event) {
  if (config_.synchronous) {
    process(event);
    return;
  }
  {
    std::lock_guard lock(channel_mutex_);
    channel_.push_back(event);
  }
  channel_cv_.notify_all();
}

void Prefetcher::event_loop() {
  for (;;) {
    Event ev;
    {
      std::unique_lock lock(channel_mutex_);
      channel_cv_.wait(lock, [this] { return stopping_ || !channel_.empty(); });
      if (channel_.empty()) return;  // stopping and drained
      ev = channel_.front();
      channel_.pop_front();
    }
    process(ev);
  }
}

// Fires the group's prefetch. Called with the state lock held; the load
// function runs unlocked so a synchronous loader cannot deadlock.
void Prefetcher::fire_locked(uint32_t group_id,
                             std::unique_lock<std::mutex>& lock) {
  Progress& p = groups_[group_id];
  p.state = State::in_flight;
  ++stats_.issued;
  const auto ids = p.metadata->next_head_clusters;
  const uint64_t epoch = epoch_;
  lock.unlock();
  load_fn_(ids, [this, group_id, epoch](bool ok) {
    post(Event{Event::Kind::load_done, group_id, epoch, ok});
  });
  lock.lock();
}

void Prefetcher::process(const Event& event) {
  std::unique_lock lock(mutex_);
  if (event.kind == Event::Kind::load_done) {
    if (event.epoch != epoch_ || event.group_id >= groups_.size()) return;
    Progress& p = groups_[event.group_id];
    p.state = State::complete;
    if (event.ok) {
      ++stats_.completed;
    } else {
      ++stats_.failed;
    }
    lock.unlock();
    state_cv_.notify_all();
    return;
  }

  if (event.epoch != epoch_ || event.group_id >= groups_.size())
    return;  // stale cross-batch event
  Progress& p = groups_[event.group_id];
  if (event.kind == Event::Kind::dispatch) {
    ++p.dispatched;
    if (config_.trigger == PrefetchTrigger::dispatch &&
        p.dispatched >= p.member_count && p.metadata &&
        p.state == State::idle) {
      fire_locked(event.group_id, lock);
    }
  } else {
    ++p.completed;
    if (config_.trigger == PrefetchTrigger::completion &&
        p.completed >= p.member_count && p.metadata &&
        p.state == State::idle) {
      fire_locked(event.group_id, lock);
    }
  }
}

void Prefetcher::on_query_dispatch(uint64_t query_id, uint32_t group_id) {
  (void)query_id;
  uint64_t epoch;
  {
    std::lock_guard lock(mutex_);
    if (group_id >= groups_.size())
      throw ProtocolError("dispatch event for unknown group");
    epoch = epoch_;
  }
  post(Event{Event::Kind::dispatch, group_id, epoch, true});
}

void Prefetcher::on_query_complete(uint64_t query_id, uint32_t group_id) {
  (void)query_id;
  uint64_t epoch;
  {
    std::lock_guard lock(mutex_);
    if (group_id >= groups_.size())
      throw ProtocolError("completion event for unknown group");
    epoch = epoch_;
  }
  post(Event{Event::Kind::complete, group_id, epoch, true});
}

bool Prefetcher::await_group_head(uint32_t group_id) {
  std::unique_lock lock(mutex_);
  if (group_id >= groups_.size())
    throw ProtocolError("await for unknown group");
  ++stats_.awaits;
  if (group_id == 0) return true;
  const size_t pred = group_id - 1;
  if (!groups_[pred].metadata) return true;

  const auto deadline = std::chrono::steady_clock::now() +
                        std::chrono::duration_cast<std::chrono::nanoseconds>(
                            std::chrono::duration<double>(
                                config_.await_timeout_s));
  const uint64_t epoch = epoch_;
  const bool done = state_cv_.wait_until(lock, deadline, [&] {
    return epoch_ != epoch || groups_[pred].state == State::complete;
  });
  if (!done) ++stats_.await_timeouts;
  return done;
}

PrefetchStats Prefetcher::stats() const {
  std::lock_guard lock(mutex_);
  return stats_;
}

}  // namespace callisto
