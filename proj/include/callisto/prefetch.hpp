#pragma once

#include <condition_variable>
#include <cstdint>
#include <deque>
#include <functional>
#include <mutex>
#include <optional>
#include <thread>
#include <vector>

#include "callisto/query_grouping.hpp"

namespace callisto {

enum class PrefetchTrigger { dispatch, completion };

struct PrefetchConfig {
  PrefetchTrigger trigger = PrefetchTrigger::dispatch;
  double await_timeout_s = 5.0;
  // Synchronous mode processes events inline on the caller thread; used by
  // virtual-time replay where asynchrony is simulated by the engine.
  bool synchronous = false;
};

struct PrefetchStats {
  uint64_t issued = 0;
  uint64_t completed = 0;
  uint64_t failed = 0;
  uint64_t awaits = 0;
  uint64_t await_timeouts = 0;
};

/// Executes one prefetch: load the given cluster ids (cache misses only)
/// and call done(ok). Wired by the engine to peek the cache, plan, and run
/// the loader with the prefetched flag.
using PrefetchLoadFn =
    std::function<void(const std::vector<uint32_t>& ids,
                       std::function<void(bool ok)> done)>;

/// Watches group execution and fires the load of the next group's head
/// clusters exactly once per group, at dispatch or completion of the
/// group's last member. Receives events over an ordered channel drained by
/// one background task (or inline in synchronous mode).
class Prefetcher {
 public:
  Prefetcher(PrefetchLoadFn load_fn, PrefetchConfig config);
  ~Prefetcher();

  Prefetcher(const Prefetcher&) = delete;
  Prefetcher& operator=(const Prefetcher&) = delete;

  /// Installs the group table for the next batch. Any stale completion from
  /// a previous batch is ignored via an epoch check.
  void begin_batch(const std::vector<QueryGroup>& groups);

  /// Throws ProtocolError when group_id is unknown to the current batch.
  void on_query_dispatch(uint64_t query_id, uint32_t group_id);
  void on_query_complete(uint64_t query_id, uint32_t group_id);

  /// Blocks until the prefetch covering group_id's head is complete or
  /// absent. Returns false when the configured timeout expired first; the
  /// caller then proceeds with demand loading.
  bool await_group_head(uint32_t group_id);

  PrefetchStats stats() const;

 private:
  enum class State { idle, in_flight, complete };
  struct Progress {
    size_t member_count = 0;
    size_t dispatched = 0;
    size_t completed = 0;
    std::optional<PrefetchMetadata> metadata;
    State state = State::idle;
  };
  struct Event {
    enum class Kind { dispatch, complete, load_done } kind;
    uint32_t group_id = 0;
    uint64_t epoch = 0;
    bool ok = true;
  };

  void post(Event event);
  void process(const Event& event);
  void event_loop();
  void fire_locked(uint32_t group_id, std::unique_lock<std::mutex>& lock);

  PrefetchLoadFn load_fn_;
  PrefetchConfig config_;

  mutable std::mutex mutex_;
  std::condition_variable state_cv_;
  std::vector<Progress> groups_;
  uint64_t epoch_ = 0;
  PrefetchStats stats_;

  std::mutex channel_mutex_;
  std::condition_variable channel_cv_;
  std::deque<Event> channel_;
  bool stopping_ = false;
  std::optional<std::jthread> event_thread_;
};

}  // namespace callisto
