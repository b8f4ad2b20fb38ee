#pragma once

#include <condition_variable>
#include <cstdint>
#include <deque>
#include <functional>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "callisto/cluster_cache.hpp"
#include "callisto/vector_index.hpp"

namespace callisto {

struct MissingCluster {
  uint32_t cluster_id = 0;
  uint64_t byte_size = 0;
};

/// Work order for one parallel load: a flat order plus the same order cut
/// into chunks of `workers` entries. Worker w consumes order[w],
/// order[w+T], ... when the pool drains the queue in order.
struct LoadPlan {
  std::vector<uint32_t> order;
  std::vector<std::vector<uint32_t>> thread_groups;
  uint32_t workers = 1;
};

/// Size-descending greedy packing: sort missing clusters by byte size
/// (ties by ascending id), fill thread groups of `workers` entries each.
/// Large files land on distinct workers instead of queueing behind each
/// other on one.
LoadPlan plan_load(std::span<const MissingCluster> missing, uint32_t workers);

/// Arrival-order baseline: the queue order is the input order.
LoadPlan baseline_round_robin(std::span<const MissingCluster> missing,
                              uint32_t workers);

/// Disk cost model for virtual-time runs: fixed per-file overhead plus a
/// bytes / throughput transfer term.
struct VirtualIoModel {
  double throughput_bytes_per_s = 2.0e8;
  double file_overhead_s = 5.0e-4;

  double cost(uint64_t bytes) const {
    return file_overhead_s + static_cast<double>(bytes) / throughput_bytes_per_s;
  }
};

struct LoadTiming {
  struct PerThread {
    std::vector<uint32_t> cluster_ids;
    uint64_t bytes = 0;
    double seconds = 0.0;
  };
  std::vector<PerThread> threads;
  double makespan_s = 0.0;  // max over threads
};

/// Deterministic timing of a plan under the pool's dispatch rule: worker w
/// executes order[w], order[w+T], ... in sequence.
LoadTiming simulate_load_timing(const LoadPlan& plan,
                                const std::function<uint64_t(uint32_t)>& bytes_of,
                                const VirtualIoModel& model);

struct LoadOutcome {
  std::vector<std::shared_ptr<const ClusterData>> loaded;
  std::vector<std::pair<uint32_t, std::string>> failures;  // (id, reason)
  LoadTiming timing;
};

/// Pool of T workers reading cluster files and admitting them to the cache.
/// Demand loads enter at the queue head and block the caller; background
/// (prefetch) loads queue behind demand work and complete via callback.
class ClusterLoader {
 public:
  ClusterLoader(const ClusterManifest& manifest, ClusterCache& cache,
                uint32_t workers, bool direct_io = false);
  ~ClusterLoader();

  ClusterLoader(const ClusterLoader&) = delete;
  ClusterLoader& operator=(const ClusterLoader&) = delete;

  /// Blocking parallel load. Loaded clusters are admitted as they arrive
  /// (pinned when pin_entries), with the measured per-file read time fed to
  /// the cache as the cluster's load latency. Failed clusters are reported
  /// in the outcome; the rest complete.
  LoadOutcome load_demand(const LoadPlan& plan, bool pin_entries);

  /// Queued parallel load for the prefetcher: entries are admitted with the
  /// prefetched flag, callback fires once all tasks finished.
  void load_background(const LoadPlan& plan,
                       std::function<void(LoadOutcome)> done);

  /// Sequential load with modeled timing for virtual-time replay. Per-file
  /// load latency fed to the cache is the modeled cost, and the returned
  /// timing follows the pool dispatch rule, so results are machine
  /// independent.
  LoadOutcome load_virtual(const LoadPlan& plan, const VirtualIoModel& model,
                           bool pin_entries, bool prefetched);

  uint32_t workers() const { return workers_; }

 private:
  struct Request;
  struct Task {
    std::shared_ptr<Request> request;
    uint32_t cluster_id = 0;
    size_t slot = 0;  // position in the plan order
  };

  void worker_loop(uint32_t worker_index);
  void enqueue(const LoadPlan& plan, std::shared_ptr<Request> request,
               bool front);

  const ClusterManifest& manifest_;
  ClusterCache& cache_;
  const uint32_t workers_;
  const bool direct_io_;

  std::mutex queue_mutex_;
  std::condition_variable queue_cv_;
  std::deque<Task> queue_;
  bool stopping_ = false;
  std::vector<std::jthread> pool_;
};

}  // namespace callisto
