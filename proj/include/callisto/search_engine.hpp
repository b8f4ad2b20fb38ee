#pragma once

#include <array>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "callisto/cluster_cache.hpp"
#include "callisto/cluster_loader.hpp"
#include "callisto/prefetch.hpp"
#include "callisto/query_grouping.hpp"
#include "callisto/vector_index.hpp"

namespace callisto {

enum class SchedulerMode { call, baseline_fifo_order };
enum class IoMode { real_time, virtual_time };
enum class BaselinePrefetchMode { none, cost, window_frequency };

struct EngineConfig {
  double theta = 0.5;
  SchedulerMode scheduler = SchedulerMode::call;
  Metric metric = Metric::squared_l2;

  size_t cache_capacity = 50;
  uint64_t cache_byte_budget = 0;  // 0 = entries-only limit
  CachePolicy cache_policy{};

  uint32_t loader_threads = 8;
  bool direct_io = false;

  bool prefetch_enabled = true;
  PrefetchTrigger prefetch_trigger = PrefetchTrigger::dispatch;
  double prefetch_timeout_s = 5.0;

  // Periodic frequency/cost prefetch baselines (degree-n every period).
  BaselinePrefetchMode baseline_prefetch = BaselinePrefetchMode::none;
  uint32_t baseline_prefetch_degree = 20;
  double baseline_prefetch_period_s = 60.0;

  IoMode io_mode = IoMode::real_time;
  VirtualIoModel virtual_io{};

  // Search threads beyond the single dispatcher exist for the
  // thread/memory trade-off experiment; real-time mode only.
  uint32_t search_threads = 1;
};

struct SearchRequest {
  uint64_t query_id = 0;
  std::vector<float> embedding;
  uint32_t k = 10;
  uint32_t nprobe = 30;
};

struct StageTiming {
  double await = 0.0;
  double cache_lookup = 0.0;
  double load = 0.0;
  double index_build = 0.0;
  double search = 0.0;
  double end_to_end = 0.0;  // await + the four stages
};

struct SearchResult {
  uint64_t query_id = 0;
  // (vector_id, distance) ascending by distance, ties by lower id.
  std::vector<std::pair<uint64_t, float>> neighbors;
  StageTiming timing;
  std::vector<uint32_t> hit_ids;
  std::vector<uint32_t> miss_ids;
  std::optional<std::string> error;
};

/// Flat candidate pool built from the clusters a query probes.
struct PartialIndex {
  std::vector<uint32_t> member_clusters;
  std::vector<uint64_t> candidate_ids;
  EmbeddingMatrix candidates;
};

/// Exact top-k over the candidate pool, ties by lower vector id.
std::vector<std::pair<uint64_t, float>> topk_search(
    std::span<const float> query, const PartialIndex& partial, uint32_t k,
    Metric metric = Metric::squared_l2);

/// One line of records.jsonl: the logical outcome of one query plus stage
/// timings. Logical fields are seed-deterministic in virtual-time mode.
struct MetricsRecord {
  uint64_t query_id = 0;
  uint64_t batch_id = 0;
  int64_t group_id = -1;  // -1 when the batch was not grouped
  bool group_head = false;
  uint32_t hit_count = 0;
  uint32_t miss_count = 0;
  uint64_t bytes_read = 0;
  std::vector<uint32_t> load_plan;
  StageTiming timing;
  double search_latency = 0.0;  // cache_lookup + load + index_build + search
  double dispatch_time = 0.0;   // engine clock when the query was taken up
  std::optional<std::string> error;
};

struct BatchMetrics {
  uint64_t batch_id = 0;
  size_t batch_size = 0;
  size_t group_count = 0;
  double grouping_seconds = 0.0;
  std::vector<size_t> group_sizes;
  std::array<uint64_t, 10> similarity_histogram{};  // J in [i/10, (i+1)/10)
};

/// Batch pipeline: probe, group, reorder, per-query cache lookup, parallel
/// load of misses, partial-index build, exact top-k. One dispatcher thread
/// owns execution; the loader pool and the prefetcher run beside it and the
/// cache is the only shared mutable state.
class SearchEngine {
 public:
  SearchEngine(const std::filesystem::path& index_dir, EngineConfig config);

  /// Results in execution order (reordered under the call scheduler), each
  /// tagged with its original query id.
  std::vector<SearchResult> submit_batch(std::span<const SearchRequest> requests);

  void set_policy(const CachePolicy& policy);
  void set_scheduler(SchedulerMode mode);

  void set_metrics_sink(std::function<void(const MetricsRecord&)> sink);
  const std::vector<BatchMetrics>& batch_metrics() const { return batches_; }

  /// Virtual clock control for trace replay (virtual-time mode).
  void set_virtual_time(double now_s) { virtual_now_s_ = now_s; }
  double virtual_time() const { return virtual_now_s_; }
  /// Engine clock: virtual time, or seconds since construction.
  double now_s() const;

  ClusterCache& cache() { return cache_; }
  const ClusterManifest& manifest() const { return manifest_; }
  const CentroidIndex& centroids() const { return centroids_; }
  const EngineConfig& config() const { return config_; }
  PrefetchStats prefetch_stats() const { return prefetcher_->stats(); }

  struct ThreadLoadTotals {
    double busy_s = 0.0;
    uint64_t bytes = 0;
  };
  std::vector<ThreadLoadTotals> per_thread_load() const;

 private:
  struct ExecContext;
  SearchResult execute_one(const SearchRequest& request,
                           const QueryRecord& record, ExecContext& ctx,
                           uint32_t position);
  PrefetchLoadFn make_prefetch_load_fn();
  void maybe_periodic_prefetch();
  void accumulate_thread_load(const LoadTiming& timing);

  EngineConfig config_;
  CentroidIndex centroids_;
  ClusterManifest manifest_;
  ClusterCache cache_;
  ClusterLoader loader_;
  std::unique_ptr<Prefetcher> prefetcher_;

  std::chrono::steady_clock::time_point start_;
  double virtual_now_s_ = 0.0;
  uint64_t batch_counter_ = 0;
  double last_virtual_prefetch_s_ = 0.0;
  std::vector<double> prefetch_end_;  // per target group, virtual mode
  double next_periodic_prefetch_s_ = 0.0;

  std::mutex sink_mutex_;
  std::function<void(const MetricsRecord&)> sink_;
  std::vector<BatchMetrics> batches_;
  std::vector<ThreadLoadTotals> thread_load_;
};

}  // namespace callisto
