#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "callisto/search_engine.hpp"
#include "callisto/workload.hpp"

namespace callisto {

/// Failure with a stable process exit code: 2 config, 3 data, 4 runtime.
class BenchError : public std::runtime_error {
 public:
  BenchError(int exit_code, const std::string& message)
      : std::runtime_error(message), exit_code_(exit_code) {}
  int exit_code() const { return exit_code_; }

 private:
  int exit_code_;
};

inline constexpr int kExitConfig = 2;
inline constexpr int kExitData = 3;
inline constexpr int kExitRuntime = 4;

/// Flat key=value configuration mirroring the engine, workload and run
/// parameters. Unknown keys are config errors.
struct BenchConfig {
  // index
  uint32_t index_k = 100;
  uint32_t index_nprobe = 30;
  uint64_t index_seed = 1;
  std::string index_metric = "l2";  // l2 | ip
  // cache
  size_t cache_capacity = 50;
  std::string cache_policy = "lru";  // lru | clru | wlru | fifo
  uint64_t cache_byte_budget = 0;
  double cache_wlru_window_s = 60.0;
  uint32_t cache_wlru_top_n = 10;
  // grouping
  double grouping_theta = 0.5;
  double grouping_buffer_window_s = 3.0;
  // loader
  uint32_t loader_threads = 8;
  bool loader_direct_io = false;
  // scheduler
  std::string scheduler_mode = "call";  // call | baseline_fifo_order
  // prefetch
  bool prefetch_enabled = true;
  std::string prefetch_trigger = "dispatch";  // dispatch | completion
  double prefetch_timeout_s = 5.0;
  std::string prefetch_baseline = "none";  // none | clru_cost | wlru_freq
  uint32_t prefetch_baseline_degree = 20;
  double prefetch_baseline_period_s = 60.0;
  // engine
  uint32_t engine_search_threads = 1;
  // replay
  std::string replay_mode = "virtual";  // virtual | real
  double replay_throughput_bytes_per_s = 2.0e8;
  double replay_file_overhead_s = 5.0e-4;
  // run
  double run_warmup_s = 60.0;
  uint64_t run_seed = 1;
  uint32_t run_topk = 10;
  std::string run_output_dir = "out";
  std::string run_label;
  // workload (gen)
  uint64_t workload_corpus_n = 10000;
  uint32_t workload_dim = 64;
  uint32_t workload_topics = 100;
  double workload_spread = 0.2;
  uint64_t workload_corpus_seed = 1;
  double workload_repeat_prob = 0.5;
  double workload_noise = 0.02;
  double workload_topic_skew = 1.0;
  double workload_query_topic_skew = 1.6;
  uint64_t workload_query_seed = 2;
  // traffic
  double traffic_base_rate = 100.0;
  double traffic_burst_probability = 0.1;
  double traffic_burst_multiplier = 3.0;
  double traffic_interval_s = 1.0;
  double traffic_weibull_shape = 1.0;
  double traffic_duration_s = 300.0;
  double traffic_burst_min_s = 1.0;
  double traffic_burst_max_s = 5.0;
  uint64_t traffic_seed = 3;
  // paths
  std::string paths_corpus;
  std::string paths_index_dir;
  std::string paths_trace_dir;

  static BenchConfig from_file(const std::filesystem::path& path);
  /// Applies one "key=value" override; throws BenchError(2) on bad keys.
  void apply_override(const std::string& key_value);
  void set(const std::string& key, const std::string& value);
  void validate() const;

  EngineConfig engine_config() const;
  CorpusParams corpus_params() const;
  OverlapProfile overlap_profile() const;
  TrafficConfig traffic_config() const;

  nlohmann::json to_json() const;
};

/// Nearest-rank percentile: value at index ceil(p/100 * n) of the sorted
/// population (1-based). p in (0, 100].
double percentile_nearest_rank(std::vector<double> values, double pct);

struct RecordRow {
  MetricsRecord metrics;
  double arrival_time = 0.0;
  double total_latency = 0.0;  // queue wait + end_to_end
};

struct RunAggregates {
  size_t queries = 0;
  size_t post_warmup_queries = 0;
  double avg_hit_ratio = 0.0;      // mean of per-query hit ratios
  double overall_hit_ratio = 0.0;  // hits / id lookups
  double p50 = 0.0, p95 = 0.0, p99 = 0.0, p100 = 0.0;  // search latency
  double total_p99 = 0.0;
  uint64_t cumulative_bytes = 0;
  double head_hit_rate = 0.0;  // group heads with zero demand misses
  size_t batches = 0;
  double grouping_total_s = 0.0;
  double grouping_mean_s = 0.0;

  nlohmann::json to_json() const;
};

struct RunOutput {
  std::vector<RecordRow> records;  // execution order
  RunAggregates aggregates;
  nlohmann::json report;
};

/// Replays a trace through the engine in buffered batches. The buffer
/// window closes at max(previous close + window, engine free time), so an
/// executing batch accumulates the next one. Virtual mode drives the
/// engine's virtual clock; real mode paces batches on the wall clock.
RunOutput replay_trace(SearchEngine& engine, const WorkloadTrace& trace,
                       const BenchConfig& config);

int cmd_gen(const BenchConfig& config);
int cmd_build(const BenchConfig& config);
int cmd_run(const BenchConfig& config);
int cmd_compare(const std::vector<BenchConfig>& configs,
                const std::filesystem::path& output_dir);

struct GroupTimeRow {
  size_t n_queries = 0;
  double bitmap_s = 0.0;
  double hash_s = 0.0;
  size_t groups = 0;
};
std::vector<GroupTimeRow> measure_group_time(const BenchConfig& config,
                                             const std::vector<size_t>& sizes);
int cmd_grouptime(const BenchConfig& config, const std::vector<size_t>& sizes);

}  // namespace callisto
