#include "callisto/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <thread>
#include <unordered_map>

#include "callisto/error.hpp"
#include "callisto/rng.hpp"

namespace callisto {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

bool parse_bool(const std::string& v) {
  if (v == "1" || v == "true" || v == "on" || v == "yes") return true;
  if (v == "0" || v == "false" || v == "off" || v == "no") return false;
  throw BenchError(kExitConfig, "not a boolean: " + v);
}

template <typename T>
T parse_num(const std::string& v) {
  try {
    if constexpr (std::is_floating_point_v<T>) {
      return static_cast<T>(std::stod(v));
    } else {
      return static_cast<T>(std::stoull(v));
    }
  } catch (const std::exception&) {
    throw BenchError(kExitConfig, "not a number: " + v);
  }
}

}  // namespace

void BenchConfig::set(const std::string& key, const std::string& value) {
  if (key == "index.k") index_k = parse_num<uint32_t>(value);
  else if (key == "index.nprobe") index_nprobe = parse_num<uint32_t>(value);
  else if (key == "index.seed") index_seed = parse_num<uint64_t>(value);
  else if (key == "index.metric") index_metric = value;
  else if (key == "cache.capacity") cache_capacity = parse_num<size_t>(value);
  else if (key == "cache.policy") cache_policy = value;
  else if (key == "cache.byte_budget") cache_byte_budget = parse_num<uint64_t>(value);
  else if (key == "cache.wlru_window_s") cache_wlru_window_s = parse_num<double>(value);
  else if (key == "cache.wlru_top_n") cache_wlru_top_n = parse_num<uint32_t>(value);
  else if (key == "grouping.theta") grouping_theta = parse_num<double>(value);
  else if (key == "grouping.buffer_window_s") grouping_buffer_window_s = parse_num<double>(value);
  else if (key == "loader.threads") loader_threads = parse_num<uint32_t>(value);
  else if (key == "loader.direct_io") loader_direct_io = parse_bool(value);
  else if (key == "scheduler.mode") scheduler_mode = value;
  else if (key == "prefetch.enabled") prefetch_enabled = parse_bool(value);
  else if (key == "prefetch.trigger") prefetch_trigger = value;
  else if (key == "prefetch.timeout_s") prefetch_timeout_s = parse_num<double>(value);
  else if (key == "prefetch.baseline") prefetch_baseline = value;
  else if (key == "prefetch.baseline_degree") prefetch_baseline_degree = parse_num<uint32_t>(value);
  else if (key == "prefetch.baseline_period_s") prefetch_baseline_period_s = parse_num<double>(value);
  else if (key == "engine.search_threads") engine_search_threads = parse_num<uint32_t>(value);
  else if (key == "replay.mode") replay_mode = value;
  else if (key == "replay.throughput_bytes_per_s") replay_throughput_bytes_per_s = parse_num<double>(value);
  else if (key == "replay.file_overhead_s") replay_file_overhead_s = parse_num<double>(value);
  else if (key == "run.warmup_s") run_warmup_s = parse_num<double>(value);
  else if (key == "run.seed") run_seed = parse_num<uint64_t>(value);
  else if (key == "run.topk") run_topk = parse_num<uint32_t>(value);
  else if (key == "run.output_dir") run_output_dir = value;
  else if (key == "run.label") run_label = value;
  else if (key == "workload.corpus_n") workload_corpus_n = parse_num<uint64_t>(value);
  else if (key == "workload.dim") workload_dim = parse_num<uint32_t>(value);
  else if (key == "workload.topics") workload_topics = parse_num<uint32_t>(value);
  else if (key == "workload.spread") workload_spread = parse_num<double>(value);
  else if (key == "workload.corpus_seed") workload_corpus_seed = parse_num<uint64_t>(value);
  else if (key == "workload.repeat_prob") workload_repeat_prob = parse_num<double>(value);
  else if (key == "workload.noise") workload_noise = parse_num<double>(value);
  else if (key == "workload.topic_skew") workload_topic_skew = parse_num<double>(value);
  else if (key == "workload.query_topic_skew") workload_query_topic_skew = parse_num<double>(value);
  else if (key == "workload.query_seed") workload_query_seed = parse_num<uint64_t>(value);
  else if (key == "traffic.base_rate") traffic_base_rate = parse_num<double>(value);
  else if (key == "traffic.burst_probability") traffic_burst_probability = parse_num<double>(value);
  else if (key == "traffic.burst_multiplier") traffic_burst_multiplier = parse_num<double>(value);
  else if (key == "traffic.interval_s") traffic_interval_s = parse_num<double>(value);
  else if (key == "traffic.weibull_shape") traffic_weibull_shape = parse_num<double>(value);
  else if (key == "traffic.duration_s") traffic_duration_s = parse_num<double>(value);
  else if (key == "traffic.burst_min_s") traffic_burst_min_s = parse_num<double>(value);
  else if (key == "traffic.burst_max_s") traffic_burst_max_s = parse_num<double>(value);
  else if (key == "traffic.seed") traffic_seed = parse_num<uint64_t>(value);
  else if (key == "paths.corpus") paths_corpus = value;
  else if (key == "paths.index_dir") paths_index_dir = value;
  else if (key == "paths.trace_dir") paths_trace_dir = value;
  else throw BenchError(kExitConfig, "unknown config key: " + key);
}

BenchConfig BenchConfig::from_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in)
    throw BenchError(kExitConfig, "cannot open config: " + path.string());
  BenchConfig config;
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      throw BenchError(kExitConfig, path.string() + ":" +
                                        std::to_string(lineno) +
                                        ": expected key=value");
    config.set(trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
  }
  return config;
}

void BenchConfig::apply_override(const std::string& key_value) {
  const auto eq = key_value.find('=');
  if (eq == std::string::npos)
    throw BenchError(kExitConfig, "override must be key=value: " + key_value);
  set(trim(key_value.substr(0, eq)), trim(key_value.substr(eq + 1)));
}

void BenchConfig::validate() const {
  if (index_k == 0) throw BenchError(kExitConfig, "index.k must be positive");
  if (index_nprobe == 0 || index_nprobe > index_k)
    throw BenchError(kExitConfig, "index.nprobe must be in [1, index.k]");
  if (index_metric != "l2" && index_metric != "ip")
    throw BenchError(kExitConfig, "index.metric must be l2 or ip");
  if (cache_policy != "lru" && cache_policy != "clru" &&
      cache_policy != "wlru" && cache_policy != "fifo")
    throw BenchError(kExitConfig, "unknown cache.policy: " + cache_policy);
  if (cache_capacity == 0)
    throw BenchError(kExitConfig, "cache.capacity must be positive");
  if (cache_wlru_top_n > cache_capacity)
    throw BenchError(kExitConfig, "cache.wlru_top_n exceeds capacity");
  if (grouping_theta < 0.0 || grouping_theta > 1.0)
    throw BenchError(kExitConfig, "grouping.theta must be in [0,1]");
  if (scheduler_mode != "call" && scheduler_mode != "baseline_fifo_order")
    throw BenchError(kExitConfig, "unknown scheduler.mode: " + scheduler_mode);
  if (prefetch_trigger != "dispatch" && prefetch_trigger != "completion")
    throw BenchError(kExitConfig,
                     "unknown prefetch.trigger: " + prefetch_trigger);
  if (prefetch_baseline != "none" && prefetch_baseline != "clru_cost" &&
      prefetch_baseline != "wlru_freq")
    throw BenchError(kExitConfig,
                     "unknown prefetch.baseline: " + prefetch_baseline);
  if (replay_mode != "virtual" && replay_mode != "real")
    throw BenchError(kExitConfig, "unknown replay.mode: " + replay_mode);
  if (loader_threads == 0)
    throw BenchError(kExitConfig, "loader.threads must be positive");
  if (run_topk == 0) throw BenchError(kExitConfig, "run.topk must be positive");
}

EngineConfig BenchConfig::engine_config() const {
  EngineConfig e;
  e.theta = grouping_theta;
  e.scheduler = scheduler_mode == "call" ? SchedulerMode::call
                                         : SchedulerMode::baseline_fifo_order;
  e.metric = index_metric == "l2" ? Metric::squared_l2 : Metric::inner_product;
  e.cache_capacity = cache_capacity;
  e.cache_byte_budget = cache_byte_budget;
  if (cache_policy == "lru") e.cache_policy.kind = EvictionPolicy::lru;
  else if (cache_policy == "clru") e.cache_policy.kind = EvictionPolicy::clru;
  else if (cache_policy == "wlru") e.cache_policy.kind = EvictionPolicy::wlru;
  else e.cache_policy.kind = EvictionPolicy::fifo;
  e.cache_policy.window_length_s = cache_wlru_window_s;
  e.cache_policy.window_top_n = cache_wlru_top_n;
  e.loader_threads = loader_threads;
  e.direct_io = loader_direct_io;
  e.prefetch_enabled = prefetch_enabled;
  e.prefetch_trigger = prefetch_trigger == "dispatch"
                           ? PrefetchTrigger::dispatch
                           : PrefetchTrigger::completion;
  e.prefetch_timeout_s = prefetch_timeout_s;
  if (prefetch_baseline == "none")
    e.baseline_prefetch = BaselinePrefetchMode::none;
  else if (prefetch_baseline == "clru_cost")
    e.baseline_prefetch = BaselinePrefetchMode::cost;
  else
    e.baseline_prefetch = BaselinePrefetchMode::window_frequency;
  e.baseline_prefetch_degree = prefetch_baseline_degree;
  e.baseline_prefetch_period_s = prefetch_baseline_period_s;
  e.io_mode = replay_mode == "virtual" ? IoMode::virtual_time
                                       : IoMode::real_time;
  e.virtual_io.throughput_bytes_per_s = replay_throughput_bytes_per_s;
  e.virtual_io.file_overhead_s = replay_file_overhead_s;
  e.search_threads = engine_search_threads;
  return e;
}

CorpusParams BenchConfig::corpus_params() const {
  return CorpusParams{workload_corpus_n, workload_dim,
                      workload_topics,   workload_spread,
                      workload_corpus_seed, workload_topic_skew};
}

OverlapProfile BenchConfig::overlap_profile() const {
  return OverlapProfile{workload_repeat_prob, workload_noise,
                        workload_query_topic_skew};
}

TrafficConfig BenchConfig::traffic_config() const {
  TrafficConfig t;
  t.base_rate_qps = traffic_base_rate;
  t.burst_probability = traffic_burst_probability;
  t.burst_multiplier = traffic_burst_multiplier;
  t.interval_s = traffic_interval_s;
  t.weibull_shape = traffic_weibull_shape;
  t.duration_s = traffic_duration_s;
  t.burst_min_s = traffic_burst_min_s;
  t.burst_max_s = traffic_burst_max_s;
  t.seed = traffic_seed;
  return t;
}

nlohmann::json BenchConfig::to_json() const {
  return nlohmann::json{
      {"index",
       {{"k", index_k}, {"nprobe", index_nprobe}, {"seed", index_seed},
        {"metric", index_metric}}},
      {"cache",
       {{"capacity", cache_capacity}, {"policy", cache_policy},
        {"byte_budget", cache_byte_budget},
        {"wlru_window_s", cache_wlru_window_s},
        {"wlru_top_n", cache_wlru_top_n}}},
      {"grouping",
       {{"theta", grouping_theta},
        {"buffer_window_s", grouping_buffer_window_s}}},
      {"loader",
       {{"threads", loader_threads}, {"direct_io", loader_direct_io}}},
      {"scheduler", scheduler_mode},
      {"prefetch",
       {{"enabled", prefetch_enabled}, {"trigger", prefetch_trigger},
        {"timeout_s", prefetch_timeout_s}, {"baseline", prefetch_baseline},
        {"baseline_degree", prefetch_baseline_degree},
        {"baseline_period_s", prefetch_baseline_period_s}}},
      {"engine", {{"search_threads", engine_search_threads}}},
      {"replay",
       {{"mode", replay_mode},
        {"throughput_bytes_per_s", replay_throughput_bytes_per_s},
        {"file_overhead_s", replay_file_overhead_s}}},
      {"run",
       {{"warmup_s", run_warmup_s}, {"seed", run_seed}, {"topk", run_topk},
        {"output_dir", run_output_dir}, {"label", run_label}}},
      {"workload",
       {{"corpus_n", workload_corpus_n}, {"dim", workload_dim},
        {"topics", workload_topics}, {"spread", workload_spread},
        {"corpus_seed", workload_corpus_seed},
        {"repeat_prob", workload_repeat_prob}, {"noise", workload_noise},
        {"topic_skew", workload_topic_skew},
        {"query_topic_skew", workload_query_topic_skew},
        {"query_seed", workload_query_seed}}},
      {"traffic",
       {{"base_rate", traffic_base_rate},
        {"burst_probability", traffic_burst_probability},
        {"burst_multiplier", traffic_burst_multiplier},
        {"interval_s", traffic_interval_s},
        {"weibull_shape", traffic_weibull_shape},
        {"duration_s", traffic_duration_s},
        {"burst_min_s", traffic_burst_min_s},
        {"burst_max_s", traffic_burst_max_s}, {"seed", traffic_seed}}},
      {"paths",
       {{"corpus", paths_corpus}, {"index_dir", paths_index_dir},
        {"trace_dir", paths_trace_dir}}}};
}

double percentile_nearest_rank(std::vector<double> values, double pct) {
  if (values.empty()) return 0.0;
  if (pct <= 0.0 || pct > 100.0)
    throw std::invalid_argument("percentile must be in (0, 100]");
  std::sort(values.begin(), values.end());
  const size_t rank = static_cast<size_t>(
      std::ceil(pct / 100.0 * static_cast<double>(values.size())));
  return values[std::max<size_t>(rank, 1) - 1];
}

nlohmann::json RunAggregates::to_json() const {
  return nlohmann::json{
      {"queries", queries},
      {"post_warmup_queries", post_warmup_queries},
      {"avg_hit_ratio", avg_hit_ratio},
      {"overall_hit_ratio", overall_hit_ratio},
      {"search_latency_s",
       {{"p50", p50}, {"p95", p95}, {"p99", p99}, {"p100", p100}}},
      {"total_latency_p99_s", total_p99},
      {"cumulative_bytes_read", cumulative_bytes},
      {"head_hit_rate", head_hit_rate},
      {"batches", batches},
      {"grouping_total_s", grouping_total_s},
      {"grouping_mean_s", grouping_mean_s}};
}

namespace {

RunAggregates aggregate_rows(const std::vector<RecordRow>& rows,
                             double warmup_s,
                             const std::vector<BatchMetrics>& batches) {
  RunAggregates agg;
  agg.queries = rows.size();
  std::vector<double> latency;
  std::vector<double> total_latency;
  uint64_t hits = 0, lookups = 0;
  double ratio_sum = 0.0;
  size_t heads = 0, head_hits = 0;
  for (const auto& row : rows) {
    if (row.arrival_time < warmup_s) continue;
    ++agg.post_warmup_queries;
    latency.push_back(row.metrics.search_latency);
    total_latency.push_back(row.total_latency);
    hits += row.metrics.hit_count;
    lookups += row.metrics.hit_count + row.metrics.miss_count;
    const uint32_t ids = row.metrics.hit_count + row.metrics.miss_count;
    ratio_sum += ids == 0 ? 1.0
                          : static_cast<double>(row.metrics.hit_count) / ids;
    agg.cumulative_bytes += row.metrics.bytes_read;
    if (row.metrics.group_head) {
      ++heads;
      if (row.metrics.miss_count == 0) ++head_hits;
    }
  }
  if (agg.post_warmup_queries > 0) {
    agg.avg_hit_ratio = ratio_sum / static_cast<double>(agg.post_warmup_queries);
    agg.overall_hit_ratio =
        lookups == 0 ? 0.0 : static_cast<double>(hits) / lookups;
    agg.p50 = percentile_nearest_rank(latency, 50.0);
    agg.p95 = percentile_nearest_rank(latency, 95.0);
    agg.p99 = percentile_nearest_rank(latency, 99.0);
    agg.p100 = percentile_nearest_rank(latency, 100.0);
    agg.total_p99 = percentile_nearest_rank(total_latency, 99.0);
  }
  agg.head_hit_rate =
      heads == 0 ? 0.0 : static_cast<double>(head_hits) / heads;
  agg.batches = batches.size();
  for (const auto& b : batches) agg.grouping_total_s += b.grouping_seconds;
  agg.grouping_mean_s = batches.empty()
                            ? 0.0
                            : agg.grouping_total_s / batches.size();
  return agg;
}

}  // namespace

RunOutput replay_trace(SearchEngine& engine, const WorkloadTrace& trace,
                       const BenchConfig& config) {
  const bool is_virtual = config.replay_mode == "virtual";
  const double window = config.grouping_buffer_window_s;

  RunOutput out;
  std::vector<MetricsRecord> batch_records;
  engine.set_metrics_sink(
      [&](const MetricsRecord& m) { batch_records.push_back(m); });

  std::unordered_map<uint64_t, double> arrival_of;
  arrival_of.reserve(trace.events.size());
  for (const auto& e : trace.events) arrival_of[e.query_id] = e.arrival_time;

  const auto wall_start = std::chrono::steady_clock::now();
  size_t i = 0;
  double free_at = 0.0;
  while (i < trace.events.size()) {
    const double open = std::max(free_at, trace.events[i].arrival_time);
    const double close = open + window;
    size_t j = i;
    std::vector<SearchRequest> requests;
    while (j < trace.events.size() && trace.events[j].arrival_time <= close) {
      const auto& e = trace.events[j];
      SearchRequest r;
      r.query_id = e.query_id;
      const auto row = trace.queries.row(e.query_id);
      r.embedding.assign(row.begin(), row.end());
      r.k = config.run_topk;
      r.nprobe = config.index_nprobe;
      requests.push_back(std::move(r));
      ++j;
    }

    double batch_duration = 0.0;
    if (is_virtual) {
      engine.set_virtual_time(close);
      batch_records.clear();
      engine.submit_batch(requests);
      batch_duration = engine.virtual_time() - close;
    } else {
      // Pace the replay: batches execute when their buffer window closes.
      const auto target = wall_start + std::chrono::duration_cast<
                                           std::chrono::steady_clock::duration>(
                                           std::chrono::duration<double>(close));
      std::this_thread::sleep_until(target);
      batch_records.clear();
      const auto t0 = std::chrono::steady_clock::now();
      engine.submit_batch(requests);
      batch_duration =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
              .count();
    }

    for (const auto& m : batch_records) {
      RecordRow row;
      row.metrics = m;
      row.arrival_time = arrival_of[m.query_id];
      const double queue_wait = m.dispatch_time - row.arrival_time;
      row.total_latency = std::max(0.0, queue_wait) + m.timing.end_to_end;
      out.records.push_back(std::move(row));
    }

    free_at = close + batch_duration;
    i = j;
  }
  engine.set_metrics_sink(nullptr);

  out.aggregates =
      aggregate_rows(out.records, config.run_warmup_s, engine.batch_metrics());

  nlohmann::json per_thread = nlohmann::json::array();
  const auto totals = engine.per_thread_load();
  for (size_t t = 0; t < totals.size(); ++t)
    per_thread.push_back({{"thread", t},
                          {"busy_s", totals[t].busy_s},
                          {"bytes", totals[t].bytes}});
  const auto pstats = engine.prefetch_stats();
  out.report = nlohmann::json{
      {"label", config.run_label.empty() ? config.scheduler_mode
                                         : config.run_label},
      {"assumptions",
       {"weibull shape defaults to 1.0 (exponential inter-arrivals)",
        "burst duration drawn uniform from [traffic.burst_min_s, "
        "traffic.burst_max_s]",
        "virtual-time latency models I/O only; compute stages are zero-cost",
        "normalized comparisons use the baseline_fifo_order scheduler at "
        "equal traffic as the base"}},
      {"config", config.to_json()},
      {"aggregates", out.aggregates.to_json()},
      {"prefetch",
       {{"issued", pstats.issued}, {"completed", pstats.completed},
        {"failed", pstats.failed}, {"awaits", pstats.awaits},
        {"await_timeouts", pstats.await_timeouts}}},
      {"per_thread_load", per_thread}};
  return out;
}

namespace {

nlohmann::json record_to_json(const RecordRow& row) {
  const auto& m = row.metrics;
  nlohmann::json j{{"query_id", m.query_id},
                   {"batch", m.batch_id},
                   {"group", m.group_id},
                   {"head", m.group_head},
                   {"t", row.arrival_time},
                   {"hits", m.hit_count},
                   {"misses", m.miss_count},
                   {"bytes", m.bytes_read},
                   {"plan", m.load_plan},
                   {"await_s", m.timing.await},
                   {"lookup_s", m.timing.cache_lookup},
                   {"load_s", m.timing.load},
                   {"build_s", m.timing.index_build},
                   {"search_s", m.timing.search},
                   {"search_latency_s", m.search_latency},
                   {"end_to_end_s", m.timing.end_to_end},
                   {"total_latency_s", row.total_latency}};
  if (m.error) j["error"] = *m.error;
  return j;
}

void write_run_outputs(const RunOutput& out,
                       const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);

  {
    std::ofstream f(dir / "report.json", std::ios::trunc);
    if (!f) throw BenchError(kExitRuntime, "cannot write report.json");
    f << out.report.dump(2) << "\n";
  }
  {
    std::ofstream f(dir / "records.jsonl", std::ios::trunc);
    if (!f) throw BenchError(kExitRuntime, "cannot write records.jsonl");
    for (const auto& row : out.records) f << record_to_json(row).dump() << "\n";
  }
  {
    std::ofstream f(dir / "timeseries.csv", std::ios::trunc);
    if (!f) throw BenchError(kExitRuntime, "cannot write timeseries.csv");
    f << "query_index,t,hit_ratio,cumulative_bytes,search_latency_s\n";
    uint64_t cum_bytes = 0;
    for (size_t idx = 0; idx < out.records.size(); ++idx) {
      const auto& row = out.records[idx];
      const uint32_t ids = row.metrics.hit_count + row.metrics.miss_count;
      const double ratio =
          ids == 0 ? 1.0 : static_cast<double>(row.metrics.hit_count) / ids;
      cum_bytes += row.metrics.bytes_read;
      f << idx << "," << row.arrival_time << "," << ratio << "," << cum_bytes
        << "," << row.metrics.search_latency << "\n";
    }
  }
}

SearchEngine open_engine(const BenchConfig& config) {
  if (config.paths_index_dir.empty())
    throw BenchError(kExitConfig, "paths.index_dir is required");
  if (!std::filesystem::exists(
          std::filesystem::path(config.paths_index_dir) / kManifestFileName))
    throw BenchError(kExitData, "index not found: " + config.paths_index_dir);
  try {
    return SearchEngine(config.paths_index_dir, config.engine_config());
  } catch (const IoError& e) {
    throw BenchError(kExitData, e.what());
  }
}

WorkloadTrace open_trace(const BenchConfig& config) {
  if (config.paths_trace_dir.empty())
    throw BenchError(kExitConfig, "paths.trace_dir is required");
  try {
    return read_trace(config.paths_trace_dir);
  } catch (const IoError& e) {
    throw BenchError(kExitData, e.what());
  }
}

}  // namespace

int cmd_gen(const BenchConfig& config) {
  config.validate();
  if (config.paths_corpus.empty() || config.paths_trace_dir.empty())
    throw BenchError(kExitConfig,
                     "gen needs paths.corpus and paths.trace_dir");
  const EmbeddingMatrix corpus = synth_corpus(config.corpus_params());
  write_embeddings(corpus, config.paths_corpus);

  const std::vector<double> arrivals = gen_traffic(config.traffic_config());
  WorkloadTrace trace;
  trace.queries = synth_queries(config.corpus_params(), arrivals.size(),
                                config.overlap_profile(),
                                config.workload_query_seed);
  trace.events.reserve(arrivals.size());
  for (size_t q = 0; q < arrivals.size(); ++q)
    trace.events.push_back({arrivals[q], q});
  write_trace(trace, config.paths_trace_dir);

  std::printf("gen: corpus %zu x %u -> %s, trace %zu queries -> %s\n",
              static_cast<size_t>(corpus.count()), corpus.dim,
              config.paths_corpus.c_str(), trace.events.size(),
              config.paths_trace_dir.c_str());
  return 0;
}

int cmd_build(const BenchConfig& config) {
  config.validate();
  if (config.paths_corpus.empty() || config.paths_index_dir.empty())
    throw BenchError(kExitConfig,
                     "build needs paths.corpus and paths.index_dir");
  EmbeddingMatrix corpus;
  try {
    corpus = read_embeddings(config.paths_corpus);
  } catch (const IoError& e) {
    throw BenchError(kExitData, e.what());
  }
  const auto centroids = train_kmeans(corpus, config.index_k,
                                      config.index_seed);
  const auto assignments = assign_vectors(corpus, centroids);
  const auto manifest =
      write_index(corpus, assignments, centroids, config.paths_index_dir);
  std::printf("build: %zu vectors into %u clusters -> %s\n",
              static_cast<size_t>(corpus.count()), manifest.k,
              config.paths_index_dir.c_str());
  return 0;
}

int cmd_run(const BenchConfig& config) {
  config.validate();
  SearchEngine engine = open_engine(config);
  const WorkloadTrace trace = open_trace(config);
  const RunOutput out = replay_trace(engine, trace, config);
  write_run_outputs(out, config.run_output_dir);
  std::printf(
      "run[%s]: %zu queries, avg hit ratio %.4f, p99 %.6fs, bytes %llu\n",
      out.report["label"].get<std::string>().c_str(), out.records.size(),
      out.aggregates.avg_hit_ratio, out.aggregates.p99,
      static_cast<unsigned long long>(out.aggregates.cumulative_bytes));
  return 0;
}

int cmd_compare(const std::vector<BenchConfig>& configs,
                const std::filesystem::path& output_dir) {
  if (configs.empty())
    throw BenchError(kExitConfig, "compare needs at least one config");
  nlohmann::json combined = nlohmann::json::array();
  std::printf("%-24s %12s %12s %12s %14s %10s\n", "label", "avg_hit", "p99_s",
              "head_hit", "bytes", "queries");
  for (const auto& config : configs) {
    config.validate();
    SearchEngine engine = open_engine(config);
    const WorkloadTrace trace = open_trace(config);
    const RunOutput out = replay_trace(engine, trace, config);
    const std::string label = out.report["label"].get<std::string>();
    if (!config.run_output_dir.empty())
      write_run_outputs(out, std::filesystem::path(config.run_output_dir));
    combined.push_back({{"label", label},
                        {"aggregates", out.aggregates.to_json()},
                        {"config", config.to_json()}});
    std::printf("%-24s %12.4f %12.6f %12.4f %14llu %10zu\n", label.c_str(),
                out.aggregates.avg_hit_ratio, out.aggregates.p99,
                out.aggregates.head_hit_rate,
                static_cast<unsigned long long>(out.aggregates.cumulative_bytes),
                out.records.size());
  }
  std::error_code ec;
  std::filesystem::create_directories(output_dir, ec);
  std::ofstream f(output_dir / "comparison.json", std::ios::trunc);
  if (!f) throw BenchError(kExitRuntime, "cannot write comparison.json");
  f << combined.dump(2) << "\n";
  return 0;
}

std::vector<GroupTimeRow> measure_group_time(const BenchConfig& config,
                                             const std::vector<size_t>& sizes) {
  if (sizes.empty())
    throw BenchError(kExitConfig, "grouptime needs at least one batch size");
  const size_t max_n = *std::max_element(sizes.begin(), sizes.end());
  const uint32_t k = config.index_k;
  const uint32_t set_size = std::min(config.index_nprobe, k);

  // Synthetic probed cluster sets shaped like the workload: repeats of an
  // earlier query's set mixed with fresh random nprobe-subsets.
  Rng rng(config.run_seed);
  std::vector<std::vector<uint32_t>> sets(max_n);
  std::vector<uint32_t> pool(k);
  for (uint32_t c = 0; c < k; ++c) pool[c] = c;
  for (size_t q = 0; q < max_n; ++q) {
    if (q > 0 && rng.uniform() < config.workload_repeat_prob) {
      sets[q] = sets[rng.uniform_index(q)];
      continue;
    }
    for (uint32_t s = 0; s < set_size; ++s) {
      const size_t j = s + rng.uniform_index(k - s);
      std::swap(pool[s], pool[j]);
    }
    sets[q].assign(pool.begin(), pool.begin() + set_size);
    std::sort(sets[q].begin(), sets[q].end());
  }

  std::vector<QueryRecord> records(max_n);
  for (size_t q = 0; q < max_n; ++q) {
    records[q].query_id = q;
    records[q].arrival_time = static_cast<double>(q);
    records[q].cluster_set = sets[q];
    records[q].bitmap = ClusterBitmap(k, sets[q]);
  }

  std::vector<GroupTimeRow> rows;
  for (size_t n : sizes) {
    if (n > max_n) continue;
    const std::span<const QueryRecord> batch(records.data(), n);
    GroupTimeRow row;
    row.n_queries = n;

    auto t0 = std::chrono::steady_clock::now();
    const auto groups_bitmap =
        form_groups(batch, config.grouping_theta, SimilarityKernel::bitmap);
    row.bitmap_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
            .count();

    t0 = std::chrono::steady_clock::now();
    const auto groups_hash =
        form_groups(batch, config.grouping_theta, SimilarityKernel::hash_set);
    row.hash_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
            .count();

    row.groups = groups_bitmap.size();
    if (groups_bitmap.size() != groups_hash.size())
      throw BenchError(kExitRuntime,
                       "bitmap and hash kernels produced different groupings");
    for (size_t g = 0; g < groups_bitmap.size(); ++g)
      if (groups_bitmap[g].member_positions !=
          groups_hash[g].member_positions)
        throw BenchError(kExitRuntime,
                         "bitmap and hash kernels produced different groups");
    rows.push_back(row);
  }
  return rows;
}

int cmd_grouptime(const BenchConfig& config, const std::vector<size_t>& sizes) {
  config.validate();
  const auto rows = measure_group_time(config, sizes);
  std::printf("%10s %14s %14s %10s\n", "queries", "bitmap_s", "hash_s",
              "groups");
  nlohmann::json j = nlohmann::json::array();
  for (const auto& row : rows) {
    std::printf("%10zu %14.6f %14.6f %10zu\n", row.n_queries, row.bitmap_s,
                row.hash_s, row.groups);
    j.push_back({{"queries", row.n_queries},
                 {"bitmap_s", row.bitmap_s},
                 {"hash_s", row.hash_s},
                 {"groups", row.groups}});
  }
  std::error_code ec;
  std::filesystem::create_directories(config.run_output_dir, ec);
  std::ofstream f(std::filesystem::path(config.run_output_dir) /
                      "grouptime.json",
                  std::ios::trunc);
  if (f) f << j.dump(2) << "\n";
  return 0;
}

}  // namespace callisto
