#include "callisto/search_engine.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <numeric>
#include <queue>
#include <thread>
#include <unordered_map>

#include "callisto/error.hpp"

namespace callisto {

namespace {

double elapsed_s(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
      .count();
}

}  // namespace

std::vector<std::pair<uint64_t, float>> topk_search(
    std::span<const float> query, const PartialIndex& partial, uint32_t k,
    Metric metric) {
  if (k == 0) throw std::invalid_argument("k must be positive");
  // Max-heap of the k best (distance, id) pairs; lexicographic pair order
  // gives the tie-break by lower id for free.
  std::priority_queue<std::pair<float, uint64_t>> heap;
  const size_t n = partial.candidate_ids.size();
  for (size_t i = 0; i < n; ++i) {
    const float d = distance(query, partial.candidates.row(i), metric);
    const std::pair<float, uint64_t> cand{d, partial.candidate_ids[i]};
    if (heap.size() < k) {
      heap.push(cand);
    } else if (cand < heap.top()) {
      heap.pop();
      heap.push(cand);
    }
  }
  std::vector<std::pair<uint64_t, float>> out(heap.size());
  for (size_t i = heap.size(); i-- > 0;) {
    out[i] = {heap.top().second, heap.top().first};
    heap.pop();
  }
  return out;
}

SearchEngine::SearchEngine(const std::filesystem::path& index_dir,
                           EngineConfig config)
    : config_(config),
      centroids_(load_centroids(index_dir)),
      manifest_(load_manifest(index_dir)),
      cache_(config.cache_capacity, config.cache_policy,
             config.cache_byte_budget),
      loader_(manifest_, cache_, config.loader_threads, config.direct_io),
      start_(std::chrono::steady_clock::now()),
      next_periodic_prefetch_s_(config.baseline_prefetch_period_s),
      thread_load_(config.loader_threads == 0 ? 1 : config.loader_threads) {
  PrefetchConfig pc;
  pc.trigger = config_.prefetch_trigger;
  pc.await_timeout_s = config_.prefetch_timeout_s;
  pc.synchronous = config_.io_mode == IoMode::virtual_time;
  prefetcher_ = std::make_unique<Prefetcher>(make_prefetch_load_fn(), pc);
}

double SearchEngine::now_s() const {
  if (config_.io_mode == IoMode::virtual_time) return virtual_now_s_;
  return std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                       start_)
      .count();
}

PrefetchLoadFn SearchEngine::make_prefetch_load_fn() {
  return [this](const std::vector<uint32_t>& ids,
                std::function<void(bool)> done) {
    const auto missing = cache_.peek_missing(ids);
    if (missing.empty()) {
      last_virtual_prefetch_s_ = 0.0;
      done(true);
      return;
    }
    std::vector<MissingCluster> work;
    work.reserve(missing.size());
    for (uint32_t id : missing)
      work.push_back({id, manifest_.byte_size(id)});
    const LoadPlan plan = plan_load(work, loader_.workers());

    if (config_.io_mode == IoMode::virtual_time) {
      const LoadOutcome out =
          loader_.load_virtual(plan, config_.virtual_io, /*pin=*/false,
                               /*prefetched=*/true);
      last_virtual_prefetch_s_ = out.timing.makespan_s;
      accumulate_thread_load(out.timing);
      for (const auto& [id, why] : out.failures)
        std::fprintf(stderr, "warning: prefetch of cluster %u failed: %s\n",
                     id, why.c_str());
      done(out.failures.empty());
    } else {
      loader_.load_background(plan, [this, done](LoadOutcome out) {
        accumulate_thread_load(out.timing);
        for (const auto& [id, why] : out.failures)
          std::fprintf(stderr, "warning: prefetch of cluster %u failed: %s\n",
                       id, why.c_str());
        done(out.failures.empty());
      });
    }
  };
}

void SearchEngine::accumulate_thread_load(const LoadTiming& timing) {
  std::lock_guard lock(sink_mutex_);
  for (size_t t = 0; t < timing.threads.size() && t < thread_load_.size();
       ++t) {
    thread_load_[t].busy_s += timing.threads[t].seconds;
    thread_load_[t].bytes += timing.threads[t].bytes;
  }
}

std::vector<SearchEngine::ThreadLoadTotals> SearchEngine::per_thread_load()
    const {
  return thread_load_;
}

void SearchEngine::set_policy(const CachePolicy& policy) {
  config_.cache_policy = policy;
  cache_.set_policy(policy);
}

void SearchEngine::set_scheduler(SchedulerMode mode) {
  config_.scheduler = mode;
}

void SearchEngine::set_metrics_sink(
    std::function<void(const MetricsRecord&)> sink) {
  std::lock_guard lock(sink_mutex_);
  sink_ = std::move(sink);
}

// Periodic cost/frequency prefetch baselines: every period, warm the top
// `degree` clusters by the configured metric. No group awareness.
void SearchEngine::maybe_periodic_prefetch() {
  if (config_.baseline_prefetch == BaselinePrefetchMode::none) return;
  const double now = now_s();
  {
    std::lock_guard lock(sink_mutex_);
    if (now < next_periodic_prefetch_s_) return;
    while (next_periodic_prefetch_s_ <= now)
      next_periodic_prefetch_s_ += config_.baseline_prefetch_period_s;
  }

  const auto ids =
      config_.baseline_prefetch == BaselinePrefetchMode::cost
          ? cache_.top_ids_by_latency(config_.baseline_prefetch_degree)
          : cache_.top_ids_by_window_frequency(
                config_.baseline_prefetch_degree);
  const auto missing = cache_.peek_missing(ids);
  if (missing.empty()) return;
  std::vector<MissingCluster> work;
  for (uint32_t id : missing) work.push_back({id, manifest_.byte_size(id)});
  const LoadPlan plan = plan_load(work, loader_.workers());
  if (config_.io_mode == IoMode::virtual_time) {
    // Modeled as overlapped background I/O: the virtual clock does not
    // advance.
    const auto out = loader_.load_virtual(plan, config_.virtual_io,
                                          /*pin=*/false, /*prefetched=*/true);
    accumulate_thread_load(out.timing);
  } else {
    loader_.load_background(plan, [this](LoadOutcome out) {
      accumulate_thread_load(out.timing);
    });
  }
}

struct SearchEngine::ExecContext {
  std::span<const SearchRequest> requests;
  std::span<const QueryRecord> records;
  uint64_t batch_id = 0;
  bool grouped = false;
  bool use_prefetch = false;
  // Per batch position:
  std::vector<int64_t> group_of;
  std::vector<bool> is_head;
  std::vector<bool> is_last;
};

std::vector<SearchResult> SearchEngine::submit_batch(
    std::span<const SearchRequest> requests) {
  if (requests.empty()) return {};
  const uint32_t dim = centroids_.dim();
  for (const auto& r : requests) {
    if (r.embedding.size() != dim)
      throw std::invalid_argument("request dim does not match index");
    if (!all_finite(r.embedding))
      throw std::invalid_argument("non-finite query embedding");
    if (r.k == 0) throw std::invalid_argument("k must be positive");
  }

  const size_t n = requests.size();
  std::vector<QueryRecord> records(n);
  for (size_t i = 0; i < n; ++i) {
    records[i].query_id = requests[i].query_id;
    records[i].arrival_time = static_cast<double>(i);
    records[i].embedding = requests[i].embedding;
    records[i].cluster_set =
        centroids_.probe(requests[i].embedding, requests[i].nprobe,
                         config_.metric);
    records[i].bitmap = ClusterBitmap(centroids_.k(), records[i].cluster_set);
  }

  ExecContext ctx;
  ctx.requests = requests;
  ctx.records = records;
  ctx.batch_id = batch_counter_++;
  ctx.grouped = config_.scheduler == SchedulerMode::call;
  ctx.group_of.assign(n, -1);
  ctx.is_head.assign(n, false);
  ctx.is_last.assign(n, false);

  std::vector<QueryGroup> groups;
  std::vector<uint32_t> order;
  BatchMetrics bm;
  bm.batch_id = ctx.batch_id;
  bm.batch_size = n;

  if (ctx.grouped) {
    const auto t0 = std::chrono::steady_clock::now();
    std::vector<double> sim =
        pairwise_similarity(records, SimilarityKernel::bitmap);
    for (size_t i = 0; i < n; ++i)
      for (size_t j = i + 1; j < n; ++j) {
        const double v = sim[i * n + j];
        const size_t bucket = std::min<size_t>(9, static_cast<size_t>(v * 10));
        ++bm.similarity_histogram[bucket];
      }
    groups = form_groups_with_matrix(records, std::move(sim), config_.theta);
    order = reorder_batch(groups, records);
    bm.grouping_seconds = elapsed_s(t0);
    bm.group_count = groups.size();
    for (const auto& g : groups) {
      bm.group_sizes.push_back(g.members.size());
      for (size_t m = 0; m < g.member_positions.size(); ++m) {
        const uint32_t pos = g.member_positions[m];
        ctx.group_of[pos] = g.group_id;
        ctx.is_head[pos] = (m == 0);
        ctx.is_last[pos] = (m + 1 == g.member_positions.size());
      }
    }
  } else {
    order.resize(n);
    std::iota(order.begin(), order.end(), 0u);
    bm.group_count = 0;
  }

  ctx.use_prefetch = ctx.grouped && config_.prefetch_enabled;
  if (ctx.use_prefetch) {
    prefetcher_->begin_batch(groups);
    prefetch_end_.assign(groups.size(), 0.0);
  }

  std::vector<SearchResult> results;
  const bool threaded = config_.search_threads > 1 &&
                        config_.io_mode == IoMode::real_time;
  if (!threaded) {
    results.reserve(n);
    for (uint32_t pos : order)
      results.push_back(execute_one(requests[pos], records[pos], ctx, pos));
  } else {
    results.resize(n);
    std::atomic<size_t> next{0};
    std::vector<std::jthread> searchers;
    searchers.reserve(config_.search_threads);
    for (uint32_t t = 0; t < config_.search_threads; ++t) {
      searchers.emplace_back([&] {
        for (;;) {
          const size_t slot = next.fetch_add(1);
          if (slot >= order.size()) return;
          const uint32_t pos = order[slot];
          results[slot] = execute_one(requests[pos], records[pos], ctx, pos);
        }
      });
    }
  }

  {
    std::lock_guard lock(sink_mutex_);
    batches_.push_back(std::move(bm));
  }
  return results;
}

SearchResult SearchEngine::execute_one(const SearchRequest& request,
                                       const QueryRecord& record,
                                       ExecContext& ctx, uint32_t position) {
  const bool is_virtual = config_.io_mode == IoMode::virtual_time;
  const int64_t gid = ctx.group_of[position];
  const bool head = ctx.is_head[position];
  const bool last = ctx.is_last[position];

  SearchResult res;
  res.query_id = request.query_id;
  MetricsRecord rec;
  rec.query_id = request.query_id;
  rec.batch_id = ctx.batch_id;
  rec.group_id = gid;
  rec.group_head = ctx.grouped && head;

  maybe_periodic_prefetch();
  cache_.window_tick(now_s());

  const double vstart = now_s();
  rec.dispatch_time = vstart;

  // Wait for the prefetch that targets this group's head, if any.
  double await_s = 0.0;
  if (ctx.use_prefetch && head && gid > 0) {
    if (is_virtual) {
      await_s = std::max(0.0, prefetch_end_[static_cast<size_t>(gid)] -
                                  virtual_now_s_);
      virtual_now_s_ += await_s;
    } else {
      const auto t0 = std::chrono::steady_clock::now();
      prefetcher_->await_group_head(static_cast<uint32_t>(gid));
      await_s = elapsed_s(t0);
    }
  }

  // Real mode: announce dispatch before the demand load so a triggered
  // prefetch overlaps this query's I/O and compute.
  if (ctx.use_prefetch && !is_virtual)
    prefetcher_->on_query_dispatch(request.query_id,
                                   static_cast<uint32_t>(gid));

  auto t0 = std::chrono::steady_clock::now();
  const LookupResult looked = cache_.lookup(record.cluster_set,
                                            /*pin_hits=*/true);
  const double lookup_s = is_virtual ? 0.0 : elapsed_s(t0);
  res.hit_ids = looked.hit_ids;
  res.miss_ids = looked.miss_ids;

  double load_s = 0.0;
  uint64_t bytes_read = 0;
  LoadOutcome outcome;
  outcome.timing.threads.resize(loader_.workers());
  if (!looked.miss_ids.empty()) {
    std::vector<MissingCluster> missing;
    missing.reserve(looked.miss_ids.size());
    for (uint32_t id : looked.miss_ids) {
      missing.push_back({id, manifest_.byte_size(id)});
      bytes_read += manifest_.byte_size(id);
    }
    const LoadPlan plan = ctx.grouped
                              ? plan_load(missing, loader_.workers())
                              : baseline_round_robin(missing, loader_.workers());
    rec.load_plan = plan.order;
    if (is_virtual) {
      outcome = loader_.load_virtual(plan, config_.virtual_io, /*pin=*/true,
                                     /*prefetched=*/false);
      load_s = outcome.timing.makespan_s;
      virtual_now_s_ += load_s;
    } else {
      t0 = std::chrono::steady_clock::now();
      outcome = loader_.load_demand(plan, /*pin=*/true);
      load_s = elapsed_s(t0);
    }
    accumulate_thread_load(outcome.timing);
    if (!outcome.failures.empty()) {
      std::string why = "cluster load failed:";
      for (const auto& [id, reason] : outcome.failures)
        why += " [" + std::to_string(id) + "] " + reason;
      res.error = why;
    }
  }
  rec.hit_count = static_cast<uint32_t>(looked.hit_ids.size());
  rec.miss_count = static_cast<uint32_t>(looked.miss_ids.size());
  rec.bytes_read = bytes_read;

  double build_s = 0.0;
  double search_s = 0.0;
  if (!res.error) {
    t0 = std::chrono::steady_clock::now();
    std::unordered_map<uint32_t, std::shared_ptr<const ClusterData>> by_id;
    by_id.reserve(record.cluster_set.size());
    for (const auto& d : outcome.loaded) by_id[d->cluster_id] = d;
    for (uint32_t id : looked.hit_ids) {
      if (auto d = cache_.get(id)) by_id[id] = std::move(d);
    }

    PartialIndex partial;
    partial.member_clusters = record.cluster_set;
    partial.candidates.dim = manifest_.dim;
    for (uint32_t id : record.cluster_set) {
      const auto it = by_id.find(id);
      if (it == by_id.end()) {
        res.error = "cluster " + std::to_string(id) + " unavailable";
        break;
      }
      const ClusterData& cd = *it->second;
      partial.candidate_ids.insert(partial.candidate_ids.end(),
                                   cd.vector_ids.begin(), cd.vector_ids.end());
      partial.candidates.values.insert(partial.candidates.values.end(),
                                       cd.vectors.values.begin(),
                                       cd.vectors.values.end());
    }
    build_s = is_virtual ? 0.0 : elapsed_s(t0);

    if (!res.error) {
      t0 = std::chrono::steady_clock::now();
      res.neighbors =
          topk_search(request.embedding, partial, request.k, config_.metric);
      search_s = is_virtual ? 0.0 : elapsed_s(t0);
    }
  }

  cache_.unpin(record.cluster_set);

  // Group-progress events. In virtual mode both events run inline after the
  // query released its pins; a triggered prefetch is timestamped at the
  // configured trigger point so its I/O overlaps this query in the virtual
  // timeline.
  if (ctx.use_prefetch) {
    if (is_virtual) {
      const double completion_point = vstart + await_s + load_s;
      last_virtual_prefetch_s_ = -1.0;
      prefetcher_->on_query_dispatch(request.query_id,
                                     static_cast<uint32_t>(gid));
      if (last && last_virtual_prefetch_s_ >= 0.0 &&
          static_cast<size_t>(gid) + 1 < prefetch_end_.size() &&
          config_.prefetch_trigger == PrefetchTrigger::dispatch) {
        prefetch_end_[static_cast<size_t>(gid) + 1] =
            vstart + last_virtual_prefetch_s_;
      }
      last_virtual_prefetch_s_ = -1.0;
      prefetcher_->on_query_complete(request.query_id,
                                     static_cast<uint32_t>(gid));
      if (last && last_virtual_prefetch_s_ >= 0.0 &&
          static_cast<size_t>(gid) + 1 < prefetch_end_.size() &&
          config_.prefetch_trigger == PrefetchTrigger::completion) {
        prefetch_end_[static_cast<size_t>(gid) + 1] =
            completion_point + last_virtual_prefetch_s_;
      }
    } else {
      prefetcher_->on_query_complete(request.query_id,
                                     static_cast<uint32_t>(gid));
    }
  }

  res.timing.await = await_s;
  res.timing.cache_lookup = lookup_s;
  res.timing.load = load_s;
  res.timing.index_build = build_s;
  res.timing.search = search_s;
  res.timing.end_to_end = await_s + lookup_s + load_s + build_s + search_s;
  rec.timing = res.timing;
  rec.search_latency = lookup_s + load_s + build_s + search_s;
  rec.error = res.error;

  {
    std::lock_guard lock(sink_mutex_);
    if (sink_) sink_(rec);
  }
  return res;
}

}  // namespace callisto
