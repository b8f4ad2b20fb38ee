#pragma once

#include <cstdint>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <unordered_map>
#include <vector>

#include "callisto/vector_index.hpp"

namespace callisto {

enum class EvictionPolicy { lru, clru, wlru, fifo };

struct CachePolicy {
  EvictionPolicy kind = EvictionPolicy::lru;
  double window_length_s = 60.0;  // WLRU only
  uint32_t window_top_n = 10;     // WLRU only
};

struct CacheStats {
  uint64_t id_lookups = 0;  // cluster-id granularity
  uint64_t hits = 0;
  uint64_t misses = 0;
  uint64_t bytes_read_from_disk = 0;
  std::vector<double> per_query_hit_ratio;

  double hit_ratio() const {
    return static_cast<double>(hits) /
           static_cast<double>(id_lookups == 0 ? 1 : id_lookups);
  }
};

struct AdmitEntry {
  std::shared_ptr<const ClusterData> data;
  uint64_t bytes = 0;
  double load_latency_s = 0.0;
  bool prefetched = false;
  bool pinned = false;
};

struct LookupResult {
  std::vector<uint32_t> hit_ids;
  std::vector<uint32_t> miss_ids;
};

/// Fixed-capacity cluster cache with pluggable replacement. All operations
/// are linearizable: one mutex guards the table, callers are the dispatcher,
/// loader workers and the prefetcher.
class ClusterCache {
 public:
  ClusterCache(size_t capacity, CachePolicy policy, uint64_t byte_budget = 0);

  /// One query's cache consult. Hits bump recency/frequency; the per-query
  /// hit ratio series and the id-level counters are updated. pin_hits pins
  /// every hit until the matching unpin.
  LookupResult lookup(std::span<const uint32_t> ids, bool pin_hits = false);

  /// Residency probe that leaves recency, frequency and stats untouched.
  std::vector<uint32_t> peek_missing(std::span<const uint32_t> ids) const;

  /// Inserts entries, evicting policy-chosen victims when the capacity would
  /// be exceeded (exactly overflow many). Victims never include ids admitted
  /// in this call and never pinned entries; when no victim is available the
  /// trailing entries of the batch are dropped rather than overfilling.
  /// Returns the evicted ids. Throws std::invalid_argument when the batch
  /// alone exceeds the capacity.
  std::vector<uint32_t> admit(std::vector<AdmitEntry> entries);

  /// Advances the frequency window. Under WLRU, entries outside the
  /// window_top_n most frequently accessed clusters (ties by lower id) are
  /// evicted at each boundary and the counters reset.
  void window_tick(double now_s);

  void unpin(std::span<const uint32_t> ids);

  std::shared_ptr<const ClusterData> get(uint32_t id) const;
  bool contains(uint32_t id) const;
  size_t size() const;
  size_t capacity() const { return capacity_; }

  CacheStats stats() const;
  void set_policy(CachePolicy policy);
  CachePolicy policy() const;

  /// Smoothed load latency observed for a cluster, if any load was recorded.
  /// Survives eviction; feeds cost-aware eviction and the cost-based
  /// baseline prefetcher.
  std::optional<double> load_latency(uint32_t id) const;

  /// Top-n cluster ids by smoothed load latency (ties by lower id).
  std::vector<uint32_t> top_ids_by_latency(size_t n) const;
  /// Top-n cluster ids by accesses in the current window (ties by lower id).
  std::vector<uint32_t> top_ids_by_window_frequency(size_t n) const;

 private:
  struct Entry {
    uint32_t cluster_id = 0;
    std::shared_ptr<const ClusterData> data;
    uint64_t bytes = 0;
    uint64_t last_access_seq = 0;
    uint64_t insert_seq = 0;
    uint64_t access_count = 0;
    double load_latency_s = 0.0;
    int pin_count = 0;
  };

  std::optional<uint32_t> evict_one_locked(const std::vector<uint32_t>& exempt);
  double clru_score(const Entry& e) const;

  const size_t capacity_;
  const uint64_t byte_budget_;  // 0 disables the byte limit
  CachePolicy policy_;

  mutable std::mutex mutex_;
  std::vector<Entry> entries_;  // unordered storage, scanned for victims
  uint64_t seq_ = 0;
  uint64_t resident_bytes_ = 0;
  CacheStats stats_;
  std::unordered_map<uint32_t, double> latency_ewma_;
  std::unordered_map<uint32_t, uint64_t> window_counts_;  // reset each window
  double window_start_s_ = 0.0;
};

}  // namespace callisto
