#include "callisto/cluster_cache.hpp"

#include <algorithm>
#include <limits>
#include <stdexcept>

namespace callisto {

namespace {
constexpr double kLatencyEwmaAlpha = 0.5;
}

ClusterCache::ClusterCache(size_t capacity, CachePolicy policy,
                           uint64_t byte_budget)
    : capacity_(capacity), byte_budget_(byte_budget), policy_(policy) {
  if (capacity_ == 0) throw std::invalid_argument("cache capacity must be > 0");
  if (policy_.kind == EvictionPolicy::wlru &&
      policy_.window_top_n > capacity_)
    throw std::invalid_argument("window_top_n exceeds capacity");
  entries_.reserve(capacity_);
}

double ClusterCache::clru_score(const Entry& e) const {
  return static_cast<double>(e.access_count) * e.load_latency_s;
}

// Victim selection scans resident entries; the comparator totally orders
// candidates (sequence numbers are unique, CLRU ties fall back to LRU), so
// the choice is deterministic regardless of storage order. Returns the
// evicted id, or nullopt when every candidate is pinned or exempt.
std::optional<uint32_t> ClusterCache::evict_one_locked(
    const std::vector<uint32_t>& exempt) {
  size_t victim = entries_.size();
  for (size_t i = 0; i < entries_.size(); ++i) {
    const Entry& e = entries_[i];
    if (e.pin_count > 0) continue;
    if (std::find(exempt.begin(), exempt.end(), e.cluster_id) != exempt.end())
      continue;
    if (victim == entries_.size()) {
      victim = i;
      continue;
    }
    const Entry& v = entries_[victim];
    bool better = false;
    switch (policy_.kind) {
      case EvictionPolicy::lru:
      case EvictionPolicy::wlru:  // mid-window overflow falls back to LRU
        better = e.last_access_seq < v.last_access_seq;
        break;
      case EvictionPolicy::fifo:
        better = e.insert_seq < v.insert_seq;
        break;
      case EvictionPolicy::clru: {
        const double se = clru_score(e);
        const double sv = clru_score(v);
        better = se < sv ||
                 (se == sv && e.last_access_seq < v.last_access_seq);
        break;
      }
    }
    if (better) victim = i;
  }
  if (victim == entries_.size()) return std::nullopt;
  const uint32_t id = entries_[victim].cluster_id;
  resident_bytes_ -= entries_[victim].bytes;
  entries_.erase(entries_.begin() + static_cast<ptrdiff_t>(victim));
  return id;
}

LookupResult ClusterCache::lookup(std::span<const uint32_t> ids,
                                  bool pin_hits) {
  std::lock_guard lock(mutex_);
  LookupResult result;
  for (uint32_t id : ids) {
    ++stats_.id_lookups;
    ++window_counts_[id];
    auto it = std::find_if(entries_.begin(), entries_.end(),
                           [id](const Entry& e) { return e.cluster_id == id; });
    if (it != entries_.end()) {
      it->last_access_seq = ++seq_;
      ++it->access_count;
      if (pin_hits) ++it->pin_count;
      ++stats_.hits;
      result.hit_ids.push_back(id);
    } else {
      ++stats_.misses;
      result.miss_ids.push_back(id);
    }
  }
  const size_t total = result.hit_ids.size() + result.miss_ids.size();
  stats_.per_query_hit_ratio.push_back(
      total == 0 ? 1.0
                 : static_cast<double>(result.hit_ids.size()) /
                       static_cast<double>(total));
  return result;
}

std::vector<uint32_t> ClusterCache::peek_missing(
    std::span<const uint32_t> ids) const {
  std::lock_guard lock(mutex_);
  std::vector<uint32_t> missing;
  for (uint32_t id : ids) {
    const bool resident =
        std::any_of(entries_.begin(), entries_.end(),
                    [id](const Entry& e) { return e.cluster_id == id; });
    if (!resident) missing.push_back(id);
  }
  return missing;
}

std::vector<uint32_t> ClusterCache::admit(std::vector<AdmitEntry> entries) {
  if (entries.size() > capacity_)
    throw std::invalid_argument("admission batch larger than cache capacity");

  std::lock_guard lock(mutex_);
  std::vector<uint32_t> admitted_now;
  std::vector<size_t> inserted_idx;

  for (auto& in : entries) {
    const uint32_t id = in.data->cluster_id;
    stats_.bytes_read_from_disk += in.bytes;

    auto hist = latency_ewma_.find(id);
    const double smoothed =
        hist == latency_ewma_.end()
            ? in.load_latency_s
            : kLatencyEwmaAlpha * in.load_latency_s +
                  (1.0 - kLatencyEwmaAlpha) * hist->second;
    latency_ewma_[id] = smoothed;

    auto it = std::find_if(entries_.begin(), entries_.end(),
                           [id](const Entry& e) { return e.cluster_id == id; });
    if (it != entries_.end()) {
      // Re-admission of a resident cluster (prefetch/demand race): refresh
      // state, do not insert a second entry.
      it->data = std::move(in.data);
      resident_bytes_ += in.bytes - it->bytes;
      it->bytes = in.bytes;
      it->last_access_seq = ++seq_;
      it->load_latency_s = smoothed;
      if (in.pinned) ++it->pin_count;
      admitted_now.push_back(id);
      continue;
    }

    Entry e;
    e.cluster_id = id;
    e.data = std::move(in.data);
    e.bytes = in.bytes;
    e.insert_seq = ++seq_;
    e.last_access_seq = e.insert_seq;  // enters as most recently used
    e.access_count = 1;
    e.load_latency_s = smoothed;
    e.pin_count = in.pinned ? 1 : 0;
    resident_bytes_ += e.bytes;
    entries_.push_back(std::move(e));
    admitted_now.push_back(id);
    inserted_idx.push_back(entries_.size() - 1);
  }

  std::vector<uint32_t> evicted;
  while (entries_.size() > capacity_ ||
         (byte_budget_ > 0 && resident_bytes_ > byte_budget_)) {
    if (auto id = evict_one_locked(admitted_now)) {
      evicted.push_back(*id);
      continue;
    }
    // Nothing evictable: every other entry is pinned. Drop the newest
    // entries admitted in this call instead of overfilling (unpinned ones
    // first); prefetch admissions degrade, demand correctness is unaffected
    // because callers keep their own reference to the loaded data.
    bool dropped = false;
    for (const bool allow_pinned : {false, true}) {
      for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
        if (!allow_pinned && it->pin_count > 0) continue;
        if (std::find(admitted_now.begin(), admitted_now.end(),
                      it->cluster_id) == admitted_now.end())
          continue;
        resident_bytes_ -= it->bytes;
        entries_.erase(std::next(it).base());
        dropped = true;
        break;
      }
      if (dropped) break;
    }
    if (!dropped) break;  // no same-call entry left to shed
  }
  return evicted;
}

void ClusterCache::window_tick(double now_s) {
  std::lock_guard lock(mutex_);
  while (now_s >= window_start_s_ + policy_.window_length_s) {
    if (policy_.kind == EvictionPolicy::wlru && !entries_.empty()) {
      // Rank resident entries by window frequency, ties by lower id; keep
      // the top window_top_n (pinned entries are always kept).
      std::vector<std::pair<uint32_t, uint64_t>> ranked;
      ranked.reserve(entries_.size());
      for (const auto& e : entries_) {
        const auto it = window_counts_.find(e.cluster_id);
        ranked.emplace_back(e.cluster_id,
                            it == window_counts_.end() ? 0 : it->second);
      }
      std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
      });
      std::vector<uint32_t> keep;
      for (size_t i = 0; i < ranked.size() && i < policy_.window_top_n; ++i)
        keep.push_back(ranked[i].first);
      for (auto it = entries_.begin(); it != entries_.end();) {
        const bool kept =
            it->pin_count > 0 ||
            std::find(keep.begin(), keep.end(), it->cluster_id) != keep.end();
        if (kept) {
          ++it;
        } else {
          resident_bytes_ -= it->bytes;
          it = entries_.erase(it);
        }
      }
    }
    window_counts_.clear();
    window_start_s_ += policy_.window_length_s;
  }
}

void ClusterCache::unpin(std::span<const uint32_t> ids) {
  std::lock_guard lock(mutex_);
  for (uint32_t id : ids) {
    auto it = std::find_if(entries_.begin(), entries_.end(),
                           [id](const Entry& e) { return e.cluster_id == id; });
    if (it != entries_.end() && it->pin_count > 0) --it->pin_count;
  }
}

std::shared_ptr<const ClusterData> ClusterCache::get(uint32_t id) const {
  std::lock_guard lock(mutex_);
  auto it = std::find_if(entries_.begin(), entries_.end(),
                         [id](const Entry& e) { return e.cluster_id == id; });
  return it == entries_.end() ? nullptr : it->data;
}

bool ClusterCache::contains(uint32_t id) const {
  std::lock_guard lock(mutex_);
  return std::any_of(entries_.begin(), entries_.end(),
                     [id](const Entry& e) { return e.cluster_id == id; });
}

size_t ClusterCache::size() const {
  std::lock_guard lock(mutex_);
  return entries_.size();
}

CacheStats ClusterCache::stats() const {
  std::lock_guard lock(mutex_);
  return stats_;
}

void ClusterCache::set_policy(CachePolicy policy) {
  std::lock_guard lock(mutex_);
  if (policy.kind == EvictionPolicy::wlru && policy.window_top_n > capacity_)
    throw std::invalid_argument("window_top_n exceeds capacity");
  policy_ = policy;
}

CachePolicy ClusterCache::policy() const {
  std::lock_guard lock(mutex_);
  return policy_;
}

std::optional<double> ClusterCache::load_latency(uint32_t id) const {
  std::lock_guard lock(mutex_);
  auto it = latency_ewma_.find(id);
  if (it == latency_ewma_.end()) return std::nullopt;
  return it->second;
}

std::vector<uint32_t> ClusterCache::top_ids_by_latency(size_t n) const {
  std::lock_guard lock(mutex_);
  std::vector<std::pair<uint32_t, double>> ranked(latency_ewma_.begin(),
                                                  latency_ewma_.end());
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  if (ranked.size() > n) ranked.resize(n);
  std::vector<uint32_t> out;
  out.reserve(ranked.size());
  for (const auto& [id, lat] : ranked) out.push_back(id);
  return out;
}

std::vector<uint32_t> ClusterCache::top_ids_by_window_frequency(
    size_t n) const {
  std::lock_guard lock(mutex_);
  std::vector<std::pair<uint32_t, uint64_t>> ranked(window_counts_.begin(),
                                                    window_counts_.end());
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  if (ranked.size() > n) ranked.resize(n);
  std::vector<uint32_t> out;
  out.reserve(ranked.size());
  for (const auto& [id, cnt] : ranked) out.push_back(id);
  return out;
}

}  // namespace callisto
