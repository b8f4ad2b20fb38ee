#include "callisto/query_grouping.hpp"

#include <algorithm>
#include <bit>
#include <limits>
#include <stdexcept>
#include <unordered_set>

namespace callisto {

ClusterBitmap::ClusterBitmap(uint32_t total_clusters)
    : total_clusters_(total_clusters), words_((total_clusters + 63) / 64, 0) {}

ClusterBitmap::ClusterBitmap(uint32_t total_clusters,
                             std::span<const uint32_t> ids)
    : ClusterBitmap(total_clusters) {
  for (uint32_t id : ids) set(id);
}

void ClusterBitmap::set(uint32_t cluster_id) {
  if (cluster_id >= total_clusters_)
    throw std::invalid_argument("cluster id out of bitmap range");
  words_[cluster_id >> 6] |= uint64_t{1} << (cluster_id & 63);
}

bool ClusterBitmap::test(uint32_t cluster_id) const {
  if (cluster_id >= total_clusters_) return false;
  return (words_[cluster_id >> 6] >> (cluster_id & 63)) & 1;
}

uint32_t ClusterBitmap::bit_count() const {
  uint32_t n = 0;
  for (uint64_t w : words_) n += static_cast<uint32_t>(std::popcount(w));
  return n;
}

std::vector<uint32_t> ClusterBitmap::to_ids() const {
  std::vector<uint32_t> ids;
  ids.reserve(bit_count());
  for (uint32_t id = 0; id < total_clusters_; ++id)
    if (test(id)) ids.push_back(id);
  return ids;
}

ClusterBitmap& ClusterBitmap::operator|=(const ClusterBitmap& other) {
  if (other.total_clusters_ != total_clusters_)
    throw std::invalid_argument("bitmap width mismatch");
  for (size_t w = 0; w < words_.size(); ++w) words_[w] |= other.words_[w];
  return *this;
}

double jaccard_hash(std::span<const uint32_t> a, std::span<const uint32_t> b) {
  if (a.empty() && b.empty()) return 1.0;
  const std::unordered_set<uint32_t> bs(b.begin(), b.end());
  size_t intersection = 0;
  for (uint32_t id : a)
    if (bs.count(id)) ++intersection;
  const size_t unions = a.size() + bs.size() - intersection;
  return static_cast<double>(intersection) / static_cast<double>(unions);
}

double jaccard_bitmap(const ClusterBitmap& a, const ClusterBitmap& b) {
  if (a.total_clusters() != b.total_clusters())
    throw std::invalid_argument("bitmap width mismatch");
  const auto wa = a.words();
  const auto wb = b.words();
  uint64_t intersection = 0;
  uint64_t ones_a = 0;
  uint64_t ones_b = 0;
  for (size_t w = 0; w < wa.size(); ++w) {
    intersection += static_cast<uint64_t>(std::popcount(wa[w] & wb[w]));
    ones_a += static_cast<uint64_t>(std::popcount(wa[w]));
    ones_b += static_cast<uint64_t>(std::popcount(wb[w]));
  }
  const uint64_t unions = ones_a + ones_b - intersection;
  if (unions == 0) return 1.0;
  return static_cast<double>(intersection) / static_cast<double>(unions);
}

std::vector<double> pairwise_similarity(std::span<const QueryRecord> records,
                                        SimilarityKernel kernel) {
  const size_t n = records.size();
  std::vector<double> sim(n * n, 0.0);

  if (kernel == SimilarityKernel::bitmap) {
    // Per-row popcounts are fixed, so the pair loop reduces to word-wise
    // AND + popcount with no data-dependent branches.
    std::vector<uint64_t> ones(n);
    for (size_t i = 0; i < n; ++i) ones[i] = records[i].bitmap.bit_count();
    for (size_t i = 0; i < n; ++i) {
      const auto wi = records[i].bitmap.words();
      for (size_t j = i + 1; j < n; ++j) {
        const auto wj = records[j].bitmap.words();
        uint64_t inter = 0;
        for (size_t w = 0; w < wi.size(); ++w)
          inter += static_cast<uint64_t>(std::popcount(wi[w] & wj[w]));
        const uint64_t uni = ones[i] + ones[j] - inter;
        const double v =
            uni == 0 ? 1.0
                     : static_cast<double>(inter) / static_cast<double>(uni);
        sim[i * n + j] = v;
        sim[j * n + i] = v;
      }
    }
  } else {
    std::vector<std::unordered_set<uint32_t>> sets(n);
    for (size_t i = 0; i < n; ++i)
      sets[i] = {records[i].cluster_set.begin(), records[i].cluster_set.end()};
    for (size_t i = 0; i < n; ++i) {
      for (size_t j = i + 1; j < n; ++j) {
        size_t inter = 0;
        for (uint32_t id : records[i].cluster_set)
          if (sets[j].count(id)) ++inter;
        const size_t uni = sets[i].size() + sets[j].size() - inter;
        const double v =
            uni == 0 ? 1.0
                     : static_cast<double>(inter) / static_cast<double>(uni);
        sim[i * n + j] = v;
        sim[j * n + i] = v;
      }
    }
  }
  for (size_t i = 0; i < n; ++i) sim[i * n + i] = 1.0;
  return sim;
}

namespace {

// Complete-linkage agglomeration over a precomputed similarity matrix.
// Slot i starts as singleton {i}; a merge keeps the smaller slot, so a slot
// id always equals its earliest member's batch position. link[i*n+j] holds
// the min pair similarity between live slots. bestj caches, per live slot i,
// the most similar live slot j > i (smallest j on ties); the cache entries
// only ever need refreshing when their target merged or died, because merges
// never increase a link value.
std::vector<std::vector<uint32_t>> agglomerate(std::vector<double> link,
                                               size_t n, double theta) {
  std::vector<std::vector<uint32_t>> members(n);
  for (size_t i = 0; i < n; ++i) members[i] = {static_cast<uint32_t>(i)};
  std::vector<bool> alive(n, true);
  std::vector<size_t> bestj(n, n);
  std::vector<double> bestv(n, -1.0);

  auto refresh = [&](size_t i) {
    bestj[i] = n;
    bestv[i] = -1.0;
    for (size_t j = i + 1; j < n; ++j) {
      if (!alive[j]) continue;
      const double v = link[i * n + j];
      if (v > bestv[i]) {
        bestv[i] = v;
        bestj[i] = j;
      }
    }
  };
  for (size_t i = 0; i < n; ++i) refresh(i);

  while (true) {
    size_t best = n;
    for (size_t i = 0; i < n; ++i) {
      if (!alive[i] || bestj[i] == n) continue;
      if (best == n || bestv[i] > bestv[best]) best = i;
    }
    if (best == n || bestv[best] < theta) break;

    const size_t i = best;
    const size_t j = bestj[best];
    members[i].insert(members[i].end(), members[j].begin(), members[j].end());
    members[j].clear();
    alive[j] = false;

    for (size_t h = 0; h < n; ++h) {
      if (!alive[h] || h == i) continue;
      const double merged = std::min(link[i * n + h], link[j * n + h]);
      link[i * n + h] = merged;
      link[h * n + i] = merged;
    }
    refresh(i);
    for (size_t h = 0; h < n; ++h) {
      if (!alive[h] || h == i) continue;
      if (bestj[h] == i || bestj[h] == j) refresh(h);
    }
  }

  std::vector<std::vector<uint32_t>> out;
  for (size_t i = 0; i < n; ++i) {
    if (!alive[i]) continue;
    std::sort(members[i].begin(), members[i].end());
    out.push_back(std::move(members[i]));
  }
  return out;  // slots ascending == earliest member ascending
}

}  // namespace

std::vector<QueryGroup> form_groups(std::span<const QueryRecord> records,
                                    double theta, SimilarityKernel kernel) {
  if (records.empty()) return {};
  return form_groups_with_matrix(records, pairwise_similarity(records, kernel),
                                 theta);
}

std::vector<QueryGroup> form_groups_with_matrix(
    std::span<const QueryRecord> records, std::vector<double> sim,
    double theta) {
  const size_t n = records.size();
  if (n == 0) return {};
  if (sim.size() != n * n)
    throw std::invalid_argument("similarity matrix size mismatch");

  // Empty cluster sets stay singleton: their pair similarity is forced
  // below any feasible theta (> 0) for the grouping decision only.
  for (size_t i = 0; i < n; ++i) {
    if (!records[i].cluster_set.empty()) continue;
    for (size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      sim[i * n + j] = 0.0;
      sim[j * n + i] = 0.0;
    }
  }

  const auto partition = agglomerate(std::move(sim), n, theta);

  std::vector<QueryGroup> groups;
  groups.reserve(partition.size());
  for (const auto& positions : partition) {
    QueryGroup g;
    g.group_id = static_cast<uint32_t>(groups.size());
    g.member_positions = positions;
    ClusterBitmap unions(records[positions.front()].bitmap.total_clusters());
    for (uint32_t pos : positions) {
      g.members.push_back(records[pos].query_id);
      unions |= records[pos].bitmap;
    }
    g.union_clusters = unions.to_ids();
    groups.push_back(std::move(g));
  }
  return groups;
}

std::vector<uint32_t> reorder_batch(std::vector<QueryGroup>& groups,
                                    std::span<const QueryRecord> records) {
  std::vector<uint32_t> order;
  for (size_t g = 0; g < groups.size(); ++g) {
    order.insert(order.end(), groups[g].member_positions.begin(),
                 groups[g].member_positions.end());
    if (g + 1 < groups.size()) {
      const uint32_t head_pos = groups[g + 1].member_positions.front();
      groups[g].prefetch = PrefetchMetadata{
          records[head_pos].query_id, records[head_pos].cluster_set};
    } else {
      groups[g].prefetch.reset();
    }
  }
  return order;
}

}  // namespace callisto
