#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace callisto {

/// Fixed-width bit set over the cluster-id space [0, K).
class ClusterBitmap {
 public:
  ClusterBitmap() = default;
  explicit ClusterBitmap(uint32_t total_clusters);
  ClusterBitmap(uint32_t total_clusters, std::span<const uint32_t> ids);

  void set(uint32_t cluster_id);
  bool test(uint32_t cluster_id) const;
  uint32_t bit_count() const;
  uint32_t total_clusters() const { return total_clusters_; }
  std::span<const uint64_t> words() const { return words_; }

  /// Set cluster ids in ascending order.
  std::vector<uint32_t> to_ids() const;

  ClusterBitmap& operator|=(const ClusterBitmap& other);

 private:
  uint32_t total_clusters_ = 0;
  std::vector<uint64_t> words_;
};

/// |a ∩ b| / |a ∪ b| with hash-set membership tests. Two empty sets are
/// defined as similarity 1.
double jaccard_hash(std::span<const uint32_t> a, std::span<const uint32_t> b);

/// Same value computed branch-free over bitmap words (AND + popcount).
/// Throws std::invalid_argument when the widths differ.
double jaccard_bitmap(const ClusterBitmap& a, const ClusterBitmap& b);

/// One batched query: its probed cluster set and the matching bitmap.
struct QueryRecord {
  uint64_t query_id = 0;
  double arrival_time = 0.0;
  std::span<const float> embedding;
  std::vector<uint32_t> cluster_set;  // probe order (ascending distance)
  ClusterBitmap bitmap;
};

/// Hint attached to a group so the engine can warm the cache for the next
/// group's first query before it executes.
struct PrefetchMetadata {
  uint64_t next_head_query = 0;
  std::vector<uint32_t> next_head_clusters;
};

struct QueryGroup {
  uint32_t group_id = 0;
  std::vector<uint64_t> members;          // query ids, arrival order
  std::vector<uint32_t> member_positions; // batch positions, arrival order
  std::vector<uint32_t> union_clusters;
  std::optional<PrefetchMetadata> prefetch;
};

enum class SimilarityKernel { bitmap, hash_set };

/// Full N x N similarity matrix (row-major): symmetric, unit diagonal.
std::vector<double> pairwise_similarity(
    std::span<const QueryRecord> records,
    SimilarityKernel kernel = SimilarityKernel::bitmap);

/// Complete-linkage agglomerative grouping: merge while the highest
/// inter-group min-pair similarity is >= theta, ties broken by the smallest
/// pair of group slots. Every intra-group pair of the result satisfies
/// J >= theta. Groups are ordered by earliest member arrival and members
/// keep arrival order. Records with empty cluster sets never merge.
std::vector<QueryGroup> form_groups(
    std::span<const QueryRecord> records, double theta,
    SimilarityKernel kernel = SimilarityKernel::bitmap);

/// form_groups over a similarity matrix the caller already computed.
std::vector<QueryGroup> form_groups_with_matrix(
    std::span<const QueryRecord> records, std::vector<double> similarity,
    double theta);

/// Concatenates group member lists and attaches prefetch metadata: group i
/// (i < last) names the first query of group i+1 and its cluster set.
/// Returns the execution order as batch positions.
std::vector<uint32_t> reorder_batch(std::vector<QueryGroup>& groups,
                                    std::span<const QueryRecord> records);

}  // namespace callisto
