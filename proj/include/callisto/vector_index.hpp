#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "callisto/embedding.hpp"

namespace callisto {

struct KmeansOptions {
  uint32_t max_iterations = 25;
  // Stop early once the largest centroid displacement in one Lloyd step
  // falls below tolerance_scale * corpus bounding-box diagonal.
  double tolerance_scale = 1e-4;
};

/// First-level index: K centroids resident in memory.
class CentroidIndex {
 public:
  CentroidIndex(uint32_t k, uint32_t dim, std::vector<float> centroids);

  uint32_t k() const { return k_; }
  uint32_t dim() const { return dim_; }
  std::span<const float> centroid(uint32_t id) const {
    return {centroids_.data() + static_cast<size_t>(id) * dim_, dim_};
  }
  std::span<const float> flat() const { return centroids_; }

  /// Id of the nearest centroid (ties broken by lowest id).
  uint32_t nearest(std::span<const float> query,
                   Metric metric = Metric::squared_l2) const;

  /// The nprobe nearest cluster ids, ascending by distance, ties by lowest
  /// id. Throws std::invalid_argument when nprobe is 0 or exceeds K.
  std::vector<uint32_t> probe(std::span<const float> query, uint32_t nprobe,
                              Metric metric = Metric::squared_l2) const;

 private:
  uint32_t k_;
  uint32_t dim_;
  std::vector<float> centroids_;  // k x dim row-major
};

struct ManifestEntry {
  uint32_t cluster_id = 0;
  std::string path;  // relative to the index directory
  uint32_t vector_count = 0;
  uint64_t byte_size = 0;
};

/// On-disk layout of one index: entries[i] describes cluster i.
struct ClusterManifest {
  std::vector<ManifestEntry> entries;
  uint32_t dim = 0;
  uint32_t k = 0;
  std::filesystem::path base_dir;

  std::filesystem::path cluster_path(uint32_t cluster_id) const;
  uint64_t byte_size(uint32_t cluster_id) const;
  uint64_t total_vectors() const;
};

/// In-memory image of one cluster file.
struct ClusterData {
  uint32_t cluster_id = 0;
  std::vector<uint64_t> vector_ids;
  EmbeddingMatrix vectors;

  size_t count() const { return vector_ids.size(); }
};

/// Lloyd k-means with k-means++ seeding. Deterministic for a fixed
/// (corpus, k, seed). Empty clusters are reseeded to the corpus point
/// farthest from the empty centroid.
CentroidIndex train_kmeans(const EmbeddingMatrix& corpus, uint32_t k,
                           uint64_t seed, const KmeansOptions& options = {});

/// Nearest-centroid assignment for every corpus row, ties by lowest id.
std::vector<uint32_t> assign_vectors(const EmbeddingMatrix& corpus,
                                     const CentroidIndex& index);

/// Writes one cluster file per cluster id plus manifest and centroid files.
/// Empty clusters produce a valid zero-count file.
ClusterManifest write_index(const EmbeddingMatrix& corpus,
                            const std::vector<uint32_t>& assignments,
                            const CentroidIndex& index,
                            const std::filesystem::path& directory);

ClusterData read_cluster(const ClusterManifest& manifest, uint32_t cluster_id);
/// direct_io bypasses the page cache via O_DIRECT where the filesystem
/// supports it, falling back to a buffered read otherwise.
ClusterData read_cluster(const ClusterManifest& manifest, uint32_t cluster_id,
                         bool direct_io);

ClusterManifest load_manifest(const std::filesystem::path& directory);
CentroidIndex load_centroids(const std::filesystem::path& directory);

inline constexpr const char* kManifestFileName = "manifest.jsonl";
inline constexpr const char* kCentroidFileName = "centroids.bin";

}  // namespace callisto
