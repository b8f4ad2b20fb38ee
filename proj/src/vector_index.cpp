#include "callisto/vector_index.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <unordered_set>

#include <json.hpp>

#include "callisto/error.hpp"
#include "callisto/rng.hpp"

static_assert(std::endian::native == std::endian::little,
              "on-disk formats are little-endian and written verbatim");

namespace callisto {
namespace {

constexpr char kClusterMagic[8] = {'C', 'A', 'L', 'L', 'C', 'L', 'U', '1'};
constexpr char kCentroidMagic[8] = {'C', 'A', 'L', 'L', 'C', 'E', 'N', '1'};
constexpr size_t kClusterHeaderBytes = 8 + 4 * 4;

uint64_t cluster_file_bytes(uint64_t count, uint32_t dim) {
  return kClusterHeaderBytes + count * 8 + count * static_cast<uint64_t>(dim) * 4;
}

std::string cluster_file_name(uint32_t cluster_id) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "cluster_%05u.clu", cluster_id);
  return buf;
}

void write_all(std::ofstream& out, const void* data, size_t bytes,
               const std::filesystem::path& path) {
  out.write(static_cast<const char*>(data), static_cast<std::streamsize>(bytes));
  if (!out) throw IoError("write failed", path.string());
}

ClusterData parse_cluster_buffer(const std::vector<char>& buf,
                                 uint64_t file_bytes, uint32_t cluster_id,
                                 const ClusterManifest& manifest,
                                 const std::string& path) {
  if (file_bytes < kClusterHeaderBytes)
    throw CorruptionError("cluster file shorter than header", path);
  if (std::memcmp(buf.data(), kClusterMagic, 8) != 0)
    throw CorruptionError("bad cluster file magic", path);

  uint32_t header[4];
  std::memcpy(header, buf.data() + 8, sizeof(header));
  const uint32_t stored_id = header[0];
  const uint32_t count = header[1];
  const uint32_t dim = header[2];

  if (stored_id != cluster_id)
    throw CorruptionError("cluster id mismatch", path);
  if (dim != manifest.dim)
    throw CorruptionError("cluster dim mismatch", path);
  if (file_bytes != cluster_file_bytes(count, dim))
    throw CorruptionError("cluster file length mismatch", path);

  ClusterData data;
  data.cluster_id = cluster_id;
  data.vector_ids.resize(count);
  data.vectors.dim = dim;
  data.vectors.values.resize(static_cast<size_t>(count) * dim);
  const char* p = buf.data() + kClusterHeaderBytes;
  std::memcpy(data.vector_ids.data(), p, count * sizeof(uint64_t));
  p += count * sizeof(uint64_t);
  std::memcpy(data.vectors.values.data(), p,
              data.vectors.values.size() * sizeof(float));
  return data;
}

ClusterData read_cluster_buffered(const ClusterManifest& manifest,
                                  uint32_t cluster_id) {
  const auto path = manifest.cluster_path(cluster_id);
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CorruptionError("cluster file missing or unreadable", path.string());
  std::vector<char> buf((std::istreambuf_iterator<char>(in)),
                        std::istreambuf_iterator<char>());
  return parse_cluster_buffer(buf, buf.size(), cluster_id, manifest,
                              path.string());
}

ClusterData read_cluster_direct(const ClusterManifest& manifest,
                                uint32_t cluster_id) {
  const auto path = manifest.cluster_path(cluster_id);
  const int fd = ::open(path.c_str(), O_RDONLY | O_DIRECT);
  if (fd < 0) return read_cluster_buffered(manifest, cluster_id);

  constexpr size_t kAlign = 4096;
  std::error_code ec;
  const uint64_t file_bytes = std::filesystem::file_size(path, ec);
  if (ec) {
    ::close(fd);
    throw CorruptionError("cluster file missing", path.string());
  }
  const size_t padded = (file_bytes + kAlign - 1) / kAlign * kAlign;
  void* raw = nullptr;
  if (posix_memalign(&raw, kAlign, padded) != 0) {
    ::close(fd);
    throw std::bad_alloc();
  }
  size_t done = 0;
  while (done < padded) {
    const ssize_t n = ::pread(fd, static_cast<char*>(raw) + done, padded - done,
                              static_cast<off_t>(done));
    if (n < 0) {
      ::free(raw);
      ::close(fd);
      throw IoError("direct read failed", path.string());
    }
    if (n == 0) break;
    done += static_cast<size_t>(n);
  }
  ::close(fd);
  if (done < file_bytes) {
    ::free(raw);
    throw CorruptionError("cluster file truncated", path.string());
  }
  std::vector<char> buf(static_cast<const char*>(raw),
                        static_cast<const char*>(raw) + file_bytes);
  ::free(raw);
  return parse_cluster_buffer(buf, file_bytes, cluster_id, manifest,
                              path.string());
}

// Shared by assign_vectors and the Lloyd loop so both use the same
// distances and tie-break.
uint32_t nearest_centroid(std::span<const float> v, const CentroidIndex& index) {
  uint32_t best = 0;
  float best_dist = std::numeric_limits<float>::infinity();
  for (uint32_t c = 0; c < index.k(); ++c) {
    const float d = squared_l2(v, index.centroid(c));
    if (d < best_dist) {
      best_dist = d;
      best = c;
    }
  }
  return best;
}

double bounding_box_diagonal(const EmbeddingMatrix& corpus) {
  const size_t n = corpus.count();
  std::vector<double> lo(corpus.dim, std::numeric_limits<double>::infinity());
  std::vector<double> hi(corpus.dim, -std::numeric_limits<double>::infinity());
  for (size_t i = 0; i < n; ++i) {
    const auto row = corpus.row(i);
    for (uint32_t d = 0; d < corpus.dim; ++d) {
      lo[d] = std::min(lo[d], static_cast<double>(row[d]));
      hi[d] = std::max(hi[d], static_cast<double>(row[d]));
    }
  }
  double acc = 0.0;
  for (uint32_t d = 0; d < corpus.dim; ++d) {
    const double e = hi[d] - lo[d];
    acc += e * e;
  }
  return std::sqrt(acc);
}

std::vector<float> kmeanspp_seed(const EmbeddingMatrix& corpus, uint32_t k,
                                 Rng& rng) {
  const size_t n = corpus.count();
  const uint32_t dim = corpus.dim;
  std::vector<float> centroids;
  centroids.reserve(static_cast<size_t>(k) * dim);

  const size_t first = rng.uniform_index(n);
  const auto frow = corpus.row(first);
  centroids.insert(centroids.end(), frow.begin(), frow.end());

  std::vector<double> dist2(n);
  for (size_t i = 0; i < n; ++i)
    dist2[i] = squared_l2(corpus.row(i), frow);

  for (uint32_t c = 1; c < k; ++c) {
    const double total = std::accumulate(dist2.begin(), dist2.end(), 0.0);
    size_t chosen;
    if (total <= 0.0) {
      // All mass at existing centroids (duplicate points): fall back to a
      // uniform pick.
      chosen = rng.uniform_index(n);
    } else {
      const double target = rng.uniform() * total;
      double acc = 0.0;
      chosen = n - 1;
      for (size_t i = 0; i < n; ++i) {
        acc += dist2[i];
        if (acc >= target) {
          chosen = i;
          break;
        }
      }
    }
    const auto crow = corpus.row(chosen);
    centroids.insert(centroids.end(), crow.begin(), crow.end());
    for (size_t i = 0; i < n; ++i) {
      const double d = squared_l2(corpus.row(i), crow);
      dist2[i] = std::min(dist2[i], d);
    }
  }
  return centroids;
}

}  // namespace

CentroidIndex::CentroidIndex(uint32_t k, uint32_t dim,
                             std::vector<float> centroids)
    : k_(k), dim_(dim), centroids_(std::move(centroids)) {
  if (k_ == 0 || dim_ == 0)
    throw std::invalid_argument("centroid index needs k > 0 and dim > 0");
  if (centroids_.size() != static_cast<size_t>(k_) * dim_)
    throw std::invalid_argument("centroid buffer size mismatch");
  if (!all_finite(centroids_))
    throw std::invalid_argument("non-finite centroid");
}

uint32_t CentroidIndex::nearest(std::span<const float> query,
                                Metric metric) const {
  if (query.size() != dim_)
    throw std::invalid_argument("query dim mismatch");
  uint32_t best = 0;
  float best_d = std::numeric_limits<float>::infinity();
  for (uint32_t c = 0; c < k_; ++c) {
    const float d = distance(query, centroid(c), metric);
    if (d < best_d) {
      best_d = d;
      best = c;
    }
  }
  return best;
}

std::vector<uint32_t> CentroidIndex::probe(std::span<const float> query,
                                           uint32_t nprobe,
                                           Metric metric) const {
  if (query.size() != dim_)
    throw std::invalid_argument("query dim mismatch");
  if (nprobe == 0 || nprobe > k_)
    throw std::invalid_argument("nprobe must be in [1, K]");

  std::vector<std::pair<float, uint32_t>> scored(k_);
  for (uint32_t c = 0; c < k_; ++c)
    scored[c] = {distance(query, centroid(c), metric), c};
  std::partial_sort(scored.begin(), scored.begin() + nprobe, scored.end());
  std::vector<uint32_t> out(nprobe);
  for (uint32_t i = 0; i < nprobe; ++i) out[i] = scored[i].second;
  return out;
}

std::filesystem::path ClusterManifest::cluster_path(uint32_t cluster_id) const {
  return base_dir / entries.at(cluster_id).path;
}

uint64_t ClusterManifest::byte_size(uint32_t cluster_id) const {
  return entries.at(cluster_id).byte_size;
}

uint64_t ClusterManifest::total_vectors() const {
  uint64_t n = 0;
  for (const auto& e : entries) n += e.vector_count;
  return n;
}

CentroidIndex train_kmeans(const EmbeddingMatrix& corpus, uint32_t k,
                           uint64_t seed, const KmeansOptions& options) {
  const size_t n = corpus.count();
  if (k == 0) throw std::invalid_argument("k must be positive");
  if (n < k) throw std::invalid_argument("corpus smaller than k");
  if (!all_finite(corpus)) throw std::invalid_argument("non-finite corpus vector");
  const uint32_t dim = corpus.dim;

  Rng rng(seed);
  std::vector<float> centroids = kmeanspp_seed(corpus, k, rng);
  const double tolerance = options.tolerance_scale * bounding_box_diagonal(corpus);

  std::vector<uint32_t> assign(n);
  std::vector<double> sums(static_cast<size_t>(k) * dim);
  std::vector<uint64_t> counts(k);

  for (uint32_t iter = 0; iter < options.max_iterations; ++iter) {
    CentroidIndex current(k, dim, centroids);
    for (size_t i = 0; i < n; ++i)
      assign[i] = nearest_centroid(corpus.row(i), current);

    std::fill(sums.begin(), sums.end(), 0.0);
    std::fill(counts.begin(), counts.end(), 0);
    for (size_t i = 0; i < n; ++i) {
      const auto row = corpus.row(i);
      double* s = sums.data() + static_cast<size_t>(assign[i]) * dim;
      for (uint32_t d = 0; d < dim; ++d) s[d] += row[d];
      ++counts[assign[i]];
    }

    std::vector<float> next(centroids.size());
    for (uint32_t c = 0; c < k; ++c) {
      if (counts[c] == 0) continue;
      const double* s = sums.data() + static_cast<size_t>(c) * dim;
      float* out = next.data() + static_cast<size_t>(c) * dim;
      for (uint32_t d = 0; d < dim; ++d)
        out[d] = static_cast<float>(s[d] / static_cast<double>(counts[c]));
    }

    // Reseed empty centroids to the corpus point farthest from them; a point
    // may repair at most one cluster per iteration.
    std::unordered_set<size_t> used;
    for (uint32_t c = 0; c < k; ++c) {
      if (counts[c] != 0) continue;
      const std::span<const float> old{
          centroids.data() + static_cast<size_t>(c) * dim, dim};
      size_t far = 0;
      double far_d = -1.0;
      for (size_t i = 0; i < n; ++i) {
        if (used.count(i)) continue;
        const double d = squared_l2(corpus.row(i), old);
        if (d > far_d) {
          far_d = d;
          far = i;
        }
      }
      used.insert(far);
      const auto row = corpus.row(far);
      std::copy(row.begin(), row.end(),
                next.begin() + static_cast<size_t>(c) * dim);
    }

    double max_shift = 0.0;
    for (uint32_t c = 0; c < k; ++c) {
      double acc = 0.0;
      for (uint32_t d = 0; d < dim; ++d) {
        const size_t idx = static_cast<size_t>(c) * dim + d;
        const double e = static_cast<double>(next[idx]) - centroids[idx];
        acc += e * e;
      }
      max_shift = std::max(max_shift, std::sqrt(acc));
    }
    centroids = std::move(next);
    if (max_shift < tolerance) break;
  }
  return CentroidIndex(k, dim, std::move(centroids));
}

std::vector<uint32_t> assign_vectors(const EmbeddingMatrix& corpus,
                                     const CentroidIndex& index) {
  if (corpus.dim != index.dim())
    throw std::invalid_argument("corpus dim does not match index dim");
  const size_t n = corpus.count();
  std::vector<uint32_t> out(n);
  for (size_t i = 0; i < n; ++i)
    out[i] = nearest_centroid(corpus.row(i), index);
  return out;
}

ClusterManifest write_index(const EmbeddingMatrix& corpus,
                            const std::vector<uint32_t>& assignments,
                            const CentroidIndex& index,
                            const std::filesystem::path& directory) {
  if (assignments.size() != corpus.count())
    throw std::invalid_argument("assignment count does not match corpus");
  const uint32_t k = index.k();
  const uint32_t dim = index.dim();

  std::error_code ec;
  std::filesystem::create_directories(directory, ec);

  std::vector<std::vector<uint64_t>> members(k);
  for (size_t i = 0; i < assignments.size(); ++i) {
    if (assignments[i] >= k) throw std::invalid_argument("assignment out of range");
    members[assignments[i]].push_back(i);
  }

  ClusterManifest manifest;
  manifest.base_dir = directory;
  manifest.dim = dim;
  manifest.k = k;
  manifest.entries.resize(k);

  for (uint32_t c = 0; c < k; ++c) {
    const std::string name = cluster_file_name(c);
    const auto path = directory / name;
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot create cluster file", path.string());

    const uint32_t count = static_cast<uint32_t>(members[c].size());
    write_all(out, kClusterMagic, 8, path);
    const uint32_t header[4] = {c, count, dim, 0};
    write_all(out, header, sizeof(header), path);
    write_all(out, members[c].data(), count * sizeof(uint64_t), path);
    for (uint64_t id : members[c]) {
      const auto row = corpus.row(static_cast<size_t>(id));
      write_all(out, row.data(), row.size() * sizeof(float), path);
    }
    out.close();
    if (!out) throw IoError("cluster file close failed", path.string());

    manifest.entries[c] = {c, name, count,
                           std::filesystem::file_size(path)};
  }

  // Centroid file.
  {
    const auto path = directory / kCentroidFileName;
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot create centroid file", path.string());
    write_all(out, kCentroidMagic, 8, path);
    const uint32_t header[2] = {k, dim};
    write_all(out, header, sizeof(header), path);
    write_all(out, index.flat().data(), index.flat().size() * sizeof(float),
              path);
  }

  // Manifest, one JSON object per line.
  {
    const auto path = directory / kManifestFileName;
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot create manifest", path.string());
    for (const auto& e : manifest.entries) {
      nlohmann::json j = {{"cluster_id", e.cluster_id},
                          {"path", e.path},
                          {"vector_count", e.vector_count},
                          {"byte_size", e.byte_size}};
      out << j.dump() << "\n";
    }
    if (!out) throw IoError("manifest write failed", path.string());
  }
  return manifest;
}

ClusterData read_cluster(const ClusterManifest& manifest, uint32_t cluster_id) {
  return read_cluster(manifest, cluster_id, false);
}

ClusterData read_cluster(const ClusterManifest& manifest, uint32_t cluster_id,
                         bool direct_io) {
  if (cluster_id >= manifest.k)
    throw std::invalid_argument("cluster id not in manifest");
  return direct_io ? read_cluster_direct(manifest, cluster_id)
                   : read_cluster_buffered(manifest, cluster_id);
}

ClusterManifest load_manifest(const std::filesystem::path& directory) {
  const auto path = directory / kManifestFileName;
  std::ifstream in(path);
  if (!in) throw IoError("manifest missing", path.string());

  ClusterManifest manifest;
  manifest.base_dir = directory;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception&) {
      throw CorruptionError("manifest line is not valid JSON", path.string());
    }
    ManifestEntry e;
    e.cluster_id = j.at("cluster_id").get<uint32_t>();
    e.path = j.at("path").get<std::string>();
    e.vector_count = j.at("vector_count").get<uint32_t>();
    e.byte_size = j.at("byte_size").get<uint64_t>();
    manifest.entries.push_back(std::move(e));
  }
  manifest.k = static_cast<uint32_t>(manifest.entries.size());
  for (uint32_t c = 0; c < manifest.k; ++c) {
    if (manifest.entries[c].cluster_id != c)
      throw CorruptionError("manifest cluster ids are not dense", path.string());
  }

  // dim comes from the centroid file next to the manifest.
  const auto cpath = directory / kCentroidFileName;
  std::ifstream cen(cpath, std::ios::binary);
  if (!cen) throw IoError("centroid file missing", cpath.string());
  char magic[8];
  uint32_t header[2];
  cen.read(magic, 8);
  cen.read(reinterpret_cast<char*>(header), sizeof(header));
  if (!cen || std::memcmp(magic, kCentroidMagic, 8) != 0)
    throw CorruptionError("bad centroid file magic", cpath.string());
  manifest.dim = header[1];
  return manifest;
}

CentroidIndex load_centroids(const std::filesystem::path& directory) {
  const auto path = directory / kCentroidFileName;
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("centroid file missing", path.string());
  char magic[8];
  uint32_t header[2];
  in.read(magic, 8);
  in.read(reinterpret_cast<char*>(header), sizeof(header));
  if (!in || std::memcmp(magic, kCentroidMagic, 8) != 0)
    throw CorruptionError("bad centroid file magic", path.string());
  const uint32_t k = header[0];
  const uint32_t dim = header[1];
  std::vector<float> flat(static_cast<size_t>(k) * dim);
  in.read(reinterpret_cast<char*>(flat.data()),
          static_cast<std::streamsize>(flat.size() * sizeof(float)));
  if (!in) throw CorruptionError("centroid file truncated", path.string());
  return CentroidIndex(k, dim, std::move(flat));
}

}  // namespace callisto
