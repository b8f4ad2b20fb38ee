#include <doctest.h>

#include <unistd.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <limits>
#include <set>

#include "callisto/error.hpp"
#include "callisto/rng.hpp"
#include "callisto/vector_index.hpp"

using namespace callisto;
namespace fs = std::filesystem;

namespace {

EmbeddingMatrix random_matrix(size_t n, uint32_t dim, uint64_t seed,
                              double lo = -1.0, double hi = 1.0) {
  Rng rng(seed);
  EmbeddingMatrix m;
  m.dim = dim;
  m.values.resize(n * dim);
  for (auto& v : m.values) v = static_cast<float>(rng.uniform(lo, hi));
  return m;
}

// Independent oracle: exhaustive nearest-centroid scan with the tie-break
// by lowest id.
uint32_t brute_force_nearest(std::span<const float> v,
                             const CentroidIndex& index) {
  uint32_t best = 0;
  float best_d = std::numeric_limits<float>::infinity();
  for (uint32_t c = 0; c < index.k(); ++c) {
    const float d = squared_l2(v, index.centroid(c));
    if (d < best_d) {
      best_d = d;
      best = c;
    }
  }
  return best;
}

fs::path temp_dir(const char* tag) {
  const auto dir = fs::temp_directory_path() /
                   (std::string("callisto_test_") + tag + "_" +
                    std::to_string(::getpid()));
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::vector<char> slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_SUITE("vector_index") {

TEST_CASE("kmeans with k=1 yields the corpus mean") {
  const auto corpus = random_matrix(257, 8, 42);
  const auto index = train_kmeans(corpus, 1, 7);
  std::vector<double> mean(8, 0.0);
  for (size_t i = 0; i < corpus.count(); ++i)
    for (uint32_t d = 0; d < 8; ++d) mean[d] += corpus.row(i)[d];
  for (uint32_t d = 0; d < 8; ++d)
    CHECK(index.centroid(0)[d] ==
          doctest::Approx(mean[d] / corpus.count()).epsilon(1e-6));
}

TEST_CASE("kmeans on unit-square corners converges onto the corners") {
  EmbeddingMatrix corpus;
  corpus.dim = 2;
  corpus.values = {0, 0, 0, 1, 1, 0, 1, 1};
  const auto index = train_kmeans(corpus, 4, 3);
  std::set<std::pair<float, float>> got, want{{0, 0}, {0, 1}, {1, 0}, {1, 1}};
  for (uint32_t c = 0; c < 4; ++c)
    got.insert({index.centroid(c)[0], index.centroid(c)[1]});
  CHECK(got == want);
}

TEST_CASE("kmeans rejects bad input") {
  auto corpus = random_matrix(3, 4, 1);
  CHECK_THROWS_AS(train_kmeans(corpus, 5, 1), std::invalid_argument);
  corpus.values[2] = std::numeric_limits<float>::quiet_NaN();
  CHECK_THROWS_AS(train_kmeans(corpus, 2, 1), std::invalid_argument);
}

TEST_CASE("assignments match an exhaustive nearest-centroid scan") {
  const auto corpus = random_matrix(1000, 16, 11);
  const auto index = train_kmeans(corpus, 20, 5);
  const auto assignments = assign_vectors(corpus, index);
  REQUIRE(assignments.size() == corpus.count());
  for (size_t i = 0; i < corpus.count(); ++i)
    CHECK(assignments[i] == brute_force_nearest(corpus.row(i), index));
}

TEST_CASE("assignment tie-break picks the lowest cluster id") {
  // Two identical centroids: everything must land on id 0.
  CentroidIndex index(2, 2, {0.5f, 0.5f, 0.5f, 0.5f});
  EmbeddingMatrix corpus;
  corpus.dim = 2;
  corpus.values = {0.1f, 0.9f, 0.7f, 0.3f};
  const auto assignments = assign_vectors(corpus, index);
  CHECK(assignments == std::vector<uint32_t>{0, 0});

  // Equidistant from centroids 2 (at -1) and 5 (at +1) on a line.
  CentroidIndex line(6, 1, {-9, -7, -1, 5, 7, 1});
  EmbeddingMatrix q;
  q.dim = 1;
  q.values = {0.0f};
  CHECK(assign_vectors(q, line) == std::vector<uint32_t>{2});
}

TEST_CASE("assign rejects dim mismatch") {
  CentroidIndex index(1, 3, {0, 0, 0});
  const auto corpus = random_matrix(4, 2, 1);
  CHECK_THROWS_AS(assign_vectors(corpus, index), std::invalid_argument);
}

TEST_CASE("probe returns distance-ordered ids with stable ties") {
  const auto corpus = random_matrix(300, 8, 17);
  const auto index = train_kmeans(corpus, 10, 9);

  SUBCASE("nprobe == K is the full id set") {
    const auto all = index.probe(corpus.row(0), 10);
    std::set<uint32_t> ids(all.begin(), all.end());
    CHECK(ids.size() == 10);
  }
  SUBCASE("query equal to a centroid probes it first") {
    std::vector<float> q(index.centroid(7).begin(), index.centroid(7).end());
    CHECK(index.probe(q, 1) == std::vector<uint32_t>{7});
  }
  SUBCASE("nprobe out of range throws") {
    CHECK_THROWS_AS(index.probe(corpus.row(0), 11), std::invalid_argument);
    CHECK_THROWS_AS(index.probe(corpus.row(0), 0), std::invalid_argument);
  }
  SUBCASE("probe sets are nested as nprobe grows") {
    for (size_t qi = 0; qi < 25; ++qi) {
      const auto q = corpus.row(qi);
      auto prev = index.probe(q, 1);
      for (uint32_t np = 2; np <= 10; ++np) {
        const auto cur = index.probe(q, np);
        REQUIRE(cur.size() == np);
        for (uint32_t i = 0; i + 1 < np; ++i) CHECK(cur[i] == prev[i]);
        prev = cur;
      }
    }
  }
}

TEST_CASE("index round-trips through disk bit-exactly") {
  const auto dir = temp_dir("roundtrip");
  const auto corpus = random_matrix(500, 12, 23);
  const auto index = train_kmeans(corpus, 100, 31);
  const auto assignments = assign_vectors(corpus, index);
  const auto manifest = write_index(corpus, assignments, index, dir);

  REQUIRE(manifest.k == 100);
  CHECK(manifest.total_vectors() == 500);

  std::vector<bool> seen(500, false);
  for (uint32_t c = 0; c < manifest.k; ++c) {
    const auto data = read_cluster(manifest, c);
    CHECK(data.cluster_id == c);
    CHECK(data.vector_ids.size() == manifest.entries[c].vector_count);
    CHECK(manifest.entries[c].byte_size ==
          fs::file_size(manifest.cluster_path(c)));
    for (size_t i = 0; i < data.vector_ids.size(); ++i) {
      const auto id = data.vector_ids[i];
      REQUIRE(id < 500);
      CHECK_FALSE(seen[id]);
      seen[id] = true;
      CHECK(assignments[id] == c);
      const auto original = corpus.row(id);
      const auto loaded = data.vectors.row(i);
      for (uint32_t d = 0; d < corpus.dim; ++d)
        CHECK(original[d] == loaded[d]);  // bit-identical f32
    }
  }
  CHECK(std::all_of(seen.begin(), seen.end(), [](bool b) { return b; }));

  const auto reloaded = load_centroids(dir);
  CHECK(reloaded.k() == index.k());
  for (uint32_t c = 0; c < index.k(); ++c)
    for (uint32_t d = 0; d < index.dim(); ++d)
      CHECK(reloaded.centroid(c)[d] == index.centroid(c)[d]);

  const auto manifest2 = load_manifest(dir);
  CHECK(manifest2.k == manifest.k);
  CHECK(manifest2.dim == manifest.dim);
  fs::remove_all(dir);
}

TEST_CASE("identical build inputs produce identical files") {
  const auto corpus = random_matrix(400, 6, 77);
  const auto a = temp_dir("det_a");
  const auto b = temp_dir("det_b");
  for (const auto& dir : {a, b}) {
    const auto index = train_kmeans(corpus, 16, 123);
    write_index(corpus, assign_vectors(corpus, index), index, dir);
  }
  for (const auto& entry : fs::directory_iterator(a)) {
    const auto name = entry.path().filename();
    CHECK(slurp(a / name) == slurp(b / name));
  }
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST_CASE("empty clusters produce valid zero-count files") {
  const auto dir = temp_dir("empty");
  const auto corpus = random_matrix(10, 4, 5);
  CentroidIndex index(4, 4, random_matrix(4, 4, 6).values);
  std::vector<uint32_t> assignments(10, 1);  // clusters 0, 2, 3 empty
  const auto manifest = write_index(corpus, assignments, index, dir);
  for (uint32_t c : {0u, 2u, 3u}) {
    const auto data = read_cluster(manifest, c);
    CHECK(data.count() == 0);
    CHECK(manifest.entries[c].vector_count == 0);
  }
  CHECK(read_cluster(manifest, 1).count() == 10);
  fs::remove_all(dir);
}

TEST_CASE("corrupt cluster files are rejected") {
  const auto dir = temp_dir("corrupt");
  const auto corpus = random_matrix(50, 4, 5);
  const auto index = train_kmeans(corpus, 2, 5);
  const auto manifest = write_index(corpus, assign_vectors(corpus, index),
                                    index, dir);

  SUBCASE("bad magic") {
    std::fstream f(manifest.cluster_path(0),
                   std::ios::binary | std::ios::in | std::ios::out);
    f.seekp(0);
    f.write("XXXXXXXX", 8);
    f.close();
    CHECK_THROWS_AS(read_cluster(manifest, 0), CorruptionError);
  }
  SUBCASE("truncated payload") {
    const auto path = manifest.cluster_path(1);
    fs::resize_file(path, fs::file_size(path) - 5);
    CHECK_THROWS_AS(read_cluster(manifest, 1), CorruptionError);
  }
  SUBCASE("missing file") {
    fs::remove(manifest.cluster_path(0));
    CHECK_THROWS_AS(read_cluster(manifest, 0), CorruptionError);
  }
  SUBCASE("unknown id") {
    CHECK_THROWS_AS(read_cluster(manifest, 99), std::invalid_argument);
  }
  fs::remove_all(dir);
}

TEST_CASE("direct-io read matches buffered read") {
  const auto dir = temp_dir("direct");
  const auto corpus = random_matrix(200, 8, 9);
  const auto index = train_kmeans(corpus, 4, 9);
  const auto manifest = write_index(corpus, assign_vectors(corpus, index),
                                    index, dir);
  for (uint32_t c = 0; c < 4; ++c) {
    const auto buffered = read_cluster(manifest, c, false);
    const auto direct = read_cluster(manifest, c, true);
    CHECK(buffered.vector_ids == direct.vector_ids);
    CHECK(buffered.vectors.values == direct.vectors.values);
  }
  fs::remove_all(dir);
}

}  // TEST_SUITE
