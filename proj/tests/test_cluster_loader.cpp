#include <doctest.h>

#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <filesystem>
#include <numeric>
#include <set>
#include <thread>

#include "callisto/cluster_loader.hpp"
#include "callisto/rng.hpp"

using namespace callisto;
namespace fs = std::filesystem;

namespace {

std::vector<MissingCluster> sized(std::vector<uint64_t> sizes) {
  std::vector<MissingCluster> out;
  for (size_t i = 0; i < sizes.size(); ++i)
    out.push_back({static_cast<uint32_t>(i), sizes[i]});
  return out;
}

// Independent makespan computation: worker w takes order[w + c*T], cost is
// proportional to size (uniform per-byte cost, no overhead).
double brute_force_makespan(const std::vector<uint32_t>& order,
                            const std::vector<uint64_t>& size_of_id,
                            uint32_t workers) {
  std::vector<double> load(workers, 0.0);
  for (size_t slot = 0; slot < order.size(); ++slot)
    load[slot % workers] += static_cast<double>(size_of_id[order[slot]]);
  return load.empty() ? 0.0 : *std::max_element(load.begin(), load.end());
}

struct IndexFixture {
  fs::path dir;
  EmbeddingMatrix corpus;
  CentroidIndex index{1, 1, {0.0f}};
  ClusterManifest manifest;

  explicit IndexFixture(uint32_t k, size_t n = 400, uint64_t seed = 21) {
    dir = fs::temp_directory_path() /
          ("callisto_loader_" + std::to_string(::getpid()) + "_" +
           std::to_string(seed));
    fs::remove_all(dir);
    Rng rng(seed);
    corpus.dim = 8;
    corpus.values.resize(n * corpus.dim);
    for (auto& v : corpus.values) v = static_cast<float>(rng.uniform(-1, 1));
    index = train_kmeans(corpus, k, seed);
    manifest = write_index(corpus, assign_vectors(corpus, index), index, dir);
  }
  ~IndexFixture() { fs::remove_all(dir); }
};

}  // namespace

TEST_SUITE("cluster_loader") {

TEST_CASE("greedy plan chunks the size-descending order") {
  const auto missing = sized({10, 9, 8, 7, 6, 5, 4, 3});
  // ids by descending size: 0(10) 1(9) 2(8) 3(7) 4(6) 5(5) 6(4) 7(3)
  const auto plan = plan_load(missing, 2);
  CHECK(plan.order == std::vector<uint32_t>{0, 1, 2, 3, 4, 5, 6, 7});
  REQUIRE(plan.thread_groups.size() == 4);
  CHECK(plan.thread_groups[0] == std::vector<uint32_t>{0, 1});
  CHECK(plan.thread_groups[3] == std::vector<uint32_t>{6, 7});

  std::vector<uint64_t> size_of_id{10, 9, 8, 7, 6, 5, 4, 3};
  CHECK(brute_force_makespan(plan.order, size_of_id, 2) == 28.0);  // 10+8+6+4

  // Arrival order [3,10,4,9,5,8,6,7] under round-robin: worker 1 gets
  // 10+9+8+7 = 34.
  const std::vector<MissingCluster> arrival = {{7, 3}, {0, 10}, {6, 4},
                                               {1, 9}, {5, 5},  {2, 8},
                                               {4, 6}, {3, 7}};
  const auto rr = baseline_round_robin(arrival, 2);
  CHECK(brute_force_makespan(rr.order, size_of_id, 2) == 34.0);
}

TEST_CASE("plan ties break by ascending cluster id") {
  const auto plan = plan_load(sized({5, 5, 9, 5}), 2);
  CHECK(plan.order == std::vector<uint32_t>{2, 0, 1, 3});
}

TEST_CASE("small and degenerate plans") {
  SUBCASE("N <= T is a single thread group") {
    const auto plan = plan_load(sized({3, 7, 5}), 8);
    CHECK(plan.thread_groups.size() == 1);
    CHECK(plan.order == std::vector<uint32_t>{1, 2, 0});
  }
  SUBCASE("empty input gives an empty plan") {
    const auto plan = plan_load({}, 4);
    CHECK(plan.order.empty());
    CHECK(plan.thread_groups.empty());
  }
  SUBCASE("equal sizes load all workers evenly") {
    std::vector<uint64_t> sizes(12, 6);
    const auto plan = plan_load(sized(std::vector<uint64_t>(sizes)), 4);
    std::vector<uint64_t> size_of_id(12, 6);
    CHECK(brute_force_makespan(plan.order, size_of_id, 4) == 18.0);  // 3 * 6
  }
}

TEST_CASE("plan invariants hold on random instances") {
  Rng rng(31);
  for (int trial = 0; trial < 300; ++trial) {
    const size_t n = 1 + rng.uniform_index(64);
    const uint32_t workers = 1 + static_cast<uint32_t>(rng.uniform_index(8));
    std::vector<MissingCluster> missing;
    for (size_t i = 0; i < n; ++i)
      missing.push_back({static_cast<uint32_t>(i),
                         static_cast<uint64_t>(rng.uniform_index(10000))});
    const auto plan = plan_load(missing, workers);

    // Permutation of the input ids.
    std::set<uint32_t> ids(plan.order.begin(), plan.order.end());
    CHECK(ids.size() == n);
    // Concatenation of thread_groups equals order.
    std::vector<uint32_t> flat;
    for (const auto& g : plan.thread_groups) {
      CHECK(g.size() <= workers);
      flat.insert(flat.end(), g.begin(), g.end());
    }
    CHECK(flat == plan.order);
    // Globally non-increasing sizes, ties by ascending id.
    for (size_t i = 1; i < plan.order.size(); ++i) {
      const auto sa = missing[plan.order[i - 1]].byte_size;
      const auto sb = missing[plan.order[i]].byte_size;
      CHECK(sa >= sb);
      if (sa == sb) CHECK(plan.order[i - 1] < plan.order[i]);
    }
  }
}

TEST_CASE("greedy makespan respects the total/T + max bound") {
  Rng rng(33);
  for (int trial = 0; trial < 300; ++trial) {
    const size_t n = 1 + rng.uniform_index(200);
    const uint32_t workers = (trial % 3 == 0) ? 2 : (trial % 3 == 1 ? 4 : 8);
    std::vector<MissingCluster> missing;
    std::vector<uint64_t> size_of_id(n);
    uint64_t total = 0;
    uint64_t max_size = 0;
    for (size_t i = 0; i < n; ++i) {
      const auto s = static_cast<uint64_t>(rng.pareto(10.0, 1.2));
      missing.push_back({static_cast<uint32_t>(i), s});
      size_of_id[i] = s;
      total += s;
      max_size = std::max(max_size, s);
    }
    const auto plan = plan_load(missing, workers);
    const double makespan = brute_force_makespan(plan.order, size_of_id,
                                                 workers);
    CHECK(makespan <= static_cast<double>(total) / workers +
                          static_cast<double>(max_size) + 1e-9);
  }
}

TEST_CASE("greedy beats random-order round robin on average") {
  Rng rng(35);
  double greedy_sum = 0.0, random_sum = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const size_t n = 20 + rng.uniform_index(100);
    const uint32_t workers = 8;
    std::vector<MissingCluster> missing;
    std::vector<uint64_t> size_of_id(n);
    for (size_t i = 0; i < n; ++i) {
      const auto s = static_cast<uint64_t>(rng.pareto(10.0, 1.2));
      missing.push_back({static_cast<uint32_t>(i), s});
      size_of_id[i] = s;
    }
    greedy_sum += brute_force_makespan(plan_load(missing, workers).order,
                                       size_of_id, workers);
    // Random arrival order baseline.
    for (size_t i = n; i > 1; --i)
      std::swap(missing[i - 1], missing[rng.uniform_index(i)]);
    random_sum += brute_force_makespan(
        baseline_round_robin(missing, workers).order, size_of_id, workers);
  }
  CHECK(greedy_sum <= random_sum);
}

TEST_CASE("simulate_load_timing follows the dispatch rule") {
  const auto missing = sized({10, 9, 8, 7, 6, 5, 4, 3});
  const auto plan = plan_load(missing, 2);
  VirtualIoModel model;
  model.file_overhead_s = 0.0;
  model.throughput_bytes_per_s = 1.0;  // cost == size
  const auto timing = simulate_load_timing(
      plan, [&](uint32_t id) { return missing[id].byte_size; }, model);
  REQUIRE(timing.threads.size() == 2);
  CHECK(timing.threads[0].seconds == doctest::Approx(28.0));
  CHECK(timing.threads[1].seconds == doctest::Approx(24.0));
  CHECK(timing.makespan_s == doctest::Approx(28.0));
  CHECK(timing.threads[0].cluster_ids == std::vector<uint32_t>{0, 2, 4, 6});
}

TEST_CASE("pool loads clusters into the cache with timings") {
  IndexFixture fx(8);
  ClusterCache cache(16, {});
  ClusterLoader loader(fx.manifest, cache, 4);

  std::vector<MissingCluster> missing;
  for (uint32_t c = 0; c < 8; ++c)
    missing.push_back({c, fx.manifest.byte_size(c)});
  const auto outcome = loader.load_demand(plan_load(missing, 4), false);

  CHECK(outcome.failures.empty());
  CHECK(outcome.loaded.size() == 8);
  CHECK(outcome.timing.makespan_s >= 0.0);
  uint64_t thread_bytes = 0;
  for (const auto& t : outcome.timing.threads) thread_bytes += t.bytes;
  uint64_t manifest_bytes = 0;
  for (uint32_t c = 0; c < 8; ++c) manifest_bytes += fx.manifest.byte_size(c);
  CHECK(thread_bytes == manifest_bytes);

  for (uint32_t c = 0; c < 8; ++c) {
    CHECK(cache.contains(c));
    CHECK(cache.load_latency(c).has_value());
  }
  // Loaded data round-trips the files.
  for (const auto& d : outcome.loaded) {
    const auto direct = read_cluster(fx.manifest, d->cluster_id);
    CHECK(d->vector_ids == direct.vector_ids);
    CHECK(d->vectors.values == direct.vectors.values);
  }
}

TEST_CASE("empty demand plan returns immediately") {
  IndexFixture fx(2);
  ClusterCache cache(4, {});
  ClusterLoader loader(fx.manifest, cache, 2);
  const auto outcome = loader.load_demand(LoadPlan{{}, {}, 2}, false);
  CHECK(outcome.loaded.empty());
  CHECK(outcome.timing.makespan_s == 0.0);
}

TEST_CASE("a corrupt cluster fails alone while the rest load") {
  IndexFixture fx(6);
  fs::resize_file(fx.manifest.cluster_path(3),
                  fs::file_size(fx.manifest.cluster_path(3)) / 2);
  ClusterCache cache(16, {});
  ClusterLoader loader(fx.manifest, cache, 3);
  std::vector<MissingCluster> missing;
  for (uint32_t c = 0; c < 6; ++c)
    missing.push_back({c, fx.manifest.byte_size(c)});
  const auto outcome = loader.load_demand(plan_load(missing, 3), false);
  REQUIRE(outcome.failures.size() == 1);
  CHECK(outcome.failures[0].first == 3);
  CHECK(outcome.loaded.size() == 5);
  CHECK_FALSE(cache.contains(3));
}

TEST_CASE("background loads run behind demand and report via callback") {
  IndexFixture fx(8);
  ClusterCache cache(16, {});
  ClusterLoader loader(fx.manifest, cache, 2);

  std::vector<MissingCluster> missing;
  for (uint32_t c = 0; c < 4; ++c)
    missing.push_back({c, fx.manifest.byte_size(c)});

  std::atomic<int> done{0};
  loader.load_background(plan_load(missing, 2), [&](LoadOutcome out) {
    CHECK(out.failures.empty());
    CHECK(out.loaded.size() == 4);
    done.store(1);
  });
  // A demand load through the same pool still completes.
  std::vector<MissingCluster> demand{{5, fx.manifest.byte_size(5)}};
  const auto out = loader.load_demand(plan_load(demand, 2), false);
  CHECK(out.loaded.size() == 1);
  while (done.load() == 0) std::this_thread::yield();
  for (uint32_t c = 0; c < 4; ++c) CHECK(cache.contains(c));
}

TEST_CASE("virtual load admits with modeled latency and simulated timing") {
  IndexFixture fx(6);
  ClusterCache cache(16, {});
  ClusterLoader loader(fx.manifest, cache, 2);
  VirtualIoModel model;
  model.file_overhead_s = 0.001;
  model.throughput_bytes_per_s = 1e6;

  std::vector<MissingCluster> missing;
  for (uint32_t c = 0; c < 6; ++c)
    missing.push_back({c, fx.manifest.byte_size(c)});
  const auto plan = plan_load(missing, 2);
  const auto outcome = loader.load_virtual(plan, model, false, false);
  CHECK(outcome.loaded.size() == 6);

  const auto expect = simulate_load_timing(
      plan, [&](uint32_t id) { return fx.manifest.byte_size(id); }, model);
  CHECK(outcome.timing.makespan_s == doctest::Approx(expect.makespan_s));
  for (uint32_t c = 0; c < 6; ++c)
    CHECK(*cache.load_latency(c) ==
          doctest::Approx(model.cost(fx.manifest.byte_size(c))));
}

}  // TEST_SUITE
