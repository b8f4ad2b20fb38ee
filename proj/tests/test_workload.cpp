#include <doctest.h>

#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "callisto/error.hpp"
#include "callisto/query_grouping.hpp"
#include "callisto/rng.hpp"
#include "callisto/vector_index.hpp"
#include "callisto/workload.hpp"

using namespace callisto;
namespace fs = std::filesystem;

TEST_SUITE("workload") {

TEST_CASE("corpus generation is bit-identical per seed") {
  CorpusParams params;
  params.n = 500;
  params.dim = 16;
  params.topic_count = 10;
  const auto a = synth_corpus(params);
  const auto b = synth_corpus(params);
  CHECK(a.values == b.values);
  params.seed = 2;
  const auto c = synth_corpus(params);
  CHECK(a.values != c.values);
}

TEST_CASE("single topic with zero spread collapses onto the center") {
  CorpusParams params;
  params.n = 50;
  params.dim = 8;
  params.topic_count = 1;
  params.spread = 0.0;
  const auto corpus = synth_corpus(params);
  const auto centers = topic_centers(params);
  for (size_t i = 0; i < corpus.count(); ++i)
    for (uint32_t d = 0; d < 8; ++d)
      CHECK(corpus.row(i)[d] == centers.row(0)[d]);
}

TEST_CASE("cluster sizes over a topic mixture are non-uniform") {
  CorpusParams params;
  params.n = 10000;
  params.dim = 16;
  params.topic_count = 100;
  const auto corpus = synth_corpus(params);
  const auto index = train_kmeans(corpus, 100, 1);
  const auto assignments = assign_vectors(corpus, index);
  std::vector<double> counts(100, 0.0);
  for (uint32_t a : assignments) counts[a] += 1.0;
  const double mean = 100.0;
  double var = 0.0;
  for (double c : counts) var += (c - mean) * (c - mean);
  var /= counts.size();
  const double cv = std::sqrt(var) / mean;
  CHECK(cv > 0.0);
}

TEST_CASE("full structural repeats with zero noise are identical queries") {
  CorpusParams params;
  params.n = 10;
  params.dim = 8;
  params.topic_count = 4;
  const auto queries = synth_queries(params, 40, {1.0, 0.0}, 9);
  for (size_t q = 1; q < queries.count(); ++q)
    for (uint32_t d = 0; d < 8; ++d)
      CHECK(queries.row(q)[d] == queries.row(0)[d]);
}

TEST_CASE("repeat probability zero keeps overlap at the fresh baseline") {
  // Without structural repeats, adjacent and far pairs should look alike:
  // no elevated overlap beyond what independent topic sampling gives.
  CorpusParams params;
  params.n = 4000;
  params.dim = 32;
  params.topic_count = 50;
  const auto corpus = synth_corpus(params);
  const auto index = train_kmeans(corpus, 50, 3);
  const auto queries = synth_queries(params, 400, {0.0, 0.0}, 11);

  std::vector<std::vector<uint32_t>> sets;
  for (size_t q = 0; q < queries.count(); ++q)
    sets.push_back(index.probe(queries.row(q), 10));

  double adjacent = 0.0;
  for (size_t q = 1; q < sets.size(); ++q)
    adjacent += jaccard_hash(sets[q - 1], sets[q]);
  adjacent /= static_cast<double>(sets.size() - 1);

  Rng rng(5);
  double far = 0.0;
  const int far_pairs = 399;
  for (int p = 0; p < far_pairs; ++p) {
    const size_t a = rng.uniform_index(sets.size());
    const size_t b = rng.uniform_index(sets.size());
    far += jaccard_hash(sets[a], sets[b]);
  }
  far /= far_pairs;
  CHECK(std::abs(adjacent - far) < 0.1);
}

TEST_CASE("default profile yields strong non-adjacent overlap") {
  CorpusParams params;
  params.n = 4000;
  params.dim = 32;
  params.topic_count = 50;
  const auto corpus = synth_corpus(params);
  const auto index = train_kmeans(corpus, 100, 3);
  const auto queries = synth_queries(params, 200, OverlapProfile{}, 13);

  std::vector<std::vector<uint32_t>> sets;
  for (size_t q = 0; q < queries.count(); ++q)
    sets.push_back(index.probe(queries.row(q), 30));

  // Over sliding 10-query windows, at least 20% of non-adjacent pairs
  // should share half their clusters.
  size_t strong = 0, total = 0;
  for (size_t w = 0; w + 10 <= sets.size(); w += 10) {
    for (size_t a = w; a < w + 10; ++a)
      for (size_t b = a + 2; b < w + 10; ++b) {  // skip adjacent pairs
        ++total;
        if (jaccard_hash(sets[a], sets[b]) >= 0.5) ++strong;
      }
  }
  CHECK(static_cast<double>(strong) / static_cast<double>(total) >= 0.2);
}

TEST_CASE("traffic arrivals are reproducible, monotone and in range") {
  TrafficConfig cfg;
  cfg.duration_s = 30.0;
  const auto a = gen_traffic(cfg);
  const auto b = gen_traffic(cfg);
  CHECK(a == b);
  REQUIRE(!a.empty());
  CHECK(std::is_sorted(a.begin(), a.end()));
  CHECK(a.front() >= 0.0);
  CHECK(a.back() < cfg.duration_s);
  for (size_t i = 1; i < a.size(); ++i) CHECK(a[i] > a[i - 1]);
}

TEST_CASE("shape 1 without bursts is exponential at the base rate") {
  TrafficConfig cfg;
  cfg.base_rate_qps = 200.0;
  cfg.burst_probability = 0.0;
  cfg.weibull_shape = 1.0;
  cfg.duration_s = 100.0;  // ~2e4 events
  const auto arrivals = gen_traffic(cfg);
  const double rate = static_cast<double>(arrivals.size()) / cfg.duration_s;
  CHECK(rate == doctest::Approx(cfg.base_rate_qps).epsilon(0.05));

  // Inter-arrival mean and variance match an exponential (variance ==
  // mean^2) within a loose Monte-Carlo tolerance.
  std::vector<double> gaps;
  for (size_t i = 1; i < arrivals.size(); ++i)
    gaps.push_back(arrivals[i] - arrivals[i - 1]);
  const double mean =
      std::accumulate(gaps.begin(), gaps.end(), 0.0) / gaps.size();
  double var = 0.0;
  for (double g : gaps) var += (g - mean) * (g - mean);
  var /= gaps.size();
  CHECK(var == doctest::Approx(mean * mean).epsilon(0.15));
}

TEST_CASE("weibull sampler matches exponential moments at shape 1") {
  Rng rng(17);
  const size_t n = 100000;
  double sum = 0.0, sum2 = 0.0;
  for (size_t i = 0; i < n; ++i) {
    const double x = rng.weibull(1.0, 2.0);
    sum += x;
    sum2 += x * x;
  }
  const double mean = sum / n;
  const double var = sum2 / n - mean * mean;
  // 3 sigma of the sample mean of Exp(scale=2): sd = 2/sqrt(n).
  CHECK(std::abs(mean - 2.0) < 3.0 * 2.0 / std::sqrt(n));
  CHECK(var == doctest::Approx(4.0).epsilon(0.1));
}

TEST_CASE("burst multiplier of one is indistinguishable from no burst") {
  TrafficConfig cfg;
  cfg.duration_s = 20.0;
  cfg.burst_probability = 0.5;
  cfg.burst_multiplier = 1.0;
  const auto a = gen_traffic(cfg);
  // Same seed consumes the same coin flips, so only the rate matters.
  const double rate = static_cast<double>(a.size()) / cfg.duration_s;
  CHECK(rate == doctest::Approx(cfg.base_rate_qps).epsilon(0.1));
}

TEST_CASE("bursting raises the observed rate") {
  TrafficConfig cfg;
  cfg.duration_s = 60.0;
  cfg.burst_probability = 0.3;
  cfg.burst_multiplier = 3.0;
  const auto bursty = gen_traffic(cfg);
  cfg.burst_probability = 0.0;
  const auto calm = gen_traffic(cfg);
  CHECK(bursty.size() > calm.size());
}

TEST_CASE("invalid traffic configs are rejected") {
  TrafficConfig cfg;
  cfg.duration_s = 0.0;
  CHECK_THROWS_AS(gen_traffic(cfg), std::invalid_argument);
  cfg.duration_s = 1.0;
  cfg.burst_multiplier = 0.5;
  CHECK_THROWS_AS(gen_traffic(cfg), std::invalid_argument);
}

TEST_CASE("embedding files and traces round-trip exactly") {
  const auto dir = fs::temp_directory_path() /
                   ("callisto_trace_" + std::to_string(::getpid()));
  fs::remove_all(dir);

  CorpusParams params;
  params.n = 20;
  params.dim = 8;
  params.topic_count = 3;
  WorkloadTrace trace;
  trace.queries = synth_queries(params, 64, OverlapProfile{}, 5);
  TrafficConfig tcfg;
  tcfg.duration_s = 1.0;
  const auto arrivals = gen_traffic(tcfg);
  for (size_t q = 0; q < std::min<size_t>(64, arrivals.size()); ++q)
    trace.events.push_back({arrivals[q], q});

  write_trace(trace, dir);
  const auto loaded = read_trace(dir);
  CHECK(loaded.queries.dim == trace.queries.dim);
  CHECK(loaded.queries.values == trace.queries.values);
  REQUIRE(loaded.events.size() == trace.events.size());
  for (size_t i = 0; i < trace.events.size(); ++i) {
    CHECK(loaded.events[i].arrival_time == trace.events[i].arrival_time);
    CHECK(loaded.events[i].query_id == trace.events[i].query_id);
  }
  fs::remove_all(dir);
}

TEST_CASE("embedding reader rejects foreign files") {
  const auto path = fs::temp_directory_path() /
                    ("callisto_bad_emb_" + std::to_string(::getpid()));
  std::ofstream(path) << "not an embedding file";
  CHECK_THROWS_AS(read_embeddings(path), CorruptionError);
  fs::remove(path);
}

}  // TEST_SUITE
