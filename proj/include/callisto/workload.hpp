#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "callisto/embedding.hpp"

namespace callisto {

struct CorpusParams {
  uint64_t n = 10000;
  uint32_t dim = 64;
  uint32_t topic_count = 100;
  double spread = 0.2;  // per-dimension Gaussian stddev around a topic center
  uint64_t seed = 1;
  // Zipf exponent of topic popularity; 0 is uniform. Skewed topics give the
  // uneven cluster sizes disk-based indexes see in practice.
  double topic_skew = 1.0;
};

/// Controls how strongly the query stream repeats earlier cluster-access
/// structure: with structural_repeat_prob a query is a noisy copy of a
/// previously emitted query (possibly far back in the stream), otherwise a
/// fresh topic sample with its own popularity skew.
struct OverlapProfile {
  double structural_repeat_prob = 0.5;
  double noise = 0.02;
  double topic_skew = 1.6;
};

struct TrafficConfig {
  double base_rate_qps = 100.0;
  double burst_probability = 0.1;  // per interval
  double burst_multiplier = 3.0;
  double interval_s = 1.0;
  double weibull_shape = 1.0;
  double duration_s = 60.0;
  double burst_min_s = 1.0;
  double burst_max_s = 5.0;
  uint64_t seed = 1;
};

struct TraceEvent {
  double arrival_time = 0.0;
  uint64_t query_id = 0;  // row in the trace's query matrix
};

struct WorkloadTrace {
  std::vector<TraceEvent> events;  // arrival_time non-decreasing
  EmbeddingMatrix queries;
};

/// Gaussian mixture corpus: topic centers uniform in [-1,1]^dim, points are
/// center + N(0, spread^2 I). Deterministic per seed.
EmbeddingMatrix synth_corpus(const CorpusParams& params);

/// Topic centers the corpus was drawn from (same derivation, same seed).
EmbeddingMatrix topic_centers(const CorpusParams& params);

EmbeddingMatrix synth_queries(const CorpusParams& corpus_params,
                              size_t n_queries, const OverlapProfile& profile,
                              uint64_t seed);

/// Arrival times over [0, duration): Weibull inter-arrivals with the scale
/// chosen so the mean matches the current rate. At each interval boundary
/// outside a burst, a coin flip with burst_probability starts a burst of
/// uniform [burst_min_s, burst_max_s] length at burst_multiplier times the
/// base rate. Deterministic per seed.
std::vector<double> gen_traffic(const TrafficConfig& config);

void write_embeddings(const EmbeddingMatrix& m,
                      const std::filesystem::path& path);
EmbeddingMatrix read_embeddings(const std::filesystem::path& path);

/// Trace directory layout: events.jsonl ({t, qid} per line) plus
/// queries.emb. Round-trips exactly.
void write_trace(const WorkloadTrace& trace,
                 const std::filesystem::path& directory);
WorkloadTrace read_trace(const std::filesystem::path& directory);

inline constexpr const char* kTraceEventsFileName = "events.jsonl";
inline constexpr const char* kTraceQueriesFileName = "queries.emb";

}  // namespace callisto
