#include "callisto/workload.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <stdexcept>

#include <json.hpp>

#include "callisto/error.hpp"
#include "callisto/rng.hpp"

namespace callisto {

namespace {

constexpr char kEmbeddingMagic[8] = {'C', 'A', 'L', 'L', 'E', 'M', 'B', '1'};

// Centers come first in the seed's stream so query synthesis can re-derive
// them without replaying the point draws.
EmbeddingMatrix draw_centers(Rng& rng, const CorpusParams& params) {
  EmbeddingMatrix centers;
  centers.dim = params.dim;
  centers.values.resize(static_cast<size_t>(params.topic_count) * params.dim);
  for (auto& v : centers.values)
    v = static_cast<float>(rng.uniform(-1.0, 1.0));
  return centers;
}

std::vector<double> zipf_cumulative(uint32_t n, double skew) {
  std::vector<double> cum(n);
  double total = 0.0;
  for (uint32_t t = 0; t < n; ++t) {
    total += 1.0 / std::pow(static_cast<double>(t) + 1.0, skew);
    cum[t] = total;
  }
  return cum;
}

uint32_t pick_topic(Rng& rng, const std::vector<double>& cum) {
  const double u = rng.uniform() * cum.back();
  return static_cast<uint32_t>(
      std::lower_bound(cum.begin(), cum.end(), u) - cum.begin());
}

}  // namespace

EmbeddingMatrix topic_centers(const CorpusParams& params) {
  Rng rng(params.seed);
  return draw_centers(rng, params);
}

EmbeddingMatrix synth_corpus(const CorpusParams& params) {
  if (params.n == 0 || params.dim == 0 || params.topic_count == 0)
    throw std::invalid_argument("corpus params must be positive");
  Rng rng(params.seed);
  const EmbeddingMatrix centers = draw_centers(rng, params);
  const auto cum = zipf_cumulative(params.topic_count, params.topic_skew);

  EmbeddingMatrix corpus;
  corpus.dim = params.dim;
  corpus.values.resize(params.n * params.dim);
  for (uint64_t i = 0; i < params.n; ++i) {
    const auto center = centers.row(pick_topic(rng, cum));
    auto row = corpus.row(i);
    for (uint32_t d = 0; d < params.dim; ++d)
      row[d] = static_cast<float>(center[d] + rng.normal(0.0, params.spread));
  }
  return corpus;
}

EmbeddingMatrix synth_queries(const CorpusParams& corpus_params,
                              size_t n_queries, const OverlapProfile& profile,
                              uint64_t seed) {
  if (profile.structural_repeat_prob < 0.0 ||
      profile.structural_repeat_prob > 1.0)
    throw std::invalid_argument("structural_repeat_prob must be in [0,1]");
  const EmbeddingMatrix centers = topic_centers(corpus_params);
  const auto cum =
      zipf_cumulative(corpus_params.topic_count, profile.topic_skew);
  Rng rng(seed);

  EmbeddingMatrix queries;
  queries.dim = corpus_params.dim;
  queries.values.resize(n_queries * corpus_params.dim);
  for (size_t q = 0; q < n_queries; ++q) {
    auto row = queries.row(q);
    if (q > 0 && rng.uniform() < profile.structural_repeat_prob) {
      const size_t base = rng.uniform_index(q);
      const auto prev = queries.row(base);
      for (uint32_t d = 0; d < corpus_params.dim; ++d)
        row[d] = static_cast<float>(prev[d] + rng.normal(0.0, profile.noise));
    } else {
      const auto center = centers.row(pick_topic(rng, cum));
      for (uint32_t d = 0; d < corpus_params.dim; ++d)
        row[d] = static_cast<float>(center[d] +
                                    rng.normal(0.0, corpus_params.spread));
    }
  }
  return queries;
}

std::vector<double> gen_traffic(const TrafficConfig& config) {
  if (config.duration_s <= 0.0)
    throw std::invalid_argument("traffic duration must be positive");
  if (config.base_rate_qps <= 0.0)
    throw std::invalid_argument("base rate must be positive");
  if (config.burst_probability < 0.0 || config.burst_probability > 1.0)
    throw std::invalid_argument("burst probability must be in [0,1]");
  if (config.burst_multiplier < 1.0)
    throw std::invalid_argument("burst multiplier must be >= 1");
  if (config.weibull_shape <= 0.0)
    throw std::invalid_argument("weibull shape must be positive");

  Rng rng(config.seed);

  // Phase 1: burst schedule. Coin flips happen at interval boundaries that
  // fall outside an active burst.
  struct Burst {
    double start, end;
  };
  std::vector<Burst> bursts;
  double burst_until = -1.0;
  for (double b = 0.0; b < config.duration_s; b += config.interval_s) {
    if (b < burst_until) continue;
    if (rng.uniform() < config.burst_probability) {
      burst_until = b + rng.uniform(config.burst_min_s, config.burst_max_s);
      bursts.push_back({b, burst_until});
    }
  }

  // Phase 2: arrivals. Mean of Weibull(shape, scale) is
  // scale * Gamma(1 + 1/shape); pick scale so the mean equals 1/rate.
  const double gamma_term = std::tgamma(1.0 + 1.0 / config.weibull_shape);
  size_t burst_idx = 0;
  std::vector<double> arrivals;
  double t = 0.0;
  for (;;) {
    while (burst_idx < bursts.size() && t >= bursts[burst_idx].end)
      ++burst_idx;
    const bool bursting = burst_idx < bursts.size() &&
                          t >= bursts[burst_idx].start &&
                          t < bursts[burst_idx].end;
    const double rate = bursting
                            ? config.base_rate_qps * config.burst_multiplier
                            : config.base_rate_qps;
    const double scale = (1.0 / rate) / gamma_term;
    t += rng.weibull(config.weibull_shape, scale);
    if (t >= config.duration_s) break;
    arrivals.push_back(t);
  }
  return arrivals;
}

void write_embeddings(const EmbeddingMatrix& m,
                      const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot create embedding file", path.string());
  out.write(kEmbeddingMagic, 8);
  const uint32_t header[2] = {static_cast<uint32_t>(m.count()), m.dim};
  out.write(reinterpret_cast<const char*>(header), sizeof(header));
  out.write(reinterpret_cast<const char*>(m.values.data()),
            static_cast<std::streamsize>(m.values.size() * sizeof(float)));
  if (!out) throw IoError("embedding write failed", path.string());
}

EmbeddingMatrix read_embeddings(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("embedding file missing", path.string());
  char magic[8];
  uint32_t header[2];
  in.read(magic, 8);
  in.read(reinterpret_cast<char*>(header), sizeof(header));
  if (!in || std::memcmp(magic, kEmbeddingMagic, 8) != 0)
    throw CorruptionError("bad embedding file magic", path.string());
  EmbeddingMatrix m;
  m.dim = header[1];
  m.values.resize(static_cast<size_t>(header[0]) * header[1]);
  in.read(reinterpret_cast<char*>(m.values.data()),
          static_cast<std::streamsize>(m.values.size() * sizeof(float)));
  if (!in) throw CorruptionError("embedding file truncated", path.string());
  return m;
}

void write_trace(const WorkloadTrace& trace,
                 const std::filesystem::path& directory) {
  std::error_code ec;
  std::filesystem::create_directories(directory, ec);
  const auto events_path = directory / kTraceEventsFileName;
  std::ofstream out(events_path, std::ios::trunc);
  if (!out) throw IoError("cannot create trace events", events_path.string());
  for (const auto& e : trace.events) {
    nlohmann::json j = {{"t", e.arrival_time}, {"qid", e.query_id}};
    out << j.dump() << "\n";
  }
  if (!out) throw IoError("trace events write failed", events_path.string());
  write_embeddings(trace.queries, directory / kTraceQueriesFileName);
}

WorkloadTrace read_trace(const std::filesystem::path& directory) {
  const auto events_path = directory / kTraceEventsFileName;
  std::ifstream in(events_path);
  if (!in) throw IoError("trace events missing", events_path.string());
  WorkloadTrace trace;
  std::string line;
  double prev = -std::numeric_limits<double>::infinity();
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception&) {
      throw CorruptionError("trace event line is not valid JSON",
                            events_path.string());
    }
    TraceEvent e;
    e.arrival_time = j.at("t").get<double>();
    e.query_id = j.at("qid").get<uint64_t>();
    if (e.arrival_time < prev)
      throw CorruptionError("trace arrival times decrease",
                            events_path.string());
    prev = e.arrival_time;
    trace.events.push_back(e);
  }
  trace.queries = read_embeddings(directory / kTraceQueriesFileName);
  return trace;
}

}  // namespace callisto
