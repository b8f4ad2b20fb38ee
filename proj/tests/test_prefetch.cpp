#include <doctest.h>

#include <atomic>
#include <chrono>
#include <thread>
#include <vector>

#include "callisto/error.hpp"
#include "callisto/prefetch.hpp"
#include "callisto/rng.hpp"

using namespace callisto;

namespace {

std::vector<QueryGroup> make_groups(const std::vector<size_t>& sizes,
                                    uint32_t clusters_per_group = 3) {
  std::vector<QueryGroup> groups(sizes.size());
  uint64_t qid = 0;
  for (size_t g = 0; g < sizes.size(); ++g) {
    groups[g].group_id = static_cast<uint32_t>(g);
    for (size_t m = 0; m < sizes[g]; ++m) groups[g].members.push_back(qid++);
    if (g + 1 < sizes.size()) {
      PrefetchMetadata meta;
      meta.next_head_query = qid;  // first member of the next group
      for (uint32_t c = 0; c < clusters_per_group; ++c)
        meta.next_head_clusters.push_back(
            static_cast<uint32_t>((g + 1) * clusters_per_group + c));
      groups[g].prefetch = meta;
    }
  }
  return groups;
}

struct CountingLoader {
  std::atomic<int> calls{0};
  std::vector<std::vector<uint32_t>> requested;
  std::mutex mutex;

  PrefetchLoadFn fn() {
    return [this](const std::vector<uint32_t>& ids,
                  std::function<void(bool)> done) {
      calls.fetch_add(1);
      {
        std::lock_guard lock(mutex);
        requested.push_back(ids);
      }
      done(true);
    };
  }
};

void drain(const Prefetcher& p, uint64_t want_completed) {
  const auto deadline =
      std::chrono::steady_clock::now() + std::chrono::seconds(5);
  while (p.stats().completed < want_completed &&
         std::chrono::steady_clock::now() < deadline)
    std::this_thread::yield();
}

}  // namespace

TEST_SUITE("prefetch") {

TEST_CASE("dispatch of a non-final member does not trigger") {
  CountingLoader loader;
  Prefetcher p(loader.fn(), {PrefetchTrigger::dispatch, 5.0, true});
  const auto groups = make_groups({3, 2});
  p.begin_batch(groups);
  p.on_query_dispatch(0, 0);
  p.on_query_dispatch(1, 0);
  CHECK(loader.calls.load() == 0);
  p.on_query_dispatch(2, 0);  // last member
  CHECK(loader.calls.load() == 1);
  CHECK(loader.requested[0] == groups[0].prefetch->next_head_clusters);
}

TEST_CASE("completion trigger waits for the last completion") {
  CountingLoader loader;
  Prefetcher p(loader.fn(), {PrefetchTrigger::completion, 5.0, true});
  p.begin_batch(make_groups({2, 2}));
  p.on_query_dispatch(0, 0);
  p.on_query_dispatch(1, 0);
  CHECK(loader.calls.load() == 0);
  p.on_query_complete(0, 0);
  CHECK(loader.calls.load() == 0);
  p.on_query_complete(1, 0);
  CHECK(loader.calls.load() == 1);
}

TEST_CASE("a five-group trace issues exactly four prefetches") {
  CountingLoader loader;
  Prefetcher p(loader.fn(), {PrefetchTrigger::dispatch, 5.0, true});
  const auto groups = make_groups({2, 3, 1, 4, 2});
  p.begin_batch(groups);
  uint64_t qid = 0;
  for (const auto& g : groups)
    for (size_t m = 0; m < g.members.size(); ++m) {
      p.on_query_dispatch(qid, g.group_id);
      p.on_query_complete(qid, g.group_id);
      ++qid;
    }
  CHECK(loader.calls.load() == 4);
  CHECK(p.stats().issued == 4);
  CHECK(p.stats().completed == 4);
}

TEST_CASE("unknown group ids are protocol errors") {
  CountingLoader loader;
  Prefetcher p(loader.fn(), {PrefetchTrigger::dispatch, 5.0, true});
  p.begin_batch(make_groups({1}));
  CHECK_THROWS_AS(p.on_query_dispatch(0, 9), ProtocolError);
  CHECK_THROWS_AS(p.on_query_complete(0, 9), ProtocolError);
  CHECK_THROWS_AS(p.await_group_head(9), ProtocolError);
}

TEST_CASE("at most one prefetch per group under racing duplicate events") {
  for (int trial = 0; trial < 20; ++trial) {
    CountingLoader loader;
    Prefetcher p(loader.fn(), {PrefetchTrigger::dispatch, 5.0, false});
    p.begin_batch(make_groups({2, 2}));
    p.on_query_dispatch(0, 0);
    std::vector<std::jthread> threads;
    for (int t = 0; t < 8; ++t)
      threads.emplace_back([&p] { p.on_query_dispatch(1, 0); });
    threads.clear();  // join
    drain(p, 1);
    CHECK(loader.calls.load() == 1);
    CHECK(p.stats().issued == 1);
  }
}

TEST_CASE("await returns once the predecessor prefetch completed") {
  std::function<void(bool)> captured_done;
  std::mutex mutex;
  PrefetchLoadFn slow = [&](const std::vector<uint32_t>&,
                            std::function<void(bool)> done) {
    std::lock_guard lock(mutex);
    captured_done = std::move(done);  // complete later
  };
  Prefetcher p(slow, {PrefetchTrigger::dispatch, 5.0, false});
  p.begin_batch(make_groups({1, 1}));
  p.on_query_dispatch(0, 0);

  std::atomic<bool> awaited{false};
  std::jthread waiter([&] {
    CHECK(p.await_group_head(1));
    awaited.store(true);
  });
  std::this_thread::sleep_for(std::chrono::milliseconds(50));
  CHECK_FALSE(awaited.load());
  {
    // Wait for the event thread to reach the loader.
    const auto deadline =
        std::chrono::steady_clock::now() + std::chrono::seconds(5);
    for (;;) {
      std::lock_guard lock(mutex);
      if (captured_done) break;
      if (std::chrono::steady_clock::now() > deadline) FAIL("never fired");
    }
    std::lock_guard lock(mutex);
    captured_done(true);
  }
  waiter.join();
  CHECK(awaited.load());
}

TEST_CASE("await times out when the prefetch never completes") {
  PrefetchLoadFn never = [](const std::vector<uint32_t>&,
                            std::function<void(bool)>) {};
  Prefetcher p(never, {PrefetchTrigger::dispatch, 0.05, false});
  p.begin_batch(make_groups({1, 1}));
  p.on_query_dispatch(0, 0);
  CHECK_FALSE(p.await_group_head(1));
  CHECK(p.stats().await_timeouts == 1);
}

TEST_CASE("await is immediate for the first group or absent metadata") {
  CountingLoader loader;
  Prefetcher p(loader.fn(), {PrefetchTrigger::dispatch, 5.0, true});
  auto groups = make_groups({1, 1});
  groups[0].prefetch.reset();  // no metadata at all
  p.begin_batch(groups);
  CHECK(p.await_group_head(0));
  CHECK(p.await_group_head(1));
}

TEST_CASE("failed prefetch loads complete the state machine as failed") {
  PrefetchLoadFn failing = [](const std::vector<uint32_t>&,
                              std::function<void(bool)> done) { done(false); };
  Prefetcher p(failing, {PrefetchTrigger::dispatch, 5.0, true});
  p.begin_batch(make_groups({1, 1}));
  p.on_query_dispatch(0, 0);
  CHECK(p.stats().issued == 1);
  CHECK(p.stats().failed == 1);
  // The head must not block on a failed prefetch.
  CHECK(p.await_group_head(1));
}

TEST_CASE("random interleavings never double-fire") {
  Rng rng(71);
  for (int trial = 0; trial < 50; ++trial) {
    CountingLoader loader;
    const bool sync = trial % 2 == 0;
    Prefetcher p(loader.fn(),
                 {trial % 3 == 0 ? PrefetchTrigger::completion
                                 : PrefetchTrigger::dispatch,
                  5.0, sync});
    const size_t n_groups = 2 + rng.uniform_index(5);
    std::vector<size_t> sizes;
    for (size_t g = 0; g < n_groups; ++g)
      sizes.push_back(1 + rng.uniform_index(4));
    const auto groups = make_groups(sizes);
    p.begin_batch(groups);

    // Dispatch in order; completions may arrive late and duplicated
    // dispatches may occur.
    uint64_t qid = 0;
    for (const auto& g : groups) {
      for (size_t m = 0; m < g.members.size(); ++m) {
        p.on_query_dispatch(qid, g.group_id);
        if (rng.uniform() < 0.3) p.on_query_dispatch(qid, g.group_id);
        p.on_query_complete(qid, g.group_id);
        ++qid;
      }
    }
    drain(p, n_groups - 1);
    CHECK(p.stats().issued == n_groups - 1);
    CHECK(loader.calls.load() == static_cast<int>(n_groups - 1));
  }
}

}  // TEST_SUITE
