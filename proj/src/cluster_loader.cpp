#include "callisto/cluster_loader.hpp"

#include <algorithm>
#include <chrono>
#include <exception>

namespace callisto {

LoadPlan plan_load(std::span<const MissingCluster> missing, uint32_t workers) {
  if (workers == 0) throw std::invalid_argument("workers must be positive");
  std::vector<MissingCluster> sorted(missing.begin(), missing.end());
  std::sort(sorted.begin(), sorted.end(),
            [](const MissingCluster& a, const MissingCluster& b) {
              if (a.byte_size != b.byte_size) return a.byte_size > b.byte_size;
              return a.cluster_id < b.cluster_id;
            });

  LoadPlan plan;
  plan.workers = workers;
  plan.order.reserve(sorted.size());
  for (const auto& m : sorted) plan.order.push_back(m.cluster_id);
  for (size_t i = 0; i < plan.order.size(); i += workers) {
    const size_t end = std::min(plan.order.size(), i + workers);
    plan.thread_groups.emplace_back(plan.order.begin() + static_cast<ptrdiff_t>(i),
                                    plan.order.begin() + static_cast<ptrdiff_t>(end));
  }
  return plan;
}

LoadPlan baseline_round_robin(std::span<const MissingCluster> missing,
                              uint32_t workers) {
  if (workers == 0) throw std::invalid_argument("workers must be positive");
  LoadPlan plan;
  plan.workers = workers;
  plan.order.reserve(missing.size());
  for (const auto& m : missing) plan.order.push_back(m.cluster_id);
  for (size_t i = 0; i < plan.order.size(); i += workers) {
    const size_t end = std::min(plan.order.size(), i + workers);
    plan.thread_groups.emplace_back(plan.order.begin() + static_cast<ptrdiff_t>(i),
                                    plan.order.begin() + static_cast<ptrdiff_t>(end));
  }
  return plan;
}

LoadTiming simulate_load_timing(const LoadPlan& plan,
                                const std::function<uint64_t(uint32_t)>& bytes_of,
                                const VirtualIoModel& model) {
  LoadTiming timing;
  timing.threads.resize(plan.workers);
  for (size_t slot = 0; slot < plan.order.size(); ++slot) {
    const uint32_t id = plan.order[slot];
    auto& t = timing.threads[slot % plan.workers];
    t.cluster_ids.push_back(id);
    t.bytes += bytes_of(id);
    t.seconds += model.cost(bytes_of(id));
  }
  for (const auto& t : timing.threads)
    timing.makespan_s = std::max(timing.makespan_s, t.seconds);
  return timing;
}

struct ClusterLoader::Request {
  std::mutex mutex;
  std::condition_variable cv;
  size_t remaining = 0;
  bool pin = false;
  bool prefetched = false;
  std::function<void(LoadOutcome)> done;  // background requests only

  LoadOutcome outcome;
  std::chrono::steady_clock::time_point first_start{};
  std::chrono::steady_clock::time_point last_end{};
  bool started = false;
};

ClusterLoader::ClusterLoader(const ClusterManifest& manifest,
                             ClusterCache& cache, uint32_t workers,
                             bool direct_io)
    : manifest_(manifest),
      cache_(cache),
      workers_(workers == 0 ? 1 : workers),
      direct_io_(direct_io) {
  pool_.reserve(workers_);
  for (uint32_t w = 0; w < workers_; ++w)
    pool_.emplace_back([this, w] { worker_loop(w); });
}

ClusterLoader::~ClusterLoader() {
  {
    std::lock_guard lock(queue_mutex_);
    stopping_ = true;
  }
  queue_cv_.notify_all();
}

void ClusterLoader::enqueue(const LoadPlan& plan,
                            std::shared_ptr<Request> request, bool front) {
  {
    std::lock_guard lock(queue_mutex_);
    std::vector<Task> tasks;
    tasks.reserve(plan.order.size());
    for (size_t slot = 0; slot < plan.order.size(); ++slot)
      tasks.push_back(Task{request, plan.order[slot], slot});
    if (front) {
      queue_.insert(queue_.begin(), tasks.begin(), tasks.end());
    } else {
      queue_.insert(queue_.end(), tasks.begin(), tasks.end());
    }
  }
  queue_cv_.notify_all();
}

void ClusterLoader::worker_loop(uint32_t worker_index) {
  for (;;) {
    Task task;
    {
      std::unique_lock lock(queue_mutex_);
      queue_cv_.wait(lock, [this] { return stopping_ || !queue_.empty(); });
      if (stopping_ && queue_.empty()) return;
      task = std::move(queue_.front());
      queue_.pop_front();
    }

    auto& req = *task.request;
    const auto start = std::chrono::steady_clock::now();
    std::shared_ptr<const ClusterData> data;
    std::string failure;
    try {
      data = std::make_shared<ClusterData>(
          read_cluster(manifest_, task.cluster_id, direct_io_));
    } catch (const std::exception& e) {
      failure = e.what();
    }
    const auto end = std::chrono::steady_clock::now();
    const double seconds = std::chrono::duration<double>(end - start).count();

    if (data) {
      cache_.admit({AdmitEntry{data, manifest_.byte_size(task.cluster_id),
                               seconds, req.prefetched, req.pin}});
    }

    bool finished = false;
    {
      std::lock_guard lock(req.mutex);
      if (!req.started || start < req.first_start) req.first_start = start;
      req.started = true;
      if (end > req.last_end) req.last_end = end;

      auto& t = req.outcome.timing.threads[worker_index];
      t.cluster_ids.push_back(task.cluster_id);
      t.bytes += manifest_.byte_size(task.cluster_id);
      t.seconds += seconds;

      if (data) {
        req.outcome.loaded.push_back(std::move(data));
      } else {
        req.outcome.failures.emplace_back(task.cluster_id, failure);
      }
      finished = (--req.remaining == 0);
      if (finished) {
        req.outcome.timing.makespan_s =
            std::chrono::duration<double>(req.last_end - req.first_start)
                .count();
      }
    }
    if (finished) {
      req.cv.notify_all();
      if (req.done) {
        LoadOutcome out;
        {
          std::lock_guard lock(req.mutex);
          out = std::move(req.outcome);
        }
        req.done(std::move(out));
      }
    }
  }
}

LoadOutcome ClusterLoader::load_demand(const LoadPlan& plan, bool pin_entries) {
  if (plan.order.empty()) {
    LoadOutcome out;
    out.timing.threads.resize(workers_);
    return out;
  }
  auto request = std::make_shared<Request>();
  request->remaining = plan.order.size();
  request->pin = pin_entries;
  request->outcome.timing.threads.resize(workers_);
  enqueue(plan, request, /*front=*/true);

  std::unique_lock lock(request->mutex);
  request->cv.wait(lock, [&] { return request->remaining == 0; });
  return std::move(request->outcome);
}

void ClusterLoader::load_background(const LoadPlan& plan,
                                    std::function<void(LoadOutcome)> done) {
  if (plan.order.empty()) {
    LoadOutcome out;
    out.timing.threads.resize(workers_);
    if (done) done(std::move(out));
    return;
  }
  auto request = std::make_shared<Request>();
  request->remaining = plan.order.size();
  request->prefetched = true;
  request->done = std::move(done);
  request->outcome.timing.threads.resize(workers_);
  enqueue(plan, request, /*front=*/false);
}

LoadOutcome ClusterLoader::load_virtual(const LoadPlan& plan,
                                        const VirtualIoModel& model,
                                        bool pin_entries, bool prefetched) {
  LoadOutcome out;
  for (uint32_t id : plan.order) {
    try {
      auto data = std::make_shared<ClusterData>(
          read_cluster(manifest_, id, direct_io_));
      cache_.admit({AdmitEntry{data, manifest_.byte_size(id),
                               model.cost(manifest_.byte_size(id)), prefetched,
                               pin_entries}});
      out.loaded.push_back(std::move(data));
    } catch (const std::exception& e) {
      out.failures.emplace_back(id, e.what());
    }
  }
  out.timing = simulate_load_timing(
      plan, [this](uint32_t id) { return manifest_.byte_size(id); }, model);
  return out;
}

}  // namespace callisto
