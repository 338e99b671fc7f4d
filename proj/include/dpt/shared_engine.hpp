#pragma once

// Thread-safe front for DptEngine: one writer applies events, readers
// answer queries concurrently, a background thread absorbs catch-up draws
// and candidate plans are computed off the lock. Only installing a plan
// (the blocking step) excludes readers.

#include <atomic>
#include <condition_variable>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <thread>

#include "dpt/archive.hpp"
#include "dpt/engine.hpp"

namespace dpt {

class SharedEngine {
public:
  /// batch: catch-up draws absorbed per lock acquisition.
  SharedEngine(EngineConfig config, Archive& archive, std::size_t batch = 256)
    : archive_(archive), engine_(std::move(config), archive), batch_(batch) {
    engine_.set_background_catchup(true);
    engine_.set_job_sink([this](RebuildJob job) {
      std::lock_guard lk(job_mu_);
      job_ = std::move(job);
      job_cv_.notify_one();
    });
  }
  SharedEngine(const SharedEngine&) = delete;
  SharedEngine& operator=(const SharedEngine&) = delete;
  ~SharedEngine() { stop(); }

  void initialize() {
    {
      std::unique_lock lk(mu_);
      engine_.initialize();
    }
    stopping_ = false;
    catchup_ = std::thread([this] { catchup_loop(); });
    rebuilder_ = std::thread([this] { rebuild_loop(); });
  }

  void stop() {
    stopping_ = true;
    job_cv_.notify_all();
    if (catchup_.joinable()) catchup_.join();
    if (rebuilder_.joinable()) rebuilder_.join();
  }

  Version insert(const Tuple& t) {
    std::unique_lock lk(mu_);
    const Version v = archive_.insert(t);
    engine_.on_insert(t);
    return v;
  }

  Version erase(TupleId id) {
    std::unique_lock lk(mu_);
    Tuple removed;
    const Version v = archive_.erase(id, &removed);
    engine_.on_delete(removed);
    return v;
  }

  [[nodiscard]] QueryAnswer answer(const Query& q) const {
    std::shared_lock lk(mu_);
    return engine_.answer(q);
  }

  [[nodiscard]] EngineStatus status() const {
    std::shared_lock lk(mu_);
    return engine_.status();
  }

  /// Blocks until catch-up of the current epoch finished and no rebuild is
  /// pending.
  void wait_idle() {
    for (;;) {
      {
        std::shared_lock lk(mu_);
        std::lock_guard jl(job_mu_);
        if (engine_.catchup_done() && !job_ && !computing_) return;
      }
      std::this_thread::yield();
    }
  }

  /// Direct access for single-threaded inspection; callers must ensure
  /// no concurrent activity.
  [[nodiscard]] const DptEngine& engine() const { return engine_; }

private:
  void catchup_loop() {
    while (!stopping_) {
      std::size_t got = 0;
      {
        std::unique_lock lk(mu_);
        got = engine_.advance_catchup(batch_);
      }
      if (got == 0) std::this_thread::sleep_for(std::chrono::milliseconds(1));
    }
  }

  void rebuild_loop() {
    for (;;) {
      RebuildJob job;
      {
        std::unique_lock lk(job_mu_);
        job_cv_.wait(lk, [&] { return stopping_ || job_.has_value(); });
        if (stopping_) return;
        job = std::move(*job_);
        job_.reset();
        computing_ = true;
      }
      RebuildDecision dec = compute_rebuild(job);
      {
        std::unique_lock lk(mu_);
        engine_.complete_rebuild(job, std::move(dec));
      }
      std::lock_guard lk(job_mu_);
      computing_ = false;
    }
  }

  Archive& archive_;
  mutable std::shared_mutex mu_;
  DptEngine engine_;
  std::size_t batch_;

  mutable std::mutex job_mu_;
  std::condition_variable job_cv_;
  std::optional<RebuildJob> job_;
  bool computing_ = false;

  std::atomic<bool> stopping_{false};
  std::thread catchup_;
  std::thread rebuilder_;
};

}  // namespace dpt
