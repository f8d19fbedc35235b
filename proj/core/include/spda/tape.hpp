#pragma once

#include <atomic>
#include <cstddef>
#include <functional>
#include <vector>

#include "spda/tensor.hpp"

namespace spda {

// Define-by-run gradient tape. Ops append one backward step per executed
// operation; run_backward replays them in reverse insertion order, which
// makes gradient accumulation deterministic. The tape must be cleared
// between optimization steps.
class Tape {
 public:
  static Tape& get();

  bool recording() const { return enabled_.load(std::memory_order_relaxed); }
  void set_enabled(bool on) { enabled_.store(on, std::memory_order_relaxed); }

  void record(std::function<void()> backward_step);

  // loss must be a scalar produced by the recorded graph. Throws if called
  // twice without clear().
  void run_backward(const Tensor& loss);

  void clear();
  size_t size() const { return steps_.size(); }

 private:
  Tape() = default;

  std::vector<std::function<void()>> steps_;
  std::atomic<bool> enabled_{true};
  bool consumed_ = false;
};

struct NoGradGuard {
  NoGradGuard() : prev_(Tape::get().recording()) { Tape::get().set_enabled(false); }
  ~NoGradGuard() { Tape::get().set_enabled(prev_); }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

// Convenience: Tape::get().run_backward(loss).
void backward(const Tensor& loss);

}  // namespace spda
