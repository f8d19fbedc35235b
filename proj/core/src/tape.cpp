#include "spda/tape.hpp"

namespace spda {

Tape& Tape::get() {
  static Tape tape;
  return tape;
}

void Tape::record(std::function<void()> backward_step) {
  steps_.push_back(std::move(backward_step));
}

void Tape::run_backward(const Tensor& loss) {
  if (loss.numel() != 1) {
    throw ShapeError("backward: loss must be a scalar, got shape " + shape_str(loss.shape()));
  }
  if (!loss.requires_grad()) {
    throw Error("backward: loss was not produced by the recorded graph");
  }
  if (consumed_) {
    throw Error("backward: called twice without resetting the tape");
  }
  consumed_ = true;
  loss.impl()->grad[0] += 1.0;
  for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) {
    (*it)();
  }
}

void Tape::clear() {
  steps_.clear();
  consumed_ = false;
}

void backward(const Tensor& loss) { Tape::get().run_backward(loss); }

}  // namespace spda
