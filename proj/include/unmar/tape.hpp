#ifndef UNMAR_TAPE_HPP
#define UNMAR_TAPE_HPP

#include <functional>
#include <vector>

#include "unmar/tensor.hpp"

namespace unmar {

// Reverse-mode tape. Ops append backward rules in execution order; backward()
// replays them in reverse. Single-writer: one training thread records and
// consumes a tape.
class Tape {
public:
  void record(std::function<void()> backward_fn) {
    if (consumed_) throw Error("recording onto a consumed tape");
    ops_.push_back(std::move(backward_fn));
  }

  size_t size() const { return ops_.size(); }
  bool consumed() const { return consumed_; }

  void reset() {
    ops_.clear();
    consumed_ = false;
  }

  /// Backpropagates from a scalar loss through every recorded operation.
  void backward(Tensor loss) {
    if (loss.numel() != 1)
      throw ShapeError(fmt::format("backward() requires a scalar loss, got {}",
                                   shape_str(loss.shape())));
    if (consumed_) throw Error("backward() on a consumed tape");
    if (!loss.requires_grad())
      throw Error("backward() on a loss that is not on the tape");
    loss.accumulate_grad(std::vector<float>{1.0f});
    for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)();
    ops_.clear();
    consumed_ = true;
  }

private:
  std::vector<std::function<void()>> ops_;
  bool consumed_ = false;
};

}  // namespace unmar

#endif  // UNMAR_TAPE_HPP
