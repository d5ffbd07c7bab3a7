#ifndef UNMAR_ADAM_HPP
#define UNMAR_ADAM_HPP

#include <string>
#include <utility>
#include <vector>

#include "unmar/tensor.hpp"

namespace unmar {

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

// ADAM with bias correction. Holds first/second moments per parameter plus a
// shared step count; step() consumes current gradients but leaves them
// untouched (callers zero them explicitly).
class Adam {
public:
  explicit Adam(NamedTensors params) {
    slots_.reserve(params.size());
    for (auto& [name, t] : params) {
      Slot s;
      s.name = name;
      s.param = t;
      s.m = Tensor::zeros(t.shape());
      s.v = Tensor::zeros(t.shape());
      slots_.push_back(std::move(s));
    }
  }

  void step(float lr, float beta1 = 0.9f, float beta2 = 0.99f,
            float eps = 1e-8f) {
    ++t_;
    const double bc1 = 1.0 - std::pow(double(beta1), double(t_));
    const double bc2 = 1.0 - std::pow(double(beta2), double(t_));
    for (Slot& s : slots_) {
      if (!s.param.has_grad())
        throw Error(fmt::format("adam: parameter '{}' has no gradient", s.name));
      auto g = s.param.grad();
      float* p = s.param.data();
      float* m = s.m.data();
      float* v = s.v.data();
      const int64_t n = s.param.numel();
      for (int64_t i = 0; i < n; ++i) {
        m[i] = beta1 * m[i] + (1.0f - beta1) * g[i];
        v[i] = beta2 * v[i] + (1.0f - beta2) * g[i] * g[i];
        float mhat = static_cast<float>(m[i] / bc1);
        float vhat = static_cast<float>(v[i] / bc2);
        p[i] -= lr * mhat / (std::sqrt(vhat) + eps);
      }
    }
  }

  void zero_grad() {
    for (Slot& s : slots_) s.param.zero_grad();
  }

  int64_t step_count() const { return t_; }
  void set_step_count(int64_t t) { t_ = t; }

  /// Moment buffers as named tensors, for training-state checkpoints.
  NamedTensors state_tensors() const {
    NamedTensors out;
    for (const Slot& s : slots_) {
      out.emplace_back("adam.m." + s.name, s.m);
      out.emplace_back("adam.v." + s.name, s.v);
    }
    return out;
  }

  size_t size() const { return slots_.size(); }

private:
  struct Slot {
    std::string name;
    Tensor param, m, v;
  };
  std::vector<Slot> slots_;
  int64_t t_ = 0;
};

}  // namespace unmar

#endif  // UNMAR_ADAM_HPP
