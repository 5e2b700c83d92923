#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "cardioquant/graph.hpp"

namespace cq {

// Adam optimizer state over the parameters of one graph. First and second
// moment estimates are keyed by parameter name so state survives graph
// rebuilds with the same parameter set.
class AdamState {
 public:
  explicit AdamState(float lr = 1e-3f, float beta1 = 0.9f, float beta2 = 0.999f,
                     float eps = 1e-8f);

  // Applies one update from the gradients currently stored in the graph.
  // The step counter increments before bias correction, so the first call
  // corrects with beta^1.
  void step(Graph& g);

  float lr() const { return lr_; }
  void set_lr(float lr) { lr_ = lr; }
  long step_count() const { return step_; }

 private:
  struct Moments {
    std::vector<float> m, v;
  };

  float lr_, beta1_, beta2_, eps_;
  long step_ = 0;
  std::unordered_map<std::string, Moments> moments_;
};

}  // namespace cq
