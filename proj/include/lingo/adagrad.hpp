#pragma once

#include <vector>

#include "lingo/tape.hpp"
#include "lingo/tensor.hpp"

namespace lingo {

// Decayed Adagrad: acc = rho*acc + g^2, p -= lr*(g + wd*p)/(sqrt(acc)+eps).
struct OptimizerState {
  double learning_rate = 1e-5;
  double weight_decay = 1.6e-3;
  double accumulator_decay = 0.95;
  double epsilon = 1e-6;
  std::vector<Tensor> accumulators;  // one per param id, shape-matched

  void attach(const ParamStore& store);
  // Applies one step from Param::grad. Throws on non-finite gradients and
  // leaves params and accumulators untouched in that case.
  void step(ParamStore& store);
};

}  // namespace lingo
