#include "lingo/adagrad.hpp"

#include <cmath>
#include <stdexcept>

#include "lingo/kernels.hpp"

namespace lingo {

void OptimizerState::attach(const ParamStore& store) {
  accumulators.clear();
  accumulators.reserve(store.size());
  for (std::size_t i = 0; i < store.size(); ++i)
    accumulators.emplace_back(store[i].value.shape);
}

void OptimizerState::step(ParamStore& store) {
  if (accumulators.size() != store.size())
    throw std::runtime_error("optimizer not attached to this param store");
  for (std::size_t i = 0; i < store.size(); ++i) {
    if (!store[i].trainable) continue;
    for (double g : store[i].grad.v)
      if (!std::isfinite(g))
        throw std::runtime_error("non-finite gradient in " + store[i].name +
                                 ", step aborted");
  }
  const auto& K = kernels::table();
  for (std::size_t i = 0; i < store.size(); ++i) {
    Param& p = store[i];
    if (!p.trainable) continue;
    // a parameter outside every active loss takes no step, weight decay
    // included; it is simply not part of the update this round
    bool touched = false;
    for (double g : p.grad.v)
      if (g != 0.0) {
        touched = true;
        break;
      }
    if (!touched) continue;
    K.decayed_accum(accumulator_decay, p.grad.data(), accumulators[i].data(),
                    p.grad.v.size());
    K.adagrad_apply(learning_rate, weight_decay, epsilon, p.grad.data(),
                    accumulators[i].data(), p.value.data(), p.value.v.size());
  }
}

}  // namespace lingo
