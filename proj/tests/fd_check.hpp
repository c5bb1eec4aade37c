#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "lingo/tape.hpp"

namespace lingo::testing {

// Central-finite-difference gradient oracle (h = 1e-5). `build` must
// deterministically reconstruct the scalar loss from the store's current
// parameter values. Returns the max relative error over all entries of the
// named parameters.
inline double fd_check(ParamStore& store,
                       const std::vector<std::string>& names,
                       const std::function<Var(Tape&)>& build,
                       double h = 1e-5) {
  Tape tape;
  Var loss = build(tape);
  tape.backward(loss);
  GradBuffer gb;
  gb.ensure(store);
  tape.export_grads(gb);

  double max_rel = 0.0;
  for (const auto& name : names) {
    Param& p = store.get(name);
    const Tensor& g = gb.slots[p.id];
    for (std::size_t i = 0; i < p.value.v.size(); ++i) {
      const double saved = p.value.v[i];
      p.value.v[i] = saved + h;
      Tape tp;
      const double lp = tp.scalar_val(build(tp));
      p.value.v[i] = saved - h;
      Tape tm;
      const double lm = tm.scalar_val(build(tm));
      p.value.v[i] = saved;
      const double fd = (lp - lm) / (2.0 * h);
      const double ad = g.v.empty() ? 0.0 : g.v[i];
      // the 1e-5 floor keeps difference-quotient roundoff out of the ratio
      // for gradients that are effectively zero
      const double rel =
          std::abs(ad - fd) / std::max({std::abs(ad), std::abs(fd), 1e-5});
      if (rel > max_rel) max_rel = rel;
    }
  }
  return max_rel;
}

}  // namespace lingo::testing
