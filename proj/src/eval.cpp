#include "lingo/eval.hpp"

#include <algorithm>
#include <cmath>
#include <thread>
#include <vector>

namespace lingo {

EvalResult evaluate(const Agent& agent, const ConceptDataset& data,
                    const Grammar& grammar, const EnvConfig& env_config,
                    int sessions, std::uint64_t seed, int threads) {
  std::vector<char> ok(sessions, 0);
  std::vector<double> reward(sessions, 0.0);
  std::vector<std::array<long, 4>> behavior(sessions, {0, 0, 0, 0});

  auto run_range = [&](int lo, int hi) {
    for (int i = lo; i < hi; ++i) {
      auto trace = eval_episode(agent, data, grammar, env_config,
                                Rng::derive(seed, 0xEA1, i));
      ok[i] = trace.success ? 1 : 0;
      reward[i] = trace.total_reward;
      for (const auto& turn : trace.turns) {
        if (turn.context == TeacherActKind::Statement) continue;
        if (!turn.taught_before) {
          ++behavior[i][0];
          if (turn.judged == UtteranceClass::Question) ++behavior[i][1];
        } else {
          ++behavior[i][2];
          if (turn.judged == UtteranceClass::CorrectStatement)
            ++behavior[i][3];
        }
      }
    }
  };

  const int workers = std::max(1, std::min(threads, sessions));
  if (workers == 1) {
    run_range(0, sessions);
  } else {
    std::vector<std::thread> pool;
    const int chunk = (sessions + workers - 1) / workers;
    for (int w = 0; w < workers; ++w) {
      const int lo = w * chunk;
      const int hi = std::min(sessions, lo + chunk);
      if (lo >= hi) break;
      pool.emplace_back(run_range, lo, hi);
    }
    for (auto& th : pool) th.join();
  }

  EvalResult out;
  out.sessions = sessions;
  int succ = 0;
  for (int i = 0; i < sessions; ++i) {
    succ += ok[i];
    out.avg_reward += reward[i];
    out.first_encounters += behavior[i][0];
    out.first_questions += behavior[i][1];
    out.second_encounters += behavior[i][2];
    out.second_statements += behavior[i][3];
  }
  out.success_rate = sessions ? static_cast<double>(succ) / sessions : 0.0;
  out.avg_reward = sessions ? out.avg_reward / sessions : 0.0;

  // 95% Wilson interval
  if (sessions > 0) {
    const double z = 1.959963984540054;
    const double n = sessions, p = out.success_rate;
    const double denom = 1.0 + z * z / n;
    const double center = (p + z * z / (2.0 * n)) / denom;
    const double half =
        z * std::sqrt(p * (1.0 - p) / n + z * z / (4.0 * n * n)) / denom;
    out.success_ci_lo = std::max(0.0, center - half);
    out.success_ci_hi = std::min(1.0, center + half);
  }
  return out;
}

}  // namespace lingo
