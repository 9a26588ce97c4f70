#pragma once

#include "aptest/selection.hpp"

#include <optional>
#include <random>

namespace aptest::testing {

// Uniform-random selection instance; ε is drawn inside the range of each
// spec's scores so that most instances are feasible but not trivial.
inline selection::MseMatrix random_mse(std::mt19937_64& rng, int modules, int specs) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  selection::MseMatrix m;
  m.num_circuits = 1;
  m.num_stimuli = modules;
  m.e.resize(modules, specs);
  for (Eigen::Index i = 0; i < m.e.size(); ++i) m.e.data()[i] = u(rng);
  return m;
}

inline std::optional<selection::SelectionProblem> random_problem(std::mt19937_64& rng,
                                                                 bool integer_costs = false) {
  std::uniform_int_distribution<int> module_count(1, 12);
  std::uniform_int_distribution<int> spec_count(1, 10);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::uniform_int_distribution<int> small(1, 3);
  const int modules = module_count(rng);
  const int specs = spec_count(rng);
  selection::MseMatrix m = random_mse(rng, modules, specs);
  Vector costs(modules);
  for (int i = 0; i < modules; ++i) costs[i] = integer_costs ? small(rng) : 0.1 + u(rng);
  Vector eps(specs);
  for (int l = 0; l < specs; ++l) eps[l] = 0.05 + 0.6 * u(rng);
  try {
    return selection::build_problem(std::move(m), std::move(costs), std::move(eps));
  } catch (const selection::InfeasibleSelectionError&) {
    return std::nullopt;
  }
}

}  // namespace aptest::testing
