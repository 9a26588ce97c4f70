#pragma once

// Test-module selection: per-spec module scores, the 0-1 cost-minimisation
// program and its exact solvers.

#include "aptest/nn.hpp"
#include "aptest/types.hpp"

#include <json.hpp>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace aptest::selection {

struct MseMatrix {
  Matrix e;  // (M*N) x L, row-major module order
  int num_circuits = 0;
  int num_stimuli = 0;
  std::string eval_rows;  // which rows produced the scores, e.g. "validation"

  std::size_t num_modules() const { return static_cast<std::size_t>(e.rows()); }
  std::size_t num_specs() const { return static_cast<std::size_t>(e.cols()); }
};

// Per-spec mean squared error between predictions and labels (column means).
Vector per_spec_mse(const Matrix& predicted, const Matrix& actual);
Vector eval_module_mse(const nn::MlpModel& model, const Matrix& x, const Matrix& y);

class InfeasibleSelectionError : public Error {
 public:
  struct Uncovered {
    std::size_t spec;
    double best_mse;
    double threshold;
  };
  explicit InfeasibleSelectionError(std::vector<Uncovered> uncovered);
  const std::vector<Uncovered>& uncovered() const { return uncovered_; }

 private:
  std::vector<Uncovered> uncovered_;
};

struct SelectionProblem {
  MseMatrix mse;
  Vector costs;       // one per module, > 0
  Vector thresholds;  // one per spec, > 0 (may be +inf)
  // cover_sets[l] = ascending module indices whose score for spec l meets its threshold.
  std::vector<std::vector<std::size_t>> cover_sets;

  std::size_t num_modules() const { return mse.num_modules(); }
  std::size_t num_specs() const { return mse.num_specs(); }
};

// Throws InfeasibleSelectionError listing every spec no module can meet.
SelectionProblem build_problem(MseMatrix mse, Vector costs, Vector thresholds);

// Subset given as a 0/1 mask over modules.
using Subset = std::vector<std::uint8_t>;

// min{e(l) | selected} <= eps(l) for every l, evaluated directly.
bool satisfies_min_constraint(const SelectionProblem& p, const Subset& subset);
// Subset meets every cover set.
bool satisfies_cover_constraint(const SelectionProblem& p, const Subset& subset);
// Both of the above plus sum(x) >= 1.
bool feasible(const SelectionProblem& p, const Subset& subset);
// Cost summed in ascending module order, so equal sets always compare equal.
double subset_cost(const SelectionProblem& p, const Subset& subset);
// Lexicographic order on the ascending lists of selected indices.
bool lex_less(const Subset& a, const Subset& b);

struct SelectionSolution {
  Subset x;
  double total_cost = 0.0;
  // Per spec, the selected module with the lowest score (lowest index on ties).
  std::vector<std::size_t> covering;
  std::uint64_t nodes_explored = 0;

  std::vector<std::size_t> selected() const;
  std::size_t count() const { return selected().size(); }
};

SelectionSolution solve_implicit_enumeration(const SelectionProblem& p);

inline constexpr std::size_t kExhaustiveLimit = 20;
// All 2^(M*N) subsets; throws InvalidConfigError above kExhaustiveLimit modules.
SelectionSolution solve_exhaustive(const SelectionProblem& p);

nlohmann::json to_json(const SelectionProblem& p, const SelectionSolution& s,
                       const std::vector<std::string>& spec_names);
// Reads back the problem and solution written by to_json.
std::pair<SelectionProblem, SelectionSolution> from_json(const nlohmann::json& j);

}  // namespace aptest::selection
