#include "aptest/selection.hpp"

#include "aptest/types.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace aptest::selection {

using nlohmann::json;

Vector per_spec_mse(const Matrix& predicted, const Matrix& actual) {
  if (predicted.rows() != actual.rows() || predicted.cols() != actual.cols()) {
    throw DimensionError("per_spec_mse: prediction and label shapes differ");
  }
  if (actual.rows() == 0) throw DimensionError("per_spec_mse: empty evaluation set");
  return (predicted - actual).array().square().colwise().mean().transpose();
}

Vector eval_module_mse(const nn::MlpModel& model, const Matrix& x, const Matrix& y) {
  if (x.rows() == 0) throw DimensionError("eval_module_mse: empty evaluation set");
  if (y.cols() != model.output_dim()) throw DimensionError("eval_module_mse: label width mismatch");
  return per_spec_mse(nn::predict(model, x), y);
}

namespace {

std::string describe(const std::vector<InfeasibleSelectionError::Uncovered>& u) {
  std::ostringstream ss;
  ss << "no module meets the threshold for " << u.size() << " spec(s):";
  for (const auto& item : u) {
    ss << " [spec " << item.spec << ": best mse " << item.best_mse << " > " << item.threshold
       << "]";
  }
  return ss.str();
}

}  // namespace

InfeasibleSelectionError::InfeasibleSelectionError(std::vector<Uncovered> uncovered)
    : Error(describe(uncovered)), uncovered_(std::move(uncovered)) {}

SelectionProblem build_problem(MseMatrix mse, Vector costs, Vector thresholds) {
  const auto modules = static_cast<Eigen::Index>(mse.num_modules());
  const auto specs = static_cast<Eigen::Index>(mse.num_specs());
  if (modules == 0) throw DimensionError("selection problem has no modules");
  if (mse.num_circuits * mse.num_stimuli != modules) {
    throw DimensionError("mse rows != num_circuits * num_stimuli");
  }
  if (costs.size() != modules) throw DimensionError("one cost per module required");
  if (thresholds.size() != specs) throw DimensionError("one threshold per spec required");
  if (!mse.e.allFinite() || (mse.e.array() < 0.0).any()) {
    throw DimensionError("mse entries must be finite and >= 0");
  }
  for (Eigen::Index i = 0; i < modules; ++i) {
    if (!(costs[i] > 0.0) || !std::isfinite(costs[i])) {
      throw InvalidConfigError("module costs must be finite and > 0");
    }
  }
  for (Eigen::Index l = 0; l < specs; ++l) {
    if (!(thresholds[l] > 0.0)) throw InvalidConfigError("thresholds must be > 0");
  }

  SelectionProblem p;
  p.cover_sets.resize(static_cast<std::size_t>(specs));
  std::vector<InfeasibleSelectionError::Uncovered> uncovered;
  for (Eigen::Index l = 0; l < specs; ++l) {
    auto& set = p.cover_sets[static_cast<std::size_t>(l)];
    for (Eigen::Index i = 0; i < modules; ++i) {
      if (mse.e(i, l) <= thresholds[l]) set.push_back(static_cast<std::size_t>(i));
    }
    if (set.empty()) {
      uncovered.push_back({static_cast<std::size_t>(l), mse.e.col(l).minCoeff(), thresholds[l]});
    }
  }
  if (!uncovered.empty()) throw InfeasibleSelectionError(std::move(uncovered));
  p.mse = std::move(mse);
  p.costs = std::move(costs);
  p.thresholds = std::move(thresholds);
  return p;
}

bool satisfies_min_constraint(const SelectionProblem& p, const Subset& subset) {
  for (std::size_t l = 0; l < p.num_specs(); ++l) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < p.num_modules(); ++i) {
      if (subset[i]) {
        best = std::min(best, p.mse.e(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(l)));
      }
    }
    // min over an empty selection is +inf, which never meets a threshold.
    if (!(best <= p.thresholds[static_cast<Eigen::Index>(l)]) || std::isinf(best)) return false;
  }
  return true;
}

bool satisfies_cover_constraint(const SelectionProblem& p, const Subset& subset) {
  for (const auto& set : p.cover_sets) {
    if (std::none_of(set.begin(), set.end(), [&](std::size_t i) { return subset[i] != 0; })) {
      return false;
    }
  }
  return true;
}

bool feasible(const SelectionProblem& p, const Subset& subset) {
  const bool any = std::any_of(subset.begin(), subset.end(), [](auto v) { return v != 0; });
  return any && satisfies_cover_constraint(p, subset);
}

double subset_cost(const SelectionProblem& p, const Subset& subset) {
  double total = 0.0;
  for (std::size_t i = 0; i < subset.size(); ++i) {
    if (subset[i]) total += p.costs[static_cast<Eigen::Index>(i)];
  }
  return total;
}

bool lex_less(const Subset& a, const Subset& b) {
  std::vector<std::size_t> sa, sb;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i]) sa.push_back(i);
  }
  for (std::size_t i = 0; i < b.size(); ++i) {
    if (b[i]) sb.push_back(i);
  }
  return std::lexicographical_compare(sa.begin(), sa.end(), sb.begin(), sb.end());
}

std::vector<std::size_t> SelectionSolution::selected() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (x[i]) out.push_back(i);
  }
  return out;
}

namespace {

void finish(const SelectionProblem& p, SelectionSolution& s) {
  s.total_cost = subset_cost(p, s.x);
  s.covering.assign(p.num_specs(), 0);
  for (std::size_t l = 0; l < p.num_specs(); ++l) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < p.num_modules(); ++i) {
      const double v = p.mse.e(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(l));
      if (s.x[i] && v < best) {
        best = v;
        s.covering[l] = i;
      }
    }
  }
}

// Cheapest single module, for the degenerate case with no specs.
SelectionSolution cheapest_single(const SelectionProblem& p) {
  SelectionSolution s;
  s.x.assign(p.num_modules(), 0);
  Eigen::Index best = 0;
  for (Eigen::Index i = 1; i < p.costs.size(); ++i) {
    if (p.costs[i] < p.costs[best]) best = i;
  }
  s.x[static_cast<std::size_t>(best)] = 1;
  finish(p, s);
  return s;
}

// Depth-first implicit enumeration over the covering form. Free variables are
// branched in order of uncovered specs covered per unit cost; a node is
// pruned when its partial cost already exceeds the incumbent or when an
// uncovered spec has no free candidate left.
class ImplicitEnumeration {
 public:
  explicit ImplicitEnumeration(const SelectionProblem& p)
      : p_(p),
        n_(p.num_modules()),
        covers_(n_),
        state_(n_, kFree),
        current_(n_, 0),
        cover_count_(p.num_specs(), 0),
        candidates_(p.num_specs(), 0) {
    for (std::size_t l = 0; l < p.num_specs(); ++l) {
      candidates_[l] = p.cover_sets[l].size();
      for (std::size_t i : p.cover_sets[l]) covers_[i].push_back(l);
    }
    // Tolerance for comparing incrementally summed partial costs with the
    // canonical ascending-order sums; only ever admits extra nodes.
    tol_ = 1e-9 * std::max(1.0, p.costs.sum());
  }

  SelectionSolution solve() {
    search(0.0);
    SelectionSolution s;
    s.x = best_;
    s.nodes_explored = nodes_;
    return s;
  }

 private:
  static constexpr int kFree = -1;

  void search(double partial) {
    ++nodes_;
    if (has_best_ && partial > best_cost_ + tol_) return;

    std::size_t uncovered = 0;
    for (std::size_t l = 0; l < cover_count_.size(); ++l) {
      if (cover_count_[l] == 0) {
        ++uncovered;
        if (candidates_[l] == 0) return;
      }
    }
    if (uncovered == 0) {
      offer();
      return;
    }

    // Branch variable: most uncovered specs per unit cost, lowest index on ties.
    std::size_t pick = n_;
    double pick_score = 0.0;
    for (std::size_t i = 0; i < n_; ++i) {
      if (state_[i] != kFree) continue;
      std::size_t gain = 0;
      for (std::size_t l : covers_[i]) gain += cover_count_[l] == 0;
      if (gain == 0) continue;
      const double score = static_cast<double>(gain) / p_.costs[static_cast<Eigen::Index>(i)];
      if (pick == n_ || score > pick_score) {
        pick = i;
        pick_score = score;
      }
    }
    if (pick == n_) return;

    // x = 1
    state_[pick] = 1;
    current_[pick] = 1;
    for (std::size_t l : covers_[pick]) ++cover_count_[l];
    search(partial + p_.costs[static_cast<Eigen::Index>(pick)]);
    for (std::size_t l : covers_[pick]) --cover_count_[l];
    current_[pick] = 0;

    // x = 0
    state_[pick] = 0;
    for (std::size_t l : covers_[pick]) --candidates_[l];
    search(partial);
    for (std::size_t l : covers_[pick]) ++candidates_[l];
    state_[pick] = kFree;
  }

  void offer() {
    const double cost = subset_cost(p_, current_);
    if (!has_best_ || cost < best_cost_ || (cost == best_cost_ && lex_less(current_, best_))) {
      best_ = current_;
      best_cost_ = cost;
      has_best_ = true;
    }
  }

  const SelectionProblem& p_;
  std::size_t n_;
  std::vector<std::vector<std::size_t>> covers_;  // specs each module covers
  std::vector<int> state_;
  Subset current_;
  std::vector<std::size_t> cover_count_;  // selected modules covering each spec
  std::vector<std::size_t> candidates_;   // non-excluded modules covering each spec
  Subset best_;
  double best_cost_ = 0.0;
  bool has_best_ = false;
  double tol_ = 0.0;
  std::uint64_t nodes_ = 0;
};

void check_feasible(const SelectionProblem& p) {
  std::vector<InfeasibleSelectionError::Uncovered> uncovered;
  for (std::size_t l = 0; l < p.cover_sets.size(); ++l) {
    if (p.cover_sets[l].empty()) {
      uncovered.push_back({l, p.mse.e.col(static_cast<Eigen::Index>(l)).minCoeff(),
                           p.thresholds[static_cast<Eigen::Index>(l)]});
    }
  }
  if (!uncovered.empty()) throw InfeasibleSelectionError(std::move(uncovered));
}

}  // namespace

SelectionSolution solve_implicit_enumeration(const SelectionProblem& p) {
  check_feasible(p);
  if (p.num_specs() == 0) return cheapest_single(p);
  SelectionSolution s = ImplicitEnumeration(p).solve();
  finish(p, s);
  return s;
}

SelectionSolution solve_exhaustive(const SelectionProblem& p) {
  const std::size_t n = p.num_modules();
  if (n > kExhaustiveLimit) {
    throw InvalidConfigError("exhaustive search limited to " + std::to_string(kExhaustiveLimit) +
                             " modules, got " + std::to_string(n));
  }
  check_feasible(p);
  Subset best;
  double best_cost = 0.0;
  Subset x(n, 0);
  std::uint64_t visited = 0;
  for (std::uint64_t mask = 1; mask < (std::uint64_t{1} << n); ++mask) {
    ++visited;
    for (std::size_t i = 0; i < n; ++i) x[i] = (mask >> i) & 1u;
    if (!feasible(p, x)) continue;
    const double cost = subset_cost(p, x);
    if (best.empty() || cost < best_cost || (cost == best_cost && lex_less(x, best))) {
      best = x;
      best_cost = cost;
    }
  }
  SelectionSolution s;
  s.x = best;
  s.nodes_explored = visited;
  finish(p, s);
  return s;
}

json to_json(const SelectionProblem& p, const SelectionSolution& s,
             const std::vector<std::string>& spec_names) {
  const int N = p.mse.num_stimuli;
  json modules = json::array();
  for (std::size_t i = 0; i < p.num_modules(); ++i) {
    const ModuleId id = ModuleId::from_flat(i, N);
    std::vector<double> row(p.num_specs());
    for (std::size_t l = 0; l < p.num_specs(); ++l) {
      row[l] = p.mse.e(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(l));
    }
    modules.push_back({{"module", id.label()},
                       {"circuit", id.circuit + 1},
                       {"stimulus", id.stimulus + 1},
                       {"cost", p.costs[static_cast<Eigen::Index>(i)]},
                       {"selected", s.x[i] != 0},
                       {"mse", row}});
  }
  json specs = json::array();
  for (std::size_t l = 0; l < p.num_specs(); ++l) {
    const double eps = p.thresholds[static_cast<Eigen::Index>(l)];
    json cover = json::array();
    for (std::size_t i : p.cover_sets[l]) cover.push_back(ModuleId::from_flat(i, N).label());
    specs.push_back({{"name", l < spec_names.size() ? spec_names[l] : std::to_string(l)},
                     // JSON has no infinity; null stands for an unbounded threshold.
                     {"threshold", std::isinf(eps) ? json(nullptr) : json(eps)},
                     {"cover_set", cover},
                     {"covered_by", ModuleId::from_flat(s.covering[l], N).label()}});
  }
  json selected = json::array();
  for (std::size_t i : s.selected()) selected.push_back(ModuleId::from_flat(i, N).label());
  return {{"num_circuits", p.mse.num_circuits},
          {"num_stimuli", N},
          {"eval_rows", p.mse.eval_rows},
          {"modules", modules},
          {"specs", specs},
          {"selected", selected},
          {"total_cost", s.total_cost},
          {"count", s.count()}};
}

std::pair<SelectionProblem, SelectionSolution> from_json(const json& j) {
  MseMatrix mse;
  mse.num_circuits = j.at("num_circuits").get<int>();
  mse.num_stimuli = j.at("num_stimuli").get<int>();
  mse.eval_rows = j.at("eval_rows").get<std::string>();
  const json& modules = j.at("modules");
  const json& specs = j.at("specs");
  const auto M = static_cast<Eigen::Index>(modules.size());
  const auto L = static_cast<Eigen::Index>(specs.size());
  mse.e.resize(M, L);
  Vector costs(M);
  Vector thresholds(L);
  Subset x(static_cast<std::size_t>(M), 0);
  for (Eigen::Index i = 0; i < M; ++i) {
    const json& m = modules[static_cast<std::size_t>(i)];
    const auto row = m.at("mse").get<std::vector<double>>();
    if (static_cast<Eigen::Index>(row.size()) != L) throw DimensionError("selection json: mse width");
    for (Eigen::Index l = 0; l < L; ++l) mse.e(i, l) = row[static_cast<std::size_t>(l)];
    costs[i] = m.at("cost").get<double>();
    x[static_cast<std::size_t>(i)] = m.at("selected").get<bool>() ? 1 : 0;
  }
  for (Eigen::Index l = 0; l < L; ++l) {
    const json& t = specs[static_cast<std::size_t>(l)].at("threshold");
    thresholds[l] = t.is_null() ? std::numeric_limits<double>::infinity() : t.get<double>();
  }
  SelectionProblem p = build_problem(std::move(mse), std::move(costs), std::move(thresholds));
  SelectionSolution s;
  s.x = std::move(x);
  finish(p, s);
  return {std::move(p), std::move(s)};
}

}  // namespace aptest::selection
