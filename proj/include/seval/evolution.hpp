#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "seval/dataset.hpp"
#include "seval/evaluator.hpp"
#include "seval/search_space.hpp"

namespace seval::search {

enum class Direction { max_allowed, min_required };

struct Constraint {
  std::string metric;
  double threshold = 0;
  Direction direction = Direction::max_allowed;
};

enum class FitnessKind { synthetic_proxy, evaluator_accuracy };

struct SearchConfig {
  int population_size = 25;
  int tournament_size = 5;
  std::uint64_t cycles = 0;  // total evaluations, including the initial population
  std::uint64_t seed = 0;
  space::SpaceId space = space::SpaceId::tss;
  FitnessKind fitness = FitnessKind::synthetic_proxy;

  void check() const;
};

// Prediction source for constraint filtering; lets tests substitute an
// oracle-backed stub for a trained model.
struct MetricPredictor {
  virtual ~MetricPredictor() = default;
  virtual space::SpaceId space() const = 0;
  virtual const std::vector<std::string>& metric_names() const = 0;
  // May throw graph::NoPathError for unelaborable archs.
  virtual std::vector<double> predict_index(std::uint64_t arch_index) const = 0;
};

struct ModelPredictor final : MetricPredictor {
  explicit ModelPredictor(const model::EvaluatorModel& m) : model_(&m) {}
  space::SpaceId space() const override { return model_->space; }
  const std::vector<std::string>& metric_names() const override {
    return model_->objectives;
  }
  std::vector<double> predict_index(std::uint64_t arch_index) const override {
    return model_->predict_arch(arch_index);
  }

 private:
  const model::EvaluatorModel* model_;
};

struct Feasibility {
  bool feasible = true;
  std::vector<double> predicted;  // aligned with predictor->metric_names()
  std::string reason;             // first violated constraint or "no_path"
};

// Elaborate -> string -> tokenize -> predict -> check every constraint.
// Empty constraint list is always feasible and performs no prediction.
Feasibility constraint_filter(const space::ArchSpec& arch,
                              const MetricPredictor* predictor,
                              const std::vector<Constraint>& constraints);

enum class ThresholdStat { mean, median };

// The chosen statistic of `metric` over the records; throws if no record
// carries the metric.
double threshold_from_dataset(const std::vector<cost::DatasetRecord>& records,
                              const std::string& metric, ThresholdStat stat);

struct LogEntry {
  std::uint64_t cycle = 0;
  std::uint32_t arch_index = 0;
  double fitness = 0;
  std::vector<double> predicted;
  bool feasible = true;
  std::string reason;
  std::optional<double> best_so_far;  // best feasible fitness so far
};

struct SearchResult {
  bool found = false;  // at least one feasible arch was seen
  space::ArchSpec best_arch;
  std::uint32_t best_index = 0;
  double best_fitness = 0;
  std::vector<LogEntry> log;
  std::size_t feasible_evals = 0;
  std::size_t total_evals = 0;
  double init_wall_ms = 0;
  double evolve_wall_ms = 0;
};

using FitnessFn = std::function<double(const space::ArchSpec&)>;

FitnessFn make_fitness(FitnessKind kind, const MetricPredictor* predictor);

// Aging evolution: each cycle tournaments `tournament_size` members (uniform
// with replacement), mutates the winner, appends the child and evicts the
// oldest member. Infeasible members lose every comparison; an all-infeasible
// tournament still breeds from its fittest member.
SearchResult regularized_evolution(const SearchConfig& cfg,
                                   const FitnessFn& fitness,
                                   const std::vector<Constraint>& constraints,
                                   const MetricPredictor* predictor);

void write_search_log(std::ostream& out, const SearchResult& result,
                      const std::vector<std::string>& metric_names);

}  // namespace seval::search
