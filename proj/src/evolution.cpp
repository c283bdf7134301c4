#include "seval/evolution.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <deque>
#include <limits>

#include <json.hpp>

#include "seval/cost_model.hpp"

namespace seval::search {

namespace {

using Clock = std::chrono::steady_clock;

constexpr std::uint64_t kInitStream = 0x1417u;
constexpr std::uint64_t kCycleStream = 0xE701u;

double elapsed_ms(Clock::time_point since) {
  return std::chrono::duration<double, std::milli>(Clock::now() - since)
      .count();
}

struct Member {
  space::ArchSpec arch;
  std::uint32_t index = 0;
  double fitness = 0;
  Feasibility feas;
};

// Feasible beats infeasible; ties broken toward the earlier candidate.
bool better(const Member& a, const Member& b) {
  if (a.feas.feasible != b.feas.feasible) return a.feas.feasible;
  return a.fitness > b.fitness;
}

}  // namespace

void SearchConfig::check() const {
  if (population_size <= 0) {
    throw std::invalid_argument("population_size must be > 0");
  }
  if (tournament_size <= 0 || tournament_size > population_size) {
    throw std::invalid_argument(
        "tournament_size must be in [1, population_size]");
  }
  if (cycles == 0) throw std::invalid_argument("cycles must be > 0");
  if (cycles < static_cast<std::uint64_t>(population_size)) {
    throw std::invalid_argument("cycles must be >= population_size");
  }
}

Feasibility constraint_filter(const space::ArchSpec& arch,
                              const MetricPredictor* predictor,
                              const std::vector<Constraint>& constraints) {
  Feasibility result;
  if (predictor == nullptr) {
    if (!constraints.empty()) {
      throw std::invalid_argument("constraints require a predictor");
    }
    return result;
  }
  const auto& names = predictor->metric_names();
  for (const auto& c : constraints) {
    if (std::find(names.begin(), names.end(), c.metric) == names.end()) {
      throw std::invalid_argument("predictor was not trained on metric '" +
                                  c.metric + "'");
    }
    if (!std::isfinite(c.threshold)) {
      // +/-inf thresholds are legal (always/never binding); NaN is not.
      if (std::isnan(c.threshold)) {
        throw std::invalid_argument("constraint threshold is NaN");
      }
    }
  }
  try {
    result.predicted = predictor->predict_index(space::encode(arch));
  } catch (const graph::NoPathError&) {
    result.feasible = false;
    result.reason = "no_path";
    return result;
  }
  for (const auto& c : constraints) {
    const auto it = std::find(names.begin(), names.end(), c.metric);
    const auto value =
        result.predicted[static_cast<std::size_t>(it - names.begin())];
    const bool ok = c.direction == Direction::max_allowed
                        ? value <= c.threshold
                        : value >= c.threshold;
    if (!ok) {
      result.feasible = false;
      result.reason = c.metric +
                      (c.direction == Direction::max_allowed ? ">" : "<") +
                      std::to_string(c.threshold);
      return result;
    }
  }
  return result;
}

double threshold_from_dataset(const std::vector<cost::DatasetRecord>& records,
                              const std::string& metric, ThresholdStat stat) {
  std::vector<double> values;
  values.reserve(records.size());
  for (const auto& rec : records) {
    const auto it = rec.metrics.find(metric);
    if (it != rec.metrics.end()) values.push_back(it->second);
  }
  if (values.empty()) {
    throw std::invalid_argument("no record carries metric '" + metric + "'");
  }
  if (stat == ThresholdStat::mean) {
    double sum = 0;
    for (const auto v : values) sum += v;
    return sum / static_cast<double>(values.size());
  }
  std::sort(values.begin(), values.end());
  const auto n = values.size();
  return n % 2 == 1 ? values[n / 2]
                    : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

FitnessFn make_fitness(FitnessKind kind, const MetricPredictor* predictor) {
  if (kind == FitnessKind::synthetic_proxy) {
    return [](const space::ArchSpec& arch) { return cost::base_accuracy(arch); };
  }
  if (predictor == nullptr) {
    throw std::invalid_argument("evaluator_accuracy fitness needs a predictor");
  }
  const auto& names = predictor->metric_names();
  const auto it = std::find(names.begin(), names.end(), "accuracy");
  if (it == names.end()) {
    throw std::invalid_argument(
        "evaluator_accuracy fitness: predictor has no 'accuracy' output");
  }
  const auto pos = static_cast<std::size_t>(it - names.begin());
  return [predictor, pos](const space::ArchSpec& arch) {
    return predictor->predict_index(space::encode(arch))[pos];
  };
}

SearchResult regularized_evolution(const SearchConfig& cfg,
                                   const FitnessFn& fitness,
                                   const std::vector<Constraint>& constraints,
                                   const MetricPredictor* predictor) {
  cfg.check();
  if (!fitness) throw std::invalid_argument("fitness function is empty");
  if (!constraints.empty() && predictor == nullptr) {
    throw std::invalid_argument("constraints require a predictor");
  }
  if (predictor != nullptr && predictor->space() != cfg.space) {
    throw std::invalid_argument("predictor space does not match search space");
  }

  SearchResult result;
  std::deque<Member> population;
  std::optional<double> best;

  const auto evaluate = [&](const space::ArchSpec& arch,
                            std::uint64_t cycle) -> const Member& {
    Member member;
    member.arch = arch;
    member.index = space::encode(arch);
    bool fitness_ok = true;
    try {
      member.fitness = fitness(arch);
    } catch (const graph::NoPathError&) {
      member.fitness = -std::numeric_limits<double>::infinity();
      fitness_ok = false;
    }
    member.feas = constraint_filter(arch, predictor, constraints);
    if (!fitness_ok) {
      member.feas.feasible = false;
      if (member.feas.reason.empty()) member.feas.reason = "no_path";
    }
    ++result.total_evals;
    if (member.feas.feasible) {
      ++result.feasible_evals;
      if (!best.has_value() || member.fitness > *best) {
        best = member.fitness;
        result.found = true;
        result.best_arch = member.arch;
        result.best_index = member.index;
        result.best_fitness = member.fitness;
      }
    }
    LogEntry entry;
    entry.cycle = cycle;
    entry.arch_index = member.index;
    entry.fitness = member.fitness;
    entry.predicted = member.feas.predicted;
    entry.feasible = member.feas.feasible;
    entry.reason = member.feas.reason;
    entry.best_so_far = best;
    result.log.push_back(std::move(entry));
    population.push_back(std::move(member));
    return population.back();
  };

  const auto init_start = Clock::now();
  Rng init_rng(Rng::mix(cfg.seed, kInitStream));
  std::uint64_t cycle = 0;
  for (int i = 0; i < cfg.population_size; ++i, ++cycle) {
    evaluate(space::sample(cfg.space, init_rng), cycle);
  }
  result.init_wall_ms = elapsed_ms(init_start);

  const auto evolve_start = Clock::now();
  for (; cycle < cfg.cycles; ++cycle) {
    // One rng stream per cycle: feasibility checks consume no randomness, so
    // runs differing only in constraints draw identical tournaments.
    Rng rng(Rng::mix(Rng::mix(cfg.seed, kCycleStream), cycle));
    const auto pop_size = static_cast<std::uint32_t>(population.size());
    std::size_t parent = population.size();
    for (int t = 0; t < cfg.tournament_size; ++t) {
      const auto pick = static_cast<std::size_t>(rng.uniform_u32(pop_size));
      if (parent == population.size() ||
          better(population[pick], population[parent])) {
        parent = pick;
      }
    }
    const auto child = space::mutate(population[parent].arch, rng);
    evaluate(child, cycle);
    population.pop_front();
  }
  result.evolve_wall_ms = elapsed_ms(evolve_start);
  return result;
}

void write_search_log(std::ostream& out, const SearchResult& result,
                      const std::vector<std::string>& metric_names) {
  for (const auto& entry : result.log) {
    nlohmann::json line{{"cycle", entry.cycle},
                        {"arch_index", entry.arch_index},
                        {"fitness", entry.fitness},
                        {"feasible", entry.feasible}};
    if (!entry.predicted.empty()) {
      nlohmann::json predicted;
      for (std::size_t j = 0; j < entry.predicted.size(); ++j) {
        predicted[j < metric_names.size() ? metric_names[j]
                                          : "metric" + std::to_string(j)] =
            entry.predicted[j];
      }
      line["predicted"] = std::move(predicted);
    }
    if (!entry.reason.empty()) line["reason"] = entry.reason;
    if (entry.best_so_far.has_value()) line["best_so_far"] = *entry.best_so_far;
    out << line.dump() << '\n';
  }
}

}  // namespace seval::search
