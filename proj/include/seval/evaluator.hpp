#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "seval/dataset.hpp"
#include "seval/encoder.hpp"
#include "seval/graph_ir.hpp"
#include "seval/net_string.hpp"
#include "seval/search_space.hpp"

namespace seval::model {

// A trained evaluator: encoder g (tokens -> embedding) plus head h
// (embedding -> metrics), with everything needed to apply it to a fresh
// architecture: vocab, macro config and target de-normalization stats.
struct EvaluatorModel {
  ModelConfig config;
  Params<float> params;
  std::vector<std::string> objectives;
  std::vector<double> norm_mean;  // per objective
  std::vector<double> norm_std;   // per objective, > 0
  text::Vocab vocab;
  space::SpaceId space = space::SpaceId::tss;
  graph::MacroConfig macro;
  std::string dataset_digest;  // oracle digest of the training dataset
  std::uint64_t split_seed = 0;
  double val_fraction = 0.1;
  double test_fraction = 0.1;

  Vec<float> embed(const text::TokenSeq& tokens) const;
  std::vector<double> predict_normalized(const text::TokenSeq& tokens) const;
  // De-normalized metric predictions, one per objective.
  std::vector<double> predict(const text::TokenSeq& tokens) const;
  // Full pipeline: elaborate -> string -> tokenize -> predict.
  std::vector<double> predict_arch(std::uint64_t arch_index) const;
  text::TokenSeq tokenize_arch(std::uint64_t arch_index) const;
};

std::vector<double> predict_from_embedding(const EvaluatorModel& model,
                                           const Vec<float>& embedding);

std::vector<double> normalize_targets(const EvaluatorModel& model,
                                      const std::vector<double>& metrics);
std::vector<double> denormalize(const EvaluatorModel& model,
                                const std::vector<double>& normalized);

enum class Optimizer { sgd, adam };

struct TrainConfig {
  double learning_rate = 1e-3;
  int epochs = 30;
  int batch_size = 32;
  std::uint64_t seed = 0;
  Optimizer optimizer = Optimizer::adam;
  double val_fraction = 0.1;
  double test_fraction = 0.1;
  int threads = 1;

  void check() const {
    if (learning_rate <= 0) throw std::invalid_argument("learning_rate must be > 0");
    if (epochs <= 0) throw std::invalid_argument("epochs must be > 0");
    if (batch_size <= 0) throw std::invalid_argument("batch_size must be > 0");
    if (val_fraction < 0 || test_fraction < 0 ||
        val_fraction + test_fraction >= 1.0) {
      throw std::invalid_argument("split fractions must be >= 0 and sum < 1");
    }
    if (threads < 1) throw std::invalid_argument("threads must be >= 1");
  }
};

struct EpochStats {
  int epoch = 0;
  double train_loss = 0;
  double val_loss = 0;
  std::vector<double> val_per_metric;
};

struct TrainResult {
  EvaluatorModel model;
  std::vector<EpochStats> history;
  int best_epoch = -1;
  std::vector<std::size_t> train_indices, val_indices, test_indices;
};

struct TrainingDiverged : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct SplitIndices {
  std::vector<std::size_t> train, val, test;
};

// Deterministic shuffle split; fractions are rounded to counts, train gets
// the remainder.
SplitIndices split_dataset(std::size_t n, double val_fraction,
                           double test_fraction, std::uint64_t seed);

// Trains a fresh model on `dataset` for the given objectives. The vocab and
// normalization stats are computed on the train split only. `base` supplies
// the architecture hyperparameters; vocab_size and k_outputs are filled in.
TrainResult train_evaluator(const cost::Dataset& dataset,
                            const std::vector<std::string>& objectives,
                            ModelConfig base, const TrainConfig& train_cfg);

void write_history_csv(const std::filesystem::path& path,
                       const std::vector<EpochStats>& history,
                       const std::vector<std::string>& objectives);

// Re-derives the token sequences of a dataset under this model's vocab.
// Throws if a record cannot be elaborated or its string hash disagrees with
// the stored one (dataset/macro mismatch).
std::vector<text::TokenSeq> tokenize_dataset(const cost::Dataset& dataset,
                                             const text::Vocab& vocab,
                                             const graph::MacroConfig& macro,
                                             int max_len);

struct GradCheckReport {
  double max_rel_error = 0;
  std::vector<std::pair<std::string, double>> per_group;
};

// Compares analytic gradients against central finite differences on a
// deterministic synthetic batch; >= `coords_per_group` coordinates per
// parameter tensor (all of them for small tensors). Dropout disabled.
template <class S>
GradCheckReport grad_check(const ModelConfig& cfg, std::uint64_t seed,
                           double eps, int coords_per_group = 20);

void save_checkpoint(const EvaluatorModel& model,
                     const std::filesystem::path& path);
EvaluatorModel load_checkpoint(const std::filesystem::path& path);

}  // namespace seval::model
