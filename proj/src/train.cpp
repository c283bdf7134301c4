#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <thread>

#include "seval/evaluator.hpp"

namespace seval::model {

namespace {

constexpr std::uint64_t kShuffleStream = 0x51u;
constexpr std::uint64_t kDropStream = 0xD0u;
constexpr std::uint64_t kInitStream = 0x11u;

struct Sample {
  std::vector<std::int32_t> ids;
  std::vector<double> target;  // normalized
};

double eval_loss(const ModelConfig& cfg, const Params<float>& params,
                 const std::vector<Sample>& samples,
                 const std::vector<std::size_t>& indices,
                 std::vector<double>* per_metric) {
  if (per_metric != nullptr) {
    per_metric->assign(static_cast<std::size_t>(cfg.k_outputs), 0.0);
  }
  if (indices.empty()) return 0.0;
  double total = 0;
  detail::ForwardCache<float> cache;
  for (const auto idx : indices) {
    const auto& sample = samples[idx];
    forward_sample(cfg, params, std::span<const std::int32_t>(sample.ids),
                   false, nullptr, cache);
    const Vec<float> pred = head_forward(params, cache.pooled);
    for (Eigen::Index j = 0; j < pred.size(); ++j) {
      const double diff = static_cast<double>(pred(j)) -
                          sample.target[static_cast<std::size_t>(j)];
      total += diff * diff / static_cast<double>(cfg.k_outputs);
      if (per_metric != nullptr) {
        (*per_metric)[static_cast<std::size_t>(j)] += diff * diff;
      }
    }
  }
  if (per_metric != nullptr) {
    for (auto& v : *per_metric) v /= static_cast<double>(indices.size());
  }
  return total / static_cast<double>(indices.size());
}

// Accumulates gradients for samples[batch[begin..end)] into grads.
double chunk_grads(const ModelConfig& cfg, const Params<float>& params,
                   const std::vector<Sample>& samples,
                   const std::vector<std::size_t>& batch, std::size_t begin,
                   std::size_t end, std::uint64_t dropout_seed,
                   Params<float>& grads) {
  double loss = 0;
  detail::ForwardCache<float> cache;
  detail::BackwardWorkspace<float> ws;
  for (std::size_t i = begin; i < end; ++i) {
    const auto idx = batch[i];
    const auto& sample = samples[idx];
    Rng drop_rng(Rng::mix(dropout_seed, static_cast<std::uint64_t>(idx)));
    forward_sample(cfg, params, std::span<const std::int32_t>(sample.ids), true,
                   &drop_rng, cache);
    const Vec<float> pred = head_forward(params, cache.pooled);
    Vec<float> dpred;
    loss += sample_loss_grad(pred, std::span<const double>(sample.target),
                             dpred);
    backward_sample(cfg, params, cache, dpred, grads, ws);
  }
  return loss;
}

}  // namespace

TrainResult train_evaluator(const cost::Dataset& dataset,
                            const std::vector<std::string>& objectives,
                            ModelConfig base, const TrainConfig& train_cfg) {
  train_cfg.check();
  if (objectives.empty()) {
    throw std::invalid_argument("train: objectives must be nonempty");
  }
  for (const auto& obj : objectives) {
    if (std::find(dataset.header.metric_names.begin(),
                  dataset.header.metric_names.end(),
                  obj) == dataset.header.metric_names.end()) {
      std::string available;
      for (const auto& m : dataset.header.metric_names) {
        if (!available.empty()) available += ", ";
        available += m;
      }
      throw std::invalid_argument("train: unknown objective '" + obj +
                                  "'; dataset provides: " + available);
    }
  }
  if (dataset.records.empty()) {
    throw std::invalid_argument("train: dataset is empty");
  }

  const auto n = dataset.records.size();
  auto split = split_dataset(n, train_cfg.val_fraction, train_cfg.test_fraction,
                             train_cfg.seed);

  // Vocab from the train split only; val/test fields unseen there map to UNK.
  std::vector<std::string> train_strings;
  train_strings.reserve(split.train.size());
  for (const auto idx : split.train) {
    const auto& rec = dataset.records[idx];
    const auto arch = space::decode(rec.space, rec.arch_index);
    const auto graph = graph::elaborate(arch, dataset.header.macro);
    train_strings.push_back(text::graph_to_string(graph).text);
  }
  std::vector<text::NetString> corpus;
  corpus.reserve(train_strings.size());
  for (auto& s : train_strings) corpus.push_back(text::NetString{std::move(s)});

  TrainResult result;
  auto& model = result.model;
  model.vocab = text::build_vocab(corpus);
  model.objectives = objectives;
  model.space = dataset.header.space;
  model.macro = dataset.header.macro;
  model.dataset_digest = dataset.header.oracle_digest;
  model.split_seed = train_cfg.seed;
  model.val_fraction = train_cfg.val_fraction;
  model.test_fraction = train_cfg.test_fraction;

  model.config = base;
  model.config.vocab_size = static_cast<int>(model.vocab.tokens.size());
  model.config.k_outputs = static_cast<int>(objectives.size());
  model.config.check();

  // Per-objective z-score stats over the train split (population std).
  model.norm_mean.assign(objectives.size(), 0.0);
  model.norm_std.assign(objectives.size(), 0.0);
  for (std::size_t j = 0; j < objectives.size(); ++j) {
    double sum = 0;
    for (const auto idx : split.train) {
      sum += dataset.records[idx].metrics.at(objectives[j]);
    }
    const double mean = sum / static_cast<double>(split.train.size());
    double var = 0;
    for (const auto idx : split.train) {
      const double d = dataset.records[idx].metrics.at(objectives[j]) - mean;
      var += d * d;
    }
    var /= static_cast<double>(split.train.size());
    if (var <= 0) {
      throw std::invalid_argument("train: objective '" + objectives[j] +
                                  "' is constant on the train split");
    }
    model.norm_mean[j] = mean;
    model.norm_std[j] = std::sqrt(var);
  }

  const auto token_seqs = tokenize_dataset(dataset, model.vocab,
                                           model.macro, model.config.max_len);
  std::vector<Sample> samples(n);
  for (std::size_t i = 0; i < n; ++i) {
    samples[i].ids = token_seqs[i].ids;
    samples[i].target.resize(objectives.size());
    for (std::size_t j = 0; j < objectives.size(); ++j) {
      samples[i].target[j] =
          (dataset.records[i].metrics.at(objectives[j]) - model.norm_mean[j]) /
          model.norm_std[j];
    }
  }

  Rng init_rng(Rng::mix(train_cfg.seed, kInitStream));
  model.params = init_params<float>(model.config, init_rng);
  AdamState<float> adam;
  if (train_cfg.optimizer == Optimizer::adam) {
    adam.m = zeros_like(model.params);
    adam.v = zeros_like(model.params);
  }

  Params<float> best_params = model.params;
  double best_val = std::numeric_limits<double>::infinity();
  const bool has_val = !split.val.empty();
  const auto n_threads = static_cast<std::size_t>(train_cfg.threads);

  for (int epoch = 0; epoch < train_cfg.epochs; ++epoch) {
    auto order = split.train;
    Rng shuffle_rng(
        Rng::mix(Rng::mix(train_cfg.seed, kShuffleStream),
                 static_cast<std::uint64_t>(epoch)));
    for (std::size_t i = order.size(); i > 1; --i) {
      const auto j = shuffle_rng.uniform_u32(static_cast<std::uint32_t>(i));
      std::swap(order[i - 1], order[j]);
    }
    const std::uint64_t dropout_seed = Rng::mix(
        Rng::mix(train_cfg.seed, kDropStream), static_cast<std::uint64_t>(epoch));

    double epoch_loss_sum = 0;
    const auto batch_size = static_cast<std::size_t>(train_cfg.batch_size);
    for (std::size_t start = 0; start < order.size(); start += batch_size) {
      const auto end = std::min(start + batch_size, order.size());
      const auto count = end - start;
      Params<float> grads = zeros_like(model.params);
      double batch_loss = 0;

      if (n_threads <= 1 || count < 2 * n_threads) {
        batch_loss = chunk_grads(model.config, model.params, samples, order,
                                 start, end, dropout_seed, grads);
      } else {
        std::vector<Params<float>> partial(n_threads, zeros_like(model.params));
        std::vector<double> losses(n_threads, 0.0);
        std::vector<std::thread> workers;
        workers.reserve(n_threads);
        for (std::size_t t = 0; t < n_threads; ++t) {
          const auto lo = start + count * t / n_threads;
          const auto hi = start + count * (t + 1) / n_threads;
          workers.emplace_back([&, t, lo, hi] {
            losses[t] = chunk_grads(model.config, model.params, samples, order,
                                    lo, hi, dropout_seed, partial[t]);
          });
        }
        for (auto& w : workers) w.join();
        // Reduce in fixed thread order: deterministic for a given thread count.
        for (std::size_t t = 0; t < n_threads; ++t) {
          accumulate(grads, partial[t]);
          batch_loss += losses[t];
        }
      }

      if (!std::isfinite(batch_loss)) {
        throw TrainingDiverged("training diverged (non-finite loss) at epoch " +
                               std::to_string(epoch) + ", batch offset " +
                               std::to_string(start));
      }
      epoch_loss_sum += batch_loss;

      const auto scale = 1.0f / static_cast<float>(count);
      visit_params(grads,
                   [&](const std::string&, Mat<float>& t) { t *= scale; });
      if (train_cfg.optimizer == Optimizer::adam) {
        adam_step(model.params, grads, adam, train_cfg.learning_rate);
      } else {
        sgd_step(model.params, grads, train_cfg.learning_rate);
      }
    }

    EpochStats stats;
    stats.epoch = epoch;
    stats.train_loss = epoch_loss_sum / static_cast<double>(order.size());
    stats.val_loss = eval_loss(model.config, model.params, samples, split.val,
                               &stats.val_per_metric);
    if (!std::isfinite(stats.val_loss)) {
      throw TrainingDiverged("training diverged (non-finite val loss) at epoch " +
                             std::to_string(epoch));
    }
    result.history.push_back(stats);

    const double selection_loss = has_val ? stats.val_loss : stats.train_loss;
    if (selection_loss < best_val) {
      best_val = selection_loss;
      best_params = model.params;
      result.best_epoch = epoch;
    }
  }

  model.params = std::move(best_params);
  result.train_indices = std::move(split.train);
  result.val_indices = std::move(split.val);
  result.test_indices = std::move(split.test);
  return result;
}

void write_history_csv(const std::filesystem::path& path,
                       const std::vector<EpochStats>& history,
                       const std::vector<std::string>& objectives) {
  std::ofstream out(path);
  if (!out) {
    throw std::runtime_error("cannot open " + path.string() + " for writing");
  }
  out << "epoch,train_loss,val_loss";
  for (const auto& obj : objectives) out << ",val_" << obj;
  out << "\n";
  char buf[64];
  for (const auto& e : history) {
    out << e.epoch;
    std::snprintf(buf, sizeof buf, ",%.9g,%.9g", e.train_loss, e.val_loss);
    out << buf;
    for (const auto v : e.val_per_metric) {
      std::snprintf(buf, sizeof buf, ",%.9g", v);
      out << buf;
    }
    out << "\n";
  }
}

}  // namespace seval::model
