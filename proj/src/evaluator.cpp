#include "seval/evaluator.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "seval/cost_model.hpp"
#include "seval/digest.hpp"

namespace seval::model {

Vec<float> EvaluatorModel::embed(const text::TokenSeq& tokens) const {
  return encode(config, params, std::span<const std::int32_t>(tokens.ids));
}

std::vector<double> EvaluatorModel::predict_normalized(
    const text::TokenSeq& tokens) const {
  const Vec<float> pooled = embed(tokens);
  const Vec<float> out = head_forward(params, pooled);
  std::vector<double> result(static_cast<std::size_t>(out.size()));
  for (Eigen::Index j = 0; j < out.size(); ++j) {
    result[static_cast<std::size_t>(j)] = static_cast<double>(out(j));
  }
  return result;
}

std::vector<double> EvaluatorModel::predict(const text::TokenSeq& tokens) const {
  return denormalize(*this, predict_normalized(tokens));
}

text::TokenSeq EvaluatorModel::tokenize_arch(std::uint64_t arch_index) const {
  const auto arch = space::decode(space, arch_index);
  const auto graph = graph::elaborate(arch, macro);
  const auto net_string = text::graph_to_string(graph);
  return text::tokenize(net_string, vocab, config.max_len);
}

std::vector<double> EvaluatorModel::predict_arch(
    std::uint64_t arch_index) const {
  return predict(tokenize_arch(arch_index));
}

std::vector<double> predict_from_embedding(const EvaluatorModel& model,
                                           const Vec<float>& embedding) {
  const Vec<float> out = head_forward(model.params, embedding);
  std::vector<double> normalized(static_cast<std::size_t>(out.size()));
  for (Eigen::Index j = 0; j < out.size(); ++j) {
    normalized[static_cast<std::size_t>(j)] = static_cast<double>(out(j));
  }
  return denormalize(model, normalized);
}

std::vector<double> normalize_targets(const EvaluatorModel& model,
                                      const std::vector<double>& metrics) {
  if (metrics.size() != model.norm_mean.size()) {
    throw std::invalid_argument("normalize: metric count mismatch");
  }
  std::vector<double> out(metrics.size());
  for (std::size_t j = 0; j < metrics.size(); ++j) {
    out[j] = (metrics[j] - model.norm_mean[j]) / model.norm_std[j];
  }
  return out;
}

std::vector<double> denormalize(const EvaluatorModel& model,
                                const std::vector<double>& normalized) {
  if (normalized.size() != model.norm_mean.size()) {
    throw std::invalid_argument("denormalize: metric count mismatch");
  }
  std::vector<double> out(normalized.size());
  for (std::size_t j = 0; j < normalized.size(); ++j) {
    out[j] = normalized[j] * model.norm_std[j] + model.norm_mean[j];
  }
  return out;
}

SplitIndices split_dataset(std::size_t n, double val_fraction,
                           double test_fraction, std::uint64_t seed) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(Rng::mix(seed, 0x5417));
  for (std::size_t i = n; i > 1; --i) {
    const auto j = rng.uniform_u32(static_cast<std::uint32_t>(i));
    std::swap(order[i - 1], order[j]);
  }
  const auto n_val =
      static_cast<std::size_t>(std::llround(val_fraction * static_cast<double>(n)));
  const auto n_test = static_cast<std::size_t>(
      std::llround(test_fraction * static_cast<double>(n)));
  if (n_val + n_test >= n && n > 0) {
    throw std::invalid_argument("split leaves no training records");
  }
  SplitIndices split;
  split.train.assign(order.begin(),
                     order.end() - static_cast<std::ptrdiff_t>(n_val + n_test));
  split.val.assign(order.end() - static_cast<std::ptrdiff_t>(n_val + n_test),
                   order.end() - static_cast<std::ptrdiff_t>(n_test));
  split.test.assign(order.end() - static_cast<std::ptrdiff_t>(n_test),
                    order.end());
  return split;
}

std::vector<text::TokenSeq> tokenize_dataset(const cost::Dataset& dataset,
                                             const text::Vocab& vocab,
                                             const graph::MacroConfig& macro,
                                             int max_len) {
  std::vector<text::TokenSeq> out;
  out.reserve(dataset.records.size());
  for (const auto& rec : dataset.records) {
    for (const auto& flag : rec.flags) {
      if (flag == "no_path") {
        throw std::invalid_argument(
            "dataset record " + std::to_string(rec.arch_index) +
            " cannot be elaborated (no_path)");
      }
    }
    const auto arch = space::decode(rec.space, rec.arch_index);
    const auto graph = graph::elaborate(arch, macro);
    const auto net_string = text::graph_to_string(graph);
    if (hex_digest(net_string.text) != rec.string_hash) {
      throw std::runtime_error(
          "dataset record " + std::to_string(rec.arch_index) +
          ": stored string hash disagrees with re-elaborated graph "
          "(macro config mismatch?)");
    }
    out.push_back(text::tokenize(net_string, vocab, max_len));
  }
  return out;
}

namespace {

struct GradCheckBatch {
  std::vector<std::vector<std::int32_t>> sequences;
  std::vector<std::vector<double>> targets;
};

GradCheckBatch make_grad_check_batch(const ModelConfig& cfg, Rng& rng) {
  GradCheckBatch batch;
  const int lengths[] = {7, 5, std::min(9, cfg.max_len)};
  for (int len : lengths) {
    std::vector<std::int32_t> ids;
    const int usable = std::min(len, cfg.max_len);
    for (int i = 0; i < usable; ++i) {
      const auto span =
          static_cast<std::uint32_t>(cfg.vocab_size - text::Vocab::kNumReserved);
      ids.push_back(text::Vocab::kNumReserved +
                    static_cast<std::int32_t>(rng.uniform_u32(span)));
    }
    batch.sequences.push_back(std::move(ids));
    std::vector<double> target(static_cast<std::size_t>(cfg.k_outputs));
    for (auto& t : target) t = rng.normal(0.0, 1.0);
    batch.targets.push_back(std::move(target));
  }
  return batch;
}

template <class S>
double batch_loss(const ModelConfig& cfg, const Params<S>& params,
                  const GradCheckBatch& batch, Params<S>* grads) {
  double total = 0;
  detail::ForwardCache<S> cache;
  detail::BackwardWorkspace<S> ws;
  for (std::size_t s = 0; s < batch.sequences.size(); ++s) {
    forward_sample(cfg, params, std::span<const std::int32_t>(batch.sequences[s]),
                   false, nullptr, cache);
    const Vec<S> pred = head_forward(params, cache.pooled);
    Vec<S> dpred;
    total += sample_loss_grad(pred, std::span<const double>(batch.targets[s]),
                              dpred);
    if (grads != nullptr) {
      dpred /= static_cast<S>(batch.sequences.size());
      backward_sample(cfg, params, cache, dpred, *grads, ws);
    }
  }
  return total / static_cast<double>(batch.sequences.size());
}

}  // namespace

template <class S>
GradCheckReport grad_check(const ModelConfig& cfg, std::uint64_t seed,
                           double eps, int coords_per_group) {
  cfg.check();
  if (eps <= 0) throw std::invalid_argument("grad_check: eps must be > 0");
  if (cfg.vocab_size <= text::Vocab::kNumReserved) {
    throw std::invalid_argument("grad_check: vocab has no real tokens");
  }
  ModelConfig check_cfg = cfg;
  check_cfg.dropout_p = 0.0;  // finite differences need a deterministic loss
  Rng init_rng(Rng::mix(seed, 1));
  Params<S> params = init_params<S>(check_cfg, init_rng);
  Rng data_rng(Rng::mix(seed, 2));
  const GradCheckBatch batch = make_grad_check_batch(check_cfg, data_rng);

  Params<S> grads = zeros_like(params);
  batch_loss(check_cfg, params, batch, &grads);

  // The finite-difference oracle always runs in double so it measures the
  // analytic gradient's error rather than FD round-off; float values are
  // exactly representable in double, so the cast changes nothing about θ.
  Params<double> fd_params = make_params_shape<double>(check_cfg);
  {
    std::vector<Mat<double>*> dst;
    visit_params(fd_params, [&](const std::string&, Mat<double>& t) {
      dst.push_back(&t);
    });
    std::size_t i = 0;
    visit_params(const_cast<const Params<S>&>(params),
                 [&](const std::string&, const Mat<S>& t) {
                   *dst[i++] = t.template cast<double>();
                 });
  }

  const double floor = sizeof(S) == sizeof(double) ? 1e-6 : 1e-3;
  Rng coord_rng(Rng::mix(seed, 3));
  GradCheckReport report;
  std::vector<std::pair<std::string, Mat<double>*>> tensors;
  visit_params(fd_params, [&](const std::string& name, Mat<double>& t) {
    tensors.emplace_back(name, &t);
  });
  std::vector<const Mat<S>*> grad_tensors;
  visit_params(const_cast<const Params<S>&>(grads),
               [&](const std::string&, const Mat<S>& t) {
                 grad_tensors.push_back(&t);
               });

  for (std::size_t ti = 0; ti < tensors.size(); ++ti) {
    Mat<double>& tensor = *tensors[ti].second;
    const Mat<S>& grad = *grad_tensors[ti];
    const auto total = tensor.size();
    std::vector<Eigen::Index> coords;
    if (total <= coords_per_group) {
      coords.resize(static_cast<std::size_t>(total));
      std::iota(coords.begin(), coords.end(), 0);
    } else {
      while (static_cast<int>(coords.size()) < coords_per_group) {
        const auto c = static_cast<Eigen::Index>(
            coord_rng.uniform_u32(static_cast<std::uint32_t>(total)));
        if (std::find(coords.begin(), coords.end(), c) == coords.end()) {
          coords.push_back(c);
        }
      }
    }
    double group_max = 0;
    for (const auto flat : coords) {
      const auto r = flat / tensor.cols();
      const auto c = flat % tensor.cols();
      const double saved = tensor(r, c);
      Params<double>* no_grads = nullptr;
      tensor(r, c) = saved + eps;
      const double up = batch_loss(check_cfg, fd_params, batch, no_grads);
      tensor(r, c) = saved - eps;
      const double down = batch_loss(check_cfg, fd_params, batch, no_grads);
      tensor(r, c) = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double analytic = static_cast<double>(grad(r, c));
      const double rel =
          std::abs(analytic - numeric) /
          std::max({std::abs(analytic), std::abs(numeric), floor});
      group_max = std::max(group_max, rel);
    }
    report.per_group.emplace_back(tensors[ti].first, group_max);
    report.max_rel_error = std::max(report.max_rel_error, group_max);
  }
  return report;
}

template GradCheckReport grad_check<float>(const ModelConfig&, std::uint64_t,
                                           double, int);
template GradCheckReport grad_check<double>(const ModelConfig&, std::uint64_t,
                                            double, int);

}  // namespace seval::model
