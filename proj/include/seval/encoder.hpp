#pragma once

#include <Eigen/Core>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "seval/net_string.hpp"
#include "seval/rng.hpp"

namespace seval::model {

enum class Readout { mean_pool, first_token };

struct ModelConfig {
  int d_model = 64;
  int n_layers = 2;
  int n_heads = 4;
  int ffn_dim = 256;
  int max_len = 512;
  int k_outputs = 1;
  double dropout_p = 0.1;
  int vocab_size = 0;
  Readout readout = Readout::mean_pool;

  void check() const {
    if (d_model <= 0 || n_layers <= 0 || n_heads <= 0 || ffn_dim <= 0 ||
        max_len <= 0 || vocab_size <= 0) {
      throw std::invalid_argument("model config: dimensions must be positive");
    }
    if (d_model % n_heads != 0) {
      throw std::invalid_argument("d_model must be divisible by n_heads");
    }
    if (k_outputs < 1) {
      throw std::invalid_argument("k_outputs must be >= 1");
    }
    if (dropout_p < 0 || dropout_p >= 1) {
      throw std::invalid_argument("dropout_p must be in [0, 1)");
    }
  }
};

template <class S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class S>
using Vec = Eigen::Matrix<S, Eigen::Dynamic, 1>;

template <class S>
struct LayerParams {
  Mat<S> ln1_gain, ln1_bias;  // 1 x d
  Mat<S> wq, wk, wv, wo;      // d x d
  Mat<S> bq, bk, bv, bo;      // 1 x d
  Mat<S> ln2_gain, ln2_bias;  // 1 x d
  Mat<S> w1, b1;              // d x f, 1 x f
  Mat<S> w2, b2;              // f x d, 1 x d
};

template <class S>
struct Params {
  Mat<S> tok_emb;  // vocab x d
  Mat<S> pos_emb;  // max_len x d
  std::vector<LayerParams<S>> layers;
  Mat<S> head_w;  // d x k
  Mat<S> head_b;  // 1 x k
};

// Fixed iteration order over all parameter tensors; the order defines init
// draws, optimizer state layout and checkpoint keys.
template <class S, class F>
void visit_params(Params<S>& p, F&& f) {
  f("token_embedding", p.tok_emb);
  f("positional_embedding", p.pos_emb);
  for (std::size_t i = 0; i < p.layers.size(); ++i) {
    auto& layer = p.layers[i];
    const std::string prefix = "layer" + std::to_string(i) + ".";
    f(prefix + "ln1_gain", layer.ln1_gain);
    f(prefix + "ln1_bias", layer.ln1_bias);
    f(prefix + "wq", layer.wq);
    f(prefix + "bq", layer.bq);
    f(prefix + "wk", layer.wk);
    f(prefix + "bk", layer.bk);
    f(prefix + "wv", layer.wv);
    f(prefix + "bv", layer.bv);
    f(prefix + "wo", layer.wo);
    f(prefix + "bo", layer.bo);
    f(prefix + "ln2_gain", layer.ln2_gain);
    f(prefix + "ln2_bias", layer.ln2_bias);
    f(prefix + "w1", layer.w1);
    f(prefix + "b1", layer.b1);
    f(prefix + "w2", layer.w2);
    f(prefix + "b2", layer.b2);
  }
  f("head.weight", p.head_w);
  f("head.bias", p.head_b);
}

template <class S, class F>
void visit_params(const Params<S>& p, F&& f) {
  visit_params(const_cast<Params<S>&>(p),
               [&](const std::string& name, Mat<S>& tensor) {
                 f(name, static_cast<const Mat<S>&>(tensor));
               });
}

template <class S>
Params<S> make_params_shape(const ModelConfig& cfg) {
  Params<S> p;
  p.tok_emb.setZero(cfg.vocab_size, cfg.d_model);
  p.pos_emb.setZero(cfg.max_len, cfg.d_model);
  p.layers.resize(static_cast<std::size_t>(cfg.n_layers));
  for (auto& layer : p.layers) {
    layer.ln1_gain.setOnes(1, cfg.d_model);
    layer.ln1_bias.setZero(1, cfg.d_model);
    layer.wq.setZero(cfg.d_model, cfg.d_model);
    layer.wk.setZero(cfg.d_model, cfg.d_model);
    layer.wv.setZero(cfg.d_model, cfg.d_model);
    layer.wo.setZero(cfg.d_model, cfg.d_model);
    layer.bq.setZero(1, cfg.d_model);
    layer.bk.setZero(1, cfg.d_model);
    layer.bv.setZero(1, cfg.d_model);
    layer.bo.setZero(1, cfg.d_model);
    layer.ln2_gain.setOnes(1, cfg.d_model);
    layer.ln2_bias.setZero(1, cfg.d_model);
    layer.w1.setZero(cfg.d_model, cfg.ffn_dim);
    layer.b1.setZero(1, cfg.ffn_dim);
    layer.w2.setZero(cfg.ffn_dim, cfg.d_model);
    layer.b2.setZero(1, cfg.d_model);
  }
  p.head_w.setZero(cfg.d_model, cfg.k_outputs);
  p.head_b.setZero(1, cfg.k_outputs);
  return p;
}

template <class S>
Params<S> init_params(const ModelConfig& cfg, Rng& rng) {
  Params<S> p = make_params_shape<S>(cfg);
  const auto fill_normal = [&](Mat<S>& m, double stddev) {
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      for (Eigen::Index c = 0; c < m.cols(); ++c) {
        m(r, c) = static_cast<S>(rng.normal(0.0, stddev));
      }
    }
  };
  const auto glorot = [&](Mat<S>& m) {
    fill_normal(m, std::sqrt(2.0 / static_cast<double>(m.rows() + m.cols())));
  };
  fill_normal(p.tok_emb, 0.02);
  fill_normal(p.pos_emb, 0.02);
  for (auto& layer : p.layers) {
    glorot(layer.wq);
    glorot(layer.wk);
    glorot(layer.wv);
    glorot(layer.wo);
    glorot(layer.w1);
    glorot(layer.w2);
  }
  glorot(p.head_w);
  return p;
}

template <class S>
Params<S> zeros_like(const Params<S>& p) {
  Params<S> z;
  z.tok_emb = Mat<S>::Zero(p.tok_emb.rows(), p.tok_emb.cols());
  z.pos_emb = Mat<S>::Zero(p.pos_emb.rows(), p.pos_emb.cols());
  z.layers.resize(p.layers.size());
  for (std::size_t i = 0; i < p.layers.size(); ++i) {
    const auto& src = p.layers[i];
    auto& dst = z.layers[i];
    const auto zero = [](const Mat<S>& m) {
      return Mat<S>::Zero(m.rows(), m.cols()).eval();
    };
    dst.ln1_gain = zero(src.ln1_gain);
    dst.ln1_bias = zero(src.ln1_bias);
    dst.wq = zero(src.wq);
    dst.wk = zero(src.wk);
    dst.wv = zero(src.wv);
    dst.wo = zero(src.wo);
    dst.bq = zero(src.bq);
    dst.bk = zero(src.bk);
    dst.bv = zero(src.bv);
    dst.bo = zero(src.bo);
    dst.ln2_gain = zero(src.ln2_gain);
    dst.ln2_bias = zero(src.ln2_bias);
    dst.w1 = zero(src.w1);
    dst.b1 = zero(src.b1);
    dst.w2 = zero(src.w2);
    dst.b2 = zero(src.b2);
  }
  z.head_w = Mat<S>::Zero(p.head_w.rows(), p.head_w.cols());
  z.head_b = Mat<S>::Zero(p.head_b.rows(), p.head_b.cols());
  return z;
}

template <class S>
void accumulate(Params<S>& into, const Params<S>& from) {
  std::vector<Mat<S>*> dst;
  std::vector<const Mat<S>*> src;
  visit_params(into, [&](const std::string&, Mat<S>& t) { dst.push_back(&t); });
  visit_params(from,
               [&](const std::string&, const Mat<S>& t) { src.push_back(&t); });
  for (std::size_t i = 0; i < dst.size(); ++i) *dst[i] += *src[i];
}

namespace detail {

constexpr double kLayerNormEps = 1e-5;

template <class S>
struct LayerCache {
  Mat<S> x_in;
  Mat<S> xhat1;
  Vec<S> inv_std1;
  Mat<S> xn1;  // post-LN1 (attention input), reused by backward
  Mat<S> q, k, v;
  std::vector<Mat<S>> probs;      // per head, post-softmax
  std::vector<Mat<S>> att_mask;   // per head dropout mask; empty in eval
  Mat<S> ctx;
  Mat<S> att_out_mask;
  Mat<S> x_mid;
  Mat<S> xhat2;
  Vec<S> inv_std2;
  Mat<S> xn2;     // post-LN2 (FFN input)
  Mat<S> hidden;  // post-ReLU, pre-dropout
  Mat<S> hidden_mask;
  Mat<S> ffn_out_mask;
  bool has_dropout = false;
};

template <class S>
struct ForwardCache {
  std::vector<std::int32_t> ids;
  std::vector<unsigned char> valid;
  Eigen::Index n_valid = 0;
  Mat<S> emb_mask;
  Mat<S> x0;
  std::vector<LayerCache<S>> layers;
  Mat<S> x_final;
  Vec<S> pooled;
};

// y = gain .* (x - mean) / sqrt(var + eps) + bias, per row.
template <class S>
void layer_norm(const Mat<S>& x, const Mat<S>& gain, const Mat<S>& bias,
                Mat<S>& y, Mat<S>& xhat, Vec<S>& inv_std) {
  const auto rows = x.rows();
  const auto cols = x.cols();
  y.resize(rows, cols);
  xhat.resize(rows, cols);
  inv_std.resize(rows);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const S mean = x.row(r).mean();
    const S var = (x.row(r).array() - mean).square().mean();
    const S istd = S(1) / std::sqrt(var + static_cast<S>(kLayerNormEps));
    inv_std(r) = istd;
    xhat.row(r) = ((x.row(r).array() - mean) * istd).matrix();
    y.row(r) = xhat.row(r).cwiseProduct(gain.row(0)) + bias.row(0);
  }
}

// Gradient through layer_norm; accumulates parameter grads, fills dx.
template <class S>
void layer_norm_backward(const Mat<S>& dy, const Mat<S>& xhat,
                         const Vec<S>& inv_std, const Mat<S>& gain,
                         Mat<S>& dgain, Mat<S>& dbias, Mat<S>& dx) {
  dgain.row(0) += dy.cwiseProduct(xhat).colwise().sum();
  dbias.row(0) += dy.colwise().sum();
  dx.resize(dy.rows(), dy.cols());
  for (Eigen::Index r = 0; r < dy.rows(); ++r) {
    const Mat<S> dxhat = dy.row(r).cwiseProduct(gain.row(0));
    const S mean_dxhat = dxhat.mean();
    const S mean_dxhat_xhat = dxhat.cwiseProduct(xhat.row(r)).mean();
    dx.row(r) = (((dxhat.array() - mean_dxhat) -
                  xhat.row(r).array() * mean_dxhat_xhat) *
                 inv_std(r))
                    .matrix();
  }
}

// Row-wise softmax over valid key columns; fully-masked rows become zero.
template <class S>
void masked_softmax(Mat<S>& scores, const std::vector<unsigned char>& valid,
                    bool all_valid) {
  for (Eigen::Index r = 0; r < scores.rows(); ++r) {
    auto row = scores.row(r);
    if (all_valid) {
      const S max = row.maxCoeff();
      row = (row.array() - max).exp().matrix();
      row /= row.sum();
      continue;
    }
    S max = std::numeric_limits<S>::lowest();
    bool any = false;
    for (Eigen::Index c = 0; c < row.cols(); ++c) {
      if (valid[static_cast<std::size_t>(c)]) {
        any = true;
        max = std::max(max, row(c));
      }
    }
    if (!any) {
      row.setZero();
      continue;
    }
    S sum = 0;
    for (Eigen::Index c = 0; c < row.cols(); ++c) {
      if (valid[static_cast<std::size_t>(c)]) {
        row(c) = std::exp(row(c) - max);
        sum += row(c);
      } else {
        row(c) = 0;
      }
    }
    row /= sum;
  }
}

template <class S>
void fill_dropout_mask(Mat<S>& mask, Eigen::Index rows, Eigen::Index cols,
                       double p, Rng& rng) {
  mask.resize(rows, cols);
  const S keep_scale = static_cast<S>(1.0 / (1.0 - p));
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) {
      mask(r, c) = rng.uniform01() < p ? S(0) : keep_scale;
    }
  }
}

// Scratch tensors for backward_sample; callers keep one alive across samples
// so the big per-layer buffers are allocated once.
template <class S>
struct BackwardWorkspace {
  Mat<S> dx, dx_mid, dffn_out, dhidden, dxn2, dxn1, datt_out, dctx;
  Mat<S> dq, dk, dv, dscores, dprobs, probs_used, hidden_used;
};

}  // namespace detail

// Forward pass over one token sequence. In training mode `dropout_rng` must
// be non-null; masks are drawn in a fixed order so a per-sample seed fixes
// the whole pass.
template <class S>
void forward_sample(const ModelConfig& cfg, const Params<S>& p,
                    std::span<const std::int32_t> ids, bool training,
                    Rng* dropout_rng, detail::ForwardCache<S>& cache) {
  if (ids.empty()) {
    throw std::invalid_argument("encode: empty token sequence");
  }
  if (static_cast<int>(ids.size()) > cfg.max_len) {
    throw std::invalid_argument("encode: sequence longer than max_len");
  }
  const auto L = static_cast<Eigen::Index>(ids.size());
  const Eigen::Index d = cfg.d_model;
  cache.ids.assign(ids.begin(), ids.end());
  cache.valid.assign(ids.size(), 1);
  cache.n_valid = 0;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= cfg.vocab_size) {
      throw std::out_of_range("encode: token id " + std::to_string(ids[i]) +
                              " outside vocab of " +
                              std::to_string(cfg.vocab_size));
    }
    cache.valid[i] = ids[i] != text::Vocab::kPad ? 1 : 0;
    cache.n_valid += cache.valid[i];
  }
  if (cache.n_valid == 0) {
    throw std::invalid_argument("encode: sequence is all PAD");
  }
  const bool all_valid = cache.n_valid == L;
  const bool use_dropout = training && cfg.dropout_p > 0;
  if (training && dropout_rng == nullptr) {
    throw std::invalid_argument("training forward needs a dropout rng");
  }

  cache.x0.resize(L, d);
  for (Eigen::Index i = 0; i < L; ++i) {
    cache.x0.row(i) =
        p.tok_emb.row(cache.ids[static_cast<std::size_t>(i)]) +
        p.pos_emb.row(i);
  }
  if (use_dropout) {
    detail::fill_dropout_mask(cache.emb_mask, L, d, cfg.dropout_p,
                              *dropout_rng);
    cache.x0 = cache.x0.cwiseProduct(cache.emb_mask);
  } else {
    cache.emb_mask.resize(0, 0);
  }

  const int heads = cfg.n_heads;
  const Eigen::Index dh = d / heads;
  const S scale = static_cast<S>(1.0 / std::sqrt(static_cast<double>(dh)));

  cache.layers.resize(static_cast<std::size_t>(cfg.n_layers));
  const Mat<S>* x = &cache.x0;
  for (int layer_idx = 0; layer_idx < cfg.n_layers; ++layer_idx) {
    auto& lc = cache.layers[static_cast<std::size_t>(layer_idx)];
    const auto& lp = p.layers[static_cast<std::size_t>(layer_idx)];
    lc.has_dropout = use_dropout;
    if (x != &lc.x_in) lc.x_in = *x;  // layer > 0 already holds its input

    detail::layer_norm(lc.x_in, lp.ln1_gain, lp.ln1_bias, lc.xn1, lc.xhat1,
                       lc.inv_std1);
    lc.q.noalias() = lc.xn1 * lp.wq;
    lc.q.rowwise() += lp.bq.row(0);
    lc.k.noalias() = lc.xn1 * lp.wk;
    lc.k.rowwise() += lp.bk.row(0);
    lc.v.noalias() = lc.xn1 * lp.wv;
    lc.v.rowwise() += lp.bv.row(0);

    lc.probs.resize(static_cast<std::size_t>(heads));
    lc.att_mask.resize(use_dropout ? static_cast<std::size_t>(heads) : 0);
    lc.ctx.resize(L, d);
    for (int h = 0; h < heads; ++h) {
      const auto qh = lc.q.middleCols(h * dh, dh);
      const auto kh = lc.k.middleCols(h * dh, dh);
      const auto vh = lc.v.middleCols(h * dh, dh);
      auto& probs = lc.probs[static_cast<std::size_t>(h)];
      probs.resize(L, L);
      probs.noalias() = qh * kh.transpose();
      probs *= scale;
      detail::masked_softmax(probs, cache.valid, all_valid);
      if (use_dropout) {
        auto& mask = lc.att_mask[static_cast<std::size_t>(h)];
        detail::fill_dropout_mask(mask, L, L, cfg.dropout_p, *dropout_rng);
        lc.ctx.middleCols(h * dh, dh).noalias() = probs.cwiseProduct(mask) * vh;
      } else {
        lc.ctx.middleCols(h * dh, dh).noalias() = probs * vh;
      }
    }
    // x_mid doubles as the attention-output buffer before the residual add.
    lc.x_mid.noalias() = lc.ctx * lp.wo;
    lc.x_mid.rowwise() += lp.bo.row(0);
    if (use_dropout) {
      detail::fill_dropout_mask(lc.att_out_mask, L, d, cfg.dropout_p,
                                *dropout_rng);
      lc.x_mid = lc.x_mid.cwiseProduct(lc.att_out_mask);
    } else {
      lc.att_out_mask.resize(0, 0);
    }
    lc.x_mid += lc.x_in;

    detail::layer_norm(lc.x_mid, lp.ln2_gain, lp.ln2_bias, lc.xn2, lc.xhat2,
                       lc.inv_std2);
    lc.hidden.noalias() = lc.xn2 * lp.w1;
    lc.hidden.rowwise() += lp.b1.row(0);
    lc.hidden = lc.hidden.cwiseMax(S(0));
    if (use_dropout) {
      detail::fill_dropout_mask(lc.hidden_mask, L, cfg.ffn_dim, cfg.dropout_p,
                                *dropout_rng);
    } else {
      lc.hidden_mask.resize(0, 0);
    }

    const bool last = layer_idx + 1 == cfg.n_layers;
    Mat<S>& x_out = last
                        ? cache.x_final
                        : cache.layers[static_cast<std::size_t>(layer_idx) + 1]
                              .x_in;
    if (use_dropout) {
      x_out.noalias() = lc.hidden.cwiseProduct(lc.hidden_mask) * lp.w2;
    } else {
      x_out.noalias() = lc.hidden * lp.w2;
    }
    x_out.rowwise() += lp.b2.row(0);
    if (use_dropout) {
      detail::fill_dropout_mask(lc.ffn_out_mask, L, d, cfg.dropout_p,
                                *dropout_rng);
      x_out = x_out.cwiseProduct(lc.ffn_out_mask);
    } else {
      lc.ffn_out_mask.resize(0, 0);
    }
    x_out += lc.x_mid;
    x = &x_out;
  }

  cache.pooled.resize(d);
  if (cfg.readout == Readout::first_token) {
    cache.pooled = cache.x_final.row(0).transpose();
  } else {
    cache.pooled.setZero();
    for (Eigen::Index i = 0; i < L; ++i) {
      if (cache.valid[static_cast<std::size_t>(i)]) {
        cache.pooled += cache.x_final.row(i).transpose();
      }
    }
    cache.pooled /= static_cast<S>(cache.n_valid);
  }
}

// Embedding in eval mode (the paper's e_a).
template <class S>
Vec<S> encode(const ModelConfig& cfg, const Params<S>& p,
              std::span<const std::int32_t> ids) {
  detail::ForwardCache<S> cache;
  forward_sample(cfg, p, ids, false, nullptr, cache);
  return cache.pooled;
}

// Normalized-space prediction: head_w' * e + head_b.
template <class S>
Vec<S> head_forward(const Params<S>& p, const Vec<S>& pooled) {
  Vec<S> out = p.head_w.transpose() * pooled;
  out += p.head_b.row(0).transpose();
  return out;
}

// Backprop of d(loss)/d(prediction) through the whole stack; accumulates
// into `grads`. `ws` is scratch only — contents are overwritten.
template <class S>
void backward_sample(const ModelConfig& cfg, const Params<S>& p,
                     const detail::ForwardCache<S>& cache,
                     const Vec<S>& dpred, Params<S>& grads,
                     detail::BackwardWorkspace<S>& ws) {
  const auto L = static_cast<Eigen::Index>(cache.ids.size());
  const Eigen::Index d = cfg.d_model;
  const int heads = cfg.n_heads;
  const Eigen::Index dh = d / heads;
  const S scale = static_cast<S>(1.0 / std::sqrt(static_cast<double>(dh)));

  grads.head_w.noalias() += cache.pooled * dpred.transpose();
  grads.head_b.row(0) += dpred.transpose();
  Vec<S> dpooled = p.head_w * dpred;

  Mat<S>& dx = ws.dx;
  dx.resize(L, d);
  dx.setZero();
  if (cfg.readout == Readout::first_token) {
    dx.row(0) = dpooled.transpose();
  } else {
    const S inv = S(1) / static_cast<S>(cache.n_valid);
    for (Eigen::Index i = 0; i < L; ++i) {
      if (cache.valid[static_cast<std::size_t>(i)]) {
        dx.row(i) = dpooled.transpose() * inv;
      }
    }
  }

  for (int layer_idx = cfg.n_layers - 1; layer_idx >= 0; --layer_idx) {
    const auto& lc = cache.layers[static_cast<std::size_t>(layer_idx)];
    const auto& lp = p.layers[static_cast<std::size_t>(layer_idx)];
    auto& lg = grads.layers[static_cast<std::size_t>(layer_idx)];
    const bool drop = lc.has_dropout;

    // FFN block: x = x_mid + drop(relu(ln2(x_mid)·w1 + b1)·w2 + b2)
    const Mat<S>* dffn_out = &dx;
    if (drop) {
      ws.dffn_out = dx.cwiseProduct(lc.ffn_out_mask);
      dffn_out = &ws.dffn_out;
    }
    const Mat<S>* hidden_used = &lc.hidden;
    if (drop) {
      ws.hidden_used = lc.hidden.cwiseProduct(lc.hidden_mask);
      hidden_used = &ws.hidden_used;
    }
    lg.w2.noalias() += hidden_used->transpose() * *dffn_out;
    lg.b2.row(0) += dffn_out->colwise().sum();
    ws.dhidden.noalias() = *dffn_out * lp.w2.transpose();
    if (drop) {
      ws.dhidden = ws.dhidden.cwiseProduct(lc.hidden_mask);
    }
    // ReLU gate
    ws.dhidden.array() *= (lc.hidden.array() > S(0)).template cast<S>();
    lg.w1.noalias() += lc.xn2.transpose() * ws.dhidden;
    lg.b1.row(0) += ws.dhidden.colwise().sum();
    ws.dxn2.noalias() = ws.dhidden * lp.w1.transpose();
    detail::layer_norm_backward(ws.dxn2, lc.xhat2, lc.inv_std2, lp.ln2_gain,
                                lg.ln2_gain, lg.ln2_bias, ws.dx_mid);
    ws.dx_mid += dx;  // residual path

    // Attention block: x_mid = x_in + drop(ctx·wo + bo)
    const Mat<S>* datt_out = &ws.dx_mid;
    if (drop) {
      ws.datt_out = ws.dx_mid.cwiseProduct(lc.att_out_mask);
      datt_out = &ws.datt_out;
    }
    lg.wo.noalias() += lc.ctx.transpose() * *datt_out;
    lg.bo.row(0) += datt_out->colwise().sum();
    ws.dctx.noalias() = *datt_out * lp.wo.transpose();

    ws.dq.resize(L, d);
    ws.dk.resize(L, d);
    ws.dv.resize(L, d);
    for (int h = 0; h < heads; ++h) {
      const auto& probs = lc.probs[static_cast<std::size_t>(h)];
      const auto vh = lc.v.middleCols(h * dh, dh);
      const auto qh = lc.q.middleCols(h * dh, dh);
      const auto kh = lc.k.middleCols(h * dh, dh);
      const auto dctx_h = ws.dctx.middleCols(h * dh, dh);
      const Mat<S>* probs_used = &probs;
      if (drop) {
        ws.probs_used =
            probs.cwiseProduct(lc.att_mask[static_cast<std::size_t>(h)]);
        probs_used = &ws.probs_used;
      }
      ws.dprobs.noalias() = dctx_h * vh.transpose();
      ws.dv.middleCols(h * dh, dh).noalias() =
          probs_used->transpose() * dctx_h;
      if (drop) {
        ws.dprobs =
            ws.dprobs.cwiseProduct(lc.att_mask[static_cast<std::size_t>(h)]);
      }
      // softmax backward: ds = p ⊙ (dp − rowsum(dp ⊙ p)); zero rows stay zero
      ws.dscores.resize(L, L);
      for (Eigen::Index r = 0; r < L; ++r) {
        const S dot = ws.dprobs.row(r).cwiseProduct(probs.row(r)).sum();
        ws.dscores.row(r) =
            (probs.row(r).array() * (ws.dprobs.row(r).array() - dot))
                .matrix();
      }
      ws.dscores *= scale;
      ws.dq.middleCols(h * dh, dh).noalias() = ws.dscores * kh;
      ws.dk.middleCols(h * dh, dh).noalias() = ws.dscores.transpose() * qh;
    }

    lg.wq.noalias() += lc.xn1.transpose() * ws.dq;
    lg.bq.row(0) += ws.dq.colwise().sum();
    lg.wk.noalias() += lc.xn1.transpose() * ws.dk;
    lg.bk.row(0) += ws.dk.colwise().sum();
    lg.wv.noalias() += lc.xn1.transpose() * ws.dv;
    lg.bv.row(0) += ws.dv.colwise().sum();
    ws.dxn1.noalias() = ws.dq * lp.wq.transpose();
    ws.dxn1.noalias() += ws.dk * lp.wk.transpose();
    ws.dxn1.noalias() += ws.dv * lp.wv.transpose();
    detail::layer_norm_backward(ws.dxn1, lc.xhat1, lc.inv_std1, lp.ln1_gain,
                                lg.ln1_gain, lg.ln1_bias, dx);
    dx += ws.dx_mid;  // residual path
  }

  if (cache.emb_mask.size() > 0) {
    dx = dx.cwiseProduct(cache.emb_mask);
  }
  for (Eigen::Index i = 0; i < L; ++i) {
    grads.pos_emb.row(i) += dx.row(i);
    grads.tok_emb.row(cache.ids[static_cast<std::size_t>(i)]) += dx.row(i);
  }
}

// Mean over k of squared error, per sample, in normalized target space.
// Returns the loss; fills dpred with its gradient.
template <class S>
double sample_loss_grad(const Vec<S>& pred, std::span<const double> target,
                        Vec<S>& dpred) {
  const auto k = pred.size();
  dpred.resize(k);
  double loss = 0;
  for (Eigen::Index j = 0; j < k; ++j) {
    const double diff =
        static_cast<double>(pred(j)) - target[static_cast<std::size_t>(j)];
    loss += diff * diff;
    dpred(j) = static_cast<S>(2.0 * diff / static_cast<double>(k));
  }
  return loss / static_cast<double>(k);
}

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <class S>
struct AdamState {
  Params<S> m, v;
  long long t = 0;
};

template <class S>
void adam_step(Params<S>& params, const Params<S>& grads, AdamState<S>& state,
               double lr, const AdamConfig& cfg = {}) {
  ++state.t;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
  const S b1 = static_cast<S>(cfg.beta1);
  const S b2 = static_cast<S>(cfg.beta2);
  const S one_m_b1 = static_cast<S>(1.0 - cfg.beta1);
  const S one_m_b2 = static_cast<S>(1.0 - cfg.beta2);
  const S step = static_cast<S>(lr / bc1);
  const S eps = static_cast<S>(cfg.eps);
  const S inv_sqrt_bc2 = static_cast<S>(1.0 / std::sqrt(bc2));

  std::vector<Mat<S>*> param_list, grad_list, m_list, v_list;
  visit_params(params,
               [&](const std::string&, Mat<S>& t) { param_list.push_back(&t); });
  visit_params(const_cast<Params<S>&>(grads),
               [&](const std::string&, Mat<S>& t) { grad_list.push_back(&t); });
  visit_params(state.m,
               [&](const std::string&, Mat<S>& t) { m_list.push_back(&t); });
  visit_params(state.v,
               [&](const std::string&, Mat<S>& t) { v_list.push_back(&t); });
  for (std::size_t i = 0; i < param_list.size(); ++i) {
    auto& m = *m_list[i];
    auto& v = *v_list[i];
    const auto& g = *grad_list[i];
    m = b1 * m + one_m_b1 * g;
    v.array() = b2 * v.array() + one_m_b2 * g.array().square();
    param_list[i]->array() -=
        step * m.array() / ((v.array().sqrt() * inv_sqrt_bc2) + eps);
  }
}

template <class S>
void sgd_step(Params<S>& params, const Params<S>& grads, double lr) {
  std::vector<Mat<S>*> param_list;
  std::vector<const Mat<S>*> grad_list;
  visit_params(params,
               [&](const std::string&, Mat<S>& t) { param_list.push_back(&t); });
  visit_params(grads, [&](const std::string&, const Mat<S>& t) {
    grad_list.push_back(&t);
  });
  for (std::size_t i = 0; i < param_list.size(); ++i) {
    *param_list[i] -= static_cast<S>(lr) * *grad_list[i];
  }
}

}  // namespace seval::model
