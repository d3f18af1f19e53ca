#pragma once

// Forward/backward kernels shared by the transformer. All activations are
// stacked row-major: one row per position, examples laid out back to back.

#include <cmath>
#include <vector>

#include "bvs/nn/tensor.hpp"

namespace bvs::nn {

template <typename S>
struct LayerNormCache {
  Mat<S> xhat;
  std::vector<S> rstd;
};

template <typename S>
Mat<S> layernorm_forward(const Mat<S>& x, const Mat<S>& gain, const Mat<S>& bias, LayerNormCache<S>* cache) {
  constexpr S kEps = S(1e-5);
  const Eigen::Index n = x.rows(), d = x.cols();
  Mat<S> y(n, d);
  if (cache) {
    cache->xhat.resize(n, d);
    cache->rstd.resize(static_cast<std::size_t>(n));
  }
  for (Eigen::Index r = 0; r < n; ++r) {
    const auto row = x.row(r);
    const S mu = row.mean();
    const S var = (row.array() - mu).square().mean();
    const S rs = S(1) / std::sqrt(var + kEps);
    const RowVec<S> xh = (row.array() - mu) * rs;
    y.row(r) = xh.cwiseProduct(gain.row(0)) + bias.row(0);
    if (cache) {
      cache->xhat.row(r) = xh;
      cache->rstd[static_cast<std::size_t>(r)] = rs;
    }
  }
  return y;
}

/// Accumulates parameter gradients and returns dL/dx.
template <typename S>
Mat<S> layernorm_backward(const Mat<S>& dy, const Mat<S>& gain, const LayerNormCache<S>& cache, Mat<S>& dgain,
                          Mat<S>& dbias) {
  const Eigen::Index n = dy.rows(), d = dy.cols();
  dgain.row(0) += (dy.array() * cache.xhat.array()).colwise().sum().matrix();
  dbias.row(0) += dy.colwise().sum();
  Mat<S> dx(n, d);
  const S invd = S(1) / static_cast<S>(d);
  for (Eigen::Index r = 0; r < n; ++r) {
    const RowVec<S> dxh = dy.row(r).cwiseProduct(gain.row(0));
    const S m1 = dxh.sum() * invd;
    const S m2 = dxh.dot(cache.xhat.row(r)) * invd;
    dx.row(r) = (dxh.array() - m1 - cache.xhat.row(r).array() * m2) * cache.rstd[static_cast<std::size_t>(r)];
  }
  return dx;
}

template <typename S>
Mat<S> linear_forward(const Mat<S>& x, const Mat<S>& w, const Mat<S>& b) {
  Mat<S> y = x * w;
  y.rowwise() += b.row(0);
  return y;
}

template <typename S>
Mat<S> linear_backward(const Mat<S>& x, const Mat<S>& dy, const Mat<S>& w, Mat<S>& dw, Mat<S>& db, bool need_dx = true) {
  dw.noalias() += x.transpose() * dy;
  db.row(0) += dy.colwise().sum();
  if (!need_dx) return {};
  return dy * w.transpose();
}

// tanh approximation of GELU
template <typename S>
Mat<S> gelu_forward(const Mat<S>& x) {
  const S c = static_cast<S>(0.7978845608028654);
  const auto a = x.array();
  const auto t = (c * (a + S(0.044715) * a.cube())).tanh();
  return (S(0.5) * a * (S(1) + t)).matrix();
}

template <typename S>
Mat<S> gelu_backward(const Mat<S>& x, const Mat<S>& dy) {
  const S c = static_cast<S>(0.7978845608028654);
  const auto a = x.array();
  const Eigen::Array<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> t = (c * (a + S(0.044715) * a.cube())).tanh();
  const auto grad = S(0.5) * (S(1) + t) + S(0.5) * a * (S(1) - t.square()) * c * (S(1) + S(3 * 0.044715) * a.square());
  return (dy.array() * grad).matrix();
}

/// Row range of one example inside a stacked matrix.
struct RowSpan {
  Eigen::Index offset = 0;
  Eigen::Index length = 0;
};

template <typename S>
struct AttentionCache {
  Mat<S> q, k, v;
  Mat<S> context;                 // concatenated heads, before the output projection
  std::vector<Mat<S>> probs;      // [example * heads + head], Lq x Lk
};

/// Multi-head scaled dot-product attention. Query rows of example e are
/// [e * lq, (e + 1) * lq) of `xq`; its keys/values are `kv_spans[e]` of `xkv`.
/// Attention is bidirectional (no causal mask).
template <typename S>
Mat<S> attention_forward(const Mat<S>& xq, const Mat<S>& xkv, Eigen::Index lq, const std::vector<RowSpan>& kv_spans,
                         std::size_t heads, const Mat<S>& wq, const Mat<S>& bq, const Mat<S>& wk, const Mat<S>& bk,
                         const Mat<S>& wv, const Mat<S>& bv, const Mat<S>& wo, const Mat<S>& bo,
                         AttentionCache<S>& cache) {
  const Eigen::Index d = wq.cols();
  const Eigen::Index dh = d / static_cast<Eigen::Index>(heads);
  const S scale = S(1) / std::sqrt(static_cast<S>(dh));
  cache.q = linear_forward(xq, wq, bq);
  cache.k = linear_forward(xkv, wk, bk);
  cache.v = linear_forward(xkv, wv, bv);
  cache.context.setZero(xq.rows(), d);
  const auto n = static_cast<Eigen::Index>(kv_spans.size());
  cache.probs.assign(static_cast<std::size_t>(n) * heads, Mat<S>());
  for (Eigen::Index e = 0; e < n; ++e) {
    const auto& span = kv_spans[static_cast<std::size_t>(e)];
    for (std::size_t h = 0; h < heads; ++h) {
      const Eigen::Index c0 = static_cast<Eigen::Index>(h) * dh;
      Mat<S> s = (cache.q.block(e * lq, c0, lq, dh) * cache.k.block(span.offset, c0, span.length, dh).transpose()) * scale;
      for (Eigen::Index r = 0; r < s.rows(); ++r) {
        const S mx = s.row(r).maxCoeff();
        s.row(r) = (s.row(r).array() - mx).exp();
        s.row(r) /= s.row(r).sum();
      }
      cache.context.block(e * lq, c0, lq, dh).noalias() = s * cache.v.block(span.offset, c0, span.length, dh);
      cache.probs[static_cast<std::size_t>(e) * heads + h] = std::move(s);
    }
  }
  return linear_forward(cache.context, wo, bo);
}

/// Returns dL/dxq; dL/dxkv is accumulated into `dxkv` (same shape as xkv).
/// When `self_attention` is set, xq and xkv are the same rows and the key/value
/// gradient is folded into the returned tensor instead.
template <typename S>
Mat<S> attention_backward(const Mat<S>& dy, const Mat<S>& xq, const Mat<S>& xkv, Eigen::Index lq,
                          const std::vector<RowSpan>& kv_spans, std::size_t heads, const Mat<S>& wq, const Mat<S>& wk,
                          const Mat<S>& wv, const Mat<S>& wo, const AttentionCache<S>& cache, Mat<S>& dwq, Mat<S>& dbq,
                          Mat<S>& dwk, Mat<S>& dbk, Mat<S>& dwv, Mat<S>& dbv, Mat<S>& dwo, Mat<S>& dbo,
                          Mat<S>* dxkv) {
  const Eigen::Index d = wq.cols();
  const Eigen::Index dh = d / static_cast<Eigen::Index>(heads);
  const S scale = S(1) / std::sqrt(static_cast<S>(dh));
  const Mat<S> dctx = linear_backward(cache.context, dy, wo, dwo, dbo);
  Mat<S> dq = Mat<S>::Zero(cache.q.rows(), d);
  Mat<S> dk = Mat<S>::Zero(cache.k.rows(), d);
  Mat<S> dv = Mat<S>::Zero(cache.v.rows(), d);
  const auto n = static_cast<Eigen::Index>(kv_spans.size());
  for (Eigen::Index e = 0; e < n; ++e) {
    const auto& span = kv_spans[static_cast<std::size_t>(e)];
    for (std::size_t h = 0; h < heads; ++h) {
      const Eigen::Index c0 = static_cast<Eigen::Index>(h) * dh;
      const Mat<S>& p = cache.probs[static_cast<std::size_t>(e) * heads + h];
      const auto dctx_h = dctx.block(e * lq, c0, lq, dh);
      dv.block(span.offset, c0, span.length, dh).noalias() += p.transpose() * dctx_h;
      Mat<S> dp = dctx_h * cache.v.block(span.offset, c0, span.length, dh).transpose();
      // softmax backward
      for (Eigen::Index r = 0; r < dp.rows(); ++r) {
        const S dot = dp.row(r).dot(p.row(r));
        dp.row(r) = p.row(r).array() * (dp.row(r).array() - dot);
      }
      dp *= scale;
      dq.block(e * lq, c0, lq, dh).noalias() += dp * cache.k.block(span.offset, c0, span.length, dh);
      dk.block(span.offset, c0, span.length, dh).noalias() += dp.transpose() * cache.q.block(e * lq, c0, lq, dh);
    }
  }
  Mat<S> dxq = linear_backward(xq, dq, wq, dwq, dbq);
  Mat<S> dkv = linear_backward(xkv, dk, wk, dwk, dbk);
  dkv += linear_backward(xkv, dv, wv, dwv, dbv);
  if (dxkv) {
    *dxkv += dkv;
  } else {
    dxq += dkv;
  }
  return dxq;
}

}  // namespace bvs::nn
