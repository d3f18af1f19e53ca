#pragma once

// Bidirectional pre-norm transformer with optional cross-attention blocks.
//
// Block b (1-based):   h += SelfAttn(LN1(h))
//   if b is a cross block: h += CrossAttn(LN2(h), memory)
//                          h += FFN(LN3(h))
// The stack closes with a final LayerNorm (only when depth > 0) and a linear
// output head. Learned absolute positions are added to the input rows; the
// cross-attention memory gets no positional term here, only a LayerNorm
// shared by all cross blocks.

#include <cmath>
#include <string>
#include <vector>

#include "bvs/errors.hpp"
#include "bvs/nn/layers.hpp"
#include "bvs/nn/model_config.hpp"
#include "bvs/nn/tensor.hpp"
#include "bvs/random.hpp"

namespace bvs::nn {

/// Fill a parameter set: names ending in "gain" get 1, in "bias" get 0,
/// everything else N(0, std^2). Draw order follows registration order.
template <typename S>
void init_params(ParamSet<S>& params, Rng& rng, double std) {
  auto ends_with = [](const std::string& s, const std::string& suf) {
    return s.size() >= suf.size() && s.compare(s.size() - suf.size(), suf.size(), suf) == 0;
  };
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& m = params[i];
    if (ends_with(params.name(i), "gain")) {
      m.setOnes();
    } else if (ends_with(params.name(i), "bias")) {
      m.setZero();
    } else {
      for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = static_cast<S>(std * normal01(rng));
    }
  }
}

/// Row r becomes the sinusoidal code of position r + offset (sin on even
/// columns, cos on odd, wavelengths growing geometrically), times amplitude.
template <typename S>
void sinusoid_rows(Mat<S>& table, double amplitude, Eigen::Index offset = 0) {
  const auto d = static_cast<double>(table.cols());
  for (Eigen::Index r = 0; r < table.rows(); ++r)
    for (Eigen::Index k = 0; k < table.cols(); ++k) {
      const double w = std::pow(10000.0, -2.0 * static_cast<double>(k / 2) / d);
      const double a = static_cast<double>(r + offset) * w;
      table(r, k) = static_cast<S>(amplitude * (k % 2 == 0 ? std::sin(a) : std::cos(a)));
    }
}

template <typename S>
class Transformer {
 public:
  struct Linear {
    std::size_t w = 0, b = 0;
  };
  struct Norm {
    std::size_t gain = 0, bias = 0;
  };
  struct Attention {
    Linear q, k, v, o;
  };
  struct Block {
    Norm ln1;
    Attention self_attn;
    bool cross = false;
    Norm ln2;
    Attention cross_attn;
    Norm ln3;
    Linear ff1, ff2;
  };

  struct BlockCache {
    LayerNormCache<S> ln1, ln2, ln3;
    Mat<S> h1, h2, h3;
    AttentionCache<S> self_attn, cross_attn;
    Mat<S> ff_pre, ff_act;
  };

  struct Cache {
    Eigen::Index examples = 0, length = 0, head_skip = 0;
    std::vector<BlockCache> blocks;
    LayerNormCache<S> final_ln;
    Mat<S> head_in;
    Mat<S> memory;                      // normalized memory (null rows resolved)
    LayerNormCache<S> memory_ln;
    std::vector<RowSpan> memory_spans;  // spans into `memory`
    std::vector<RowSpan> input_spans;   // caller's spans (length 0 = null)
  };

  Transformer() = default;

  /// Registers the backbone parameters in `params` under `prefix`.
  Transformer(const ModelConfig& config, ParamSet<S>& params, const std::string& prefix = "") : config_(config) {
    config_.validate();
    const auto d = static_cast<Eigen::Index>(config_.model_dim);
    const auto ff = static_cast<Eigen::Index>(config_.feedforward_dim);
    pos_ = params.add(prefix + "pos.table", static_cast<Eigen::Index>(config_.max_sequence_length), d);
    auto linear = [&](const std::string& name, Eigen::Index in, Eigen::Index out) {
      Linear l;
      l.w = params.add(name + ".weight", in, out);
      l.b = params.add(name + ".bias", 1, out);
      return l;
    };
    auto norm = [&](const std::string& name) {
      Norm n;
      n.gain = params.add(name + ".gain", 1, d);
      n.bias = params.add(name + ".bias", 1, d);
      return n;
    };
    auto attention = [&](const std::string& name) {
      return Attention{linear(name + ".q", d, d), linear(name + ".k", d, d), linear(name + ".v", d, d),
                       linear(name + ".o", d, d)};
    };
    for (std::size_t b = 1; b <= config_.depth; ++b) {
      const std::string p = prefix + "blk" + std::to_string(b);
      Block blk;
      blk.ln1 = norm(p + ".ln1");
      blk.self_attn = attention(p + ".self_attn");
      blk.cross = config_.is_cross_block(b);
      if (blk.cross) {
        blk.ln2 = norm(p + ".ln2");
        blk.cross_attn = attention(p + ".cross_attn");
      }
      blk.ln3 = norm(p + ".ln3");
      blk.ff1 = linear(p + ".ff1", d, ff);
      blk.ff2 = linear(p + ".ff2", ff, d);
      blocks_.push_back(blk);
    }
    if (config_.depth > 0) final_ln_ = norm(prefix + "final_ln");
    head_ = linear(prefix + "head", d, static_cast<Eigen::Index>(config_.output_vocab));
    if (config_.has_cross_attention()) {
      null_memory_ = params.add(prefix + "memory.null", 1, d);
      memory_ln_ = norm(prefix + "memory_ln");
    }
  }

  const ModelConfig& config() const { return config_; }
  std::size_t head_weight_index() const { return head_.w; }

  /// `x` stacks `examples` sequences of equal length. `memory_spans[e]` gives
  /// example e's rows in `memory`; a zero-length span selects the learned
  /// null memory vector. Logits are returned for positions [head_skip, L) of
  /// each example, stacked.
  Mat<S> forward(const ParamSet<S>& p, const Mat<S>& x, Eigen::Index examples, const Mat<S>* memory,
                 const std::vector<RowSpan>& memory_spans, Eigen::Index head_skip, Cache* cache = nullptr) const {
    const auto d = static_cast<Eigen::Index>(config_.model_dim);
    if (examples <= 0 || x.rows() % examples != 0 || x.cols() != d)
      throw ShapeError("transformer: input is " + std::to_string(x.rows()) + "x" + std::to_string(x.cols()) +
                       " for " + std::to_string(examples) + " examples of width " + std::to_string(d));
    const Eigen::Index len = x.rows() / examples;
    if (static_cast<std::size_t>(len) > config_.max_sequence_length)
      throw ShapeError("transformer: sequence length " + std::to_string(len) + " exceeds max " +
                       std::to_string(config_.max_sequence_length));
    if (head_skip < 0 || head_skip >= len) throw ShapeError("transformer: head_skip outside the sequence");

    Cache local;
    Cache& c = cache ? *cache : local;
    c.examples = examples;
    c.length = len;
    c.head_skip = head_skip;
    c.blocks.assign(blocks_.size(), BlockCache{});

    if (config_.has_cross_attention()) build_memory(p, memory, memory_spans, examples, c);

    Mat<S> h = x;
    const auto pos = p[pos_].topRows(len);
    for (Eigen::Index e = 0; e < examples; ++e) h.middleRows(e * len, len) += pos;

    std::vector<RowSpan> self_spans(static_cast<std::size_t>(examples));
    for (Eigen::Index e = 0; e < examples; ++e) self_spans[static_cast<std::size_t>(e)] = {e * len, len};

    const std::size_t heads = config_.heads;
    for (std::size_t bi = 0; bi < blocks_.size(); ++bi) {
      const Block& b = blocks_[bi];
      BlockCache& bc = c.blocks[bi];
      bc.h1 = layernorm_forward(h, p[b.ln1.gain], p[b.ln1.bias], &bc.ln1);
      h += attention_forward(bc.h1, bc.h1, len, self_spans, heads, p[b.self_attn.q.w], p[b.self_attn.q.b],
                             p[b.self_attn.k.w], p[b.self_attn.k.b], p[b.self_attn.v.w], p[b.self_attn.v.b],
                             p[b.self_attn.o.w], p[b.self_attn.o.b], bc.self_attn);
      if (b.cross) {
        bc.h2 = layernorm_forward(h, p[b.ln2.gain], p[b.ln2.bias], &bc.ln2);
        h += attention_forward(bc.h2, c.memory, len, c.memory_spans, heads, p[b.cross_attn.q.w], p[b.cross_attn.q.b],
                               p[b.cross_attn.k.w], p[b.cross_attn.k.b], p[b.cross_attn.v.w], p[b.cross_attn.v.b],
                               p[b.cross_attn.o.w], p[b.cross_attn.o.b], bc.cross_attn);
      }
      bc.h3 = layernorm_forward(h, p[b.ln3.gain], p[b.ln3.bias], &bc.ln3);
      bc.ff_pre = linear_forward(bc.h3, p[b.ff1.w], p[b.ff1.b]);
      bc.ff_act = gelu_forward(bc.ff_pre);
      h += linear_forward(bc.ff_act, p[b.ff2.w], p[b.ff2.b]);
    }
    if (!blocks_.empty()) h = layernorm_forward(h, p[final_ln_.gain], p[final_ln_.bias], &c.final_ln);

    const Eigen::Index out_len = len - head_skip;
    c.head_in.resize(examples * out_len, d);
    for (Eigen::Index e = 0; e < examples; ++e)
      c.head_in.middleRows(e * out_len, out_len) = h.middleRows(e * len + head_skip, out_len);
    return linear_forward(c.head_in, p[head_.w], p[head_.b]);
  }

  /// Accumulates parameter gradients into `grads`. Returns dL/dx. When
  /// `dmemory` is non-null it receives dL/dmemory (same shape as the memory
  /// passed to forward).
  Mat<S> backward(const ParamSet<S>& p, const Cache& c, const Mat<S>& dlogits, ParamSet<S>& g,
                  Mat<S>* dmemory = nullptr) const {
    const auto d = static_cast<Eigen::Index>(config_.model_dim);
    const Eigen::Index len = c.length, n = c.examples, out_len = len - c.head_skip;
    const Mat<S> dhead = linear_backward(c.head_in, dlogits, p[head_.w], g[head_.w], g[head_.b]);
    Mat<S> dh = Mat<S>::Zero(n * len, d);
    for (Eigen::Index e = 0; e < n; ++e) dh.middleRows(e * len + c.head_skip, out_len) = dhead.middleRows(e * out_len, out_len);
    if (!blocks_.empty()) dh = layernorm_backward(dh, p[final_ln_.gain], c.final_ln, g[final_ln_.gain], g[final_ln_.bias]);

    std::vector<RowSpan> self_spans(static_cast<std::size_t>(n));
    for (Eigen::Index e = 0; e < n; ++e) self_spans[static_cast<std::size_t>(e)] = {e * len, len};

    Mat<S> dmem_eff;
    if (config_.has_cross_attention()) dmem_eff = Mat<S>::Zero(c.memory.rows(), d);
    const std::size_t heads = config_.heads;
    for (std::size_t bi = blocks_.size(); bi-- > 0;) {
      const Block& b = blocks_[bi];
      const BlockCache& bc = c.blocks[bi];
      {
        Mat<S> dact = linear_backward(bc.ff_act, dh, p[b.ff2.w], g[b.ff2.w], g[b.ff2.b]);
        Mat<S> dpre = gelu_backward(bc.ff_pre, dact);
        Mat<S> dh3 = linear_backward(bc.h3, dpre, p[b.ff1.w], g[b.ff1.w], g[b.ff1.b]);
        dh += layernorm_backward(dh3, p[b.ln3.gain], bc.ln3, g[b.ln3.gain], g[b.ln3.bias]);
      }
      if (b.cross) {
        const auto& a = b.cross_attn;
        Mat<S> dh2 = attention_backward(dh, bc.h2, c.memory, len, c.memory_spans, heads, p[a.q.w], p[a.k.w], p[a.v.w],
                                        p[a.o.w], bc.cross_attn, g[a.q.w], g[a.q.b], g[a.k.w], g[a.k.b], g[a.v.w],
                                        g[a.v.b], g[a.o.w], g[a.o.b], &dmem_eff);
        dh += layernorm_backward(dh2, p[b.ln2.gain], bc.ln2, g[b.ln2.gain], g[b.ln2.bias]);
      }
      {
        const auto& a = b.self_attn;
        Mat<S> dh1 = attention_backward(dh, bc.h1, bc.h1, len, self_spans, heads, p[a.q.w], p[a.k.w], p[a.v.w],
                                        p[a.o.w], bc.self_attn, g[a.q.w], g[a.q.b], g[a.k.w], g[a.k.b], g[a.v.w],
                                        g[a.v.b], g[a.o.w], g[a.o.b], static_cast<Mat<S>*>(nullptr));
        dh += layernorm_backward(dh1, p[b.ln1.gain], bc.ln1, g[b.ln1.gain], g[b.ln1.bias]);
      }
    }
    for (Eigen::Index e = 0; e < n; ++e) g[pos_].topRows(len) += dh.middleRows(e * len, len);

    if (config_.has_cross_attention()) {
      dmem_eff = layernorm_backward(dmem_eff, p[memory_ln_.gain], c.memory_ln, g[memory_ln_.gain], g[memory_ln_.bias]);
      if (dmemory) dmemory->setZero();
      for (std::size_t e = 0; e < c.input_spans.size(); ++e) {
        const auto& in = c.input_spans[e];
        const auto& eff = c.memory_spans[e];
        if (in.length == 0) {
          g[null_memory_].row(0) += dmem_eff.row(eff.offset);
        } else if (dmemory) {
          dmemory->middleRows(in.offset, in.length) += dmem_eff.middleRows(eff.offset, eff.length);
        }
      }
    }
    return dh;
  }

 private:
  void build_memory(const ParamSet<S>& p, const Mat<S>* memory, const std::vector<RowSpan>& spans,
                    Eigen::Index examples, Cache& c) const {
    if (static_cast<Eigen::Index>(spans.size()) != examples)
      throw ConditionError("transformer: cross-attention needs a condition memory span per example (got " +
                           std::to_string(spans.size()) + " for " + std::to_string(examples) + ")");
    Eigen::Index rows = 0;
    for (const auto& s : spans) {
      if (s.length > 0 && (!memory || s.offset < 0 || s.offset + s.length > memory->rows()))
        throw ConditionError("transformer: condition memory missing or span out of range");
      rows += s.length > 0 ? s.length : 1;
    }
    c.input_spans = spans;
    c.memory.resize(rows, static_cast<Eigen::Index>(config_.model_dim));
    c.memory_spans.resize(spans.size());
    Eigen::Index at = 0;
    for (std::size_t e = 0; e < spans.size(); ++e) {
      const auto& s = spans[e];
      if (s.length > 0) {
        c.memory.middleRows(at, s.length) = memory->middleRows(s.offset, s.length);
        c.memory_spans[e] = {at, s.length};
        at += s.length;
      } else {
        c.memory.row(at) = p[null_memory_].row(0);
        c.memory_spans[e] = {at, 1};
        at += 1;
      }
    }
    c.memory = layernorm_forward(c.memory, p[memory_ln_.gain], p[memory_ln_.bias], &c.memory_ln);
  }

  ModelConfig config_;
  std::size_t pos_ = 0;
  std::vector<Block> blocks_;
  Norm final_ln_;
  Linear head_;
  std::size_t null_memory_ = 0;
  Norm memory_ln_;
};

}  // namespace bvs::nn
