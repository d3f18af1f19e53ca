#pragma once

// Mask-and-predict machinery: masking-ratio schedule, Bernoulli masks and
// the masked cross-entropy used by both stages.

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "bvs/errors.hpp"
#include "bvs/nn/tensor.hpp"
#include "bvs/random.hpp"
#include "bvs/tokenspace.hpp"

namespace bvs {

struct MaskSchedule {
  std::string kind = "cosine";
  double epsilon = 1e-4;
};

struct MaskState {
  std::vector<std::uint8_t> mask;  // 1 = masked
  double t = 0.0;

  std::size_t size() const { return mask.size(); }
  std::size_t masked_count() const {
    std::size_t n = 0;
    for (auto m : mask) n += m != 0;
    return n;
  }
  bool operator==(const MaskState&) const = default;
};

/// Masking ratio at time t in [0, 1); non-increasing, never below epsilon.
inline double gamma(double t, const MaskSchedule& schedule = {}) {
  if (!(t >= 0.0 && t < 1.0)) throw DomainError("gamma: t = " + std::to_string(t) + " outside [0, 1)");
  if (schedule.kind == "cosine") return std::max(std::cos(M_PI * t / 2.0), schedule.epsilon);
  if (schedule.kind == "linear") return std::max(1.0 - t, schedule.epsilon);
  throw ConfigError("unknown mask schedule: " + schedule.kind);
}

inline MaskState sample_mask(std::size_t length, double t, Rng& rng, const MaskSchedule& schedule = {}) {
  if (length == 0) throw DomainError("sample_mask: length must be > 0");
  const double p = gamma(t, schedule);
  MaskState state;
  state.t = t;
  state.mask.resize(length);
  for (auto& m : state.mask) m = uniform01(rng) < p ? 1 : 0;
  return state;
}

inline TokenSeq apply_mask(const TokenSeq& tokens, const MaskState& mask, TokenId mask_id) {
  if (tokens.size() != mask.size())
    throw ShapeError("apply_mask: token length " + std::to_string(tokens.size()) + " != mask length " +
                     std::to_string(mask.size()));
  TokenSeq out(tokens);
  for (std::size_t i = 0; i < out.size(); ++i)
    if (mask.mask[i]) out[i] = mask_id;
  return out;
}

struct MaskedLoss {
  double loss = 0.0;
  std::size_t masked = 0;
  std::size_t correct = 0;  // argmax hits among masked positions
  bool degenerate = false;  // no masked position at all
};

/// Mean over masked rows of -log softmax(logits)[target]. Unmasked rows are
/// never read beyond the finiteness check. When `grad` is given it receives
/// `grad_scale * dLoss/dLogits` (unmasked rows zero).
template <typename S>
MaskedLoss masked_ce_loss(const nn::Mat<S>& logits, const TokenSeq& targets, const std::vector<std::uint8_t>& mask,
                          nn::Mat<S>* grad = nullptr, double grad_scale = 1.0) {
  if (static_cast<std::size_t>(logits.rows()) != targets.size() || targets.size() != mask.size())
    throw ShapeError("masked_ce_loss: logits rows " + std::to_string(logits.rows()) + ", targets " +
                     std::to_string(targets.size()) + ", mask " + std::to_string(mask.size()));
  if (!logits.allFinite()) throw NumericError("masked_ce_loss: non-finite logits");
  MaskedLoss out;
  for (auto m : mask) out.masked += m != 0;
  if (grad) grad->setZero(logits.rows(), logits.cols());
  if (out.masked == 0) {
    out.degenerate = true;
    return out;
  }
  const double inv = 1.0 / static_cast<double>(out.masked);
  double total = 0.0;
  nn::RowVec<S> probs(logits.cols());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    if (!mask[static_cast<std::size_t>(r)]) continue;
    const auto target = static_cast<Eigen::Index>(targets[static_cast<std::size_t>(r)]);
    if (target >= logits.cols()) throw RangeError("masked_ce_loss: target outside logit vocabulary");
    const auto row = logits.row(r);
    Eigen::Index best = 0;
    const S mx = row.maxCoeff(&best);
    probs = (row.array() - mx).exp().matrix();
    const double z = static_cast<double>(probs.sum());
    const double logz = static_cast<double>(mx) + std::log(z);
    total += logz - static_cast<double>(row[target]);
    out.correct += best == target;
    if (grad) {
      (*grad).row(r) = probs * static_cast<S>(grad_scale * inv / z);
      (*grad)(r, target) -= static_cast<S>(grad_scale * inv);
    }
  }
  out.loss = total * inv;
  return out;
}

template <typename S>
MaskedLoss masked_ce_loss(const nn::Mat<S>& logits, const TokenSeq& targets, const MaskState& mask) {
  return masked_ce_loss<S>(logits, targets, mask.mask);
}

}  // namespace bvs
