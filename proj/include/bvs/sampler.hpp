#pragma once

// Iterative parallel decoding with classifier-free guidance.
//
// Each step scores the whole sequence, samples a candidate at every masked
// position, and commits the most confident ones. Positions are committed
// once and never revisited; the number committed per step follows the
// masking schedule so that after step j exactly floor(gamma(j/steps) * N)
// positions remain masked.

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "bvs/errors.hpp"
#include "bvs/masksched.hpp"
#include "bvs/nn/tensor.hpp"
#include "bvs/random.hpp"
#include "bvs/tokenspace.hpp"

namespace bvs {

struct DecodeConfig {
  std::size_t steps = 16;
  double cfg_scale = 5.0;
  // Temperature goes linearly from start (step 1) to end (last step).
  double temperature_start = 1.0;
  double temperature_end = 0.0;
  // Scale of the Gumbel confidence noise relative to the step temperature.
  double noise_ratio = 1.0;
  double logit_clamp = 30.0;
  // Guidance only ranks tokens whose conditional probability is at least this
  // fraction of the best conditional probability at that position; 0 disables.
  double plausibility = 0.1;
  MaskSchedule schedule;

  void validate() const {
    if (steps < 1) throw ConfigError("decode: steps must be >= 1");
    if (!(cfg_scale >= 0.0)) throw ConfigError("decode: cfg_scale must be >= 0");
    if (!(temperature_start >= 0.0 && temperature_end >= 0.0))
      throw ConfigError("decode: temperatures must be >= 0");
    if (!(noise_ratio >= 0.0)) throw ConfigError("decode: noise_ratio must be >= 0");
    if (!(plausibility >= 0.0 && plausibility < 1.0)) throw ConfigError("decode: plausibility must be in [0, 1)");
  }

  /// Temperature of 1-based step j.
  double temperature(std::size_t j) const {
    if (steps == 1) return temperature_end;
    const double f = static_cast<double>(j - 1) / static_cast<double>(steps - 1);
    return temperature_start + (temperature_end - temperature_start) * f;
  }
};

/// (1 - s) * uncond + s * cond, i.e. uncond + s * (cond - uncond). Written so
/// that s = 1 and s = 0 return the respective input exactly.
template <typename S>
nn::Mat<S> cfg_combine(const nn::Mat<S>& cond, const nn::Mat<S>& uncond, double scale) {
  if (cond.rows() != uncond.rows() || cond.cols() != uncond.cols())
    throw ShapeError("cfg_combine: conditional logits are " + std::to_string(cond.rows()) + "x" +
                     std::to_string(cond.cols()) + ", unconditional " + std::to_string(uncond.rows()) + "x" +
                     std::to_string(uncond.cols()));
  const S s = static_cast<S>(scale);
  return (S(1) - s) * uncond + s * cond;
}

/// Per-step commit counts for `total_masked` positions over `steps` steps.
inline std::vector<std::size_t> unmask_counts(std::size_t total_masked, std::size_t steps,
                                              const MaskSchedule& schedule = {}) {
  if (steps < 1) throw ConfigError("unmask_counts: steps must be >= 1");
  std::vector<std::size_t> counts(steps, 0);
  std::size_t remaining = total_masked;
  for (std::size_t j = 1; j <= steps; ++j) {
    std::size_t next = 0;
    if (j < steps) {
      const double g = gamma(static_cast<double>(j) / static_cast<double>(steps), schedule);
      next = std::min(remaining, static_cast<std::size_t>(std::floor(g * static_cast<double>(total_masked))));
    }
    counts[j - 1] = remaining - next;
    remaining = next;
  }
  return counts;
}

struct ScorePair {
  nn::Mat<float> cond;
  nn::Mat<float> uncond;  // may be left empty when cfg_scale == 1
};

/// Maps the current (partially masked) sequence to per-position logits.
using ScoreFn = std::function<ScorePair(const TokenSeq&)>;

struct DecodeTrace {
  std::vector<std::vector<std::size_t>> committed;  // positions committed at each step
  std::vector<TokenSeq> states;                     // sequence after each step
};

inline TokenSeq iterative_decode(const ScoreFn& score_fn, const TokenSeq& initial, TokenId mask_id,
                                 const DecodeConfig& config, Rng& rng, DecodeTrace* trace = nullptr) {
  config.validate();
  TokenSeq seq = initial;
  std::vector<std::size_t> masked;
  for (std::size_t i = 0; i < seq.size(); ++i)
    if (seq[i] == mask_id) masked.push_back(i);
  const auto counts = unmask_counts(masked.size(), config.steps, config.schedule);

  std::vector<TokenId> candidate(seq.size());
  std::vector<double> confidence(seq.size());
  for (std::size_t j = 1; j <= config.steps; ++j) {
    if (masked.empty()) break;
    ScorePair scores = score_fn(seq);
    if (static_cast<std::size_t>(scores.cond.rows()) != seq.size())
      throw ShapeError("iterative_decode: score_fn returned " + std::to_string(scores.cond.rows()) +
                       " rows for a sequence of " + std::to_string(seq.size()));
    nn::Mat<float> logits;
    if (scores.uncond.size() == 0) {
      if (config.cfg_scale != 1.0) throw ShapeError("iterative_decode: unconditional logits required for CFG");
      logits = std::move(scores.cond);
    } else {
      logits = cfg_combine(scores.cond, scores.uncond, config.cfg_scale);
    }
    if (!logits.allFinite()) throw NumericError("iterative_decode: score_fn returned non-finite logits");
    const auto clamp = static_cast<float>(config.logit_clamp);
    if (config.plausibility > 0.0 && scores.uncond.size() != 0) {
      const float cut = static_cast<float>(std::log(config.plausibility));
      const Eigen::VectorXf cond_max = scores.cond.rowwise().maxCoeff();
      const float lowest = logits.minCoeff();
      for (Eigen::Index r = 0; r < logits.rows(); ++r)
        for (Eigen::Index k = 0; k < logits.cols(); ++k)
          if (scores.cond(r, k) - cond_max(r) < cut) logits(r, k) = lowest - 2.0f * clamp;
    }
    // Shift each row to a max of 0 before clamping. Guidance at s > 1 pushes
    // the best logits far past the clamp, and clamping in place would tie them.
    const Eigen::VectorXf row_max = logits.rowwise().maxCoeff();
    logits = (logits.colwise() - row_max).cwiseMax(-clamp);

    const double tau = config.temperature(j);
    const double noise = tau * config.noise_ratio;
    for (auto pos : masked) {
      const auto row = logits.row(static_cast<Eigen::Index>(pos));
      Eigen::Index best = 0;
      const double mx = row.maxCoeff(&best);
      double z = 0.0;
      for (Eigen::Index c = 0; c < row.size(); ++c) z += std::exp(static_cast<double>(row[c]) - mx);
      const double logz = mx + std::log(z);
      Eigen::Index pick = best;
      if (tau > 0.0) {
        // Gumbel-max draw from softmax(logits / tau).
        double best_key = -std::numeric_limits<double>::infinity();
        for (Eigen::Index c = 0; c < row.size(); ++c) {
          const double key = static_cast<double>(row[c]) / tau + gumbel01(rng);
          if (key > best_key) {
            best_key = key;
            pick = c;
          }
        }
      }
      candidate[pos] = static_cast<TokenId>(pick);
      confidence[pos] = static_cast<double>(row[pick]) - logz + (noise > 0.0 ? noise * gumbel01(rng) : 0.0);
    }

    const std::size_t quota = counts[j - 1];
    std::vector<std::size_t> order = masked;
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return confidence[a] > confidence[b]; });
    order.resize(quota);
    for (auto pos : order) seq[pos] = candidate[pos];
    std::sort(order.begin(), order.end());
    masked.erase(std::remove_if(masked.begin(), masked.end(),
                                [&](std::size_t pos) { return std::binary_search(order.begin(), order.end(), pos); }),
                 masked.end());
    if (trace) {
      trace->committed.push_back(order);
      trace->states.push_back(seq);
    }
  }
  return seq;
}

}  // namespace bvs
