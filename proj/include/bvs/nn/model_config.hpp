#pragma once

#include <algorithm>
#include <cstddef>
#include <string>
#include <vector>

#include "bvs/errors.hpp"

namespace bvs::nn {

struct ModelConfig {
  std::size_t depth = 4;
  std::size_t model_dim = 64;
  std::size_t heads = 4;
  std::size_t feedforward_dim = 256;
  // 1-based indices of blocks that carry an extra cross-attention sublayer.
  std::vector<std::size_t> cross_attention_positions = {3, 4};
  std::size_t input_vocab = 529;   // content ids + mask id
  std::size_t output_vocab = 528;
  std::size_t condition_vocab = 33;  // cross-attention memory tokens
  std::size_t condition_length = 100;
  std::size_t token_length = 100;  // main (predicted) segment
  std::size_t video_length = 10;   // prefixed video frames
  std::size_t video_dim = 16;
  std::size_t max_sequence_length = 110;
  double condition_dropout_prob = 0.1;
  std::string positional = "learned";
  double init_std = 0.02;

  bool has_cross_attention() const { return !cross_attention_positions.empty(); }
  bool is_cross_block(std::size_t one_based) const {
    return std::find(cross_attention_positions.begin(), cross_attention_positions.end(), one_based) !=
           cross_attention_positions.end();
  }

  void validate() const {
    if (model_dim == 0 || heads == 0 || model_dim % heads != 0)
      throw ConfigError("model: heads (" + std::to_string(heads) + ") must divide model_dim (" +
                        std::to_string(model_dim) + ")");
    if (feedforward_dim == 0) throw ConfigError("model: feedforward_dim must be > 0");
    for (auto p : cross_attention_positions)
      if (p < 1 || p > depth)
        throw ConfigError("model: cross-attention position " + std::to_string(p) + " outside 1.." +
                          std::to_string(depth));
    if (input_vocab == 0 || output_vocab == 0) throw ConfigError("model: vocab sizes must be > 0");
    if (has_cross_attention() && (condition_vocab == 0 || condition_length == 0))
      throw ConfigError("model: cross-attention needs a condition vocabulary and length");
    if (max_sequence_length == 0) throw ConfigError("model: max_sequence_length must be > 0");
    if (token_length == 0 || video_length == 0 || video_dim == 0)
      throw ConfigError("model: token_length, video_length and video_dim must be > 0");
    if (token_length % video_length != 0)
      throw ConfigError("model: token_length must be a multiple of video_length");
    if (video_length + token_length > max_sequence_length)
      throw ConfigError("model: video_length + token_length exceeds max_sequence_length");
    if (!(condition_dropout_prob >= 0.0 && condition_dropout_prob <= 1.0))
      throw ConfigError("model: condition_dropout_prob must be in [0, 1]");
    if (positional != "learned") throw ConfigError("model: unsupported positional encoding: " + positional);
    if (!(init_std > 0.0)) throw ConfigError("model: init_std must be > 0");
  }

  bool operator==(const ModelConfig&) const = default;
};

}  // namespace bvs::nn
