#pragma once

// Input assembly shared by both stages: a video prefix projected to the model
// width, modality embeddings, and token-table lookups with their backward
// scatter.

#include <string>
#include <vector>

#include "bvs/errors.hpp"
#include "bvs/nn/tensor.hpp"
#include "bvs/tokenspace.hpp"

namespace bvs {

struct VideoPrefixParams {
  std::size_t proj_weight = 0, proj_bias = 0;
  std::size_t null_video = 0;
  std::size_t modality_video = 0, modality_tokens = 0;

  template <typename S>
  static VideoPrefixParams add(nn::ParamSet<S>& p, std::size_t video_dim, std::size_t model_dim) {
    const auto d = static_cast<Eigen::Index>(model_dim);
    VideoPrefixParams v;
    v.proj_weight = p.add("video.proj.weight", static_cast<Eigen::Index>(video_dim), d);
    v.proj_bias = p.add("video.proj.bias", 1, d);
    v.null_video = p.add("video.null", 1, d);
    v.modality_video = p.add("modality.video", 1, d);
    v.modality_tokens = p.add("modality.tokens", 1, d);
    return v;
  }
};

/// Writes the video prefix of one example into `out` (t_v rows). A dropped
/// video uses the learned null vector at every frame.
template <typename S, typename Block>
void write_video_prefix(const nn::ParamSet<S>& p, const VideoPrefixParams& ix, const VideoFeatureSequence& video,
                        bool dropped, Block&& out) {
  const auto tv = out.rows();
  if (dropped) {
    out.rowwise() = p[ix.null_video].row(0);
  } else {
    if (static_cast<Eigen::Index>(video.frames()) != tv || static_cast<Eigen::Index>(video.dim) != p[ix.proj_weight].rows())
      throw ShapeError("video features are " + std::to_string(video.frames()) + "x" + std::to_string(video.dim) +
                       ", model expects " + std::to_string(tv) + "x" + std::to_string(p[ix.proj_weight].rows()) +
                       " (token/frame ratio mismatch)");
    const Eigen::Map<const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> raw(
        video.values.data(), tv, static_cast<Eigen::Index>(video.dim));
    out.noalias() = raw.template cast<S>() * p[ix.proj_weight];
    out.rowwise() += p[ix.proj_bias].row(0);
  }
  out.rowwise() += p[ix.modality_video].row(0);
}

template <typename S, typename Block>
void video_prefix_backward(const VideoPrefixParams& ix, const VideoFeatureSequence& video, bool dropped,
                           const Block& dout, nn::ParamSet<S>& g) {
  g[ix.modality_video].row(0) += dout.colwise().sum();
  if (dropped) {
    g[ix.null_video].row(0) += dout.colwise().sum();
    return;
  }
  const Eigen::Map<const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> raw(
      video.values.data(), dout.rows(), static_cast<Eigen::Index>(video.dim));
  g[ix.proj_weight].noalias() += raw.template cast<S>().transpose() * dout;
  g[ix.proj_bias].row(0) += dout.colwise().sum();
}

template <typename S, typename Block>
void add_lookup(const nn::Mat<S>& table, const TokenSeq& ids, Block&& out) {
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= static_cast<TokenId>(table.rows()))
      throw RangeError("token id " + std::to_string(ids[i]) + " outside embedding table of " +
                       std::to_string(table.rows()) + " rows");
    out.row(static_cast<Eigen::Index>(i)) += table.row(ids[i]);
  }
}

template <typename S, typename Block>
void scatter_lookup(nn::Mat<S>& dtable, const TokenSeq& ids, const Block& dout) {
  for (std::size_t i = 0; i < ids.size(); ++i) dtable.row(ids[i]) += dout.row(static_cast<Eigen::Index>(i));
}

}  // namespace bvs
