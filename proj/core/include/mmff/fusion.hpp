#pragma once

#include <string>
#include <vector>

#include "mmff/nn.hpp"

namespace mmff {

enum class FusionStrategy {
  LateTransformer,
  IntermediateTransformer,
  IntermediateAttention,
  Add,
  Multiply,
  Concat,
  TensorFusion,
  AudioOnly,
  VideoOnly,
};

// Tags accepted on the CLI and in config files:
// LT | IT | IA | add | multi | concat | tf | audio | video.
FusionStrategy parse_fusion(const std::string& tag);
std::string fusion_tag(FusionStrategy s);
bool is_multimodal(FusionStrategy s);

// Weights of one cross-modal attention direction.
struct CrossAttentionParams {
  Tensor wq;
  Tensor wk;
  Tensor wv;

  CrossAttentionParams() = default;
  CrossAttentionParams(std::size_t dim, Rng& rng, bool with_values = true);
  void visit(const std::string& prefix, const ParamVisitor& fn);
};

// O = softmax(q_src Wq Wk^T kv_src^T / sqrt(d)) kv_src Wv.
Tensor cross_attention(const Tensor& q_src, const Tensor& kv_src,
                       const CrossAttentionParams& p);

// Softmax-normalized score matrix only, no value projection.
Tensor attention_map(const Tensor& q_src, const Tensor& k_src,
                     const CrossAttentionParams& p);

// Per-key saliency = column sums of the map; output is the saliency-weighted
// average of kv_feats rows, as a 1 x D row.
Tensor attention_pool(const Tensor& map, const Tensor& kv_feats);

// One token-sequence Conv1D layer: kernel-3 same-length conv over the token
// axis with feature-preserving width, followed by GELU.
struct TokenConv {
  Tensor kernels;  // D x D x K

  TokenConv() = default;
  TokenConv(std::size_t dim, std::size_t kernel, Rng& rng);
  Tensor forward(const Tensor& tokens) const;
  void visit(const std::string& prefix, const ParamVisitor& fn);
};

// Fusion module covering the three proposed strategies, the four ablation
// baselines, and both unimodal heads; ends in a two-way affine classifier.
struct FusionHead {
  FusionStrategy strategy = FusionStrategy::Concat;
  std::size_t dim = 0;

  std::vector<TokenConv> video_convs;
  std::vector<TokenConv> audio_convs;
  CrossAttentionParams video_from_audio;  // queries video, keys/values audio
  CrossAttentionParams audio_from_video;  // queries audio, keys/values video
  TokenConv post_video;  // intermediate-transformer refinement
  TokenConv post_audio;
  Linear refine_video;  // intermediate-attention 1-token refinement
  Linear refine_audio;
  Linear classifier;

  FusionHead() = default;
  FusionHead(FusionStrategy s, std::size_t embed_dim, std::size_t conv_kernel, Rng& rng);

  // Branch outputs in, 1 x 2 logits out. Unimodal strategies ignore the
  // other branch (which may be undefined).
  Tensor forward(const Tensor& video_seq, const Tensor& audio_seq) const;

  void visit(const std::string& prefix, const ParamVisitor& fn);

  static std::size_t classifier_width(FusionStrategy s, std::size_t dim);

 private:
  Tensor conv_stack(const std::vector<TokenConv>& convs, const Tensor& tokens) const;
  Tensor fuse_late_transformer(const Tensor& video_seq, const Tensor& audio_seq) const;
  Tensor fuse_intermediate_transformer(const Tensor& video_seq,
                                       const Tensor& audio_seq) const;
  Tensor fuse_intermediate_attention(const Tensor& video_seq,
                                     const Tensor& audio_seq) const;
  Tensor fuse_baseline(const Tensor& video_pooled, const Tensor& audio_pooled) const;
};

// Flattened outer product of the 1-augmented vectors [1; a] (x) [1; v],
// a row of (len(a)+1) * (len(v)+1) entries; element (0,0) is always 1.
Tensor tensor_fusion_features(const Tensor& audio_pooled, const Tensor& video_pooled);

// Affine map to 2 logits.
Tensor classify_head(const Tensor& features, const Linear& head);

// Argmax with ties resolved to class 0.
int predict_label(const Tensor& logits);

}  // namespace mmff
