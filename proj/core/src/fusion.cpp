#include "mmff/fusion.hpp"

#include <cmath>

namespace mmff {

FusionStrategy parse_fusion(const std::string& tag) {
  if (tag == "LT") return FusionStrategy::LateTransformer;
  if (tag == "IT") return FusionStrategy::IntermediateTransformer;
  if (tag == "IA") return FusionStrategy::IntermediateAttention;
  if (tag == "add") return FusionStrategy::Add;
  if (tag == "multi") return FusionStrategy::Multiply;
  if (tag == "concat") return FusionStrategy::Concat;
  if (tag == "tf") return FusionStrategy::TensorFusion;
  if (tag == "audio") return FusionStrategy::AudioOnly;
  if (tag == "video") return FusionStrategy::VideoOnly;
  throw ArgumentError("unknown fusion strategy '" + tag +
                      "' (expected LT|IT|IA|add|multi|concat|tf|audio|video)");
}

std::string fusion_tag(FusionStrategy s) {
  switch (s) {
    case FusionStrategy::LateTransformer: return "LT";
    case FusionStrategy::IntermediateTransformer: return "IT";
    case FusionStrategy::IntermediateAttention: return "IA";
    case FusionStrategy::Add: return "add";
    case FusionStrategy::Multiply: return "multi";
    case FusionStrategy::Concat: return "concat";
    case FusionStrategy::TensorFusion: return "tf";
    case FusionStrategy::AudioOnly: return "audio";
    case FusionStrategy::VideoOnly: return "video";
  }
  throw ArgumentError("fusion_tag: invalid strategy");
}

bool is_multimodal(FusionStrategy s) {
  return s != FusionStrategy::AudioOnly && s != FusionStrategy::VideoOnly;
}

CrossAttentionParams::CrossAttentionParams(std::size_t dim, Rng& rng, bool with_values)
    : wq(init::scaled_uniform({dim, dim}, dim, rng)),
      wk(init::scaled_uniform({dim, dim}, dim, rng)) {
  if (with_values) wv = init::scaled_uniform({dim, dim}, dim, rng);
}

void CrossAttentionParams::visit(const std::string& prefix, const ParamVisitor& fn) {
  fn(prefix + ".wq", wq);
  fn(prefix + ".wk", wk);
  if (wv.defined()) fn(prefix + ".wv", wv);
}

namespace {

Tensor attention_scores(const Tensor& q_src, const Tensor& k_src,
                        const CrossAttentionParams& p) {
  if (q_src.cols() != p.wq.rows() || k_src.cols() != p.wk.rows())
    throw DimensionError("cross attention: feature dim mismatch");
  double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(q_src.cols()));
  Tensor q = matmul(q_src, p.wq);
  Tensor k = matmul(k_src, p.wk);
  return softmax_rows(scale(matmul(q, transpose(k)), inv_sqrt_d));
}

}  // namespace

Tensor cross_attention(const Tensor& q_src, const Tensor& kv_src,
                       const CrossAttentionParams& p) {
  if (!p.wv.defined()) throw ContractError("cross_attention: missing value weights");
  Tensor attn = attention_scores(q_src, kv_src, p);
  return matmul(attn, matmul(kv_src, p.wv));
}

Tensor attention_map(const Tensor& q_src, const Tensor& k_src,
                     const CrossAttentionParams& p) {
  return attention_scores(q_src, k_src, p);
}

Tensor attention_pool(const Tensor& map, const Tensor& kv_feats) {
  if (map.cols() != kv_feats.rows())
    throw DimensionError("attention_pool: map keys " + std::to_string(map.cols()) +
                         " vs " + std::to_string(kv_feats.rows()) + " features");
  Tensor ones = Tensor::full({1, map.rows()}, 1.0);
  Tensor saliency = normalize_sum(matmul(ones, map));
  return matmul(saliency, kv_feats);
}

TokenConv::TokenConv(std::size_t dim, std::size_t kernel, Rng& rng)
    : kernels(init::scaled_uniform({dim, dim, kernel}, dim * kernel, rng)) {}

Tensor TokenConv::forward(const Tensor& tokens) const {
  std::size_t kernel = kernels.size(2);
  // Same-length conv over the token axis (features are channels).
  Tensor h = conv1d(transpose(tokens), kernels, 1, (kernel - 1) / 2);
  return gelu(transpose(h));
}

void TokenConv::visit(const std::string& prefix, const ParamVisitor& fn) {
  fn(prefix + ".kernels", kernels);
}

std::size_t FusionHead::classifier_width(FusionStrategy s, std::size_t dim) {
  switch (s) {
    case FusionStrategy::LateTransformer:
    case FusionStrategy::IntermediateTransformer:
    case FusionStrategy::IntermediateAttention:
    case FusionStrategy::Concat:
      return 2 * dim;
    case FusionStrategy::Add:
    case FusionStrategy::Multiply:
    case FusionStrategy::AudioOnly:
    case FusionStrategy::VideoOnly:
      return dim;
    case FusionStrategy::TensorFusion:
      return (dim + 1) * (dim + 1);
  }
  throw ArgumentError("classifier_width: invalid strategy");
}

FusionHead::FusionHead(FusionStrategy s, std::size_t embed_dim, std::size_t conv_kernel,
                       Rng& rng)
    : strategy(s), dim(embed_dim) {
  if (conv_kernel == 0 || conv_kernel % 2 == 0)
    throw ConfigError("fusion: conv kernel must be odd and >= 1");
  switch (s) {
    case FusionStrategy::LateTransformer:
    case FusionStrategy::IntermediateTransformer:
      for (int i = 0; i < 2; ++i) {
        video_convs.emplace_back(embed_dim, conv_kernel, rng);
        audio_convs.emplace_back(embed_dim, conv_kernel, rng);
      }
      audio_from_video = CrossAttentionParams(embed_dim, rng);
      video_from_audio = CrossAttentionParams(embed_dim, rng);
      if (s == FusionStrategy::IntermediateTransformer) {
        post_video = TokenConv(embed_dim, conv_kernel, rng);
        post_audio = TokenConv(embed_dim, conv_kernel, rng);
      }
      break;
    case FusionStrategy::IntermediateAttention:
      for (int i = 0; i < 2; ++i) {
        video_convs.emplace_back(embed_dim, conv_kernel, rng);
        audio_convs.emplace_back(embed_dim, conv_kernel, rng);
      }
      audio_from_video = CrossAttentionParams(embed_dim, rng, /*with_values=*/false);
      video_from_audio = CrossAttentionParams(embed_dim, rng, /*with_values=*/false);
      refine_video = Linear(embed_dim, embed_dim, rng);
      refine_audio = Linear(embed_dim, embed_dim, rng);
      break;
    default:
      break;
  }
  classifier = Linear(classifier_width(s, embed_dim), 2, rng);
}

Tensor FusionHead::conv_stack(const std::vector<TokenConv>& convs,
                              const Tensor& tokens) const {
  Tensor h = tokens;
  for (const TokenConv& conv : convs) h = conv.forward(h);
  return h;
}

Tensor FusionHead::fuse_late_transformer(const Tensor& video_seq,
                                         const Tensor& audio_seq) const {
  Tensor cv = conv_stack(video_convs, video_seq);
  Tensor ca = conv_stack(audio_convs, audio_seq);
  Tensor audio_fused = cross_attention(ca, cv, audio_from_video);
  Tensor video_fused = cross_attention(cv, ca, video_from_audio);
  return concat_cols({mean_rows(video_fused), mean_rows(audio_fused)});
}

Tensor FusionHead::fuse_intermediate_transformer(const Tensor& video_seq,
                                                 const Tensor& audio_seq) const {
  Tensor cv = conv_stack(video_convs, video_seq);
  Tensor ca = conv_stack(audio_convs, audio_seq);
  Tensor audio_fused = add(ca, cross_attention(ca, cv, audio_from_video));
  Tensor video_fused = add(cv, cross_attention(cv, ca, video_from_audio));
  return concat_cols({mean_rows(post_video.forward(video_fused)),
                      mean_rows(post_audio.forward(audio_fused))});
}

Tensor FusionHead::fuse_intermediate_attention(const Tensor& video_seq,
                                               const Tensor& audio_seq) const {
  Tensor cv = conv_stack(video_convs, video_seq);
  Tensor ca = conv_stack(audio_convs, audio_seq);
  // Audio queries attend over video keys; pooling the map over the video
  // axis yields the visual attention vector, and symmetrically for audio.
  Tensor visual_vec = attention_pool(attention_map(ca, cv, audio_from_video), cv);
  Tensor acoustic_vec = attention_pool(attention_map(cv, ca, video_from_audio), ca);
  Tensor rv = gelu(refine_video.forward(visual_vec));
  Tensor ra = gelu(refine_audio.forward(acoustic_vec));
  return concat_cols({rv, ra});
}

Tensor FusionHead::fuse_baseline(const Tensor& video_pooled,
                                 const Tensor& audio_pooled) const {
  switch (strategy) {
    case FusionStrategy::Add:
      return add(video_pooled, audio_pooled);
    case FusionStrategy::Multiply:
      return mul(video_pooled, audio_pooled);
    case FusionStrategy::Concat:
      return concat_cols({video_pooled, audio_pooled});
    case FusionStrategy::TensorFusion:
      return tensor_fusion_features(audio_pooled, video_pooled);
    default:
      throw ArgumentError("fuse_baseline: not a baseline strategy");
  }
}

Tensor FusionHead::forward(const Tensor& video_seq, const Tensor& audio_seq) const {
  Tensor features;
  switch (strategy) {
    case FusionStrategy::LateTransformer:
      features = fuse_late_transformer(video_seq, audio_seq);
      break;
    case FusionStrategy::IntermediateTransformer:
      features = fuse_intermediate_transformer(video_seq, audio_seq);
      break;
    case FusionStrategy::IntermediateAttention:
      features = fuse_intermediate_attention(video_seq, audio_seq);
      break;
    case FusionStrategy::Add:
    case FusionStrategy::Multiply:
    case FusionStrategy::Concat:
    case FusionStrategy::TensorFusion:
      features = fuse_baseline(mean_rows(video_seq), mean_rows(audio_seq));
      break;
    case FusionStrategy::AudioOnly:
      features = mean_rows(audio_seq);
      break;
    case FusionStrategy::VideoOnly:
      features = mean_rows(video_seq);
      break;
  }
  return classify_head(features, classifier);
}

void FusionHead::visit(const std::string& prefix, const ParamVisitor& fn) {
  for (std::size_t i = 0; i < video_convs.size(); ++i)
    video_convs[i].visit(prefix + ".vconv" + std::to_string(i), fn);
  for (std::size_t i = 0; i < audio_convs.size(); ++i)
    audio_convs[i].visit(prefix + ".aconv" + std::to_string(i), fn);
  if (audio_from_video.wq.defined())
    audio_from_video.visit(prefix + ".xattn_av", fn);
  if (video_from_audio.wq.defined())
    video_from_audio.visit(prefix + ".xattn_va", fn);
  if (post_video.kernels.defined()) post_video.visit(prefix + ".post_v", fn);
  if (post_audio.kernels.defined()) post_audio.visit(prefix + ".post_a", fn);
  if (refine_video.w.defined()) refine_video.visit(prefix + ".refine_v", fn);
  if (refine_audio.w.defined()) refine_audio.visit(prefix + ".refine_a", fn);
  classifier.visit(prefix + ".classifier", fn);
}

Tensor tensor_fusion_features(const Tensor& audio_pooled, const Tensor& video_pooled) {
  if (audio_pooled.ndim() != 2 || audio_pooled.rows() != 1 ||
      video_pooled.ndim() != 2 || video_pooled.rows() != 1)
    throw DimensionError("tensor_fusion_features: expected 1 x D rows");
  Tensor one = Tensor::full({1, 1}, 1.0);
  Tensor a = concat_cols({one, audio_pooled});
  Tensor v = concat_cols({one, video_pooled});
  Tensor outer = matmul(transpose(a), v);
  return reshape(outer, {1, a.cols() * v.cols()});
}

Tensor classify_head(const Tensor& features, const Linear& head) {
  if (features.ndim() != 2 || features.cols() != head.w.rows())
    throw ConfigError("classify_head: feature width " + shape_str(features.shape()) +
                      " does not match head " + shape_str(head.w.shape()));
  return head.forward(features);
}

int predict_label(const Tensor& logits) {
  if (logits.numel() != 2) throw ContractError("predict_label: expected 2 logits");
  return logits.data()[1] > logits.data()[0] ? 1 : 0;
}

}  // namespace mmff
