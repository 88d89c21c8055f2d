#pragma once

#include <vector>

#include "mmff/nn.hpp"

namespace mmff {

struct VideoFrontendConfig {
  std::size_t input_dim = 0;      // feature dimension of the incoming frames
  std::size_t fixed_length = 32;  // temporal length after downsampling
  std::size_t embed_dim = 64;
  std::size_t num_blocks = 2;
  std::size_t num_heads = 4;
  std::size_t mlp_hidden = 128;
  // Temporal conv of the downsampling stack; kernel 1 keeps the conv a pure
  // feature mixer and leaves all resizing to the adaptive pooling stage.
  std::size_t down_kernel = 1;
  std::size_t down_stride = 1;
  std::size_t down_padding = 0;

  void validate() const;
};

// One transformer block: multi-head self-attention, residual, then an MLP
// over the layer-normed residual sum added back on top.
struct VideoBlock {
  SelfAttention attn;
  Tensor ln_gain;
  Tensor ln_bias;
  Mlp mlp;

  VideoBlock() = default;
  VideoBlock(std::size_t dim, std::size_t heads, std::size_t hidden, Rng& rng);

  Tensor forward(const Tensor& x) const;
  void visit(const std::string& prefix, const ParamVisitor& fn);
};

// Video stream: temporal downsampling to a fixed length, linear patch
// embedding, classification token plus positional encoding, and a stack of
// self-attention blocks.
struct VideoBranch {
  VideoFrontendConfig cfg;
  Tensor down_kernels;  // C x C x K
  Tensor down_gain;     // C
  Tensor down_bias;     // C
  Tensor embed_w;       // C x D
  Tensor cls_token;     // 1 x D
  Tensor pos;           // (L+1) x D
  std::vector<VideoBlock> blocks;

  VideoBranch() = default;
  VideoBranch(const VideoFrontendConfig& config, Rng& rng);

  // T x C -> L x C; any T >= 1.
  Tensor downsample_temporal(const Tensor& x) const;
  // L x C -> L x D, pure linear map.
  Tensor patch_embed(const Tensor& x) const;
  // L x D -> (L+1) x D: [cls; x] + positional encoding.
  Tensor prepend_cls_and_pos(const Tensor& embedded) const;
  // T x C -> (L+1) x D through every block.
  Tensor forward(const Tensor& x) const;

  void visit(const std::string& prefix, const ParamVisitor& fn);
};

}  // namespace mmff
