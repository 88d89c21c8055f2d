#pragma once

#include <vector>

#include "mmff/nn.hpp"

namespace mmff {

struct AudioPatchGrid {
  std::size_t h = 0;
  std::size_t w = 0;
  std::size_t patches() const { return h * w; }
};

struct AudioFrontendConfig {
  std::size_t input_dim = 0;     // frequency bins of the incoming features
  std::size_t target_freq = 16;  // F' after projection
  std::size_t target_time = 16;  // T' after pooling
  std::size_t patch_f = 4;
  std::size_t patch_t = 4;
  std::size_t stride_f = 4;
  std::size_t stride_t = 4;
  std::size_t embed_dim = 64;
  std::size_t num_layers = 2;
  std::size_t num_heads = 4;
  std::size_t mlp_hidden = 128;
  // AST-style base positional grid, interpolated to the actual patch grid.
  std::size_t base_grid_h = 12;
  std::size_t base_grid_w = 101;
  std::size_t front_kernel = 1;
  std::size_t front_stride = 1;
  std::size_t front_padding = 0;

  void validate() const;
  AudioPatchGrid grid() const;
};

// Post-norm transformer encoder layer: normalization is applied to each
// residual sum, not to the sub-layer input.
struct EncoderLayer {
  SelfAttention attn;
  Tensor ln1_gain, ln1_bias;
  Tensor ln2_gain, ln2_bias;
  Mlp mlp;

  EncoderLayer() = default;
  EncoderLayer(std::size_t dim, std::size_t heads, std::size_t hidden, Rng& rng);

  Tensor forward(const Tensor& x) const;
  void visit(const std::string& prefix, const ParamVisitor& fn);
};

// Audio stream: time-frequency projection to a fixed-size single-channel
// map, overlapping 2-d patchification, interpolated positional grid,
// classification + distillation tokens, then the encoder stack.
struct AudioBranch {
  AudioFrontendConfig cfg;
  Tensor front_kernels;  // F' x F x K
  Tensor front_gain;     // F'
  Tensor front_bias;     // F'
  Tensor patch_kernels;  // D x 1 x p_f x p_t (bias-free)
  Tensor pos_base;       // D x h_base x w_base
  Tensor cls_token;      // 1 x D
  Tensor dist_token;     // 1 x D
  Tensor e_cls;          // 1 x D
  Tensor e_dist;         // 1 x D
  std::vector<EncoderLayer> layers;

  AudioBranch() = default;
  AudioBranch(const AudioFrontendConfig& config, Rng& rng);

  // F x T -> 1 x F' x T'.
  Tensor time_freq_project(const Tensor& features) const;
  // 1 x F' x T' -> M x D, patch grid flattened row-major.
  Tensor patchify(const Tensor& x) const;
  // Base grid resized to the patch grid, flattened to M x D.
  Tensor interp_pos_embed() const;
  // Rows: [cls + e_cls; dist + e_dist; patches + positions].
  Tensor assemble_sequence(const Tensor& patches, const Tensor& positions) const;
  // F x T -> (M+2) x D.
  Tensor forward(const Tensor& features) const;

  void visit(const std::string& prefix, const ParamVisitor& fn);
};

}  // namespace mmff
