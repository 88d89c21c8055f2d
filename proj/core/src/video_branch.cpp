#include "mmff/video_branch.hpp"

namespace mmff {

void VideoFrontendConfig::validate() const {
  if (input_dim == 0) throw ConfigError("video: input_dim must be set");
  if (fixed_length == 0) throw ConfigError("video: fixed_length must be >= 1");
  if (num_blocks == 0) throw ConfigError("video: num_blocks must be >= 1");
  if (num_heads == 0 || embed_dim % num_heads != 0)
    throw ConfigError("video: embed_dim must be divisible by num_heads");
  if (down_kernel == 0 || down_stride == 0)
    throw ConfigError("video: downsample kernel and stride must be >= 1");
}

VideoBlock::VideoBlock(std::size_t dim, std::size_t heads, std::size_t hidden, Rng& rng)
    : attn(dim, heads, rng),
      ln_gain(init::ones({dim})),
      ln_bias(init::zeros_param({dim})),
      mlp(dim, hidden, rng) {}

Tensor VideoBlock::forward(const Tensor& x) const {
  Tensor residual = add(attn.forward(x), x);
  return add(mlp.forward(layer_norm(residual, ln_gain, ln_bias)), residual);
}

void VideoBlock::visit(const std::string& prefix, const ParamVisitor& fn) {
  attn.visit(prefix + ".attn", fn);
  fn(prefix + ".ln.gain", ln_gain);
  fn(prefix + ".ln.bias", ln_bias);
  mlp.visit(prefix + ".mlp", fn);
}

VideoBranch::VideoBranch(const VideoFrontendConfig& config, Rng& rng) : cfg(config) {
  cfg.validate();
  std::size_t c = cfg.input_dim, d = cfg.embed_dim;
  down_kernels = init::scaled_uniform({c, c, cfg.down_kernel}, c * cfg.down_kernel, rng);
  down_gain = init::ones({c});
  down_bias = init::zeros_param({c});
  embed_w = init::scaled_uniform({c, d}, c, rng);
  cls_token = init::normal({1, d}, 0.02, rng);
  pos = init::normal({cfg.fixed_length + 1, d}, 0.02, rng);
  blocks.reserve(cfg.num_blocks);
  for (std::size_t i = 0; i < cfg.num_blocks; ++i)
    blocks.emplace_back(d, cfg.num_heads, cfg.mlp_hidden, rng);
}

Tensor VideoBranch::downsample_temporal(const Tensor& x) const {
  if (x.ndim() != 2 || x.cols() != cfg.input_dim)
    throw DimensionError("video: expected T x " + std::to_string(cfg.input_dim) +
                         " input, got " + shape_str(x.shape()));
  if (x.rows() == 0) throw ArgumentError("video: empty input sequence");
  // conv over time -> per-step feature norm -> pool the time axis to L.
  Tensor h = conv1d(transpose(x), down_kernels, cfg.down_stride, cfg.down_padding);
  h = transpose(layer_norm(transpose(h), down_gain, down_bias));
  h = adaptive_avg_pool(h, cfg.fixed_length);
  return transpose(h);
}

Tensor VideoBranch::patch_embed(const Tensor& x) const { return matmul(x, embed_w); }

Tensor VideoBranch::prepend_cls_and_pos(const Tensor& embedded) const {
  if (pos.rows() != embedded.rows() + 1)
    throw ConfigError("video: positional encoding rows " + std::to_string(pos.rows()) +
                      " != sequence length + 1");
  return add(concat_rows({cls_token, embedded}), pos);
}

Tensor VideoBranch::forward(const Tensor& x) const {
  Tensor h = prepend_cls_and_pos(patch_embed(downsample_temporal(x)));
  for (const VideoBlock& block : blocks) h = block.forward(h);
  return h;
}

void VideoBranch::visit(const std::string& prefix, const ParamVisitor& fn) {
  fn(prefix + ".down.kernels", down_kernels);
  fn(prefix + ".down.gain", down_gain);
  fn(prefix + ".down.bias", down_bias);
  fn(prefix + ".embed.w", embed_w);
  fn(prefix + ".cls", cls_token);
  fn(prefix + ".pos", pos);
  for (std::size_t i = 0; i < blocks.size(); ++i)
    blocks[i].visit(prefix + ".block" + std::to_string(i), fn);
}

}  // namespace mmff
