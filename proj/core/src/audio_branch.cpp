#include "mmff/audio_branch.hpp"

namespace mmff {

void AudioFrontendConfig::validate() const {
  if (input_dim == 0) throw ConfigError("audio: input_dim must be set");
  if (target_freq < patch_f || target_time < patch_t)
    throw ConfigError("audio: patch does not fit the projected input");
  if (patch_f == 0 || patch_t == 0 || stride_f == 0 || stride_t == 0)
    throw ConfigError("audio: patch and stride must be >= 1");
  if (num_layers == 0) throw ConfigError("audio: num_layers must be >= 1");
  if (num_heads == 0 || embed_dim % num_heads != 0)
    throw ConfigError("audio: embed_dim must be divisible by num_heads");
  if (base_grid_h == 0 || base_grid_w == 0)
    throw ConfigError("audio: base positional grid must be non-empty");
  if (front_kernel == 0 || front_stride == 0)
    throw ConfigError("audio: frontend kernel and stride must be >= 1");
}

AudioPatchGrid AudioFrontendConfig::grid() const {
  AudioPatchGrid g;
  g.h = (target_freq - patch_f) / stride_f + 1;
  g.w = (target_time - patch_t) / stride_t + 1;
  return g;
}

EncoderLayer::EncoderLayer(std::size_t dim, std::size_t heads, std::size_t hidden,
                           Rng& rng)
    : attn(dim, heads, rng),
      ln1_gain(init::ones({dim})),
      ln1_bias(init::zeros_param({dim})),
      ln2_gain(init::ones({dim})),
      ln2_bias(init::zeros_param({dim})),
      mlp(dim, hidden, rng) {}

Tensor EncoderLayer::forward(const Tensor& x) const {
  Tensor u = layer_norm(add(x, attn.forward(x)), ln1_gain, ln1_bias);
  return layer_norm(add(u, mlp.forward(u)), ln2_gain, ln2_bias);
}

void EncoderLayer::visit(const std::string& prefix, const ParamVisitor& fn) {
  attn.visit(prefix + ".attn", fn);
  fn(prefix + ".ln1.gain", ln1_gain);
  fn(prefix + ".ln1.bias", ln1_bias);
  fn(prefix + ".ln2.gain", ln2_gain);
  fn(prefix + ".ln2.bias", ln2_bias);
  mlp.visit(prefix + ".mlp", fn);
}

AudioBranch::AudioBranch(const AudioFrontendConfig& config, Rng& rng) : cfg(config) {
  cfg.validate();
  std::size_t f = cfg.input_dim, d = cfg.embed_dim;
  front_kernels = init::scaled_uniform({cfg.target_freq, f, cfg.front_kernel},
                                       f * cfg.front_kernel, rng);
  front_gain = init::ones({cfg.target_freq});
  front_bias = init::zeros_param({cfg.target_freq});
  patch_kernels = init::scaled_uniform({d, 1, cfg.patch_f, cfg.patch_t},
                                       cfg.patch_f * cfg.patch_t, rng);
  pos_base = init::normal({d, cfg.base_grid_h, cfg.base_grid_w}, 0.02, rng);
  cls_token = init::normal({1, d}, 0.02, rng);
  dist_token = init::normal({1, d}, 0.02, rng);
  e_cls = init::normal({1, d}, 0.02, rng);
  e_dist = init::normal({1, d}, 0.02, rng);
  layers.reserve(cfg.num_layers);
  for (std::size_t i = 0; i < cfg.num_layers; ++i)
    layers.emplace_back(d, cfg.num_heads, cfg.mlp_hidden, rng);
}

Tensor AudioBranch::time_freq_project(const Tensor& features) const {
  if (features.ndim() != 2 || features.rows() != cfg.input_dim)
    throw DimensionError("audio: expected " + std::to_string(cfg.input_dim) +
                         " x T input, got " + shape_str(features.shape()));
  if (features.cols() == 0) throw ArgumentError("audio: empty input sequence");
  Tensor h = conv1d(features, front_kernels, cfg.front_stride, cfg.front_padding);
  h = instance_norm_rows(h, front_gain, front_bias);
  h = adaptive_avg_pool(h, cfg.target_time);
  return reshape(h, {1, cfg.target_freq, cfg.target_time});
}

Tensor AudioBranch::patchify(const Tensor& x) const {
  Tensor maps = conv2d_patches(x, patch_kernels, cfg.stride_f, cfg.stride_t);
  AudioPatchGrid g = cfg.grid();
  return transpose(reshape(maps, {cfg.embed_dim, g.patches()}));
}

Tensor AudioBranch::interp_pos_embed() const {
  AudioPatchGrid g = cfg.grid();
  Tensor resized = bilinear_resize2d(pos_base, g.h, g.w);
  return transpose(reshape(resized, {cfg.embed_dim, g.patches()}));
}

Tensor AudioBranch::assemble_sequence(const Tensor& patches,
                                      const Tensor& positions) const {
  if (patches.shape() != positions.shape())
    throw DimensionError("audio: patch/positional shape mismatch");
  return concat_rows(
      {add(cls_token, e_cls), add(dist_token, e_dist), add(patches, positions)});
}

Tensor AudioBranch::forward(const Tensor& features) const {
  Tensor projected = time_freq_project(features);
  Tensor h = assemble_sequence(patchify(projected), interp_pos_embed());
  for (const EncoderLayer& layer : layers) h = layer.forward(h);
  return h;
}

void AudioBranch::visit(const std::string& prefix, const ParamVisitor& fn) {
  fn(prefix + ".front.kernels", front_kernels);
  fn(prefix + ".front.gain", front_gain);
  fn(prefix + ".front.bias", front_bias);
  fn(prefix + ".patch.kernels", patch_kernels);
  fn(prefix + ".pos_base", pos_base);
  fn(prefix + ".cls", cls_token);
  fn(prefix + ".dist", dist_token);
  fn(prefix + ".e_cls", e_cls);
  fn(prefix + ".e_dist", e_dist);
  for (std::size_t i = 0; i < layers.size(); ++i)
    layers[i].visit(prefix + ".enc" + std::to_string(i), fn);
}

}  // namespace mmff
