#include "metaprompt/unet.hpp"

#include <string>

namespace metaprompt {

void UNetConfig::validate() const {
  for (auto c : channels) {
    if (c < 1) throw std::invalid_argument("UNet channels must be positive");
  }
  if (latent_channels < 1 || prompt_dim < 1 || time_embed_dim < 1) {
    throw std::invalid_argument("UNet latent, prompt and time dimensions must be positive");
  }
}

template <typename T>
ResBlock<T>::ResBlock(std::int64_t cin, std::int64_t cout, std::int64_t embed_dim, Rng& rng)
    : norm1(cin),
      conv1(cin, cout, 3, 1, 1, rng),
      modulation(embed_dim, 2 * cout, rng),
      norm2(cout),
      conv2(cout, cout, 3, 1, 1, rng),
      has_skip(cin != cout) {
  if (has_skip) skip = Conv2d<T>(cin, cout, 1, 1, 0, rng);
}

template <typename T>
BasicTensor<T> ResBlock<T>::operator()(const BasicTensor<T>& x, const BasicTensor<T>& embed) const {
  const std::int64_t cout = conv1.weight.dim(0);
  auto h = conv1(ops::silu(norm1(x)));
  auto ss = modulation(ops::silu(embed));
  auto scale = ops::slice(ss, 0, cout);
  auto shift = ops::slice(ss, cout, cout);
  h = ops::scale_shift(norm2(h), scale, shift);
  h = conv2(ops::silu(h));
  return ops::add(h, has_skip ? skip(x) : x);
}

template <typename T>
void ResBlock<T>::collect(const std::string& prefix, ParamList<T>& out) const {
  norm1.collect(prefix + ".norm1", out);
  conv1.collect(prefix + ".conv1", out);
  modulation.collect(prefix + ".modulation", out);
  norm2.collect(prefix + ".norm2", out);
  conv2.collect(prefix + ".conv2", out);
  if (has_skip) skip.collect(prefix + ".skip", out);
}

template <typename T>
TimestepTable<T>::TimestepTable(int max_steps, std::int64_t dim, Rng& rng) {
  if (max_steps < 1) {
    throw std::invalid_argument("timestep_table: max_steps must be at least 1, got " +
                                std::to_string(max_steps));
  }
  for (int i = 0; i < max_steps; ++i) vectors.push_back(normal_param<T>({dim}, 0.02, rng));
}

template <typename T>
void TimestepTable<T>::collect(const std::string& prefix, ParamList<T>& out) const {
  for (std::size_t i = 0; i < vectors.size(); ++i) {
    out.push_back({prefix + "." + std::to_string(i), vectors[i]});
  }
}

template <typename T>
UNet<T>::UNet(const UNetConfig& config, Rng& rng) : config_(config) {
  config.validate();
  const auto& ch = config.channels;
  const std::int64_t te = config.time_embed_dim;
  conv_in_ = Conv2d<T>(config.latent_channels, ch[0], 3, 1, 1, rng);
  time1_ = Linear<T>(te, te, rng);
  time2_ = Linear<T>(te, te, rng);
  std::int64_t prev = ch[0];
  for (int i = 0; i < kPyramidLevels; ++i) {
    down_res_[i] = ResBlock<T>(prev, ch[i], te, rng);
    down_attn_[i] = CrossAttention<T>(ch[i], config.prompt_dim, rng);
    if (i + 1 < kPyramidLevels) downsample_[i] = Conv2d<T>(ch[i], ch[i], 3, 2, 1, rng);
    prev = ch[i];
  }
  mid_ = ResBlock<T>(prev, prev, te, rng);
  for (int i = kPyramidLevels - 1; i >= 0; --i) {
    up_res_[i] = ResBlock<T>(prev + ch[i], ch[i], te, rng);
    up_attn_[i] = CrossAttention<T>(ch[i], config.prompt_dim, rng);
    tap_[i] = Conv2d<T>(ch[i], config.prompt_dim, 1, 1, 0, rng);
    if (i > 0) upsample_conv_[i - 1] = Conv2d<T>(ch[i], ch[i], 3, 1, 1, rng);
    prev = ch[i];
  }
  out_norm_ = GroupNorm<T>(ch[0]);
  conv_out_ = Conv2d<T>(ch[0], config.latent_channels, 3, 1, 1, rng);
}

template <typename T>
UNetOutput<T> UNet<T>::forward(const BasicTensor<T>& z, const BasicTensor<T>& prompts,
                               const BasicTensor<T>& t_embed) const {
  if (z.rank() != 3 || z.dim(0) != config_.latent_channels) {
    throw ShapeError("unet_forward: expected a " + std::to_string(config_.latent_channels) +
                     "×h×w latent, got " + shape_str(z.shape()));
  }
  if (prompts.rank() != 2 || prompts.dim(1) != config_.prompt_dim) {
    throw ShapeError("unet_forward: prompts " + shape_str(prompts.shape()) +
                     " do not have dimension D=" + std::to_string(config_.prompt_dim));
  }
  if (t_embed.shape() != Shape{config_.time_embed_dim}) {
    throw ShapeError("unet_forward: timestep embedding " + shape_str(t_embed.shape()) +
                     " does not have length " + std::to_string(config_.time_embed_dim));
  }
  const auto embed = time2_(ops::silu(time1_(t_embed)));

  std::array<BasicTensor<T>, kPyramidLevels> skips;
  auto h = conv_in_(z);
  for (int i = 0; i < kPyramidLevels; ++i) {
    h = cross_attend(down_res_[i](h, embed), prompts, down_attn_[i]);
    skips[i] = h;
    if (i + 1 < kPyramidLevels) h = downsample_[i](h);
  }
  h = mid_(h, embed);

  UNetOutput<T> out;
  for (int i = kPyramidLevels - 1; i >= 0; --i) {
    h = ops::concat(std::vector<BasicTensor<T>>{h, skips[i]});
    h = cross_attend(up_res_[i](h, embed), prompts, up_attn_[i]);
    out.pyramid.levels[i] = tap_[i](h);
    if (i > 0) {
      const auto& target = skips[i - 1];
      h = upsample_conv_[i - 1](ops::bilinear_resize(h, target.dim(1), target.dim(2)));
    }
  }
  out.z = conv_out_(ops::silu(out_norm_(h)));
  return out;
}

template <typename T>
void UNet<T>::collect(const std::string& prefix, ParamList<T>& out) const {
  conv_in_.collect(prefix + ".conv_in", out);
  time1_.collect(prefix + ".time_mlp.0", out);
  time2_.collect(prefix + ".time_mlp.1", out);
  for (int i = 0; i < kPyramidLevels; ++i) {
    const std::string s = std::to_string(i);
    down_res_[i].collect(prefix + ".down." + s + ".res", out);
    down_attn_[i].collect(prefix + ".down." + s + ".attn", out);
    if (i + 1 < kPyramidLevels) downsample_[i].collect(prefix + ".down." + s + ".downsample", out);
  }
  mid_.collect(prefix + ".mid", out);
  for (int i = kPyramidLevels - 1; i >= 0; --i) {
    const std::string s = std::to_string(i);
    up_res_[i].collect(prefix + ".up." + s + ".res", out);
    up_attn_[i].collect(prefix + ".up." + s + ".attn", out);
    tap_[i].collect(prefix + ".up." + s + ".tap", out);
    if (i > 0) upsample_conv_[i - 1].collect(prefix + ".up." + s + ".upsample", out);
  }
  out_norm_.collect(prefix + ".out_norm", out);
  conv_out_.collect(prefix + ".conv_out", out);
}

template struct ResBlock<float>;
template struct ResBlock<double>;
template struct TimestepTable<float>;
template struct TimestepTable<double>;
template class UNet<float>;
template class UNet<double>;

}  // namespace metaprompt
