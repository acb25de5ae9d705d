#include "blindsr/generator.hpp"

#include <cmath>
#include <stdexcept>

#include "blindsr/random.hpp"

namespace blindsr {

namespace F = torch::nn::functional;

namespace {

constexpr double kSlope = 0.2;

torch::nn::Conv2d conv(int in, int out, int k) {
  return torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, k).stride(1).padding(k / 2));
}

torch::Tensor lrelu(const torch::Tensor& x) { return F::leaky_relu(x, F::LeakyReLUFuncOptions().negative_slope(kSlope)); }

struct LeakyReLUImpl : torch::nn::Module {
  torch::Tensor forward(const torch::Tensor& x) { return lrelu(x); }
};
TORCH_MODULE(LeakyReLU);

// Kaiming-normal weights (fan-in, leaky-ReLU gain) times `scale`, zero bias.
void init_conv(torch::nn::Conv2dImpl& c, at::Generator& gen, double scale) {
  torch::NoGradGuard guard;
  const auto& w = c.weight;
  const double fan_in = static_cast<double>(w.size(1) * w.size(2) * w.size(3));
  const double gain = std::sqrt(2.0 / (1.0 + kSlope * kSlope));
  const double std = gain / std::sqrt(fan_in) * scale;
  w.copy_(torch::randn(w.sizes(), gen, w.options()) * std);
  if (c.bias.defined()) c.bias.zero_();
}

void init_conv_default(torch::nn::Conv2dImpl& c, at::Generator& gen) {
  torch::NoGradGuard guard;
  const auto& w = c.weight;
  const double bound = 1.0 / std::sqrt(static_cast<double>(w.size(1) * w.size(2) * w.size(3)));
  w.copy_((torch::rand(w.sizes(), gen, w.options()) * 2.0 - 1.0) * bound);
  if (c.bias.defined()) c.bias.zero_();
}

}  // namespace

std::string to_string(GeneratorVariant v) { return v == GeneratorVariant::Star ? "star" : "lite"; }

GeneratorVariant generator_variant_from_string(const std::string& s) {
  if (s == "star") return GeneratorVariant::Star;
  if (s == "lite") return GeneratorVariant::Lite;
  throw std::invalid_argument("unknown generator variant '" + s + "' (expected star or lite)");
}

GeneratorConfig GeneratorConfig::star() { return GeneratorConfig{}; }

GeneratorConfig GeneratorConfig::lite() {
  GeneratorConfig cfg;
  cfg.variant = GeneratorVariant::Lite;
  return cfg;
}

void GeneratorConfig::validate() const {
  auto require = [](bool ok, const char* what) {
    if (!ok) throw std::invalid_argument(what);
  };
  require(upscale == 4, "upscale: only 4x is supported");
  require(in_channels > 0 && out_channels > 0, "in_channels/out_channels: must be positive");
  require(base_features > 0, "base_features: must be positive");
  require(residual_scale > 0.0 && residual_scale <= 1.0, "residual_scale: must lie in (0, 1]");
  require(dropout_prob >= 0.0 && dropout_prob < 1.0, "dropout_prob: must lie in [0, 1)");
  if (variant == GeneratorVariant::Star) {
    require(num_blocks > 0, "num_blocks: must be positive");
    require(growth_channels > 0, "growth_channels: must be positive");
  }
}

torch::Tensor pixel_shuffle(const torch::Tensor& x, int r) {
  TORCH_CHECK(x.dim() == 4, "pixel_shuffle: expected (N, C, h, w), got ", x.sizes());
  TORCH_CHECK(r >= 1, "pixel_shuffle: factor must be >= 1");
  const auto n = x.size(0), c = x.size(1), h = x.size(2), w = x.size(3);
  if (c % (static_cast<std::int64_t>(r) * r) != 0) {
    throw std::invalid_argument("pixel_shuffle: channel count " + std::to_string(c) + " not divisible by " +
                                std::to_string(r * r));
  }
  const auto oc = c / (r * r);
  // out[n, c, y*r + i, x*r + j] = in[n, c*r*r + i*r + j, y, x]
  return x.reshape({n, oc, r, r, h, w}).permute({0, 1, 4, 2, 5, 3}).reshape({n, oc, h * r, w * r});
}

ChannelDropoutImpl::ChannelDropoutImpl(double p) : p_(0.0) { set_p(p); }

void ChannelDropoutImpl::set_p(double p) {
  if (!(p >= 0.0 && p < 1.0)) throw std::invalid_argument("dropout probability must lie in [0, 1)");
  p_ = p;
}

torch::Tensor ChannelDropoutImpl::forward(const torch::Tensor& x) {
  if (!is_training() || p_ == 0.0) return x;
  auto keep = torch::full({x.size(0), x.size(1), 1, 1}, 1.0 - p_, x.options());
  auto mask = torch::bernoulli(keep);
  return x * mask / (1.0 - p_);
}

StarDenseBlockImpl::StarDenseBlockImpl(int features, int growth, double residual_scale)
    : residual_scale_(residual_scale) {
  conv1_ = register_module("conv1", conv(features, growth, 3));
  conv2_ = register_module("conv2", conv(features + growth, growth, 3));
  conv3_ = register_module("conv3", conv(features + 2 * growth, growth, 3));
  conv4_ = register_module("conv4", conv(features + 3 * growth, growth, 3));
  conv5_ = register_module("conv5", conv(features + 4 * growth, features, 3));
  skip_ = register_module("skip", torch::nn::Conv2d(torch::nn::Conv2dOptions(features, growth, 1).bias(false)));
}

torch::Tensor StarDenseBlockImpl::forward(const torch::Tensor& x) {
  auto x1 = lrelu(conv1_(x));
  auto x2 = lrelu(conv2_(torch::cat({x, x1}, 1))) + residual_scale_ * skip_(x);
  auto x3 = lrelu(conv3_(torch::cat({x, x1, x2}, 1)));
  auto x4 = lrelu(conv4_(torch::cat({x, x1, x2, x3}, 1))) + residual_scale_ * x2;
  auto x5 = conv5_(torch::cat({x, x1, x2, x3, x4}, 1));
  return x5 * residual_scale_ + x;
}

StarRRDBImpl::StarRRDBImpl(int features, int growth, double residual_scale) : residual_scale_(residual_scale) {
  rdb1_ = register_module("rdb1", StarDenseBlock(features, growth, residual_scale));
  rdb2_ = register_module("rdb2", StarDenseBlock(features, growth, residual_scale));
  rdb3_ = register_module("rdb3", StarDenseBlock(features, growth, residual_scale));
}

torch::Tensor StarRRDBImpl::forward(const torch::Tensor& x) {
  auto out = rdb3_(rdb2_(rdb1_(x)));
  return out * residual_scale_ + x;
}

GeneratorImpl::GeneratorImpl(const GeneratorConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  const int nf = cfg_.base_features;
  if (cfg_.variant == GeneratorVariant::Star) {
    conv_first_ = register_module("conv_first", conv(cfg_.in_channels, nf, 3));
    body_ = torch::nn::Sequential();
    for (int i = 0; i < cfg_.num_blocks; ++i) body_->push_back(StarRRDB(nf, cfg_.growth_channels, cfg_.residual_scale));
    register_module("body", body_);
    conv_body_ = register_module("conv_body", conv(nf, nf, 3));
    conv_up1_ = register_module("conv_up1", conv(nf, nf, 3));
    conv_up2_ = register_module("conv_up2", conv(nf, nf, 3));
    conv_hr_ = register_module("conv_hr", conv(nf, nf, 3));
    dropout_ = register_module("dropout", ChannelDropout(cfg_.dropout_prob));
    conv_last_ = register_module("conv_last", conv(nf, cfg_.out_channels, 3));
  } else {
    lite_features_ = torch::nn::Sequential();
    lite_features_->push_back(conv(cfg_.in_channels, nf, 5));
    lite_features_->push_back(LeakyReLU());
    for (int i = 0; i < 5; ++i) {
      lite_features_->push_back(conv(nf, nf, 3));
      lite_features_->push_back(LeakyReLU());
    }
    register_module("features", lite_features_);
    const int r = cfg_.upscale;
    lite_expand_ = register_module("expand", conv(nf, cfg_.out_channels * r * r, 3));
    dropout_ = register_module("dropout", ChannelDropout(cfg_.dropout_prob));
    conv_last_ = register_module("conv_last", conv(cfg_.out_channels, cfg_.out_channels, 3));
  }
}

torch::Tensor GeneratorImpl::forward(const torch::Tensor& lr) {
  if (lr.dim() != 4 || lr.size(1) != cfg_.in_channels) {
    throw std::invalid_argument("generator: expected input of shape (N, " + std::to_string(cfg_.in_channels) +
                                ", h, w), got " + c10::str(lr.sizes()));
  }
  return cfg_.variant == GeneratorVariant::Star ? forward_star(lr) : forward_lite(lr);
}

torch::Tensor GeneratorImpl::forward_star(const torch::Tensor& x) {
  auto feat = conv_first_(x);
  feat = feat + conv_body_(body_->forward(feat));
  auto up = F::interpolate(feat, F::InterpolateFuncOptions()
                                      .scale_factor(std::vector<double>{2.0, 2.0})
                                      .mode(torch::kNearest));
  feat = lrelu(conv_up1_(up));
  up = F::interpolate(feat, F::InterpolateFuncOptions()
                                .scale_factor(std::vector<double>{2.0, 2.0})
                                .mode(torch::kNearest));
  feat = lrelu(conv_up2_(up));
  feat = lrelu(conv_hr_(feat));
  return conv_last_(dropout_(feat));
}

torch::Tensor GeneratorImpl::forward_lite(const torch::Tensor& x) {
  auto feat = lite_features_->forward(x);
  auto hr = pixel_shuffle(lite_expand_(feat), cfg_.upscale);
  return conv_last_(dropout_(hr));
}

void GeneratorImpl::set_dropout_prob(double p) {
  dropout_->set_p(p);
  cfg_.dropout_prob = p;
}

void GeneratorImpl::reset_parameters(std::uint64_t seed) {
  auto gen = make_torch_generator(seed);
  for (const auto& item : named_modules("", /*include_self=*/false)) {
    auto* c = item.value()->as<torch::nn::Conv2d>();
    if (c == nullptr) continue;
    // Dense-block convolutions start small so each residual branch is near identity.
    // Everything else gets the framework default, uniform in +-1/sqrt(fan_in); full
    // He gain on the trunk and tail would amplify the ~1.2x per-RRDB growth further.
    if (item.key().find("body.") == 0) {
      init_conv(*c, gen, 0.1);
    } else {
      init_conv_default(*c, gen);
    }
  }
}

Generator build_generator(const GeneratorConfig& cfg, std::uint64_t seed) {
  Generator gen(cfg);
  gen->reset_parameters(seed);
  return gen;
}

Generator& apply_dropout_mode(Generator& gen, bool enabled, double prob) {
  if (!(prob >= 0.0 && prob < 1.0)) throw std::invalid_argument("dropout probability must lie in [0, 1)");
  gen->set_dropout_prob(enabled ? prob : 0.0);
  return gen;
}

std::int64_t count_parameters(const torch::nn::Module& m) {
  std::int64_t n = 0;
  for (const auto& p : m.parameters()) n += p.numel();
  return n;
}

}  // namespace blindsr
