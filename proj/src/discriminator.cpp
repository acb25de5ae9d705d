#include "blindsr/discriminator.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "blindsr/random.hpp"

namespace blindsr {

namespace F = torch::nn::functional;

namespace {

torch::Tensor lrelu(const torch::Tensor& x) { return F::leaky_relu(x, F::LeakyReLUFuncOptions().negative_slope(0.2)); }

torch::Tensor upsample_to(const torch::Tensor& x, std::int64_t h, std::int64_t w) {
  return F::interpolate(x, F::InterpolateFuncOptions()
                               .size(std::vector<std::int64_t>{h, w})
                               .mode(torch::kBilinear)
                               .align_corners(false));
}

void check_divisible(const torch::Tensor& x, int levels, const char* who) {
  if (x.dim() != 4) throw std::invalid_argument(std::string(who) + ": expected (N, C, H, W) input");
  const std::int64_t m = std::int64_t{1} << levels;
  if (x.size(2) % m != 0 || x.size(3) % m != 0) {
    throw std::invalid_argument(std::string(who) + ": spatial dims " + std::to_string(x.size(2)) + "x" +
                                std::to_string(x.size(3)) + " not divisible by " + std::to_string(m));
  }
}

}  // namespace

void DiscriminatorConfig::validate() const {
  if (depth < 1) throw std::invalid_argument("depth: must be >= 1");
  if (base_features < 1) throw std::invalid_argument("base_features: must be positive");
  if (in_channels < 1) throw std::invalid_argument("in_channels: must be positive");
  if (scales != 2) throw std::invalid_argument("scales: the multi-scale discriminator uses exactly 2 scales");
}

AttentionGateImpl::AttentionGateImpl(int skip_channels, int gate_channels, int inter_channels, bool sn,
                                     std::uint64_t seed) {
  Rng rng(seed);
  theta_ = register_module(
      "theta", SNConv2d(Conv2dSpec{skip_channels, inter_channels, 1, 1, 0, false}, sn, rng.next_u64()));
  phi_ = register_module("phi", SNConv2d(Conv2dSpec{gate_channels, inter_channels, 1, 1, 0, true}, sn, rng.next_u64()));
  psi_ = register_module("psi", SNConv2d(Conv2dSpec{inter_channels, 1, 1, 1, 0, true}, sn, rng.next_u64()));
}

torch::Tensor AttentionGateImpl::coefficients(const torch::Tensor& skip, const torch::Tensor& gate) {
  auto g = upsample_to(phi_(gate), skip.size(2), skip.size(3));
  auto f = torch::relu(theta_(skip) + g);
  return torch::sigmoid(psi_(f));
}

torch::Tensor AttentionGateImpl::forward(const torch::Tensor& skip, const torch::Tensor& gate) {
  return skip * coefficients(skip, gate);
}

UNetDiscriminatorImpl::UNetDiscriminatorImpl(const DiscriminatorConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  Rng rng(seed);
  const bool sn = cfg_.spectral_norm;
  std::vector<int> feats;
  for (int i = 0; i <= cfg_.depth; ++i) feats.push_back(cfg_.base_features << i);

  conv_in_ = register_module(
      "conv_in", torch::nn::Conv2d(torch::nn::Conv2dOptions(cfg_.in_channels, feats[0], 3).padding(1)));
  {
    auto gen = make_torch_generator(rng.next_u64());
    torch::NoGradGuard guard;
    const double bound = 1.0 / std::sqrt(static_cast<double>(cfg_.in_channels) * 9.0);
    conv_in_->weight.copy_((torch::rand(conv_in_->weight.sizes(), gen) * 2.0 - 1.0) * bound);
    conv_in_->bias.copy_((torch::rand(conv_in_->bias.sizes(), gen) * 2.0 - 1.0) * bound);
  }
  for (int i = 0; i < cfg_.depth; ++i) {
    down_->push_back(SNConv2d(Conv2dSpec{feats[i], feats[i + 1], 4, 2, 1, false}, sn, rng.next_u64()));
  }
  for (int i = cfg_.depth - 1; i >= 0; --i) {
    gates_->push_back(AttentionGate(feats[i], feats[i + 1], std::max(1, feats[i] / 2), sn, rng.next_u64()));
    up_->push_back(SNConv2d(Conv2dSpec{feats[i + 1], feats[i], 3, 1, 1, false}, sn, rng.next_u64()));
    fuse_->push_back(SNConv2d(Conv2dSpec{2 * feats[i], feats[i], 3, 1, 1, false}, sn, rng.next_u64()));
  }
  register_module("down", down_);
  register_module("gates", gates_);
  register_module("up", up_);
  register_module("fuse", fuse_);
  head1_ = register_module("head1", SNConv2d(Conv2dSpec{feats[0], feats[0], 3, 1, 1, false}, sn, rng.next_u64()));
  head2_ = register_module("head2", SNConv2d(Conv2dSpec{feats[0], feats[0], 3, 1, 1, false}, sn, rng.next_u64()));
  conv_out_ = register_module("conv_out", torch::nn::Conv2d(torch::nn::Conv2dOptions(feats[0], 1, 3).padding(1)));
  {
    auto gen = make_torch_generator(rng.next_u64());
    torch::NoGradGuard guard;
    const double bound = 1.0 / std::sqrt(static_cast<double>(feats[0]) * 9.0);
    conv_out_->weight.copy_((torch::rand(conv_out_->weight.sizes(), gen) * 2.0 - 1.0) * bound);
    conv_out_->bias.zero_();
  }
}

torch::Tensor UNetDiscriminatorImpl::run(const torch::Tensor& x, std::vector<torch::Tensor>* alphas) {
  check_divisible(x, cfg_.depth, "discriminator");
  if (x.size(1) != cfg_.in_channels) throw std::invalid_argument("discriminator: wrong channel count");
  std::vector<torch::Tensor> enc;
  enc.push_back(lrelu(conv_in_(x)));
  for (std::size_t i = 0; i < down_->size(); ++i) {
    enc.push_back(lrelu(down_[i]->as<SNConv2d>()->forward(enc.back())));
  }
  auto g = enc.back();
  for (std::size_t k = 0; k < gates_->size(); ++k) {
    const auto& skip = enc[enc.size() - 2 - k];
    auto* gate = gates_[k]->as<AttentionGate>();
    auto alpha = gate->coefficients(skip, g);
    if (alphas != nullptr) alphas->push_back(alpha);
    auto up = lrelu(up_[k]->as<SNConv2d>()->forward(upsample_to(g, skip.size(2), skip.size(3))));
    g = lrelu(fuse_[k]->as<SNConv2d>()->forward(torch::cat({up, skip * alpha}, 1)));
  }
  g = lrelu(head1_(g));
  g = lrelu(head2_(g));
  return conv_out_(g);
}

torch::Tensor UNetDiscriminatorImpl::forward(const torch::Tensor& x) { return run(x, nullptr); }

std::vector<torch::Tensor> UNetDiscriminatorImpl::attention_maps(const torch::Tensor& x) {
  std::vector<torch::Tensor> alphas;
  run(x, &alphas);
  return alphas;
}

torch::Tensor downsample2x(const torch::Tensor& x) {
  return F::interpolate(x, F::InterpolateFuncOptions()
                               .size(std::vector<std::int64_t>{x.size(2) / 2, x.size(3) / 2})
                               .mode(torch::kBilinear)
                               .align_corners(false)
                               .antialias(true));
}

MultiScaleDiscriminatorImpl::MultiScaleDiscriminatorImpl(const DiscriminatorConfig& cfg, std::uint64_t seed)
    : cfg_(cfg) {
  cfg_.validate();
  Rng rng(seed);
  normal_ = register_module("normal", UNetDiscriminator(cfg_, rng.next_u64()));
  sampled_ = register_module("sampled", UNetDiscriminator(cfg_, rng.next_u64()));
}

LogitMaps MultiScaleDiscriminatorImpl::forward(const torch::Tensor& x) {
  check_divisible(x, cfg_.depth + 1, "multi-scale discriminator");
  return LogitMaps{normal_(x), sampled_(downsample2x(x))};
}

}  // namespace blindsr
