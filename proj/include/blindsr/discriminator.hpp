#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include <torch/torch.h>

namespace blindsr {

// Left/right singular vector estimates for one weight matrix.
struct PowerIterationState {
  torch::Tensor u;  // (out_features)
  torch::Tensor v;  // (in_features * kh * kw)
};

PowerIterationState init_power_iteration(const torch::Tensor& weight, std::uint64_t seed);

// Runs `steps` power-iteration updates on `state` (no gradient) and returns
// weight / sigma, where sigma = u^T W v is differentiable in the weight.
torch::Tensor spectral_normalize(const torch::Tensor& weight, PowerIterationState& state, int steps = 1);

// Largest singular value estimate for the current state, without updating it.
torch::Tensor spectral_sigma(const torch::Tensor& weight, const PowerIterationState& state);

struct Conv2dSpec {
  int in = 0;
  int out = 0;
  int kernel = 3;
  int stride = 1;
  int padding = 1;
  bool bias = true;
};

// 2-D convolution whose weight is spectrally normalized when `normalize` is
// set. One power-iteration step per training-mode forward; evaluation mode
// reuses the stored vectors.
class SNConv2dImpl : public torch::nn::Module {
 public:
  SNConv2dImpl(const Conv2dSpec& spec, bool normalize, std::uint64_t seed);
  torch::Tensor forward(const torch::Tensor& x);

  // The weight the convolution actually applies.
  torch::Tensor effective_weight();
  bool normalized() const { return normalize_; }

  torch::Tensor weight_orig;
  torch::Tensor bias;

 private:
  Conv2dSpec spec_;
  bool normalize_;
  torch::Tensor u_, v_;
};
TORCH_MODULE(SNConv2d);

struct DiscriminatorConfig {
  int in_channels = 3;
  int base_features = 64;
  int depth = 3;
  bool spectral_norm = true;
  int scales = 2;

  void validate() const;
  bool operator==(const DiscriminatorConfig&) const = default;
};

// Additive attention gate: the coarser decoder signal, projected 1x1 and
// upsampled to the skip resolution, selects which skip features pass.
// Coefficients are sigmoid outputs, so they stay in [0, 1].
class AttentionGateImpl : public torch::nn::Module {
 public:
  AttentionGateImpl(int skip_channels, int gate_channels, int inter_channels, bool sn, std::uint64_t seed);

  // skip: (N, Cs, H, W); gate: (N, Cg, H/2, W/2). Returns alpha (N, 1, H, W).
  torch::Tensor coefficients(const torch::Tensor& skip, const torch::Tensor& gate);
  torch::Tensor forward(const torch::Tensor& skip, const torch::Tensor& gate);

 private:
  SNConv2d theta_{nullptr}, phi_{nullptr}, psi_{nullptr};
};
TORCH_MODULE(AttentionGate);

class UNetDiscriminatorImpl : public torch::nn::Module {
 public:
  UNetDiscriminatorImpl(const DiscriminatorConfig& cfg, std::uint64_t seed);

  // (N, C, H, W) -> per-pixel logits (N, 1, H, W). H, W divisible by 2^depth.
  torch::Tensor forward(const torch::Tensor& x);
  // Attention coefficient maps of every decoder level, finest last.
  std::vector<torch::Tensor> attention_maps(const torch::Tensor& x);

  const DiscriminatorConfig& config() const { return cfg_; }

 private:
  torch::Tensor run(const torch::Tensor& x, std::vector<torch::Tensor>* alphas);

  DiscriminatorConfig cfg_;
  torch::nn::Conv2d conv_in_{nullptr};
  torch::nn::ModuleList down_, up_, fuse_, gates_;
  SNConv2d head1_{nullptr}, head2_{nullptr};
  torch::nn::Conv2d conv_out_{nullptr};
};
TORCH_MODULE(UNetDiscriminator);

// Bilinear anti-aliased 2x reduction used to feed the second discriminator.
torch::Tensor downsample2x(const torch::Tensor& x);

struct LogitMaps {
  torch::Tensor normal;   // (N, 1, H, W)
  torch::Tensor sampled;  // (N, 1, H/2, W/2)
};

class MultiScaleDiscriminatorImpl : public torch::nn::Module {
 public:
  MultiScaleDiscriminatorImpl(const DiscriminatorConfig& cfg, std::uint64_t seed);

  LogitMaps forward(const torch::Tensor& x);

  UNetDiscriminator& normal() { return normal_; }
  UNetDiscriminator& sampled() { return sampled_; }
  const DiscriminatorConfig& config() const { return cfg_; }

 private:
  DiscriminatorConfig cfg_;
  UNetDiscriminator normal_{nullptr}, sampled_{nullptr};
};
TORCH_MODULE(MultiScaleDiscriminator);

}  // namespace blindsr
