#pragma once

#include <cstdint>
#include <string>

#include <torch/torch.h>

namespace blindsr {

enum class GeneratorVariant { Star, Lite };

std::string to_string(GeneratorVariant v);
GeneratorVariant generator_variant_from_string(const std::string& s);

struct GeneratorConfig {
  GeneratorVariant variant = GeneratorVariant::Star;
  int in_channels = 3;
  int out_channels = 3;
  int base_features = 64;
  int num_blocks = 23;       // star only
  int growth_channels = 32;  // star only
  double residual_scale = 0.2;
  int upscale = 4;
  double dropout_prob = 0.0;  // 0 disables; "+" variants use 0.5

  static GeneratorConfig star();
  static GeneratorConfig lite();

  void validate() const;
  bool operator==(const GeneratorConfig&) const = default;
};

// (N, C*r*r, h, w) -> (N, C, r*h, r*w). Lossless channel-to-space rearrangement.
torch::Tensor pixel_shuffle(const torch::Tensor& x, int r);

// Zeroes whole channels with probability p in training mode and rescales the
// survivors by 1/(1-p). Identity in evaluation mode.
class ChannelDropoutImpl : public torch::nn::Module {
 public:
  explicit ChannelDropoutImpl(double p = 0.0);
  torch::Tensor forward(const torch::Tensor& x);

  double p() const { return p_; }
  void set_p(double p);

 private:
  double p_;
};
TORCH_MODULE(ChannelDropout);

// Five densely connected 3x3 convolutions. Layers 2 and 4 receive an extra
// skip from the activation two layers earlier (projected 1x1 for layer 2,
// whose skip source is the block input), scaled by residual_scale.
class StarDenseBlockImpl : public torch::nn::Module {
 public:
  StarDenseBlockImpl(int features, int growth, double residual_scale);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  double residual_scale_;
  torch::nn::Conv2d conv1_{nullptr}, conv2_{nullptr}, conv3_{nullptr}, conv4_{nullptr}, conv5_{nullptr};
  torch::nn::Conv2d skip_{nullptr};
};
TORCH_MODULE(StarDenseBlock);

class StarRRDBImpl : public torch::nn::Module {
 public:
  StarRRDBImpl(int features, int growth, double residual_scale);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  double residual_scale_;
  StarDenseBlock rdb1_{nullptr}, rdb2_{nullptr}, rdb3_{nullptr};
};
TORCH_MODULE(StarRRDB);

class GeneratorImpl : public torch::nn::Module {
 public:
  explicit GeneratorImpl(const GeneratorConfig& cfg);

  // (N, in_channels, h, w) -> (N, out_channels, 4h, 4w).
  torch::Tensor forward(const torch::Tensor& lr);

  const GeneratorConfig& config() const { return cfg_; }
  ChannelDropout& dropout() { return dropout_; }
  void set_dropout_prob(double p);
  // Deterministic re-initialization of every convolution from `seed`.
  void reset_parameters(std::uint64_t seed);

 private:
  torch::Tensor forward_star(const torch::Tensor& x);
  torch::Tensor forward_lite(const torch::Tensor& x);

  GeneratorConfig cfg_;
  // star
  torch::nn::Conv2d conv_first_{nullptr};
  torch::nn::Sequential body_{nullptr};
  torch::nn::Conv2d conv_body_{nullptr}, conv_up1_{nullptr}, conv_up2_{nullptr}, conv_hr_{nullptr};
  // lite
  torch::nn::Sequential lite_features_{nullptr};
  torch::nn::Conv2d lite_expand_{nullptr};
  // shared
  ChannelDropout dropout_{nullptr};
  torch::nn::Conv2d conv_last_{nullptr};
};
TORCH_MODULE(Generator);

Generator build_generator(const GeneratorConfig& cfg, std::uint64_t seed);

// Sets the dropout rate used before the output convolution (0 when disabled).
Generator& apply_dropout_mode(Generator& gen, bool enabled, double prob);

std::int64_t count_parameters(const torch::nn::Module& m);

}  // namespace blindsr
