#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <torch/torch.h>

namespace blindsr {

// Coefficients of the training objective.
//   total generator loss  = lambda_content * content + eta_adversarial * adversarial
//                           + gamma_perceptual * dual_perceptual
//   discriminator total   = lambda1 * loss(D_normal) + lambda2 * loss(D_sampled)
//   dual perceptual       = l_vgg + zeta / mu * l_res, zeta = (l_vgg + c) / (l_res + c)
struct LossWeights {
  double lambda_content = 1.0;
  double eta_adversarial = 0.1;
  double gamma_perceptual = 1.0;
  double lambda1 = 1.0;
  double lambda2 = 1.0;
  double mu = 1.0;
  double c = 1e-8;

  void validate() const;
  bool operator==(const LossWeights&) const = default;
};

enum class BackboneKind { VggStyle, ResNetStyle };

std::string to_string(BackboneKind kind);
BackboneKind backbone_kind_from_string(const std::string& s);

struct ExtractorConfig {
  BackboneKind kind = BackboneKind::VggStyle;
  int base_width = 64;
  // VGG-style: convolutions per stage. ResNet-style: bottlenecks per stage.
  std::vector<int> blocks{2, 2, 4, 4, 4};
  std::vector<double> tap_weights{0.1, 0.1, 1.0, 1.0, 1.0};
  bool normalize_input = true;
  std::string weights_path;  // empty: fixed-seed random weights
  std::uint64_t seed = 0;

  static ExtractorConfig vgg19();
  static ExtractorConfig resnet50();

  void validate() const;
  bool operator==(const ExtractorConfig&) const = default;
};

// Frozen backbone returning one feature map per tap point.
//   VGG-style:    output of the last convolution of each stage, before its
//                 activation (the layer right before each max-pool).
//   ResNet-style: output of the last bottleneck of each stage, after its
//                 activation.
// Parameter names follow the torchvision layouts so converted pretrained
// weights load by name.
class FeatureExtractorImpl : public torch::nn::Module {
 public:
  explicit FeatureExtractorImpl(const ExtractorConfig& cfg);

  std::vector<torch::Tensor> forward(const torch::Tensor& x);

  const ExtractorConfig& config() const { return cfg_; }
  const std::vector<double>& tap_weights() const { return cfg_.tap_weights; }
  std::size_t num_taps() const { return cfg_.blocks.size(); }
  // (C, H, W) of every tap for an (h, w) input.
  std::vector<std::array<std::int64_t, 3>> tap_shapes(std::int64_t h, std::int64_t w);

  // Copies same-named tensors from a TorchScript archive. Throws on any
  // missing or mis-shaped entry.
  void load_pretrained(const std::string& path);

  // Kept in evaluation mode regardless of requests.
  void train(bool on = true) override;

 private:
  std::vector<torch::Tensor> forward_vgg(const torch::Tensor& x);
  std::vector<torch::Tensor> forward_resnet(const torch::Tensor& x);
  void init_weights();

  ExtractorConfig cfg_;
  torch::nn::Sequential features_{nullptr};
  std::vector<int> vgg_taps_;  // index of the tapped conv inside features_
  torch::nn::Conv2d conv1_{nullptr};
  torch::nn::BatchNorm2d bn1_{nullptr};
  std::vector<torch::nn::Sequential> layers_;
};
TORCH_MODULE(FeatureExtractor);

// Per-pixel BCE of the discriminator, mean-reduced over the map:
// real logits against 1, fake logits against 0.
torch::Tensor discriminator_loss(const torch::Tensor& logits_real, const torch::Tensor& logits_fake);
torch::Tensor total_discriminator_loss(const torch::Tensor& loss_normal, const torch::Tensor& loss_sampled,
                                       const LossWeights& w);
// Non-saturating generator loss: fake logits against 1 on both scales.
torch::Tensor generator_adversarial_loss(const torch::Tensor& logits_fake_normal,
                                         const torch::Tensor& logits_fake_sampled, const LossWeights& w);
torch::Tensor content_loss(const torch::Tensor& sr, const torch::Tensor& hr);
torch::Tensor perceptual_loss(const torch::Tensor& sr, const torch::Tensor& hr, FeatureExtractor& extractor);
// zeta is evaluated on detached values: it rescales the ResNet-style term
// but contributes no gradient of its own.
torch::Tensor dual_perceptual_loss(const torch::Tensor& l_vgg, const torch::Tensor& l_res, const LossWeights& w);
double dual_perceptual_zeta(double l_vgg, double l_res, const LossWeights& w);
torch::Tensor total_generator_loss(const torch::Tensor& content, const torch::Tensor& adversarial,
                                   const torch::Tensor& dual_perceptual, const LossWeights& w);

}  // namespace blindsr
