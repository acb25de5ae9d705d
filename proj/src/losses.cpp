#include <cmath>
#include <stdexcept>

#include "blindsr/losses.hpp"

namespace blindsr {

namespace {

void check_same_shape(const torch::Tensor& a, const torch::Tensor& b, const char* who) {
  if (!a.sizes().equals(b.sizes())) {
    throw std::invalid_argument(std::string(who) + ": shape mismatch");
  }
}

// BCE of sigmoid(logits) against a constant target, written with softplus so
// large logits stay finite: -log s(x) = softplus(-x), -log(1 - s(x)) = softplus(x).
torch::Tensor bce_with_logits(const torch::Tensor& logits, bool target_one) {
  return torch::softplus(target_one ? -logits : logits).mean();
}

}  // namespace

void LossWeights::validate() const {
  const double all[] = {lambda_content, eta_adversarial, gamma_perceptual, lambda1, lambda2, mu, c};
  const char* names[] = {"lambda_content", "eta_adversarial", "gamma_perceptual", "lambda1", "lambda2", "mu", "c"};
  for (int i = 0; i < 7; ++i) {
    if (!std::isfinite(all[i])) throw std::invalid_argument(std::string(names[i]) + ": must be finite");
  }
  if (mu == 0.0) throw std::invalid_argument("mu: must be nonzero");
  if (c <= 0.0) throw std::invalid_argument("c: must be positive");
}

torch::Tensor discriminator_loss(const torch::Tensor& logits_real, const torch::Tensor& logits_fake) {
  check_same_shape(logits_real, logits_fake, "discriminator_loss");
  return bce_with_logits(logits_real, true) + bce_with_logits(logits_fake, false);
}

torch::Tensor total_discriminator_loss(const torch::Tensor& loss_normal, const torch::Tensor& loss_sampled,
                                       const LossWeights& w) {
  return w.lambda1 * loss_normal + w.lambda2 * loss_sampled;
}

torch::Tensor generator_adversarial_loss(const torch::Tensor& logits_fake_normal,
                                         const torch::Tensor& logits_fake_sampled, const LossWeights& w) {
  return w.lambda1 * bce_with_logits(logits_fake_normal, true) + w.lambda2 * bce_with_logits(logits_fake_sampled, true);
}

torch::Tensor content_loss(const torch::Tensor& sr, const torch::Tensor& hr) {
  check_same_shape(sr, hr, "content_loss");
  return (sr - hr).abs().mean();
}

torch::Tensor perceptual_loss(const torch::Tensor& sr, const torch::Tensor& hr, FeatureExtractor& extractor) {
  check_same_shape(sr, hr, "perceptual_loss");
  auto fs = extractor->forward(sr);
  auto fh = extractor->forward(hr);
  const auto& weights = extractor->tap_weights();
  auto total = torch::zeros({}, sr.options());
  for (std::size_t i = 0; i < fs.size(); ++i) {
    if (weights[i] == 0.0) continue;
    total = total + weights[i] * (fs[i] - fh[i]).abs().mean();
  }
  return total;
}

double dual_perceptual_zeta(double l_vgg, double l_res, const LossWeights& w) { return (l_vgg + w.c) / (l_res + w.c); }

torch::Tensor dual_perceptual_loss(const torch::Tensor& l_vgg, const torch::Tensor& l_res, const LossWeights& w) {
  auto zeta = (l_vgg.detach() + w.c) / (l_res.detach() + w.c);
  return l_vgg + zeta * l_res / w.mu;
}

torch::Tensor total_generator_loss(const torch::Tensor& content, const torch::Tensor& adversarial,
                                   const torch::Tensor& dual_perceptual, const LossWeights& w) {
  return w.lambda_content * content + w.eta_adversarial * adversarial + w.gamma_perceptual * dual_perceptual;
}

}  // namespace blindsr
