#include <cmath>
#include <stdexcept>

#include <torch/script.h>

#include "blindsr/losses.hpp"
#include "blindsr/random.hpp"

namespace blindsr {

namespace {

constexpr int kExpansion = 4;

torch::nn::Conv2d make_conv(int in, int out, int k, int stride, int pad, bool bias) {
  return torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, k).stride(stride).padding(pad).bias(bias));
}

struct BottleneckImpl : torch::nn::Module {
  BottleneckImpl(int in, int width, int stride) {
    conv1 = register_module("conv1", make_conv(in, width, 1, 1, 0, false));
    bn1 = register_module("bn1", torch::nn::BatchNorm2d(width));
    conv2 = register_module("conv2", make_conv(width, width, 3, stride, 1, false));
    bn2 = register_module("bn2", torch::nn::BatchNorm2d(width));
    conv3 = register_module("conv3", make_conv(width, width * kExpansion, 1, 1, 0, false));
    bn3 = register_module("bn3", torch::nn::BatchNorm2d(width * kExpansion));
    if (stride != 1 || in != width * kExpansion) {
      downsample = register_module("downsample", torch::nn::Sequential(make_conv(in, width * kExpansion, 1, stride, 0, false),
                                                                       torch::nn::BatchNorm2d(width * kExpansion)));
    }
  }

  torch::Tensor forward(const torch::Tensor& x) {
    auto out = torch::relu(bn1(conv1(x)));
    out = torch::relu(bn2(conv2(out)));
    out = bn3(conv3(out));
    auto identity = downsample ? downsample->forward(x) : x;
    return torch::relu(out + identity);
  }

  torch::nn::Conv2d conv1{nullptr}, conv2{nullptr}, conv3{nullptr};
  torch::nn::BatchNorm2d bn1{nullptr}, bn2{nullptr}, bn3{nullptr};
  torch::nn::Sequential downsample{nullptr};
};
TORCH_MODULE(Bottleneck);

torch::Tensor imagenet_normalize(const torch::Tensor& x) {
  auto mean = torch::tensor({0.485, 0.456, 0.406}, x.options()).view({1, 3, 1, 1});
  auto std = torch::tensor({0.229, 0.224, 0.225}, x.options()).view({1, 3, 1, 1});
  return (x - mean) / std;
}

}  // namespace

std::string to_string(BackboneKind kind) { return kind == BackboneKind::VggStyle ? "vgg" : "resnet"; }

BackboneKind backbone_kind_from_string(const std::string& s) {
  if (s == "vgg") return BackboneKind::VggStyle;
  if (s == "resnet") return BackboneKind::ResNetStyle;
  throw std::invalid_argument("unknown backbone kind '" + s + "' (expected vgg or resnet)");
}

ExtractorConfig ExtractorConfig::vgg19() { return ExtractorConfig{}; }

ExtractorConfig ExtractorConfig::resnet50() {
  ExtractorConfig cfg;
  cfg.kind = BackboneKind::ResNetStyle;
  cfg.blocks = {3, 4, 6, 3};
  cfg.tap_weights = {1.0, 1.0, 1.0, 1.0};
  cfg.seed = 1;
  return cfg;
}

void ExtractorConfig::validate() const {
  if (base_width < 1) throw std::invalid_argument("base_width: must be positive");
  if (blocks.empty()) throw std::invalid_argument("blocks: at least one stage is required");
  for (int b : blocks) {
    if (b < 1) throw std::invalid_argument("blocks: every stage needs at least one layer");
  }
  if (tap_weights.size() != blocks.size()) throw std::invalid_argument("tap_weights: one weight per stage is required");
  for (double w : tap_weights) {
    if (!std::isfinite(w) || w < 0.0) throw std::invalid_argument("tap_weights: must be finite and non-negative");
  }
}

FeatureExtractorImpl::FeatureExtractorImpl(const ExtractorConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  const int in_channels = 3;
  if (cfg_.kind == BackboneKind::VggStyle) {
    // Same indexing as torchvision's vgg.features: conv, relu, ..., maxpool.
    features_ = torch::nn::Sequential();
    int in = in_channels;
    int index = 0;
    for (std::size_t s = 0; s < cfg_.blocks.size(); ++s) {
      const int width = cfg_.base_width * (1 << std::min<std::size_t>(s, 3));
      for (int j = 0; j < cfg_.blocks[s]; ++j) {
        features_->push_back(make_conv(in, width, 3, 1, 1, true));
        if (j == cfg_.blocks[s] - 1) vgg_taps_.push_back(index);
        features_->push_back(torch::nn::ReLU());
        index += 2;
        in = width;
      }
      if (s + 1 < cfg_.blocks.size()) {
        features_->push_back(torch::nn::MaxPool2d(torch::nn::MaxPool2dOptions(2).stride(2)));
        ++index;
      }
    }
    register_module("features", features_);
  } else {
    const int w0 = cfg_.base_width;
    conv1_ = register_module("conv1", make_conv(in_channels, w0, 7, 2, 3, false));
    bn1_ = register_module("bn1", torch::nn::BatchNorm2d(w0));
    int in = w0;
    for (std::size_t s = 0; s < cfg_.blocks.size(); ++s) {
      const int width = w0 << s;
      torch::nn::Sequential layer;
      for (int j = 0; j < cfg_.blocks[s]; ++j) {
        const int stride = (s > 0 && j == 0) ? 2 : 1;
        layer->push_back(Bottleneck(in, width, stride));
        in = width * kExpansion;
      }
      layers_.push_back(register_module("layer" + std::to_string(s + 1), layer));
    }
  }
  init_weights();
  if (!cfg_.weights_path.empty()) load_pretrained(cfg_.weights_path);
  for (auto& p : parameters()) p.set_requires_grad(false);
  train(false);
}

void FeatureExtractorImpl::train(bool /*on*/) { torch::nn::Module::train(false); }

void FeatureExtractorImpl::init_weights() {
  torch::NoGradGuard guard;
  auto gen = make_torch_generator(cfg_.seed);
  for (const auto& item : named_modules("", /*include_self=*/false)) {
    if (auto* c = item.value()->as<torch::nn::Conv2d>()) {
      const auto& w = c->weight;
      const double fan_in = static_cast<double>(w.size(1) * w.size(2) * w.size(3));
      w.copy_(torch::randn(w.sizes(), gen, w.options()) * std::sqrt(2.0 / fan_in));
      if (c->bias.defined()) c->bias.zero_();
    }
  }
}

std::vector<torch::Tensor> FeatureExtractorImpl::forward(const torch::Tensor& x) {
  if (x.dim() != 4 || x.size(1) != 3) throw std::invalid_argument("feature extractor: expected (N, 3, H, W) input");
  auto in = cfg_.normalize_input ? imagenet_normalize(x) : x;
  return cfg_.kind == BackboneKind::VggStyle ? forward_vgg(in) : forward_resnet(in);
}

std::vector<torch::Tensor> FeatureExtractorImpl::forward_vgg(const torch::Tensor& x) {
  std::vector<torch::Tensor> taps;
  auto h = x;
  std::size_t next = 0;
  for (std::size_t i = 0; i < features_->size() && next < vgg_taps_.size(); ++i) {
    h = features_[i]->as<torch::nn::Conv2d>() ? features_[i]->as<torch::nn::Conv2d>()->forward(h)
        : features_[i]->as<torch::nn::ReLU>() ? features_[i]->as<torch::nn::ReLU>()->forward(h)
                                               : features_[i]->as<torch::nn::MaxPool2d>()->forward(h);
    if (static_cast<int>(i) == vgg_taps_[next]) {
      taps.push_back(h);
      ++next;
    }
  }
  return taps;
}

std::vector<torch::Tensor> FeatureExtractorImpl::forward_resnet(const torch::Tensor& x) {
  std::vector<torch::Tensor> taps;
  auto h = torch::relu(bn1_(conv1_(x)));
  h = torch::max_pool2d(h, 3, 2, 1);
  for (auto& layer : layers_) {
    h = layer->forward(h);
    taps.push_back(h);
  }
  return taps;
}

std::vector<std::array<std::int64_t, 3>> FeatureExtractorImpl::tap_shapes(std::int64_t h, std::int64_t w) {
  torch::NoGradGuard guard;
  auto probe = torch::zeros({1, 3, h, w}, parameters().front().options());
  std::vector<std::array<std::int64_t, 3>> shapes;
  for (const auto& t : forward(probe)) shapes.push_back({t.size(1), t.size(2), t.size(3)});
  return shapes;
}

void FeatureExtractorImpl::load_pretrained(const std::string& path) {
  torch::jit::script::Module src;
  try {
    src = torch::jit::load(path);
  } catch (const c10::Error& e) {
    throw std::runtime_error("cannot load backbone weights from " + path);
  }
  std::unordered_map<std::string, torch::Tensor> available;
  for (const auto& p : src.named_parameters()) available[p.name] = p.value;
  for (const auto& b : src.named_buffers()) available[b.name] = b.value;

  torch::NoGradGuard guard;
  auto assign = [&](const std::string& name, torch::Tensor& dst) {
    auto it = available.find(name);
    if (it == available.end()) throw std::runtime_error("backbone weights: missing tensor '" + name + "'");
    if (!it->second.sizes().equals(dst.sizes())) {
      throw std::runtime_error("backbone weights: shape mismatch for '" + name + "'");
    }
    dst.copy_(it->second);
  };
  for (auto& p : named_parameters()) assign(p.key(), p.value());
  for (auto& b : named_buffers()) {
    if (b.key().find("num_batches_tracked") != std::string::npos) continue;
    assign(b.key(), b.value());
  }
}

}  // namespace blindsr
