#pragma once

#include "blindsr/training.hpp"

namespace blindsr::testing {

// Small networks so whole training runs fit in test time.
inline TrainConfig tiny_train_config(std::uint64_t seed = 0) {
  TrainConfig cfg;
  cfg.seed = seed;
  cfg.hr_patch_size = 32;
  cfg.batch_size = 2;
  cfg.generator.base_features = 8;
  cfg.generator.num_blocks = 2;
  cfg.generator.growth_channels = 4;
  cfg.discriminator.base_features = 4;
  cfg.discriminator.depth = 2;
  cfg.vgg.base_width = 2;
  cfg.vgg.blocks = {1, 1};
  cfg.vgg.tap_weights = {1.0, 1.0};
  cfg.resnet.base_width = 2;
  cfg.resnet.blocks = {1, 1};
  cfg.resnet.tap_weights = {1.0, 1.0};
  return cfg;
}

inline HrPool synthetic_pool(int count, int size, std::uint64_t seed) {
  auto gen = make_torch_generator(seed);
  HrPool pool;
  for (int i = 0; i < count; ++i) {
    // Smooth random content: upsampled coarse noise looks more like an image than white noise.
    auto coarse = torch::rand({1, 3, size / 8, size / 8}, gen);
    auto img = torch::nn::functional::interpolate(
        coarse, torch::nn::functional::InterpolateFuncOptions()
                    .size(std::vector<std::int64_t>{size, size})
                    .mode(torch::kBilinear)
                    .align_corners(false));
    pool.push_back(img[0].clamp(0.0, 1.0).contiguous());
  }
  return pool;
}

inline bool same_parameters(const torch::nn::Module& a, const torch::nn::Module& b) {
  auto pa = a.named_parameters();
  auto pb = b.named_parameters();
  if (pa.size() != pb.size()) return false;
  for (const auto& item : pa) {
    const auto* other = pb.find(item.key());
    if (other == nullptr || !torch::equal(item.value(), *other)) return false;
  }
  return true;
}

}  // namespace blindsr::testing
