#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "blindsr/degradation.hpp"
#include "blindsr/discriminator.hpp"
#include "blindsr/generator.hpp"
#include "blindsr/image.hpp"
#include "blindsr/losses.hpp"
#include "blindsr/random.hpp"

namespace blindsr {

struct AdamSettings {
  double beta1 = 0.9;
  double beta2 = 0.99;
  double eps = 1e-8;
  bool operator==(const AdamSettings&) const = default;
};

// Desk-scale defaults. The reference schedule (patch 256, batch 32, 2000K +
// 1000K iterations) is reachable purely through configuration.
struct TrainConfig {
  int hr_patch_size = 128;
  int batch_size = 4;
  std::int64_t pretrain_iters = 2000;
  std::int64_t gan_iters = 1000;
  double pretrain_lr = 2e-4;
  double gan_lr = 1e-4;
  double ema_decay = 0.999;
  AdamSettings adam;
  std::uint64_t seed = 0;
  std::int64_t log_every = 10;
  std::int64_t checkpoint_every = 500;

  LossWeights loss;
  DegradationSpace degradation = DegradationSpace::defaults();
  GeneratorConfig generator = GeneratorConfig::star();
  DiscriminatorConfig discriminator;
  ExtractorConfig vgg = ExtractorConfig::vgg19();
  ExtractorConfig resnet = ExtractorConfig::resnet50();

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

enum class Phase { Pretrain = 0, Gan = 1 };
std::string to_string(Phase p);

struct Batch {
  torch::Tensor lr;  // (N, 3, p/4, p/4)
  torch::Tensor hr;  // (N, 3, p, p)
};

// Loss values are the detached scalars of one step, keyed by term name.
struct LogRecord {
  std::int64_t iteration = 0;
  Phase phase = Phase::Pretrain;
  std::map<std::string, double> losses;
  double learning_rate = 0.0;
  double wall_ms = 0.0;

  nlohmann::json to_json() const;
};

// shadow <- decay * shadow + (1 - decay) * current, parameter by parameter.
// Buffers are copied. Throws std::invalid_argument on layout mismatch.
void ema_update(torch::nn::Module& shadow, const torch::nn::Module& current, double decay);
void ema_update(torch::Tensor& shadow, const torch::Tensor& current, double decay);

using HrPool = std::vector<ImageTensor>;

// Every readable image under `dir`. Unreadable files are reported to `warn`.
HrPool load_hr_pool(const std::filesystem::path& dir, std::ostream* warn = nullptr);

// Random patches with flip/rot90 augmentation, each degraded to quarter size.
// Images smaller than the patch are skipped (with a warning); an empty
// effective pool throws std::runtime_error.
Batch make_batch(const HrPool& pool, const DegradationSpace& space, const TrainConfig& cfg, Rng& rng,
                 std::ostream* warn = nullptr);

// Summary stored next to the weights; enough to rebuild the generator.
struct CheckpointInfo {
  std::int64_t format_version = 0;
  std::int64_t iteration = 0;
  Phase phase = Phase::Pretrain;
  TrainConfig config;
};

inline constexpr std::int64_t kCheckpointFormatVersion = 1;

CheckpointInfo read_checkpoint_info(const std::filesystem::path& path);
// Rebuilds the generator stored in a checkpoint, EMA weights by default.
Generator load_generator(const std::filesystem::path& path, bool use_ema = true);

// Owns all mutable training state. Discriminators and feature extractors are
// created only when the GAN phase starts, so the pretrain phase never touches
// them.
class Trainer {
 public:
  explicit Trainer(const TrainConfig& cfg);

  LogRecord pretrain_step(const Batch& batch);
  LogRecord gan_step(const Batch& batch);
  // Builds discriminators/extractors and resets the generator optimizer to gan_lr.
  void start_gan_phase();

  // Draws the next batch from the trainer's own data stream.
  Batch next_batch(const HrPool& pool, std::ostream* warn = nullptr);

  void save_checkpoint(const std::filesystem::path& path) const;
  // All-or-nothing: on any error the trainer is left untouched.
  void load_checkpoint(const std::filesystem::path& path);

  // Routes adversarial gradients through detached discriminator inputs.
  void set_detach_discriminators(bool on) { detach_discriminators_ = on; }

  const TrainConfig& config() const { return cfg_; }
  Phase phase() const { return phase_; }
  std::int64_t iteration() const { return iteration_; }
  bool gan_initialized() const { return static_cast<bool>(disc_); }
  Generator& generator() { return gen_; }
  Generator& ema() { return ema_; }
  MultiScaleDiscriminator& discriminator();
  Rng& data_rng() { return rng_; }

 private:
  struct GanParts {
    MultiScaleDiscriminator disc{nullptr};
    FeatureExtractor vgg{nullptr};
    FeatureExtractor resnet{nullptr};
    std::unique_ptr<torch::optim::Adam> opt_d;
  };
  GanParts make_gan_parts() const;
  std::unique_ptr<torch::optim::Adam> make_optimizer(torch::nn::Module& m, double lr) const;
  void check_finite(const std::map<std::string, double>& losses) const;

  TrainConfig cfg_;
  Phase phase_ = Phase::Pretrain;
  std::int64_t iteration_ = 0;
  Rng rng_;
  Generator gen_{nullptr};
  Generator ema_{nullptr};
  std::unique_ptr<torch::optim::Adam> opt_g_;
  MultiScaleDiscriminator disc_{nullptr};
  FeatureExtractor vgg_{nullptr};
  FeatureExtractor resnet_{nullptr};
  std::unique_ptr<torch::optim::Adam> opt_d_;
  bool detach_discriminators_ = false;
};

}  // namespace blindsr
