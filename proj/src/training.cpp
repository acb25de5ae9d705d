#include "blindsr/training.hpp"

#include <chrono>
#include <cmath>
#include <stdexcept>

#include "blindsr/module_utils.hpp"

namespace blindsr {

namespace {

struct Seeds {
  std::uint64_t generator, discriminator, data, torch_global;
};

Seeds derive_seeds(std::uint64_t seed) {
  Rng r(seed);
  Seeds s{};
  s.generator = r.next_u64();
  s.discriminator = r.next_u64();
  s.data = r.next_u64();
  s.torch_global = r.next_u64();
  return s;
}

double elapsed_ms(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
}

template <class F>
void with_prefix(const std::string& prefix, F&& check) {
  try {
    check();
  } catch (const std::invalid_argument& e) {
    throw std::invalid_argument(prefix + e.what());
  }
}

}  // namespace

// Messages carry the key path used by the config file.
void TrainConfig::validate() const {
  with_prefix("train.", [&] {
    if (hr_patch_size < 4 || hr_patch_size % 4 != 0) {
      throw std::invalid_argument("hr_patch_size: must be a positive multiple of 4");
    }
    if (batch_size < 1) throw std::invalid_argument("batch_size: must be positive");
    if (pretrain_iters < 0) throw std::invalid_argument("pretrain_iters: must be non-negative");
    if (gan_iters < 0) throw std::invalid_argument("gan_iters: must be non-negative");
    if (!(pretrain_lr >= 0.0 && std::isfinite(pretrain_lr))) throw std::invalid_argument("pretrain_lr: must be >= 0");
    if (!(gan_lr >= 0.0 && std::isfinite(gan_lr))) throw std::invalid_argument("gan_lr: must be >= 0");
    if (!(ema_decay >= 0.0 && ema_decay <= 1.0)) throw std::invalid_argument("ema_decay: must lie in [0, 1]");
    if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0)) throw std::invalid_argument("adam.beta1: must lie in [0, 1)");
    if (!(adam.beta2 >= 0.0 && adam.beta2 < 1.0)) throw std::invalid_argument("adam.beta2: must lie in [0, 1)");
    if (!(adam.eps > 0.0)) throw std::invalid_argument("adam.eps: must be positive");
    if (log_every < 1) throw std::invalid_argument("log_every: must be positive");
    if (checkpoint_every < 1) throw std::invalid_argument("checkpoint_every: must be positive");
  });
  with_prefix("loss.", [&] { loss.validate(); });
  with_prefix("degradation.", [&] { degradation.validate(); });
  with_prefix("generator.", [&] { generator.validate(); });
  with_prefix("discriminator.", [&] { discriminator.validate(); });
  with_prefix("perceptual.vgg.", [&] { vgg.validate(); });
  with_prefix("perceptual.resnet.", [&] { resnet.validate(); });
}

std::string to_string(Phase p) { return p == Phase::Pretrain ? "pretrain" : "gan"; }

nlohmann::json LogRecord::to_json() const {
  nlohmann::json j;
  j["iteration"] = iteration;
  j["phase"] = to_string(phase);
  for (const auto& [k, v] : losses) j["loss_" + k] = v;
  j["learning_rate"] = learning_rate;
  j["wall_ms"] = wall_ms;
  return j;
}

void ema_update(torch::Tensor& shadow, const torch::Tensor& current, double decay) {
  if (!shadow.sizes().equals(current.sizes())) throw std::invalid_argument("ema_update: shape mismatch");
  torch::NoGradGuard guard;
  shadow.mul_(decay).add_(current, 1.0 - decay);
}

void ema_update(torch::nn::Module& shadow, const torch::nn::Module& current, double decay) {
  if (!(decay >= 0.0 && decay <= 1.0)) throw std::invalid_argument("ema_update: decay must lie in [0, 1]");
  auto sp = shadow.named_parameters();
  auto cp = current.named_parameters();
  if (sp.size() != cp.size()) throw std::invalid_argument("ema_update: parameter count mismatch");
  for (const auto& item : cp) {
    auto* target = sp.find(item.key());
    if (target == nullptr) throw std::invalid_argument("ema_update: missing parameter '" + item.key() + "'");
    if (!target->sizes().equals(item.value().sizes())) {
      throw std::invalid_argument("ema_update: shape mismatch for '" + item.key() + "'");
    }
  }
  for (const auto& item : cp) ema_update(*sp.find(item.key()), item.value(), decay);
  torch::NoGradGuard guard;
  auto sb = shadow.named_buffers();
  for (const auto& item : current.named_buffers()) {
    auto* target = sb.find(item.key());
    if (target == nullptr) throw std::invalid_argument("ema_update: missing buffer '" + item.key() + "'");
    target->copy_(item.value());
  }
}

HrPool load_hr_pool(const std::filesystem::path& dir, std::ostream* warn) {
  HrPool pool;
  for (const auto& path : list_images(dir)) {
    try {
      pool.push_back(load_image(path));
    } catch (const std::exception& e) {
      if (warn != nullptr) *warn << "warning: skipping " << path.string() << ": " << e.what() << "\n";
    }
  }
  return pool;
}

Batch make_batch(const HrPool& pool, const DegradationSpace& space, const TrainConfig& cfg, Rng& rng,
                 std::ostream* warn) {
  const int p = cfg.hr_patch_size;
  std::vector<std::size_t> eligible;
  for (std::size_t i = 0; i < pool.size(); ++i) {
    if (pool[i].size(1) >= p && pool[i].size(2) >= p) {
      eligible.push_back(i);
    } else if (warn != nullptr) {
      *warn << "warning: image " << i << " (" << pool[i].size(1) << "x" << pool[i].size(2)
            << ") is smaller than the " << p << " patch, skipped\n";
    }
  }
  if (eligible.empty()) throw std::runtime_error("make_batch: no image is at least " + std::to_string(p) + " pixels");

  std::vector<torch::Tensor> lrs, hrs;
  for (int b = 0; b < cfg.batch_size; ++b) {
    const auto& img = pool[eligible[rng.uniform_int(0, static_cast<int>(eligible.size()) - 1)]];
    const int top = rng.uniform_int(0, static_cast<int>(img.size(1)) - p);
    const int left = rng.uniform_int(0, static_cast<int>(img.size(2)) - p);
    auto patch = img.slice(1, top, top + p).slice(2, left, left + p);
    if (rng.bernoulli(0.5)) patch = patch.flip({2});
    const int quarter_turns = rng.uniform_int(0, 3);
    if (quarter_turns != 0) patch = torch::rot90(patch, quarter_turns, {1, 2});
    patch = patch.contiguous();
    auto d = degrade(patch, space, rng);
    hrs.push_back(patch);
    lrs.push_back(d.lr);
  }
  return Batch{torch::stack(lrs), torch::stack(hrs)};
}

Trainer::Trainer(const TrainConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  const auto seeds = derive_seeds(cfg_.seed);
  rng_ = Rng(seeds.data);
  torch::manual_seed(seeds.torch_global);
  gen_ = build_generator(cfg_.generator, seeds.generator);
  ema_ = build_generator(cfg_.generator, seeds.generator);
  copy_module_state(*ema_, *gen_);
  set_requires_grad(*ema_, false);
  ema_->eval();
  gen_->train();
  opt_g_ = make_optimizer(*gen_, cfg_.pretrain_lr);
}

std::unique_ptr<torch::optim::Adam> Trainer::make_optimizer(torch::nn::Module& m, double lr) const {
  auto opts = torch::optim::AdamOptions(lr).betas({cfg_.adam.beta1, cfg_.adam.beta2}).eps(cfg_.adam.eps);
  return std::make_unique<torch::optim::Adam>(m.parameters(), opts);
}

Trainer::GanParts Trainer::make_gan_parts() const {
  GanParts parts;
  parts.disc = MultiScaleDiscriminator(cfg_.discriminator, derive_seeds(cfg_.seed).discriminator);
  parts.disc->train();
  parts.vgg = FeatureExtractor(cfg_.vgg);
  parts.resnet = FeatureExtractor(cfg_.resnet);
  parts.opt_d = make_optimizer(*parts.disc, cfg_.gan_lr);
  return parts;
}

void Trainer::start_gan_phase() {
  if (phase_ == Phase::Gan) return;
  auto parts = make_gan_parts();
  disc_ = parts.disc;
  vgg_ = parts.vgg;
  resnet_ = parts.resnet;
  opt_d_ = std::move(parts.opt_d);
  opt_g_ = make_optimizer(*gen_, cfg_.gan_lr);
  phase_ = Phase::Gan;
}

MultiScaleDiscriminator& Trainer::discriminator() {
  if (!disc_) throw std::logic_error("discriminator exists only in the gan phase");
  return disc_;
}

Batch Trainer::next_batch(const HrPool& pool, std::ostream* warn) {
  return make_batch(pool, cfg_.degradation, cfg_, rng_, warn);
}

void Trainer::check_finite(const std::map<std::string, double>& losses) const {
  for (const auto& [name, v] : losses) {
    if (!std::isfinite(v)) {
      throw std::runtime_error("non-finite loss term '" + name + "' (" + std::to_string(v) + ") at iteration " +
                               std::to_string(iteration_ + 1));
    }
  }
}

LogRecord Trainer::pretrain_step(const Batch& batch) {
  if (phase_ != Phase::Pretrain) throw std::logic_error("pretrain_step called outside the pretrain phase");
  const auto t0 = std::chrono::steady_clock::now();
  gen_->train();
  auto sr = gen_->forward(batch.lr);
  auto loss = content_loss(sr, batch.hr);
  std::map<std::string, double> values{{"content", loss.item<double>()}};
  check_finite(values);
  opt_g_->zero_grad();
  loss.backward();
  opt_g_->step();
  ema_update(*ema_, *gen_, cfg_.ema_decay);
  ++iteration_;
  return LogRecord{iteration_, phase_, values, cfg_.pretrain_lr, elapsed_ms(t0)};
}

LogRecord Trainer::gan_step(const Batch& batch) {
  if (phase_ != Phase::Gan) throw std::logic_error("gan_step called outside the gan phase");
  const auto t0 = std::chrono::steady_clock::now();
  const auto& w = cfg_.loss;
  gen_->train();
  disc_->train();
  auto sr = gen_->forward(batch.lr);

  // Discriminator step on detached generator output.
  set_requires_grad(*disc_, true);
  auto real = disc_->forward(batch.hr);
  auto fake = disc_->forward(sr.detach());
  auto d_normal = discriminator_loss(real.normal, fake.normal);
  auto d_sampled = discriminator_loss(real.sampled, fake.sampled);
  auto d_total = total_discriminator_loss(d_normal, d_sampled, w);
  std::map<std::string, double> values{{"d_normal", d_normal.item<double>()},
                                       {"d_sampled", d_sampled.item<double>()},
                                       {"d_total", d_total.item<double>()}};
  check_finite(values);
  opt_d_->zero_grad();
  d_total.backward();
  opt_d_->step();

  // Generator step.
  set_requires_grad(*disc_, false);
  auto g_logits = disc_->forward(detach_discriminators_ ? sr.detach() : sr);
  auto adversarial = generator_adversarial_loss(g_logits.normal, g_logits.sampled, w);
  auto content = content_loss(sr, batch.hr);
  auto l_vgg = perceptual_loss(sr, batch.hr, vgg_);
  auto l_res = perceptual_loss(sr, batch.hr, resnet_);
  auto dual = dual_perceptual_loss(l_vgg, l_res, w);
  auto total = total_generator_loss(content, adversarial, dual, w);
  values["content"] = content.item<double>();
  values["adversarial"] = adversarial.item<double>();
  values["perceptual_vgg"] = l_vgg.item<double>();
  values["perceptual_resnet"] = l_res.item<double>();
  values["dual_perceptual"] = dual.item<double>();
  values["g_total"] = total.item<double>();
  check_finite(values);
  opt_g_->zero_grad();
  total.backward();
  opt_g_->step();
  ema_update(*ema_, *gen_, cfg_.ema_decay);
  ++iteration_;
  return LogRecord{iteration_, phase_, values, cfg_.gan_lr, elapsed_ms(t0)};
}

}  // namespace blindsr
