#include <filesystem>
#include <stdexcept>

#include <ATen/CPUGeneratorImpl.h>

#include "blindsr/config.hpp"
#include "blindsr/module_utils.hpp"
#include "blindsr/training.hpp"

namespace blindsr {

namespace {

using torch::serialize::InputArchive;
using torch::serialize::OutputArchive;

[[noreturn]] void corrupt(const std::string& field, const std::string& what) {
  throw std::runtime_error("checkpoint field '" + field + "': " + what);
}

void open_archive(InputArchive& ar, const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw std::runtime_error("checkpoint not found: " + path.string());
  try {
    ar.load_from(path.string());
  } catch (const c10::Error&) {
    throw std::runtime_error("checkpoint " + path.string() + " is not a readable archive");
  }
}

torch::Tensor read_tensor(InputArchive& ar, const std::string& key) {
  torch::Tensor t;
  if (!ar.try_read(key, t)) corrupt(key, "missing");
  return t;
}

std::int64_t read_int(InputArchive& ar, const std::string& key) {
  auto t = read_tensor(ar, key);
  if (t.numel() != 1) corrupt(key, "expected a scalar");
  return t.item<std::int64_t>();
}

std::string read_string(InputArchive& ar, const std::string& key) {
  c10::IValue v;
  if (!ar.try_read(key, v)) corrupt(key, "missing");
  if (!v.isString()) corrupt(key, "expected a string");
  return v.toStringRef();
}

void read_nested(InputArchive& ar, const std::string& key, InputArchive& out) {
  if (!ar.try_read(key, out)) corrupt(key, "missing");
}

template <class Loadable>
void load_into(InputArchive& ar, const std::string& key, Loadable& target) {
  InputArchive sub;
  read_nested(ar, key, sub);
  try {
    target.load(sub);
  } catch (const c10::Error& e) {
    corrupt(key, "does not match the configured layout");
  }
}

CheckpointInfo read_header(InputArchive& ar) {
  CheckpointInfo info;
  info.format_version = read_int(ar, "format_version");
  if (info.format_version != kCheckpointFormatVersion) {
    corrupt("format_version", "version " + std::to_string(info.format_version) + " is not supported (expected " +
                                  std::to_string(kCheckpointFormatVersion) + ")");
  }
  info.iteration = read_int(ar, "iteration");
  const auto phase = read_int(ar, "phase");
  if (phase != 0 && phase != 1) corrupt("phase", "unknown phase " + std::to_string(phase));
  info.phase = static_cast<Phase>(phase);
  try {
    info.config = train_config_from_json(nlohmann::json::parse(read_string(ar, "config")));
  } catch (const nlohmann::json::exception& e) {
    corrupt("config", e.what());
  } catch (const std::invalid_argument& e) {
    corrupt("config", e.what());
  }
  return info;
}

}  // namespace

void Trainer::save_checkpoint(const std::filesystem::path& path) const {
  OutputArchive ar;
  ar.write("format_version", torch::tensor(kCheckpointFormatVersion));
  ar.write("iteration", torch::tensor(iteration_));
  ar.write("phase", torch::tensor(static_cast<std::int64_t>(phase_)));
  ar.write("config", c10::IValue(train_config_to_json(cfg_).dump()));
  OutputArchive g, e, og;
  gen_->save(g);
  ema_->save(e);
  opt_g_->save(og);
  ar.write("generator", g);
  ar.write("ema", e);
  ar.write("optimizer_g", og);
  if (phase_ == Phase::Gan) {
    OutputArchive d, od;
    disc_->save(d);
    opt_d_->save(od);
    ar.write("discriminator", d);
    ar.write("optimizer_d", od);
  }
  ar.write("data_rng", c10::IValue(rng_.state()));
  ar.write("torch_rng", at::detail::getDefaultCPUGenerator().get_state());
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  ar.save_to(path.string());
}

void Trainer::load_checkpoint(const std::filesystem::path& path) {
  InputArchive ar;
  open_archive(ar, path);
  const auto info = read_header(ar);
  if (info.config.generator.variant != cfg_.generator.variant) {
    corrupt("config", "generator variant '" + to_string(info.config.generator.variant) +
                          "' does not match the configured '" + to_string(cfg_.generator.variant) + "'");
  }
  if (!(info.config.generator == cfg_.generator)) corrupt("config", "generator settings differ from the configuration");
  if (info.phase == Phase::Gan && !(info.config.discriminator == cfg_.discriminator)) {
    corrupt("config", "discriminator settings differ from the configuration");
  }

  // Everything is staged in fresh objects and committed only at the end.
  auto gen = build_generator(cfg_.generator, 0);
  auto ema = build_generator(cfg_.generator, 0);
  load_into(ar, "generator", *gen);
  load_into(ar, "ema", *ema);
  auto opt_g = make_optimizer(*gen, info.phase == Phase::Pretrain ? cfg_.pretrain_lr : cfg_.gan_lr);
  load_into(ar, "optimizer_g", *opt_g);
  GanParts parts;
  if (info.phase == Phase::Gan) {
    parts = make_gan_parts();
    load_into(ar, "discriminator", *parts.disc);
    load_into(ar, "optimizer_d", *parts.opt_d);
  }
  Rng rng;
  const auto rng_state = read_string(ar, "data_rng");
  try {
    rng.set_state(rng_state);
  } catch (const std::runtime_error& e) {
    corrupt("data_rng", e.what());
  }
  auto torch_rng = read_tensor(ar, "torch_rng");
  {
    // Validate the generator state on a scratch generator before touching the global one.
    auto scratch = make_torch_generator(0);
    try {
      scratch.set_state(torch_rng);
    } catch (const c10::Error&) {
      corrupt("torch_rng", "invalid generator state");
    }
  }

  set_requires_grad(*ema, false);
  ema->eval();
  gen->train();
  gen_ = gen;
  ema_ = ema;
  opt_g_ = std::move(opt_g);
  disc_ = parts.disc;
  vgg_ = parts.vgg;
  resnet_ = parts.resnet;
  opt_d_ = std::move(parts.opt_d);
  rng_ = rng;
  auto global = at::detail::getDefaultCPUGenerator();  // shared handle
  global.set_state(torch_rng);
  iteration_ = info.iteration;
  phase_ = info.phase;
}

CheckpointInfo read_checkpoint_info(const std::filesystem::path& path) {
  InputArchive ar;
  open_archive(ar, path);
  return read_header(ar);
}

Generator load_generator(const std::filesystem::path& path, bool use_ema) {
  InputArchive ar;
  open_archive(ar, path);
  const auto info = read_header(ar);
  auto gen = build_generator(info.config.generator, 0);
  load_into(ar, use_ema ? "ema" : "generator", *gen);
  set_requires_grad(*gen, false);
  gen->eval();
  return gen;
}

}  // namespace blindsr
