#include "blindsr/cli.hpp"

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "blindsr/config.hpp"
#include "blindsr/evaluation.hpp"
#include "blindsr/training.hpp"

namespace blindsr {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

// Flags shared by every subcommand that reads the config file.
struct CommonOptions {
  std::string config_path;
  std::optional<std::string> out_dir;
  std::optional<std::uint64_t> seed;
};

struct TrainOverrides {
  std::optional<int> batch_size;
  std::optional<int> patch_size;
  std::optional<std::int64_t> pretrain_iters;
  std::optional<std::int64_t> gan_iters;
  std::optional<std::string> variant;
  std::optional<double> dropout;
};

class Logger {
 public:
  explicit Logger(std::ostream& out) : out_(out) {}
  void event(const std::string& name, json fields = json::object()) {
    fields["event"] = name;
    out_ << fields.dump() << '\n';
    out_.flush();
  }

 private:
  std::ostream& out_;
};

void add_common(CLI::App* cmd, CommonOptions& o) {
  cmd->add_option("--config", o.config_path, "JSON config file (defaults apply to omitted keys)");
  cmd->add_option("--out-dir", o.out_dir, "output directory (overrides BLINDSR_OUT_DIR and the config)");
  cmd->add_option("--seed", o.seed, "random seed (overrides train.seed)");
}

// defaults < config file < environment < flags
AppConfig resolve_config(const CommonOptions& o, const TrainOverrides& t) {
  AppConfig cfg;
  if (!o.config_path.empty()) cfg = load_app_config(o.config_path);
  if (const char* env = std::getenv("BLINDSR_OUT_DIR"); env != nullptr && *env != '\0') cfg.paths.out_dir = env;
  if (o.out_dir) cfg.paths.out_dir = *o.out_dir;
  if (o.seed) cfg.train.seed = *o.seed;
  if (t.batch_size) cfg.train.batch_size = *t.batch_size;
  if (t.patch_size) cfg.train.hr_patch_size = *t.patch_size;
  if (t.pretrain_iters) cfg.train.pretrain_iters = *t.pretrain_iters;
  if (t.gan_iters) cfg.train.gan_iters = *t.gan_iters;
  if (t.variant) {
    try {
      const auto v = generator_variant_from_string(*t.variant);
      if (v != cfg.train.generator.variant) {
        auto preset = v == GeneratorVariant::Star ? GeneratorConfig::star() : GeneratorConfig::lite();
        preset.dropout_prob = cfg.train.generator.dropout_prob;
        cfg.train.generator = preset;
      }
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string("--variant: ") + e.what());
    }
  }
  if (t.dropout) cfg.train.generator.dropout_prob = *t.dropout;
  cfg.validate();
  return cfg;
}

std::string iteration_name(std::int64_t it) {
  std::string digits = std::to_string(it);
  return "iter_" + std::string(digits.size() < 8 ? 8 - digits.size() : 0, '0') + digits + ".pt";
}

// Writes `count` LR/HR pairs, cycling over the HR files (all files once when
// count is 0). Repeated files get a numeric suffix.
int cmd_synthesize(const AppConfig& cfg, const fs::path& hr_dir, int count, Logger& log, std::ostream& err) {
  const auto files = list_images(hr_dir);
  if (files.empty()) throw std::runtime_error("no images found in " + hr_dir.string());
  const fs::path out = cfg.paths.out_dir;
  const std::size_t n = count > 0 ? static_cast<std::size_t>(count) : files.size();
  Rng rng(cfg.train.seed);
  int written = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& f = files[i % files.size()];
    ImageTensor hr;
    try {
      hr = load_image(f);
    } catch (const std::exception& e) {
      err << "warning: " << e.what() << "\n";
      continue;
    }
    const auto h = hr.size(1) / 4 * 4;
    const auto w = hr.size(2) / 4 * 4;
    if (h == 0 || w == 0) {
      err << "warning: " << f.string() << " is smaller than 4x4, skipped\n";
      continue;
    }
    hr = hr.slice(1, 0, h).slice(2, 0, w).contiguous();
    auto d = degrade(hr, cfg.train.degradation, rng);
    auto stem = f.stem().string();
    if (n > files.size()) stem += "_" + std::to_string(i / files.size());
    save_png(out / "hr" / (stem + ".png"), hr);
    save_png(out / "lr" / (stem + ".png"), d.lr);
    fs::create_directories(out / "recipes");
    std::ofstream(out / "recipes" / (stem + ".json")) << recipe_to_json(d.recipe).dump(2) << '\n';
    log.event("synthesized", {{"file", f.filename().string()}, {"output", stem + ".png"},
                              {"level", d.recipe.level_index + 1}, {"seed", d.recipe.seed}});
    ++written;
  }
  err << "synthesized " << written << " LR/HR pairs into " << out.string() << "\n";
  return kExitOk;
}

int cmd_train(const AppConfig& cfg, const fs::path& hr_dir, const std::string& resume, Logger& log,
              std::ostream& err) {
  const auto pool = load_hr_pool(hr_dir, &err);
  if (pool.empty()) throw std::runtime_error("no readable images in " + hr_dir.string());
  Trainer trainer(cfg.train);
  if (!resume.empty()) {
    trainer.load_checkpoint(resume);
    log.event("resumed", {{"checkpoint", resume}, {"iteration", trainer.iteration()}});
  }
  const fs::path ckpt_dir = fs::path(cfg.paths.out_dir) / "checkpoints";
  const auto& t = cfg.train;
  const auto total = t.pretrain_iters + t.gan_iters;
  const auto t0 = std::chrono::steady_clock::now();
  while (trainer.iteration() < total) {
    if (trainer.iteration() >= t.pretrain_iters && trainer.phase() == Phase::Pretrain) {
      trainer.start_gan_phase();
      log.event("phase", {{"phase", "gan"}, {"iteration", trainer.iteration()}});
    }
    auto batch = trainer.next_batch(pool, &err);
    auto rec = trainer.phase() == Phase::Pretrain ? trainer.pretrain_step(batch) : trainer.gan_step(batch);
    if (rec.iteration % t.log_every == 0 || rec.iteration == total) {
      auto j = rec.to_json();
      j["elapsed_s"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      log.event("train", j);
    }
    if (rec.iteration % t.checkpoint_every == 0) {
      const auto path = ckpt_dir / iteration_name(rec.iteration);
      trainer.save_checkpoint(path);
      trainer.save_checkpoint(ckpt_dir / "latest.pt");
      log.event("checkpoint", {{"path", path.string()}, {"iteration", rec.iteration}});
    }
  }
  trainer.save_checkpoint(ckpt_dir / "final.pt");
  log.event("checkpoint", {{"path", (ckpt_dir / "final.pt").string()}, {"iteration", trainer.iteration()}});
  err << "training finished at iteration " << trainer.iteration() << "; final checkpoint "
      << (ckpt_dir / "final.pt").string() << "\n";
  return kExitOk;
}

int cmd_upscale(const fs::path& checkpoint, const fs::path& input, const fs::path& output, bool raw,
                const std::string& variant, Logger& log, std::ostream& err) {
  if (!variant.empty()) {
    const auto stored = read_checkpoint_info(checkpoint).config.generator.variant;
    if (generator_variant_from_string(variant) != stored) {
      throw std::runtime_error("checkpoint holds a " + to_string(stored) + " generator, not " + variant);
    }
  }
  auto up = make_upscaler(load_generator(checkpoint, !raw));
  std::vector<std::pair<fs::path, fs::path>> jobs;
  if (fs::is_directory(input)) {
    for (const auto& f : list_images(input)) jobs.emplace_back(f, output / (f.stem().string() + ".png"));
    if (jobs.empty()) throw std::runtime_error("no images found in " + input.string());
  } else {
    jobs.emplace_back(input, output);
  }
  for (const auto& [src, dst] : jobs) {
    const auto t0 = std::chrono::steady_clock::now();
    auto sr = up(load_image(src));
    save_png(dst, sr);
    const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    log.event("upscaled", {{"input", src.string()}, {"output", dst.string()}, {"ms", ms}});
  }
  err << "upscaled " << jobs.size() << " image(s)\n";
  return kExitOk;
}

void write_reports(const MetricsReport& report, const fs::path& path) {
  auto csv = path;
  auto js = path;
  csv.replace_extension(".csv");
  js.replace_extension(".json");
  report.write_csv(csv);
  report.write_json(js);
}

int cmd_evaluate(const AppConfig& cfg, const fs::path& checkpoint, const fs::path& input_dir,
                 const std::string& hr_dir, bool synthetic, const fs::path& report_path, const std::string& sr_dir,
                 Logger& log, std::ostream& err) {
  auto up = make_upscaler(load_generator(checkpoint, true));
  std::optional<fs::path> sr_out;
  if (!sr_dir.empty()) sr_out = sr_dir;
  MetricsReport report;
  if (synthetic) {
    report = evaluate_synthetic(up, input_dir, cfg.train.degradation, cfg.train.seed, sr_out);
  } else {
    std::optional<fs::path> hr;
    if (!hr_dir.empty()) hr = hr_dir;
    report = evaluate_dataset(up, input_dir, hr, sr_out);
  }
  write_reports(report, report_path);
  for (const auto& r : report.rows) {
    json j{{"file", r.filename}, {"inference_ms", r.inference_ms}};
    if (r.psnr_db) j["psnr_db"] = *r.psnr_db;
    if (r.ssim) j["ssim"] = *r.ssim;
    if (!r.error.empty()) j["error"] = r.error;
    log.event("evaluated", j);
  }
  err << "evaluated " << report.rows.size() << " image(s)";
  if (report.psnr_db.count > 0) {
    err << "; mean PSNR " << report.psnr_db.mean << " dB, mean SSIM " << report.ssim.mean;
  }
  err << "\n";
  return kExitOk;
}

int cmd_benchmark(const AppConfig& cfg, const std::string& star_ckpt, const std::string& lite_ckpt,
                  const fs::path& report_path, Logger& log, std::ostream& err) {
  // Without a checkpoint the preset architecture is timed with fresh weights.
  auto star = star_ckpt.empty() ? build_generator(GeneratorConfig::star(), 0) : load_generator(star_ckpt, true);
  auto lite = lite_ckpt.empty() ? build_generator(GeneratorConfig::lite(), 0) : load_generator(lite_ckpt, true);
  auto ladder = BenchmarkLadder::named(cfg.benchmark.ladder);
  ladder.repeats = cfg.benchmark.repeats;
  ladder.warmup = cfg.benchmark.warmup;
  const auto report = benchmark(star, lite, ladder);
  if (report_path.has_parent_path()) fs::create_directories(report_path.parent_path());
  std::ofstream out(report_path);
  if (!out) throw std::runtime_error("cannot write " + report_path.string());
  out << report.to_json().dump(2) << '\n';
  for (const auto& r : report.rows) {
    json j{{"input", {r.step.in_height, r.step.in_width}}, {"skipped", r.skipped}};
    if (!r.skipped) {
      j["star_fps"] = r.star_fps;
      j["lite_fps"] = r.lite_fps;
      j["lite_over_star"] = r.ratio;
    }
    log.event("benchmark", j);
    err << r.step.in_height << "x" << r.step.in_width << " -> " << r.step.out_height << "x" << r.step.out_width
        << ": ";
    if (r.skipped) {
      err << "skipped (" << r.note << ")\n";
    } else {
      err << "star " << r.star_fps << " fps, lite " << r.lite_fps << " fps, ratio " << r.ratio << "\n";
    }
  }
  return kExitOk;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Blind 4x super-resolution toolkit", "blindsr"};
  app.require_subcommand(1);

  CommonOptions common;
  TrainOverrides overrides;
  std::string hr_dir, resume, checkpoint, input, output, input_dir, report, sr_dir, star_ckpt, lite_ckpt, ladder;
  bool raw_weights = false;
  bool use_ema = false;
  std::string variant;
  int count = 0;
  bool synthetic = false;
  std::optional<int> repeats;

  auto* synth = app.add_subcommand("synthesize", "degrade HR images into LR/HR training pairs");
  add_common(synth, common);
  synth->add_option("--hr-dir", hr_dir, "directory of HR images")->required();
  synth->add_option("--count", count, "number of pairs to write (default: one per HR image)")
      ->check(CLI::NonNegativeNumber);

  auto* train = app.add_subcommand("train", "two-phase training (pretrain, then GAN)");
  add_common(train, common);
  train->add_option("--hr-dir", hr_dir, "directory of HR training images")->required();
  train->add_option("--resume", resume, "checkpoint to resume from");
  train->add_option("--batch-size", overrides.batch_size, "overrides train.batch_size");
  train->add_option("--patch-size", overrides.patch_size, "overrides train.hr_patch_size");
  train->add_option("--pretrain-iters", overrides.pretrain_iters, "overrides train.pretrain_iters");
  train->add_option("--gan-iters", overrides.gan_iters, "overrides train.gan_iters");
  train->add_option("--variant", overrides.variant, "star or lite (switches to that preset)");
  train->add_option("--dropout", overrides.dropout, "dropout probability before the output layer");

  auto* upscale = app.add_subcommand("upscale", "super-resolve an image or a directory");
  upscale->add_option("--checkpoint", checkpoint, "trained checkpoint")->required();
  upscale->add_option("--input", input, "image file or directory")->required();
  upscale->add_option("--output", output, "output file or directory")->required();
  upscale->add_option("--variant", variant, "expected generator variant (checked against the checkpoint)")
      ->check(CLI::IsMember({"star", "lite"}));
  auto* ema_flag = upscale->add_flag("--use-ema", use_ema, "use the EMA weights (the default)");
  upscale->add_flag("--raw-weights", raw_weights, "use the raw generator instead of the EMA weights")
      ->excludes(ema_flag);

  auto* evaluate = app.add_subcommand("evaluate", "PSNR/SSIM report over a directory");
  add_common(evaluate, common);
  evaluate->add_option("--checkpoint", checkpoint, "trained checkpoint")->required();
  evaluate->add_option("--input-dir", input_dir, "LR images, or HR images with --synthetic")->required();
  evaluate->add_option("--hr-dir", hr_dir, "HR references with matching filenames");
  evaluate->add_flag("--synthetic", synthetic, "degrade the input HR images on the fly and score against them");
  evaluate->add_option("--report", report, "report path; .csv and .json are both written")->required();
  evaluate->add_option("--sr-dir", sr_dir, "also save SR outputs here");

  auto* bench = app.add_subcommand("benchmark", "star vs lite throughput over a resolution ladder");
  add_common(bench, common);
  bench->add_option("--star-checkpoint", star_ckpt, "star checkpoint (fresh weights when omitted)");
  bench->add_option("--lite-checkpoint", lite_ckpt, "lite checkpoint (fresh weights when omitted)");
  bench->add_option("--ladder", ladder, "desk or full")->check(CLI::IsMember({"desk", "full"}));
  bench->add_option("--repeats", repeats, "timed runs per step");
  bench->add_option("--report", report, "JSON report path")->required();

  if (argc <= 1) {
    err << app.help();
    return kExitUsage;
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    if (auto* sub = app.get_subcommands().empty() ? nullptr : app.get_subcommands().front()) {
      err << sub->help();
    } else {
      err << app.help();
    }
    return kExitUsage;
  }

  Logger log(out);
  AppConfig cfg;
  try {
    cfg = resolve_config(common, overrides);
    if (!ladder.empty()) cfg.benchmark.ladder = ladder;
    if (repeats) cfg.benchmark.repeats = *repeats;
    cfg.validate();
  } catch (const std::invalid_argument& e) {
    err << "config error: " << e.what() << "\n";
    return kExitUsage;
  }
  auto* sub = app.get_subcommands().front();
  log.event("config", {{"command", sub->get_name()}, {"config", to_json(cfg)}});

  try {
    if (sub == synth) return cmd_synthesize(cfg, hr_dir, count, log, err);
    if (sub == train) return cmd_train(cfg, hr_dir, resume, log, err);
    if (sub == upscale) return cmd_upscale(checkpoint, input, output, raw_weights, variant, log, err);
    if (sub == evaluate) {
      return cmd_evaluate(cfg, checkpoint, input_dir, hr_dir, synthetic, report, sr_dir, log, err);
    }
    return cmd_benchmark(cfg, star_ckpt, lite_ckpt, report, log, err);
  } catch (const std::exception& e) {
    log.event("error", {{"message", e.what()}});
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}

}  // namespace blindsr
