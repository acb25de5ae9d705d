#include "blindsr/config.hpp"

#include <fstream>
#include <limits>
#include <optional>
#include <set>

namespace blindsr {

using nlohmann::json;

namespace {

[[noreturn]] void fail(const std::string& path, const std::string& what) { throw ConfigError(path + ": " + what); }

// Reads keys of one JSON object, remembering which ones were consumed so the
// leftovers can be reported as unknown.
class Reader {
 public:
  Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) fail(path_, "expected an object");
  }

  std::string at(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  const json* find(const std::string& key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  void get(const std::string& key, double& out) {
    if (const json* v = find(key)) out = as_double(*v, at(key));
  }
  void get(const std::string& key, int& out) {
    if (const json* v = find(key)) {
      auto x = as_int64(*v, at(key));
      if (x < std::numeric_limits<int>::min() || x > std::numeric_limits<int>::max()) fail(at(key), "out of range");
      out = static_cast<int>(x);
    }
  }
  void get(const std::string& key, std::int64_t& out) {
    if (const json* v = find(key)) out = as_int64(*v, at(key));
  }
  void get(const std::string& key, std::uint64_t& out) {
    if (const json* v = find(key)) {
      if (v->is_number_unsigned()) {
        out = v->get<std::uint64_t>();
      } else if (v->is_number_integer() && v->get<std::int64_t>() >= 0) {
        out = static_cast<std::uint64_t>(v->get<std::int64_t>());
      } else {
        fail(at(key), "expected a non-negative integer");
      }
    }
  }
  void get(const std::string& key, bool& out) {
    if (const json* v = find(key)) {
      if (!v->is_boolean()) fail(at(key), "expected true or false");
      out = v->get<bool>();
    }
  }
  void get(const std::string& key, std::string& out) {
    if (const json* v = find(key)) {
      if (!v->is_string()) fail(at(key), "expected a string");
      out = v->get<std::string>();
    }
  }
  void get(const std::string& key, Range& out) {
    if (const json* v = find(key)) {
      auto a = numbers(*v, at(key), 2);
      out = Range{a[0], a[1]};
    }
  }
  void get(const std::string& key, IntRange& out) {
    if (const json* v = find(key)) {
      if (!v->is_array() || v->size() != 2) fail(at(key), "expected [min, max]");
      out = IntRange{static_cast<int>(as_int64((*v)[0], at(key) + "[0]")),
                     static_cast<int>(as_int64((*v)[1], at(key) + "[1]"))};
    }
  }
  template <std::size_t N>
  void get(const std::string& key, std::array<double, N>& out) {
    if (const json* v = find(key)) {
      auto a = numbers(*v, at(key), N);
      std::copy(a.begin(), a.end(), out.begin());
    }
  }
  void get(const std::string& key, std::vector<double>& out) {
    if (const json* v = find(key)) out = numbers(*v, at(key), 0);
  }
  void get(const std::string& key, std::vector<int>& out) {
    if (const json* v = find(key)) {
      if (!v->is_array()) fail(at(key), "expected an array");
      out.clear();
      for (std::size_t i = 0; i < v->size(); ++i) {
        out.push_back(static_cast<int>(as_int64((*v)[i], at(key) + "[" + std::to_string(i) + "]")));
      }
    }
  }

  // Rejects every key that was never asked for.
  void finish() const {
    for (const auto& item : j_.items()) {
      if (!seen_.count(item.key())) fail(at(item.key()), "unknown key");
    }
  }

 private:
  static double as_double(const json& v, const std::string& path) {
    if (!v.is_number()) fail(path, "expected a number");
    return v.get<double>();
  }
  static std::int64_t as_int64(const json& v, const std::string& path) {
    if (!v.is_number_integer()) fail(path, "expected an integer");
    if (v.is_number_unsigned() && v.get<std::uint64_t>() > std::numeric_limits<std::int64_t>::max()) {
      fail(path, "out of range");
    }
    return v.get<std::int64_t>();
  }
  // n == 0 accepts any length.
  static std::vector<double> numbers(const json& v, const std::string& path, std::size_t n) {
    if (!v.is_array() || (n != 0 && v.size() != n)) {
      fail(path, n == 0 ? "expected an array of numbers" : "expected an array of " + std::to_string(n) + " numbers");
    }
    std::vector<double> out;
    for (std::size_t i = 0; i < v.size(); ++i) out.push_back(as_double(v[i], path + "[" + std::to_string(i) + "]"));
    return out;
  }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

json range_json(const Range& r) { return json::array({r.min, r.max}); }
json range_json(const IntRange& r) { return json::array({r.min, r.max}); }

json stage_json(const StageRanges& s) {
  return json{{"blur_sigma", range_json(s.blur_sigma)},
              {"iso_aniso_probs", s.iso_aniso_probs},
              {"resize_scale", range_json(s.resize_scale)},
              {"resize_mode_probs", s.resize_mode_probs},
              {"gaussian_noise_sigma", range_json(s.gaussian_noise_sigma)},
              {"poisson_noise_scale", range_json(s.poisson_noise_scale)},
              {"noise_type_probs", s.noise_type_probs},
              {"jpeg_quality", range_json(s.jpeg_quality)}};
}

void read_stage(Reader r, StageRanges& s) {
  r.get("blur_sigma", s.blur_sigma);
  r.get("iso_aniso_probs", s.iso_aniso_probs);
  r.get("resize_scale", s.resize_scale);
  r.get("resize_mode_probs", s.resize_mode_probs);
  r.get("gaussian_noise_sigma", s.gaussian_noise_sigma);
  r.get("poisson_noise_scale", s.poisson_noise_scale);
  r.get("noise_type_probs", s.noise_type_probs);
  r.get("jpeg_quality", s.jpeg_quality);
  r.finish();
}

json level_json(const LevelParams& l) {
  return json{{"order", l.order},
              {"first", stage_json(l.first)},
              {"second", stage_json(l.second)},
              {"second_stage_blur_skip_prob", l.second_stage_blur_skip_prob},
              {"sinc_prob", l.sinc_prob},
              {"sinc_cutoff", range_json(l.sinc_cutoff)},
              {"kernel_size", l.kernel_size}};
}

void read_level(Reader r, LevelParams& l) {
  r.get("order", l.order);
  if (const json* v = r.find("first")) read_stage(Reader(*v, r.at("first")), l.first);
  if (const json* v = r.find("second")) read_stage(Reader(*v, r.at("second")), l.second);
  r.get("second_stage_blur_skip_prob", l.second_stage_blur_skip_prob);
  r.get("sinc_prob", l.sinc_prob);
  r.get("sinc_cutoff", l.sinc_cutoff);
  r.get("kernel_size", l.kernel_size);
  r.finish();
}

json loss_json(const LossWeights& w) {
  return json{{"lambda_content", w.lambda_content},
              {"eta_adversarial", w.eta_adversarial},
              {"gamma_perceptual", w.gamma_perceptual},
              {"lambda1", w.lambda1},
              {"lambda2", w.lambda2},
              {"mu", w.mu},
              {"c", w.c}};
}

void read_loss(Reader r, LossWeights& w) {
  r.get("lambda_content", w.lambda_content);
  r.get("eta_adversarial", w.eta_adversarial);
  r.get("gamma_perceptual", w.gamma_perceptual);
  r.get("lambda1", w.lambda1);
  r.get("lambda2", w.lambda2);
  r.get("mu", w.mu);
  r.get("c", w.c);
  r.finish();
}

void read_generator(Reader r, GeneratorConfig& g) {
  std::string variant = to_string(g.variant);
  r.get("variant", variant);
  try {
    g.variant = generator_variant_from_string(variant);
  } catch (const std::invalid_argument& e) {
    fail(r.at("variant"), e.what());
  }
  r.get("in_channels", g.in_channels);
  r.get("out_channels", g.out_channels);
  r.get("base_features", g.base_features);
  r.get("num_blocks", g.num_blocks);
  r.get("growth_channels", g.growth_channels);
  r.get("residual_scale", g.residual_scale);
  r.get("upscale", g.upscale);
  r.get("dropout_prob", g.dropout_prob);
  r.finish();
}

json discriminator_json(const DiscriminatorConfig& d) {
  return json{{"in_channels", d.in_channels},
              {"base_features", d.base_features},
              {"depth", d.depth},
              {"spectral_norm", d.spectral_norm},
              {"scales", d.scales}};
}

void read_discriminator(Reader r, DiscriminatorConfig& d) {
  r.get("in_channels", d.in_channels);
  r.get("base_features", d.base_features);
  r.get("depth", d.depth);
  r.get("spectral_norm", d.spectral_norm);
  r.get("scales", d.scales);
  r.finish();
}

json extractor_json(const ExtractorConfig& e) {
  return json{{"kind", to_string(e.kind)},
              {"base_width", e.base_width},
              {"blocks", e.blocks},
              {"tap_weights", e.tap_weights},
              {"normalize_input", e.normalize_input},
              {"weights_path", e.weights_path},
              {"seed", e.seed}};
}

void read_extractor(Reader r, ExtractorConfig& e) {
  std::string kind = to_string(e.kind);
  r.get("kind", kind);
  try {
    e.kind = backbone_kind_from_string(kind);
  } catch (const std::invalid_argument& err) {
    fail(r.at("kind"), err.what());
  }
  r.get("base_width", e.base_width);
  r.get("blocks", e.blocks);
  r.get("tap_weights", e.tap_weights);
  r.get("normalize_input", e.normalize_input);
  r.get("weights_path", e.weights_path);
  r.get("seed", e.seed);
  r.finish();
}

json train_section_json(const TrainConfig& t) {
  return json{{"hr_patch_size", t.hr_patch_size},
              {"batch_size", t.batch_size},
              {"pretrain_iters", t.pretrain_iters},
              {"gan_iters", t.gan_iters},
              {"pretrain_lr", t.pretrain_lr},
              {"gan_lr", t.gan_lr},
              {"ema_decay", t.ema_decay},
              {"adam", {{"beta1", t.adam.beta1}, {"beta2", t.adam.beta2}, {"eps", t.adam.eps}}},
              {"seed", t.seed},
              {"log_every", t.log_every},
              {"checkpoint_every", t.checkpoint_every}};
}

void read_train_section(Reader r, TrainConfig& t) {
  r.get("hr_patch_size", t.hr_patch_size);
  r.get("batch_size", t.batch_size);
  r.get("pretrain_iters", t.pretrain_iters);
  r.get("gan_iters", t.gan_iters);
  r.get("pretrain_lr", t.pretrain_lr);
  r.get("gan_lr", t.gan_lr);
  r.get("ema_decay", t.ema_decay);
  if (const json* v = r.find("adam")) {
    Reader a(*v, r.at("adam"));
    a.get("beta1", t.adam.beta1);
    a.get("beta2", t.adam.beta2);
    a.get("eps", t.adam.eps);
    a.finish();
  }
  r.get("seed", t.seed);
  r.get("log_every", t.log_every);
  r.get("checkpoint_every", t.checkpoint_every);
  r.finish();
}

// Shared by the app config and the checkpoint snapshot: every section that
// describes a training run.
void write_model_sections(json& j, const TrainConfig& t) {
  j["train"] = train_section_json(t);
  j["loss"] = loss_json(t.loss);
  j["degradation"] = to_json(t.degradation);
  j["generator"] = to_json(t.generator);
  j["discriminator"] = discriminator_json(t.discriminator);
  j["perceptual"] = json{{"vgg", extractor_json(t.vgg)}, {"resnet", extractor_json(t.resnet)}};
}

void read_model_sections(Reader& r, TrainConfig& t) {
  if (const json* v = r.find("train")) read_train_section(Reader(*v, r.at("train")), t);
  if (const json* v = r.find("loss")) read_loss(Reader(*v, r.at("loss")), t.loss);
  if (const json* v = r.find("degradation")) t.degradation = degradation_space_from_json(*v, r.at("degradation"));
  if (const json* v = r.find("generator")) t.generator = generator_config_from_json(*v, r.at("generator"));
  if (const json* v = r.find("discriminator")) read_discriminator(Reader(*v, r.at("discriminator")), t.discriminator);
  if (const json* v = r.find("perceptual")) {
    Reader p(*v, r.at("perceptual"));
    if (const json* e = p.find("vgg")) read_extractor(Reader(*e, p.at("vgg")), t.vgg);
    if (const json* e = p.find("resnet")) read_extractor(Reader(*e, p.at("resnet")), t.resnet);
    p.finish();
  }
}

}  // namespace

json to_json(const GeneratorConfig& g) {
  return json{{"variant", to_string(g.variant)},
              {"in_channels", g.in_channels},
              {"out_channels", g.out_channels},
              {"base_features", g.base_features},
              {"num_blocks", g.num_blocks},
              {"growth_channels", g.growth_channels},
              {"residual_scale", g.residual_scale},
              {"upscale", g.upscale},
              {"dropout_prob", g.dropout_prob}};
}

GeneratorConfig generator_config_from_json(const json& j, const std::string& path) {
  GeneratorConfig g;
  read_generator(Reader(j, path), g);
  return g;
}

json to_json(const DegradationSpace& space) {
  json levels = json::array();
  for (const auto& l : space.levels) levels.push_back(level_json(l));
  return json{{"level_probs", space.level_probs}, {"levels", levels}};
}

DegradationSpace degradation_space_from_json(const json& j, const std::string& path) {
  auto space = DegradationSpace::defaults();
  Reader r(j, path);
  r.get("level_probs", space.level_probs);
  if (const json* v = r.find("levels")) {
    if (!v->is_array() || v->size() != space.levels.size()) fail(r.at("levels"), "expected an array of 3 levels");
    for (std::size_t i = 0; i < space.levels.size(); ++i) {
      read_level(Reader((*v)[i], r.at("levels") + "[" + std::to_string(i) + "]"), space.levels[i]);
    }
  }
  r.finish();
  return space;
}

json train_config_to_json(const TrainConfig& cfg) {
  json j = json::object();
  write_model_sections(j, cfg);
  return j;
}

TrainConfig train_config_from_json(const json& j) {
  TrainConfig t;
  Reader r(j, "");
  read_model_sections(r, t);
  r.finish();
  return t;
}

void AppConfig::validate() const {
  if (schema_version != kConfigSchemaVersion) {
    throw ConfigError("schema_version: unsupported value " + std::to_string(schema_version) + " (expected " +
                      std::to_string(kConfigSchemaVersion) + ")");
  }
  try {
    train.validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (benchmark.ladder != "desk" && benchmark.ladder != "full") {
    throw ConfigError("benchmark.ladder: expected desk or full");
  }
  if (benchmark.repeats < 1) throw ConfigError("benchmark.repeats: must be positive");
  if (benchmark.warmup < 3) throw ConfigError("benchmark.warmup: must be at least 3");
}

json to_json(const AppConfig& cfg) {
  json j = json::object();
  j["schema_version"] = cfg.schema_version;
  write_model_sections(j, cfg.train);
  j["benchmark"] = json{{"ladder", cfg.benchmark.ladder},
                        {"repeats", cfg.benchmark.repeats},
                        {"warmup", cfg.benchmark.warmup}};
  j["paths"] = json{{"out_dir", cfg.paths.out_dir}, {"hr_dir", cfg.paths.hr_dir}};
  return j;
}

AppConfig app_config_from_json(const json& j) {
  AppConfig cfg;
  Reader r(j, "");
  r.get("schema_version", cfg.schema_version);
  read_model_sections(r, cfg.train);
  if (const json* v = r.find("benchmark")) {
    Reader b(*v, "benchmark");
    b.get("ladder", cfg.benchmark.ladder);
    b.get("repeats", cfg.benchmark.repeats);
    b.get("warmup", cfg.benchmark.warmup);
    b.finish();
  }
  if (const json* v = r.find("paths")) {
    Reader p(*v, "paths");
    p.get("out_dir", cfg.paths.out_dir);
    p.get("hr_dir", cfg.paths.hr_dir);
    p.finish();
  }
  r.finish();
  cfg.validate();
  return cfg;
}

AppConfig load_app_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path.string() + ": config file not found or unreadable");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": malformed JSON (" + e.what() + ")");
  }
  return app_config_from_json(j);
}

}  // namespace blindsr
