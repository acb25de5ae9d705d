#include "blindsr/degradation.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

namespace blindsr {

namespace {

constexpr double kPi = std::numbers::pi;

void require(bool ok, const std::string& what) {
  if (!ok) throw std::invalid_argument(what);
}

template <std::size_t N>
void check_probs(const std::array<double, N>& probs, const std::string& field) {
  double sum = 0.0;
  for (double p : probs) {
    require(p >= 0.0 && std::isfinite(p), field + ": probabilities must be finite and non-negative");
    sum += p;
  }
  require(std::abs(sum - 1.0) <= 1e-9, field + ": probabilities must sum to 1");
}

void check_range(const Range& r, const std::string& field, double lower = 0.0) {
  require(std::isfinite(r.min) && std::isfinite(r.max), field + ": bounds must be finite");
  require(r.min <= r.max, field + ": min must not exceed max");
  require(r.min >= lower, field + ": min below " + std::to_string(lower));
}

void check_probability(double p, const std::string& field) {
  require(p >= 0.0 && p <= 1.0, field + ": must lie in [0, 1]");
}

void check_stage(const StageRanges& s, const std::string& prefix) {
  check_range(s.blur_sigma, prefix + ".blur_sigma");
  require(s.blur_sigma.min > 0.0, prefix + ".blur_sigma: min must be positive");
  check_probs(s.iso_aniso_probs, prefix + ".iso_aniso_probs");
  check_range(s.resize_scale, prefix + ".resize_scale");
  require(s.resize_scale.min > 0.0, prefix + ".resize_scale: min must be positive");
  check_probs(s.resize_mode_probs, prefix + ".resize_mode_probs");
  check_range(s.gaussian_noise_sigma, prefix + ".gaussian_noise_sigma");
  check_range(s.poisson_noise_scale, prefix + ".poisson_noise_scale");
  check_probs(s.noise_type_probs, prefix + ".noise_type_probs");
  require(s.jpeg_quality.min <= s.jpeg_quality.max, prefix + ".jpeg_quality: min must not exceed max");
  require(s.jpeg_quality.min >= 1 && s.jpeg_quality.max <= 100, prefix + ".jpeg_quality: must lie within [1, 100]");
}

// Index into [0, n) mirrored about the edge samples (edge not repeated).
inline int mirror(int i, int n) {
  if (n == 1) return 0;
  const int period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}

StageRanges stage(Range blur, Range resize, Range gauss, Range poisson, IntRange jpeg) {
  StageRanges s;
  s.blur_sigma = blur;
  s.resize_scale = resize;
  s.gaussian_noise_sigma = gauss;
  s.poisson_noise_scale = poisson;
  s.jpeg_quality = jpeg;
  return s;
}

BlurStage sample_gaussian_blur(const StageRanges& s, int size, Rng& rng) {
  BlurStage b;
  b.size = size;
  const bool iso = rng.choose(s.iso_aniso_probs) == 0;
  b.sigma1 = rng.uniform(s.blur_sigma.min, s.blur_sigma.max);
  if (iso) {
    b.kind = KernelKind::IsoGaussian;
    b.sigma2 = b.sigma1;
    b.angle = 0.0;
  } else {
    b.kind = KernelKind::AnisoGaussian;
    b.sigma2 = rng.uniform(s.blur_sigma.min, s.blur_sigma.max);
    b.angle = rng.uniform(-kPi, kPi);
  }
  return b;
}

int scaled_dim(int base, double scale) {
  return std::max(1, static_cast<int>(std::lround(base * scale)));
}

int cv_interpolation(ResizeMode mode) {
  switch (mode) {
    case ResizeMode::Area: return cv::INTER_AREA;
    case ResizeMode::Bilinear: return cv::INTER_LINEAR;
    case ResizeMode::Bicubic: return cv::INTER_CUBIC;
  }
  throw std::invalid_argument("unknown resize mode");
}

BlurKernel kernel_for(const BlurStage& b) {
  if (b.kind == KernelKind::Sinc) return make_sinc_kernel(b.cutoff, b.size);
  return make_gaussian_kernel(b.sigma1, b.sigma2, b.angle, b.size);
}

}  // namespace

std::string to_string(ResizeMode mode) {
  switch (mode) {
    case ResizeMode::Area: return "area";
    case ResizeMode::Bilinear: return "bilinear";
    case ResizeMode::Bicubic: return "bicubic";
  }
  return "?";
}

std::string to_string(KernelKind kind) {
  switch (kind) {
    case KernelKind::IsoGaussian: return "iso_gaussian";
    case KernelKind::AnisoGaussian: return "aniso_gaussian";
    case KernelKind::Sinc: return "sinc";
  }
  return "?";
}

ResizeMode resize_mode_from_string(const std::string& s) {
  if (s == "area") return ResizeMode::Area;
  if (s == "bilinear") return ResizeMode::Bilinear;
  if (s == "bicubic") return ResizeMode::Bicubic;
  throw std::invalid_argument("unknown resize mode '" + s + "'");
}

KernelKind kernel_kind_from_string(const std::string& s) {
  if (s == "iso_gaussian") return KernelKind::IsoGaussian;
  if (s == "aniso_gaussian") return KernelKind::AnisoGaussian;
  if (s == "sinc") return KernelKind::Sinc;
  throw std::invalid_argument("unknown kernel kind '" + s + "'");
}

void LevelParams::validate() const {
  require(order == 1 || order == 2, "order: must be 1 or 2");
  check_stage(first, "first");
  if (order == 2) check_stage(second, "second");
  check_probability(second_stage_blur_skip_prob, "second_stage_blur_skip_prob");
  check_probability(sinc_prob, "sinc_prob");
  check_range(sinc_cutoff, "sinc_cutoff");
  require(sinc_cutoff.min > 0.0 && sinc_cutoff.max <= kPi, "sinc_cutoff: must lie within (0, pi]");
  require(kernel_size >= 3 && kernel_size % 2 == 1, "kernel_size: must be odd and >= 3");
}

DegradationSpace DegradationSpace::defaults() {
  DegradationSpace space;
  auto& d1 = space.levels[0];
  d1.order = 1;
  d1.first = stage({0.2, 0.8}, {0.85, 1.2}, {1.0, 10.0}, {0.05, 1.0}, {75, 95});

  auto& d2 = space.levels[1];
  d2.order = 1;
  d2.first = stage({0.2, 1.5}, {0.7, 1.3}, {1.0, 20.0}, {0.05, 2.0}, {50, 95});

  auto& d3 = space.levels[2];
  d3.order = 2;
  d3.first = d2.first;
  // Second pass: half-width ranges, shrunk toward the identity end of each parameter.
  d3.second = stage({0.1, 0.75}, {0.85, 1.15}, {0.5, 10.0}, {0.025, 1.0}, {73, 95});
  d3.second_stage_blur_skip_prob = 0.2;
  d3.sinc_prob = 0.8;
  d3.sinc_cutoff = {kPi / 3.0, kPi};
  return space;
}

void DegradationSpace::validate() const {
  check_probs(level_probs, "level_probs");
  for (std::size_t i = 0; i < levels.size(); ++i) {
    try {
      levels[i].validate();
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument("levels[" + std::to_string(i) + "]." + e.what());
    }
  }
  require(levels[0].order == 1 && levels[1].order == 1, "levels: D1 and D2 must be first-order");
  require(levels[2].order == 2, "levels[2].order: D3 must be second-order");
}

BlurKernel::BlurKernel(torch::Tensor weights, KernelKind kind) : kind_(kind) {
  require(weights.dim() == 2 && weights.size(0) == weights.size(1), "BlurKernel: weights must be square");
  require(weights.size(0) % 2 == 1, "BlurKernel: side length must be odd");
  weights_ = weights.to(torch::kFloat64).contiguous();
  const double sum = weights_.sum().item<double>();
  require(std::isfinite(sum) && std::abs(sum) > 1e-12, "BlurKernel: weights must have a nonzero sum");
  weights_ = weights_ / sum;
}

BlurKernel make_gaussian_kernel(double sigma1, double sigma2, double angle, int size) {
  require(size >= 3 && size % 2 == 1, "gaussian kernel size must be odd and >= 3");
  require(sigma1 > 0.0 && sigma2 > 0.0, "gaussian kernel sigmas must be positive");
  const double c = std::cos(angle);
  const double s = std::sin(angle);
  // Covariance R diag(s1^2, s2^2) R^T, first axis horizontal.
  const double a = c * c * sigma1 * sigma1 + s * s * sigma2 * sigma2;
  const double b = c * s * (sigma1 * sigma1 - sigma2 * sigma2);
  const double d = s * s * sigma1 * sigma1 + c * c * sigma2 * sigma2;
  const double det = a * d - b * b;
  const double ia = d / det;
  const double ib = -b / det;
  const double id = a / det;

  const int r = size / 2;
  auto w = torch::empty({size, size}, torch::kFloat64);
  auto acc = w.accessor<double, 2>();
  for (int row = 0; row < size; ++row) {
    const double y = row - r;
    for (int col = 0; col < size; ++col) {
      const double x = col - r;
      acc[row][col] = std::exp(-0.5 * (ia * x * x + 2.0 * ib * x * y + id * y * y));
    }
  }
  const bool iso = sigma1 == sigma2;
  return BlurKernel(w, iso ? KernelKind::IsoGaussian : KernelKind::AnisoGaussian);
}

BlurKernel make_sinc_kernel(double cutoff, int size) {
  require(cutoff > 0.0 && cutoff <= kPi, "sinc cutoff must lie within (0, pi]");
  require(size >= 3 && size % 2 == 1, "sinc kernel size must be odd and >= 3");
  const int r = size / 2;
  auto w = torch::empty({size, size}, torch::kFloat64);
  auto acc = w.accessor<double, 2>();
  for (int row = 0; row < size; ++row) {
    for (int col = 0; col < size; ++col) {
      const double dist = std::hypot(row - r, col - r);
      acc[row][col] = dist == 0.0 ? cutoff * cutoff / (4.0 * kPi)
                                  : cutoff * std::cyl_bessel_j(1.0, cutoff * dist) / (2.0 * kPi * dist);
    }
  }
  return BlurKernel(w, KernelKind::Sinc);
}

ImageTensor apply_blur(const ImageTensor& img, const BlurKernel& kernel) {
  require(img.dim() == 3 && img.numel() > 0, "apply_blur: expected a non-empty (C, H, W) image");
  auto src = img.detach().to(torch::kFloat32).contiguous();
  const int channels = static_cast<int>(src.size(0));
  const int h = static_cast<int>(src.size(1));
  const int w = static_cast<int>(src.size(2));
  const int k = kernel.size();
  const int r = k / 2;
  const double* kw = kernel.weights().data_ptr<double>();

  std::vector<int> row_index(static_cast<std::size_t>(h + 2 * r));
  std::vector<int> col_index(static_cast<std::size_t>(w + 2 * r));
  for (int i = 0; i < h + 2 * r; ++i) row_index[i] = mirror(i - r, h);
  for (int i = 0; i < w + 2 * r; ++i) col_index[i] = mirror(i - r, w);

  auto out = torch::empty_like(src);
  const float* in = src.data_ptr<float>();
  float* dst = out.data_ptr<float>();
  for (int c = 0; c < channels; ++c) {
    const float* plane = in + static_cast<std::size_t>(c) * h * w;
    float* oplane = dst + static_cast<std::size_t>(c) * h * w;
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        double acc = 0.0;
        // out(y, x) = sum_{i,j} k(i, j) * in(y + r - i, x + r - j)
        for (int i = 0; i < k; ++i) {
          const float* irow = plane + static_cast<std::size_t>(row_index[y + 2 * r - i]) * w;
          const double* krow = kw + static_cast<std::size_t>(i) * k;
          for (int j = 0; j < k; ++j) acc += krow[j] * irow[col_index[x + 2 * r - j]];
        }
        oplane[static_cast<std::size_t>(y) * w + x] = static_cast<float>(acc);
      }
    }
  }
  return out;
}

ImageTensor resize_image(const ImageTensor& img, int height, int width, ResizeMode mode) {
  require(height > 0 && width > 0, "resize_image: target size must be positive");
  if (img.size(1) == height && img.size(2) == width) return img.clone();
  cv::Mat src = to_float_mat(img);
  cv::Mat dst;
  cv::resize(src, dst, cv::Size(width, height), 0.0, 0.0, cv_interpolation(mode));
  return from_float_mat(dst);
}

ImageTensor jpeg_compress(const ImageTensor& img, int quality) {
  require(quality >= 1 && quality <= 100, "jpeg_compress: quality must lie within [1, 100]");
  require(img.dim() == 3 && (img.size(0) == 1 || img.size(0) == 3), "jpeg_compress: expected 1 or 3 channels");
  cv::Mat u8 = to_bgr8(img.clamp(0.0, 1.0));
  std::vector<uchar> buf;
  if (!cv::imencode(".jpg", u8, buf, {cv::IMWRITE_JPEG_QUALITY, quality})) {
    throw std::runtime_error("jpeg_compress: encoder failed");
  }
  cv::Mat decoded = cv::imdecode(buf, img.size(0) == 1 ? cv::IMREAD_GRAYSCALE : cv::IMREAD_COLOR);
  if (decoded.empty()) throw std::runtime_error("jpeg_compress: decoder failed");
  auto out = from_bgr8(decoded);
  return out.reshape(img.sizes());
}

ImageTensor add_gaussian_noise(const ImageTensor& img, double sigma255, std::uint64_t seed) {
  require(sigma255 >= 0.0, "gaussian noise sigma must be non-negative");
  auto gen = make_torch_generator(seed);
  auto noise = torch::randn(img.sizes(), gen, torch::TensorOptions().dtype(torch::kFloat32));
  return (img + noise * static_cast<float>(sigma255 / 255.0)).clamp(0.0, 1.0);
}

ImageTensor add_poisson_noise(const ImageTensor& img, double scale, std::uint64_t seed) {
  require(scale >= 0.0, "poisson noise scale must be non-negative");
  constexpr double kLevels = 255.0;
  auto gen = make_torch_generator(seed);
  auto rates = (img.to(torch::kFloat64).clamp(0.0, 1.0) * kLevels);
  auto counts = torch::poisson(rates, gen);
  auto noise = (counts / kLevels - img.to(torch::kFloat64)).to(torch::kFloat32);
  return (img + noise * static_cast<float>(scale)).clamp(0.0, 1.0);
}

ImageTensor add_noise(const ImageTensor& img, const StageRanges& ranges, Rng& rng) {
  if (rng.choose(ranges.noise_type_probs) == 0) {
    const double sigma = rng.uniform(ranges.gaussian_noise_sigma.min, ranges.gaussian_noise_sigma.max);
    return add_gaussian_noise(img, sigma, rng.next_u64());
  }
  const double scale = rng.uniform(ranges.poisson_noise_scale.min, ranges.poisson_noise_scale.max);
  return add_poisson_noise(img, scale, rng.next_u64());
}

int DegradationRecipe::passes() const {
  int n = 0;
  for (const auto& s : stages) {
    if (!std::holds_alternative<FinalResizeStage>(s.op)) n = std::max(n, s.pass + 1);
  }
  return n;
}

bool DegradationRecipe::has_stage(int pass, KernelKind kind) const {
  return std::any_of(stages.begin(), stages.end(), [&](const StageRecord& s) {
    const auto* b = std::get_if<BlurStage>(&s.op);
    return s.pass == pass && b != nullptr && b->kind == kind;
  });
}

bool DegradationRecipe::has_gaussian_blur(int pass) const {
  return has_stage(pass, KernelKind::IsoGaussian) || has_stage(pass, KernelKind::AnisoGaussian);
}

std::size_t sample_level(const DegradationSpace& space, Rng& rng) { return rng.choose(space.level_probs); }

DegradationRecipe sample_recipe(const DegradationSpace& space, int hr_height, int hr_width, Rng& rng) {
  require(hr_height % 4 == 0 && hr_width % 4 == 0 && hr_height > 0 && hr_width > 0,
          "degrade: HR height and width must be positive multiples of 4");
  DegradationRecipe recipe;
  recipe.hr_height = hr_height;
  recipe.hr_width = hr_width;
  recipe.level_index = static_cast<int>(sample_level(space, rng));
  const LevelParams& level = space.levels[static_cast<std::size_t>(recipe.level_index)];

  const int lr_h = hr_height / 4;
  const int lr_w = hr_width / 4;
  int cur_h = hr_height;
  int cur_w = hr_width;
  for (int pass = 0; pass < level.order; ++pass) {
    const StageRanges& ranges = pass == 0 ? level.first : level.second;
    const bool last = pass == level.order - 1;

    const bool skip_blur = pass > 0 && rng.bernoulli(level.second_stage_blur_skip_prob);
    if (!skip_blur) recipe.stages.push_back({pass, sample_gaussian_blur(ranges, level.kernel_size, rng)});

    ResizeStage rs;
    rs.mode = static_cast<ResizeMode>(rng.choose(ranges.resize_mode_probs));
    rs.scale = rng.uniform(ranges.resize_scale.min, ranges.resize_scale.max);
    // The last pass lands near LR size; earlier passes jitter around the current size.
    rs.height = scaled_dim(last ? lr_h : cur_h, rs.scale);
    rs.width = scaled_dim(last ? lr_w : cur_w, rs.scale);
    cur_h = rs.height;
    cur_w = rs.width;
    recipe.stages.push_back({pass, rs});

    if (rng.choose(ranges.noise_type_probs) == 0) {
      GaussianNoiseStage g;
      g.sigma = rng.uniform(ranges.gaussian_noise_sigma.min, ranges.gaussian_noise_sigma.max);
      g.seed = rng.next_u64();
      recipe.stages.push_back({pass, g});
    } else {
      PoissonNoiseStage p;
      p.scale = rng.uniform(ranges.poisson_noise_scale.min, ranges.poisson_noise_scale.max);
      p.seed = rng.next_u64();
      recipe.stages.push_back({pass, p});
    }

    if (pass > 0 && rng.bernoulli(level.sinc_prob)) {
      BlurStage sinc;
      sinc.kind = KernelKind::Sinc;
      sinc.cutoff = rng.uniform(level.sinc_cutoff.min, level.sinc_cutoff.max);
      sinc.size = level.kernel_size;
      recipe.stages.push_back({pass, sinc});
    }

    recipe.stages.push_back({pass, JpegStage{rng.uniform_int(ranges.jpeg_quality.min, ranges.jpeg_quality.max)}});
  }
  recipe.stages.push_back({level.order, FinalResizeStage{lr_h, lr_w}});
  return recipe;
}

ImageTensor apply_recipe(const ImageTensor& hr, const DegradationRecipe& recipe) {
  require(hr.dim() == 3, "apply_recipe: expected a (C, H, W) image");
  require(hr.size(1) == recipe.hr_height && hr.size(2) == recipe.hr_width,
          "apply_recipe: image size does not match the recipe");
  ImageTensor img = hr.detach().to(torch::kFloat32).contiguous();
  for (const auto& record : recipe.stages) {
    img = std::visit(
        [&](const auto& op) -> ImageTensor {
          using T = std::decay_t<decltype(op)>;
          if constexpr (std::is_same_v<T, BlurStage>) {
            return apply_blur(img, kernel_for(op)).clamp(0.0, 1.0);
          } else if constexpr (std::is_same_v<T, ResizeStage>) {
            return resize_image(img, op.height, op.width, op.mode).clamp(0.0, 1.0);
          } else if constexpr (std::is_same_v<T, GaussianNoiseStage>) {
            return add_gaussian_noise(img, op.sigma, op.seed);
          } else if constexpr (std::is_same_v<T, PoissonNoiseStage>) {
            return add_poisson_noise(img, op.scale, op.seed);
          } else if constexpr (std::is_same_v<T, JpegStage>) {
            return jpeg_compress(img, op.quality);
          } else {
            return resize_image(img, op.height, op.width, ResizeMode::Bicubic).clamp(0.0, 1.0);
          }
        },
        record.op);
  }
  return img.contiguous();
}

Degraded degrade(const ImageTensor& hr, const DegradationSpace& space, Rng& rng) {
  require(hr.dim() == 3, "degrade: expected a (C, H, W) image");
  const auto h = static_cast<int>(hr.size(1));
  const auto w = static_cast<int>(hr.size(2));
  require(h % 4 == 0 && w % 4 == 0, "degrade: HR height and width must be divisible by 4");
  const std::uint64_t seed = rng.next_u64();
  Rng local(seed);
  Degraded out;
  out.recipe = sample_recipe(space, h, w, local);
  out.recipe.seed = seed;
  out.lr = apply_recipe(hr, out.recipe);
  return out;
}

nlohmann::json recipe_to_json(const DegradationRecipe& recipe) {
  using nlohmann::json;
  json stages = json::array();
  for (const auto& record : recipe.stages) {
    json s;
    s["pass"] = record.pass;
    std::visit(
        [&](const auto& op) {
          using T = std::decay_t<decltype(op)>;
          if constexpr (std::is_same_v<T, BlurStage>) {
            s["kind"] = "blur";
            s["kernel"] = to_string(op.kind);
            s["size"] = op.size;
            if (op.kind == KernelKind::Sinc) {
              s["cutoff"] = op.cutoff;
            } else {
              s["sigma1"] = op.sigma1;
              s["sigma2"] = op.sigma2;
              s["angle"] = op.angle;
            }
          } else if constexpr (std::is_same_v<T, ResizeStage>) {
            s["kind"] = "resize";
            s["mode"] = to_string(op.mode);
            s["scale"] = op.scale;
            s["height"] = op.height;
            s["width"] = op.width;
          } else if constexpr (std::is_same_v<T, GaussianNoiseStage>) {
            s["kind"] = "gaussian_noise";
            s["sigma"] = op.sigma;
            s["seed"] = op.seed;
          } else if constexpr (std::is_same_v<T, PoissonNoiseStage>) {
            s["kind"] = "poisson_noise";
            s["scale"] = op.scale;
            s["seed"] = op.seed;
          } else if constexpr (std::is_same_v<T, JpegStage>) {
            s["kind"] = "jpeg";
            s["quality"] = op.quality;
          } else {
            s["kind"] = "final_resize";
            s["mode"] = "bicubic";
            s["height"] = op.height;
            s["width"] = op.width;
          }
        },
        record.op);
    stages.push_back(std::move(s));
  }
  return json{{"level_index", recipe.level_index},
              {"seed", recipe.seed},
              {"hr_height", recipe.hr_height},
              {"hr_width", recipe.hr_width},
              {"stages", std::move(stages)}};
}

DegradationRecipe recipe_from_json(const nlohmann::json& j) {
  DegradationRecipe r;
  r.level_index = j.at("level_index").get<int>();
  r.seed = j.at("seed").get<std::uint64_t>();
  r.hr_height = j.at("hr_height").get<int>();
  r.hr_width = j.at("hr_width").get<int>();
  for (const auto& s : j.at("stages")) {
    StageRecord rec;
    rec.pass = s.at("pass").get<int>();
    const auto kind = s.at("kind").get<std::string>();
    if (kind == "blur") {
      BlurStage b;
      b.kind = kernel_kind_from_string(s.at("kernel").get<std::string>());
      b.size = s.at("size").get<int>();
      if (b.kind == KernelKind::Sinc) {
        b.cutoff = s.at("cutoff").get<double>();
      } else {
        b.sigma1 = s.at("sigma1").get<double>();
        b.sigma2 = s.at("sigma2").get<double>();
        b.angle = s.at("angle").get<double>();
      }
      rec.op = b;
    } else if (kind == "resize") {
      rec.op = ResizeStage{resize_mode_from_string(s.at("mode").get<std::string>()), s.at("scale").get<double>(),
                           s.at("height").get<int>(), s.at("width").get<int>()};
    } else if (kind == "gaussian_noise") {
      rec.op = GaussianNoiseStage{s.at("sigma").get<double>(), s.at("seed").get<std::uint64_t>()};
    } else if (kind == "poisson_noise") {
      rec.op = PoissonNoiseStage{s.at("scale").get<double>(), s.at("seed").get<std::uint64_t>()};
    } else if (kind == "jpeg") {
      rec.op = JpegStage{s.at("quality").get<int>()};
    } else if (kind == "final_resize") {
      rec.op = FinalResizeStage{s.at("height").get<int>(), s.at("width").get<int>()};
    } else {
      throw std::invalid_argument("recipe: unknown stage kind '" + kind + "'");
    }
    r.stages.push_back(std::move(rec));
  }
  return r;
}

}  // namespace blindsr
