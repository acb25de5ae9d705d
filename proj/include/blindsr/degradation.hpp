#pragma once

#include <array>
#include <cstdint>
#include <numbers>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "blindsr/image.hpp"
#include "blindsr/random.hpp"

namespace blindsr {

struct Range {
  double min = 0.0;
  double max = 0.0;
  bool operator==(const Range&) const = default;
};

struct IntRange {
  int min = 0;
  int max = 0;
  bool operator==(const IntRange&) const = default;
};

enum class ResizeMode { Area = 0, Bilinear = 1, Bicubic = 2 };
enum class KernelKind { IsoGaussian, AnisoGaussian, Sinc };

std::string to_string(ResizeMode mode);
std::string to_string(KernelKind kind);
ResizeMode resize_mode_from_string(const std::string& s);
KernelKind kernel_kind_from_string(const std::string& s);

// Sampling ranges for one blur -> resize -> noise -> JPEG pass.
struct StageRanges {
  Range blur_sigma;
  std::array<double, 2> iso_aniso_probs{0.65, 0.35};
  Range resize_scale;
  std::array<double, 3> resize_mode_probs{1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0};
  Range gaussian_noise_sigma;  // on the [0, 255] scale
  Range poisson_noise_scale;
  std::array<double, 2> noise_type_probs{0.5, 0.5};  // {gaussian, poisson}
  IntRange jpeg_quality;

  bool operator==(const StageRanges&) const = default;
};

struct LevelParams {
  int order = 1;
  StageRanges first;
  StageRanges second;  // used only when order == 2
  double second_stage_blur_skip_prob = 0.0;
  double sinc_prob = 0.0;
  Range sinc_cutoff{std::numbers::pi / 3.0, std::numbers::pi};
  int kernel_size = 21;

  // Throws std::invalid_argument naming the offending field.
  void validate() const;
  bool operator==(const LevelParams&) const = default;
};

struct DegradationSpace {
  std::array<LevelParams, 3> levels;
  std::array<double, 3> level_probs{0.3, 0.3, 0.4};

  // D1 small first-order, D2 large first-order, D3 second-order.
  static DegradationSpace defaults();
  void validate() const;
  bool operator==(const DegradationSpace&) const = default;
};

class BlurKernel {
 public:
  // `weights` is (size, size) float64; normalized to unit sum on construction.
  BlurKernel(torch::Tensor weights, KernelKind kind);

  const torch::Tensor& weights() const { return weights_; }
  KernelKind kind() const { return kind_; }
  int size() const { return static_cast<int>(weights_.size(0)); }

 private:
  torch::Tensor weights_;
  KernelKind kind_;
};

BlurKernel make_gaussian_kernel(double sigma1, double sigma2, double angle, int size);
BlurKernel make_sinc_kernel(double cutoff, int size);

// True 2-D convolution per channel with reflect (edge-exclusive) padding.
ImageTensor apply_blur(const ImageTensor& img, const BlurKernel& kernel);
ImageTensor resize_image(const ImageTensor& img, int height, int width, ResizeMode mode);
ImageTensor jpeg_compress(const ImageTensor& img, int quality);
ImageTensor add_gaussian_noise(const ImageTensor& img, double sigma255, std::uint64_t seed);
ImageTensor add_poisson_noise(const ImageTensor& img, double scale, std::uint64_t seed);
// Picks the noise type and strength from `ranges`, then applies it.
ImageTensor add_noise(const ImageTensor& img, const StageRanges& ranges, Rng& rng);

struct BlurStage {
  KernelKind kind = KernelKind::IsoGaussian;
  double sigma1 = 0.0;
  double sigma2 = 0.0;
  double angle = 0.0;
  double cutoff = 0.0;  // sinc only
  int size = 21;
  bool operator==(const BlurStage&) const = default;
};
struct ResizeStage {
  ResizeMode mode = ResizeMode::Bicubic;
  double scale = 1.0;
  int height = 0;
  int width = 0;
  bool operator==(const ResizeStage&) const = default;
};
struct GaussianNoiseStage {
  double sigma = 0.0;  // [0, 255] scale
  std::uint64_t seed = 0;
  bool operator==(const GaussianNoiseStage&) const = default;
};
struct PoissonNoiseStage {
  double scale = 0.0;
  std::uint64_t seed = 0;
  bool operator==(const PoissonNoiseStage&) const = default;
};
struct JpegStage {
  int quality = 95;
  bool operator==(const JpegStage&) const = default;
};
// Exact bicubic resize to the LR size that closes every recipe.
struct FinalResizeStage {
  int height = 0;
  int width = 0;
  bool operator==(const FinalResizeStage&) const = default;
};

using StageOp =
    std::variant<BlurStage, ResizeStage, GaussianNoiseStage, PoissonNoiseStage, JpegStage, FinalResizeStage>;

struct StageRecord {
  int pass = 0;  // 0 = first pass, 1 = second pass (D3 only), 2 = closing resize
  StageOp op;
  bool operator==(const StageRecord&) const = default;
};

struct DegradationRecipe {
  int level_index = 0;
  std::uint64_t seed = 0;
  int hr_height = 0;
  int hr_width = 0;
  std::vector<StageRecord> stages;

  int passes() const;
  bool has_stage(int pass, KernelKind kind) const;
  bool has_gaussian_blur(int pass) const;
  bool operator==(const DegradationRecipe&) const = default;
};

std::size_t sample_level(const DegradationSpace& space, Rng& rng);

// Draws every random choice for one HR image without touching pixels.
DegradationRecipe sample_recipe(const DegradationSpace& space, int hr_height, int hr_width, Rng& rng);
ImageTensor apply_recipe(const ImageTensor& hr, const DegradationRecipe& recipe);

struct Degraded {
  ImageTensor lr;
  DegradationRecipe recipe;
};

// HR (C, H, W) with H, W divisible by 4 -> LR (C, H/4, W/4) plus its recipe.
Degraded degrade(const ImageTensor& hr, const DegradationSpace& space, Rng& rng);

nlohmann::json recipe_to_json(const DegradationRecipe& recipe);
DegradationRecipe recipe_from_json(const nlohmann::json& j);

}  // namespace blindsr
