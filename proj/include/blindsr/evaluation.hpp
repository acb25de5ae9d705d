#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "blindsr/degradation.hpp"
#include "blindsr/generator.hpp"
#include "blindsr/image.hpp"

namespace blindsr {

inline constexpr double kPsnrCapDb = 80.0;

// Full-RGB PSNR in dB for images in [0, 1], capped (identical images give the cap).
double psnr(const ImageTensor& a, const ImageTensor& b, double cap_db = kPsnrCapDb);

// Mean local SSIM, 11x11 Gaussian window (sigma 1.5), K1 = 0.01, K2 = 0.03,
// dynamic range 1. Only windows fully inside the image are used; channels
// are averaged. Requires H, W >= 11.
double ssim(const ImageTensor& a, const ImageTensor& b);

struct MetricsRow {
  std::string filename;
  std::optional<double> psnr_db;
  std::optional<double> ssim;
  double inference_ms = 0.0;
  std::string error;  // non-empty when the row failed
};

struct ColumnSummary {
  double mean = 0.0;
  double median = 0.0;
  std::size_t count = 0;
};

struct MetricsReport {
  std::vector<MetricsRow> rows;
  ColumnSummary psnr_db;
  ColumnSummary ssim;
  ColumnSummary inference_ms;
  std::string environment;
  std::string timestamp;

  // Recomputes the summaries from the successful rows.
  void aggregate();
  nlohmann::json to_json() const;
  void write_csv(const std::filesystem::path& path) const;
  void write_json(const std::filesystem::path& path) const;
};

// Maps one LR image (C, h, w) to its SR output.
using Upscaler = std::function<ImageTensor(const ImageTensor&)>;

Upscaler make_upscaler(Generator gen);

// Runs `up` on every image of input_dir. When hr_dir is given, metrics are
// computed against the same-named HR file. SR outputs go to sr_out_dir when
// set. Unreadable images become error rows; an empty input dir throws.
MetricsReport evaluate_dataset(const Upscaler& up, const std::filesystem::path& input_dir,
                               const std::optional<std::filesystem::path>& hr_dir,
                               const std::optional<std::filesystem::path>& sr_out_dir = std::nullopt);

// HR-only mode: each HR image (cropped to a multiple of 4) is degraded with
// `space` under `seed`, upscaled, and compared with the HR crop.
MetricsReport evaluate_synthetic(const Upscaler& up, const std::filesystem::path& hr_dir,
                                 const DegradationSpace& space, std::uint64_t seed,
                                 const std::optional<std::filesystem::path>& sr_out_dir = std::nullopt);

struct LadderStep {
  int in_height = 0;
  int in_width = 0;
  int out_height = 0;
  int out_width = 0;
};

struct BenchmarkLadder {
  std::vector<LadderStep> steps;
  int repeats = 20;
  int warmup = 3;

  // Every target must be exactly 4x its input; warmup >= 3.
  void validate() const;
  // Heights 90..270 with 16:9 widths, targets 4x.
  static BenchmarkLadder desk();
  // Heights 360..1080 with 16:9 widths, targets 4x.
  static BenchmarkLadder full();
  static BenchmarkLadder named(const std::string& name);
};

// Median wall time in ms of single-image forwards, after warmup.
double median_forward_ms(Generator& gen, const torch::Tensor& input, int repeats, int warmup,
                         std::vector<double>* raw_ms = nullptr);

struct BenchmarkRow {
  LadderStep step;
  bool skipped = false;
  std::string note;
  double star_fps = 0.0;
  double lite_fps = 0.0;
  double ratio = 0.0;  // lite / star
  std::vector<double> star_ms;
  std::vector<double> lite_ms;
};

struct BenchmarkReport {
  std::vector<BenchmarkRow> rows;
  std::string environment;
  std::string timestamp;
  nlohmann::json to_json() const;
};

// Strictly sequential; an allocation failure at a step marks it skipped.
BenchmarkReport benchmark(Generator& star, Generator& lite, const BenchmarkLadder& ladder);

std::string describe_environment();
std::string utc_timestamp();

}  // namespace blindsr
