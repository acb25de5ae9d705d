#include "blindsr/evaluation.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>
#include <thread>

#include <torch/version.h>

namespace blindsr {

namespace {

void check_pair(const ImageTensor& a, const ImageTensor& b, const char* who) {
  if (!a.sizes().equals(b.sizes())) throw std::invalid_argument(std::string(who) + ": shape mismatch");
}

torch::Tensor as_batch(const ImageTensor& x) { return x.dim() == 3 ? x.unsqueeze(0) : x; }

torch::Tensor gaussian_window(int size, double sigma) {
  auto coords = torch::arange(size, torch::kFloat64) - (size - 1) / 2.0;
  auto g = torch::exp(-(coords * coords) / (2.0 * sigma * sigma));
  g = g / g.sum();
  return torch::outer(g, g);
}

ColumnSummary summarize(std::vector<double> v) {
  ColumnSummary s;
  s.count = v.size();
  if (v.empty()) return s;
  double sum = 0.0;
  for (double x : v) sum += x;
  s.mean = sum / static_cast<double>(v.size());
  std::sort(v.begin(), v.end());
  const auto n = v.size();
  s.median = n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
  return s;
}

double median_of(std::vector<double> v) { return summarize(std::move(v)).median; }

nlohmann::json summary_json(const ColumnSummary& s) {
  return nlohmann::json{{"mean", s.mean}, {"median", s.median}, {"count", s.count}};
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::string fixed(double v, int digits) {
  std::ostringstream os;
  os << std::setprecision(digits) << std::fixed << v;
  return os.str();
}

void ensure_parent(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
}

MetricsRow run_row(const Upscaler& up, const std::string& name, const ImageTensor& lr,
                   const std::optional<ImageTensor>& hr, const std::optional<std::filesystem::path>& sr_out_dir) {
  MetricsRow row;
  row.filename = name;
  const auto t0 = std::chrono::steady_clock::now();
  auto sr = up(lr);
  row.inference_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  if (sr_out_dir) save_png(*sr_out_dir / (std::filesystem::path(name).stem().string() + ".png"), sr);
  if (hr) {
    if (!hr->sizes().equals(sr.sizes())) {
      row.error = "SR and HR shapes differ";
      return row;
    }
    row.psnr_db = psnr(sr, *hr);
    row.ssim = ssim(sr, *hr);
  }
  return row;
}

}  // namespace

double psnr(const ImageTensor& a, const ImageTensor& b, double cap_db) {
  check_pair(a, b, "psnr");
  const double mse = (a.to(torch::kFloat64) - b.to(torch::kFloat64)).pow(2).mean().item<double>();
  if (mse <= 0.0) return cap_db;
  return std::min(cap_db, 10.0 * std::log10(1.0 / mse));
}

double ssim(const ImageTensor& a, const ImageTensor& b) {
  check_pair(a, b, "ssim");
  constexpr int kWin = 11;
  auto x = as_batch(a).to(torch::kFloat64);
  auto y = as_batch(b).to(torch::kFloat64);
  if (x.size(2) < kWin || x.size(3) < kWin) throw std::invalid_argument("ssim: images smaller than the 11x11 window");
  const auto channels = x.size(1);
  auto w = gaussian_window(kWin, 1.5).view({1, 1, kWin, kWin}).repeat({channels, 1, 1, 1});
  auto filt = [&](const torch::Tensor& t) {
    return torch::nn::functional::conv2d(t, w, torch::nn::functional::Conv2dFuncOptions().groups(channels));
  };
  const double c1 = 0.01 * 0.01;
  const double c2 = 0.03 * 0.03;
  auto mx = filt(x);
  auto my = filt(y);
  auto sxx = filt(x * x) - mx * mx;
  auto syy = filt(y * y) - my * my;
  auto sxy = filt(x * y) - mx * my;
  auto ssim_map = ((2 * mx * my + c1) * (2 * sxy + c2)) / ((mx * mx + my * my + c1) * (sxx + syy + c2));
  return ssim_map.mean().item<double>();
}

void MetricsReport::aggregate() {
  std::vector<double> p, s, t;
  for (const auto& r : rows) {
    if (!r.error.empty()) continue;
    if (r.psnr_db) p.push_back(*r.psnr_db);
    if (r.ssim) s.push_back(*r.ssim);
    t.push_back(r.inference_ms);
  }
  psnr_db = summarize(p);
  ssim = summarize(s);
  inference_ms = summarize(t);
}

nlohmann::json MetricsReport::to_json() const {
  nlohmann::json rows_json = nlohmann::json::array();
  for (const auto& r : rows) {
    nlohmann::json j{{"filename", r.filename}, {"inference_ms", r.inference_ms}};
    j["psnr_db"] = r.psnr_db ? nlohmann::json(*r.psnr_db) : nlohmann::json(nullptr);
    j["ssim"] = r.ssim ? nlohmann::json(*r.ssim) : nlohmann::json(nullptr);
    if (!r.error.empty()) j["error"] = r.error;
    rows_json.push_back(j);
  }
  return nlohmann::json{{"rows", rows_json},
                        {"aggregates",
                         {{"psnr_db", summary_json(psnr_db)},
                          {"ssim", summary_json(ssim)},
                          {"inference_ms", summary_json(inference_ms)}}},
                        {"environment", environment},
                        {"timestamp", timestamp}};
}

void MetricsReport::write_csv(const std::filesystem::path& path) const {
  ensure_parent(path);
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "filename,psnr_db,ssim,inference_ms\n";
  for (const auto& r : rows) {
    out << csv_field(r.filename) << ',' << (r.psnr_db ? fixed(*r.psnr_db, 4) : "") << ','
        << (r.ssim ? fixed(*r.ssim, 6) : "") << ',' << fixed(r.inference_ms, 3) << '\n';
  }
}

void MetricsReport::write_json(const std::filesystem::path& path) const {
  ensure_parent(path);
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << to_json().dump(2) << '\n';
}

Upscaler make_upscaler(Generator gen) {
  gen->eval();
  return [gen](const ImageTensor& lr) mutable {
    torch::NoGradGuard guard;
    return gen->forward(lr.unsqueeze(0)).squeeze(0).clamp(0.0, 1.0);
  };
}

MetricsReport evaluate_dataset(const Upscaler& up, const std::filesystem::path& input_dir,
                               const std::optional<std::filesystem::path>& hr_dir,
                               const std::optional<std::filesystem::path>& sr_out_dir) {
  if (!std::filesystem::is_directory(input_dir)) throw std::runtime_error("not a directory: " + input_dir.string());
  const auto files = list_images(input_dir);
  if (files.empty()) throw std::runtime_error("no images found in " + input_dir.string());
  MetricsReport report;
  for (const auto& f : files) {
    const auto name = f.filename().string();
    try {
      auto lr = load_image(f);
      std::optional<ImageTensor> hr;
      if (hr_dir) hr = load_image(*hr_dir / f.filename());
      report.rows.push_back(run_row(up, name, lr, hr, sr_out_dir));
    } catch (const std::exception& e) {
      MetricsRow row;
      row.filename = name;
      row.error = e.what();
      report.rows.push_back(row);
    }
  }
  report.aggregate();
  report.environment = describe_environment();
  report.timestamp = utc_timestamp();
  return report;
}

MetricsReport evaluate_synthetic(const Upscaler& up, const std::filesystem::path& hr_dir,
                                 const DegradationSpace& space, std::uint64_t seed,
                                 const std::optional<std::filesystem::path>& sr_out_dir) {
  if (!std::filesystem::is_directory(hr_dir)) throw std::runtime_error("not a directory: " + hr_dir.string());
  const auto files = list_images(hr_dir);
  if (files.empty()) throw std::runtime_error("no images found in " + hr_dir.string());
  Rng rng(seed);
  MetricsReport report;
  for (const auto& f : files) {
    const auto name = f.filename().string();
    try {
      auto hr = load_image(f);
      const auto h = hr.size(1) / 4 * 4;
      const auto w = hr.size(2) / 4 * 4;
      if (h == 0 || w == 0) throw std::runtime_error("image smaller than 4x4");
      hr = hr.slice(1, 0, h).slice(2, 0, w).contiguous();
      auto lr = degrade(hr, space, rng).lr;
      report.rows.push_back(run_row(up, name, lr, hr, sr_out_dir));
    } catch (const std::exception& e) {
      MetricsRow row;
      row.filename = name;
      row.error = e.what();
      report.rows.push_back(row);
    }
  }
  report.aggregate();
  report.environment = describe_environment();
  report.timestamp = utc_timestamp();
  return report;
}

void BenchmarkLadder::validate() const {
  if (steps.empty()) throw std::invalid_argument("ladder: no steps");
  for (std::size_t i = 0; i < steps.size(); ++i) {
    const auto& s = steps[i];
    const std::string where = "ladder.steps[" + std::to_string(i) + "]";
    if (s.in_height < 1 || s.in_width < 1) throw std::invalid_argument(where + ": input must be positive");
    if (s.out_height != 4 * s.in_height || s.out_width != 4 * s.in_width) {
      throw std::invalid_argument(where + ": target " + std::to_string(s.out_height) + "x" +
                                  std::to_string(s.out_width) + " is not 4x the input " +
                                  std::to_string(s.in_height) + "x" + std::to_string(s.in_width));
    }
  }
  if (repeats < 1) throw std::invalid_argument("ladder.repeats: must be positive");
  if (warmup < 3) throw std::invalid_argument("ladder.warmup: must be at least 3");
}

namespace {

BenchmarkLadder ladder_from_heights(std::initializer_list<int> heights) {
  BenchmarkLadder l;
  for (int h : heights) {
    const int w = h * 16 / 9;
    l.steps.push_back(LadderStep{h, w, 4 * h, 4 * w});
  }
  return l;
}

}  // namespace

BenchmarkLadder BenchmarkLadder::desk() { return ladder_from_heights({90, 120, 135, 180, 270}); }

BenchmarkLadder BenchmarkLadder::full() { return ladder_from_heights({360, 480, 540, 720, 1080}); }

BenchmarkLadder BenchmarkLadder::named(const std::string& name) {
  if (name == "desk") return desk();
  if (name == "full") return full();
  throw std::invalid_argument("unknown ladder '" + name + "' (expected desk or full)");
}

double median_forward_ms(Generator& gen, const torch::Tensor& input, int repeats, int warmup,
                         std::vector<double>* raw_ms) {
  torch::NoGradGuard guard;
  gen->eval();
  for (int i = 0; i < warmup; ++i) gen->forward(input);
  std::vector<double> times;
  for (int i = 0; i < repeats; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    auto out = gen->forward(input);
    times.push_back(std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
  }
  if (raw_ms != nullptr) *raw_ms = times;
  return median_of(times);
}

nlohmann::json BenchmarkReport::to_json() const {
  nlohmann::json steps = nlohmann::json::array();
  for (const auto& r : rows) {
    nlohmann::json j{{"input", {r.step.in_height, r.step.in_width}},
                     {"target", {r.step.out_height, r.step.out_width}},
                     {"skipped", r.skipped}};
    if (r.skipped) {
      j["note"] = r.note;
    } else {
      j["star_fps"] = r.star_fps;
      j["lite_fps"] = r.lite_fps;
      j["lite_over_star"] = r.ratio;
      j["star_ms"] = r.star_ms;
      j["lite_ms"] = r.lite_ms;
    }
    steps.push_back(j);
  }
  return nlohmann::json{{"steps", steps}, {"environment", environment}, {"timestamp", timestamp}};
}

BenchmarkReport benchmark(Generator& star, Generator& lite, const BenchmarkLadder& ladder) {
  ladder.validate();
  BenchmarkReport report;
  auto gen = make_torch_generator(0);
  for (const auto& step : ladder.steps) {
    BenchmarkRow row;
    row.step = step;
    try {
      auto input = torch::rand({1, 3, step.in_height, step.in_width}, gen);
      const double star_ms = median_forward_ms(star, input, ladder.repeats, ladder.warmup, &row.star_ms);
      const double lite_ms = median_forward_ms(lite, input, ladder.repeats, ladder.warmup, &row.lite_ms);
      row.star_fps = 1000.0 / star_ms;
      row.lite_fps = 1000.0 / lite_ms;
      row.ratio = row.lite_fps / row.star_fps;
    } catch (const std::bad_alloc&) {
      row = BenchmarkRow{step, true, "out of memory", 0.0, 0.0, 0.0, {}, {}};
    } catch (const c10::Error& e) {
      row = BenchmarkRow{step, true, std::string("failed: ") + e.what_without_backtrace(), 0.0, 0.0, 0.0, {}, {}};
    }
    report.rows.push_back(row);
  }
  report.environment = describe_environment();
  report.timestamp = utc_timestamp();
  return report;
}

std::string describe_environment() {
  std::string cpu = "unknown cpu";
  std::ifstream info("/proc/cpuinfo");
  for (std::string line; std::getline(info, line);) {
    if (line.rfind("model name", 0) == 0) {
      const auto colon = line.find(':');
      if (colon != std::string::npos) cpu = line.substr(colon + 2);
      break;
    }
  }
  std::ostringstream os;
  os << cpu << "; hardware threads " << std::thread::hardware_concurrency() << "; torch threads "
     << torch::get_num_threads() << "; libtorch " << TORCH_VERSION;
  return os.str();
}

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

}  // namespace blindsr
