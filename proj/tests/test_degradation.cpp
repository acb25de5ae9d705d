#undef CHECK  // torch ships its own CHECK
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>

#include "blindsr/degradation.hpp"
#include "blindsr/image.hpp"

using namespace blindsr;

namespace {

constexpr double kPi = std::numbers::pi;

torch::Tensor random_image(std::int64_t c, std::int64_t h, std::int64_t w, std::uint64_t seed) {
  auto gen = make_torch_generator(seed);
  return torch::rand({c, h, w}, gen);
}

int reflect(int i, int n) {
  while (i < 0 || i >= n) i = i < 0 ? -i : 2 * n - 2 - i;
  return i;
}

// out(y, x) = sum_{u, v} k(u, v) * in(y - (u - r), x - (v - r)), reflected borders.
torch::Tensor direct_convolution(const torch::Tensor& img, const torch::Tensor& k) {
  const int c = img.size(0), h = img.size(1), w = img.size(2), n = k.size(0), r = n / 2;
  auto out = torch::zeros({c, h, w}, torch::kFloat64);
  auto src = img.to(torch::kFloat64);
  auto a = src.accessor<double, 3>();
  auto ka = k.accessor<double, 2>();
  auto o = out.accessor<double, 3>();
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        double s = 0.0;
        for (int u = 0; u < n; ++u)
          for (int v = 0; v < n; ++v) s += ka[u][v] * a[ch][reflect(y - (u - r), h)][reflect(x - (v - r), w)];
        o[ch][y][x] = s;
      }
  return out;
}

double max_abs_diff(const torch::Tensor& a, const torch::Tensor& b) {
  return (a.to(torch::kFloat64) - b.to(torch::kFloat64)).abs().max().item<double>();
}

}  // namespace

TEST_CASE("default space satisfies its invariants") {
  auto space = DegradationSpace::defaults();
  CHECK_NOTHROW(space.validate());
  CHECK(space.levels[0].order == 1);
  CHECK(space.levels[1].order == 1);
  CHECK(space.levels[2].order == 2);
  double sum = 0.0;
  for (double p : space.level_probs) sum += p;
  CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("D1 ranges are contained in D2 ranges") {
  auto s = DegradationSpace::defaults();
  const auto& d1 = s.levels[0].first;
  const auto& d2 = s.levels[1].first;
  auto inside = [](const Range& a, const Range& b) { return a.min >= b.min && a.max <= b.max; };
  CHECK(inside(d1.blur_sigma, d2.blur_sigma));
  CHECK(inside(d1.resize_scale, d2.resize_scale));
  CHECK(inside(d1.gaussian_noise_sigma, d2.gaussian_noise_sigma));
  CHECK(inside(d1.poisson_noise_scale, d2.poisson_noise_scale));
  CHECK(d1.jpeg_quality.min >= d2.jpeg_quality.min);
  CHECK(d1.jpeg_quality.max <= d2.jpeg_quality.max);
}

TEST_CASE("validation names the offending field") {
  auto s = DegradationSpace::defaults();
  s.level_probs = {0.5, 0.5, 0.5};
  CHECK_THROWS_WITH_AS(s.validate(), doctest::Contains("level_probs"), std::invalid_argument);
  s = DegradationSpace::defaults();
  s.levels[1].first.jpeg_quality = {50, 101};
  CHECK_THROWS_WITH_AS(s.validate(), doctest::Contains("levels[1].first.jpeg_quality"), std::invalid_argument);
  s = DegradationSpace::defaults();
  s.levels[2].first.iso_aniso_probs = {0.7, 0.7};
  CHECK_THROWS_WITH_AS(s.validate(), doctest::Contains("levels[2].first.iso_aniso_probs"), std::invalid_argument);
  s = DegradationSpace::defaults();
  s.levels[0].first.blur_sigma = {1.0, 0.5};
  CHECK_THROWS_AS(s.validate(), std::invalid_argument);
}

TEST_CASE("sample_level") {
  auto space = DegradationSpace::defaults();

  SUBCASE("frequencies over 10,000 draws") {
    Rng rng(7);
    std::array<int, 3> counts{};
    for (int i = 0; i < 10000; ++i) ++counts[sample_level(space, rng)];
    CHECK(std::abs(counts[0] / 1e4 - 0.3) <= 0.02);
    CHECK(std::abs(counts[1] / 1e4 - 0.3) <= 0.02);
    CHECK(std::abs(counts[2] / 1e4 - 0.4) <= 0.02);
  }
  SUBCASE("degenerate distribution") {
    space.level_probs = {1.0, 0.0, 0.0};
    Rng rng(3);
    for (int i = 0; i < 1000; ++i) REQUIRE(sample_level(space, rng) == 0);
  }
  SUBCASE("seed 42 regression vector") {
    Rng rng(42);
    const std::array<std::size_t, 5> expected{2, 2, 2, 0, 2};
    for (std::size_t e : expected) CHECK(sample_level(space, rng) == e);
  }
}

TEST_CASE("gaussian kernels") {
  SUBCASE("isotropic kernel is symmetric under transpose and rotation") {
    auto k = make_gaussian_kernel(1.0, 1.0, 0.3, 21).weights();
    CHECK(max_abs_diff(k, k.t()) <= 1e-9);
    CHECK(max_abs_diff(k, torch::rot90(k, 1, {0, 1})) <= 1e-9);
    CHECK(make_gaussian_kernel(1.0, 1.0, 0.0, 21).kind() == KernelKind::IsoGaussian);
  }
  SUBCASE("normalized for arbitrary parameters") {
    Rng rng(11);
    for (int i = 0; i < 50; ++i) {
      const int size = 2 * rng.uniform_int(1, 12) + 1;
      auto k = make_gaussian_kernel(rng.uniform(0.1, 4.0), rng.uniform(0.1, 4.0), rng.uniform(-kPi, kPi), size);
      CHECK(std::abs(k.weights().sum().item<double>() - 1.0) <= 1e-6);
    }
  }
  SUBCASE("anisotropic kernel matches the bivariate Gaussian formula") {
    auto k = make_gaussian_kernel(2.0, 0.5, 0.0, 21).weights();
    // angle 0: sigma1 along the horizontal axis (columns), sigma2 along rows.
    auto oracle = torch::empty({21, 21}, torch::kFloat64);
    double total = 0.0;
    for (int row = 0; row < 21; ++row)
      for (int col = 0; col < 21; ++col) {
        const double x = col - 10, y = row - 10;
        const double v = std::exp(-x * x / (2 * 4.0) - y * y / (2 * 0.25));
        oracle[row][col] = v;
        total += v;
      }
    oracle /= total;
    CHECK(max_abs_diff(k, oracle) <= 1e-12);
    auto spread = [](const torch::Tensor& line) {
      auto p = line / line.sum();
      auto pos = torch::arange(line.size(0), torch::kFloat64) - (line.size(0) - 1) / 2.0;
      return (p * pos * pos).sum().item<double>();
    };
    CHECK(spread(k[10]) > spread(k.select(1, 10)));
  }
  SUBCASE("rejects bad arguments") {
    CHECK_THROWS_AS(make_gaussian_kernel(1.0, 1.0, 0.0, 20), std::invalid_argument);
    CHECK_THROWS_AS(make_gaussian_kernel(1.0, 1.0, 0.0, 1), std::invalid_argument);
    CHECK_THROWS_AS(make_gaussian_kernel(0.0, 1.0, 0.0, 21), std::invalid_argument);
    CHECK_THROWS_AS(make_gaussian_kernel(1.0, -1.0, 0.0, 21), std::invalid_argument);
  }
}

TEST_CASE("sinc kernels") {
  for (double cutoff : {kPi / 3.0, kPi / 2.0, kPi}) {
    auto k = make_sinc_kernel(cutoff, 21).weights();
    CHECK(std::abs(k.sum().item<double>() - 1.0) <= 1e-6);
    CHECK(max_abs_diff(k, torch::rot90(k, 1, {0, 1})) <= 1e-9);
  }
  auto k = make_sinc_kernel(kPi, 21).weights();
  CHECK(k[10][10].item<double>() == k.max().item<double>());
  CHECK_THROWS_AS(make_sinc_kernel(0.0, 21), std::invalid_argument);
  CHECK_THROWS_AS(make_sinc_kernel(3.2, 21), std::invalid_argument);
  CHECK_THROWS_AS(make_sinc_kernel(1.0, 8), std::invalid_argument);
}

TEST_CASE("apply_blur") {
  SUBCASE("constant image stays constant") {
    auto img = torch::full({3, 20, 24}, 0.37f);
    auto out = apply_blur(img, make_gaussian_kernel(1.7, 0.6, 0.4, 21));
    CHECK(max_abs_diff(out, img) <= 1e-6);
  }
  SUBCASE("1x1 identity kernel is exact") {
    auto img = random_image(3, 13, 9, 1);
    BlurKernel id(torch::ones({1, 1}, torch::kFloat64), KernelKind::IsoGaussian);
    CHECK(torch::equal(apply_blur(img, id), img));
  }
  SUBCASE("matches a direct convolution with reflected borders") {
    auto img = random_image(3, 16, 16, 2);
    // Asymmetric kernel so a missing flip would be caught.
    auto w = torch::tensor({{0.0, 0.1, 0.05}, {0.2, 0.3, 0.0}, {0.15, 0.1, 0.1}}, torch::kFloat64);
    BlurKernel k(w, KernelKind::AnisoGaussian);
    CHECK(max_abs_diff(apply_blur(img, k), direct_convolution(img, k.weights())) <= 1e-5);
  }
  SUBCASE("kernel wider than the image") {
    auto img = random_image(1, 5, 7, 3);
    auto k = make_gaussian_kernel(2.0, 1.0, 0.5, 21);
    CHECK(max_abs_diff(apply_blur(img, k), direct_convolution(img, k.weights())) <= 1e-5);
  }
}

TEST_CASE("jpeg_compress") {
  auto gray = torch::full({3, 32, 32}, 0.5f);
  CHECK((jpeg_compress(gray, 100) - gray).abs().max().item<double>() < 2.0 / 255.0);

  auto noise = random_image(3, 64, 64, 4);
  const double mae10 = (jpeg_compress(noise, 10) - noise).abs().mean().item<double>();
  const double mae95 = (jpeg_compress(noise, 95) - noise).abs().mean().item<double>();
  CHECK(mae10 > mae95);

  auto img = random_image(3, 40, 48, 5);
  CHECK(torch::equal(jpeg_compress(img, 50), jpeg_compress(img, 50)));
  CHECK_THROWS_AS(jpeg_compress(img, 0), std::invalid_argument);
  CHECK_THROWS_AS(jpeg_compress(img, 101), std::invalid_argument);
}

TEST_CASE("noise") {
  auto img = random_image(3, 32, 32, 6);
  SUBCASE("zero Gaussian sigma is the identity") {
    StageRanges r;
    r.gaussian_noise_sigma = {0.0, 0.0};
    r.noise_type_probs = {1.0, 0.0};
    Rng rng(1);
    CHECK(torch::equal(add_noise(img, r, rng), img));
  }
  SUBCASE("Gaussian noise has the requested standard deviation") {
    auto flat = torch::full({1, 256, 256}, 0.5f);
    auto out = add_gaussian_noise(flat, 25.0, 99);
    const double sd = (out - flat).to(torch::kFloat64).std().item<double>();
    CHECK(std::abs(sd - 25.0 / 255.0) <= 0.1 * 25.0 / 255.0);
  }
  SUBCASE("deterministic under a fixed seed") {
    CHECK(torch::equal(add_gaussian_noise(img, 10.0, 5), add_gaussian_noise(img, 10.0, 5)));
    CHECK(torch::equal(add_poisson_noise(img, 1.0, 5), add_poisson_noise(img, 1.0, 5)));
    CHECK(!torch::equal(add_gaussian_noise(img, 10.0, 5), add_gaussian_noise(img, 10.0, 6)));
  }
  SUBCASE("outputs stay in range") {
    auto g = add_gaussian_noise(img, 50.0, 1);
    auto p = add_poisson_noise(img, 2.0, 1);
    CHECK(g.min().item<float>() >= 0.0f);
    CHECK(g.max().item<float>() <= 1.0f);
    CHECK(p.min().item<float>() >= 0.0f);
    CHECK(p.max().item<float>() <= 1.0f);
  }
}

TEST_CASE("degrade") {
  auto space = DegradationSpace::defaults();
  SUBCASE("quarter-size output, in range, replayable") {
    auto hr = random_image(3, 256, 256, 8);
    Rng rng(123);
    for (int i = 0; i < 6; ++i) {
      auto d = degrade(hr, space, rng);
      CHECK(d.lr.sizes() == torch::IntArrayRef({3, 64, 64}));
      CHECK(d.lr.min().item<float>() >= 0.0f);
      CHECK(d.lr.max().item<float>() <= 1.0f);
      CHECK(torch::equal(apply_recipe(hr, d.recipe), d.lr));
      CHECK(d.recipe.passes() == (d.recipe.level_index == 2 ? 2 : 1));
    }
  }
  SUBCASE("non-square input") {
    auto hr = random_image(3, 48, 80, 9);
    Rng rng(5);
    auto d = degrade(hr, space, rng);
    CHECK(d.lr.sizes() == torch::IntArrayRef({3, 12, 20}));
  }
  SUBCASE("rejects sizes not divisible by 4") {
    Rng rng(1);
    CHECK_THROWS_AS(degrade(random_image(3, 30, 32, 1), space, rng), std::invalid_argument);
  }
  SUBCASE("same seed gives the same result") {
    auto hr = random_image(3, 64, 64, 10);
    Rng a(77), b(77);
    auto da = degrade(hr, space, a);
    auto db = degrade(hr, space, b);
    CHECK(da.recipe == db.recipe);
    CHECK(torch::equal(da.lr, db.lr));
  }
  SUBCASE("recipe JSON round trip keeps full precision") {
    auto hr = random_image(3, 64, 64, 11);
    Rng rng(19);
    for (int i = 0; i < 10; ++i) {
      auto d = degrade(hr, space, rng);
      auto back = recipe_from_json(nlohmann::json::parse(recipe_to_json(d.recipe).dump()));
      CHECK(back == d.recipe);
      CHECK(torch::equal(apply_recipe(hr, back), d.lr));
    }
  }
}

TEST_CASE("stage statistics over 10,000 recipes") {
  auto space = DegradationSpace::defaults();
  SUBCASE("isotropic fraction of Gaussian kernels") {
    Rng rng(2024);
    int iso = 0, total = 0;
    for (int i = 0; i < 10000; ++i) {
      auto r = sample_recipe(space, 64, 64, rng);
      for (const auto& s : r.stages) {
        if (const auto* b = std::get_if<BlurStage>(&s.op); b && b->kind != KernelKind::Sinc) {
          ++total;
          iso += b->kind == KernelKind::IsoGaussian;
        }
      }
    }
    CHECK(std::abs(static_cast<double>(iso) / total - 0.65) <= 0.02);
  }
  SUBCASE("D3 second-stage blur and sinc rates") {
    space.level_probs = {0.0, 0.0, 1.0};
    Rng rng(99);
    int blur = 0, sinc = 0;
    for (int i = 0; i < 10000; ++i) {
      auto r = sample_recipe(space, 64, 64, rng);
      REQUIRE(r.level_index == 2);
      blur += r.has_gaussian_blur(1);
      sinc += r.has_stage(1, KernelKind::Sinc);
      REQUIRE(r.has_gaussian_blur(0));
    }
    CHECK(std::abs(blur / 1e4 - 0.8) <= 0.02);
    CHECK(std::abs(sinc / 1e4 - 0.8) <= 0.02);
  }
  SUBCASE("sampled parameters stay inside their ranges") {
    Rng rng(5);
    for (int i = 0; i < 2000; ++i) {
      auto r = sample_recipe(space, 128, 128, rng);
      const auto& level = space.levels[r.level_index];
      for (const auto& s : r.stages) {
        if (s.pass > 1) continue;
        const auto& ranges = s.pass == 0 ? level.first : level.second;
        if (const auto* b = std::get_if<BlurStage>(&s.op)) {
          if (b->kind == KernelKind::Sinc) {
            CHECK(b->cutoff >= level.sinc_cutoff.min);
            CHECK(b->cutoff <= level.sinc_cutoff.max);
          } else {
            CHECK(b->sigma1 >= ranges.blur_sigma.min);
            CHECK(b->sigma1 <= ranges.blur_sigma.max);
          }
        } else if (const auto* j = std::get_if<JpegStage>(&s.op)) {
          CHECK(j->quality >= ranges.jpeg_quality.min);
          CHECK(j->quality <= ranges.jpeg_quality.max);
        } else if (const auto* g = std::get_if<GaussianNoiseStage>(&s.op)) {
          CHECK(g->sigma >= ranges.gaussian_noise_sigma.min);
          CHECK(g->sigma <= ranges.gaussian_noise_sigma.max);
        }
      }
    }
  }
}

TEST_CASE("image I/O round trip") {
  const auto dir = std::filesystem::temp_directory_path() / "blindsr_image_io";
  std::filesystem::remove_all(dir);
  auto img = (random_image(3, 9, 14, 12) * 255).round() / 255;
  save_png(dir / "a.png", img);
  save_png(dir / "b.png", img);
  std::filesystem::create_directories(dir / "sub");
  { std::ofstream(dir / "notes.txt") << "x"; }
  auto back = load_image(dir / "a.png");
  CHECK(max_abs_diff(back, img) <= 1e-6);
  auto files = list_images(dir);
  REQUIRE(files.size() == 2);
  CHECK(files[0].filename() == "a.png");
  CHECK_THROWS_AS(load_image(dir / "notes.txt"), std::runtime_error);
  std::filesystem::remove_all(dir);
}
