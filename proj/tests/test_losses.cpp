#undef CHECK  // torch ships its own CHECK
#include <doctest.h>

#include <cmath>
#include <functional>
#include <numbers>

#include "blindsr/losses.hpp"
#include "blindsr/random.hpp"

using namespace blindsr;

namespace {

const auto kF64 = torch::TensorOptions().dtype(torch::kFloat64);

// -log(sigmoid(z)) for target 1, -log(1 - sigmoid(z)) for target 0.
long double bce_scalar(long double z, bool target_one) {
  const long double s = 1.0L / (1.0L + std::exp(-z));
  return target_one ? -std::log(s) : -std::log(1.0L - s);
}

double bce_oracle(const torch::Tensor& logits, bool target_one) {
  auto flat = logits.to(torch::kFloat64).flatten().contiguous();
  const double* p = flat.data_ptr<double>();
  long double sum = 0.0L;
  for (std::int64_t i = 0; i < flat.numel(); ++i) sum += bce_scalar(p[i], target_one);
  return static_cast<double>(sum / flat.numel());
}

double l1_oracle(const torch::Tensor& a, const torch::Tensor& b) {
  auto x = a.to(torch::kFloat64).flatten().contiguous();
  auto y = b.to(torch::kFloat64).flatten().contiguous();
  long double sum = 0.0L;
  for (std::int64_t i = 0; i < x.numel(); ++i) sum += std::fabs(static_cast<long double>(x.data_ptr<double>()[i]) - y.data_ptr<double>()[i]);
  return static_cast<double>(sum / x.numel());
}

// Same-padded 3x3 convolution (cross-correlation, as conv layers compute).
std::vector<std::vector<std::vector<double>>> conv3x3(const std::vector<std::vector<std::vector<double>>>& in,
                                                      const torch::Tensor& w, const torch::Tensor& b) {
  const int cin = in.size(), h = in[0].size(), wd = in[0][0].size(), cout = w.size(0);
  auto wa = w.accessor<double, 4>();
  auto ba = b.accessor<double, 1>();
  std::vector<std::vector<std::vector<double>>> out(cout, std::vector<std::vector<double>>(h, std::vector<double>(wd)));
  for (int o = 0; o < cout; ++o)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < wd; ++x) {
        double s = ba[o];
        for (int c = 0; c < cin; ++c)
          for (int dy = -1; dy <= 1; ++dy)
            for (int dx = -1; dx <= 1; ++dx) {
              const int yy = y + dy, xx = x + dx;
              if (yy < 0 || yy >= h || xx < 0 || xx >= wd) continue;
              s += wa[o][c][dy + 1][dx + 1] * in[c][yy][xx];
            }
        out[o][y][x] = s;
      }
  return out;
}

using Maps = std::vector<std::vector<std::vector<double>>>;

Maps to_maps(const torch::Tensor& img) {
  auto a = img.accessor<double, 3>();
  Maps m(img.size(0), std::vector<std::vector<double>>(img.size(1), std::vector<double>(img.size(2))));
  for (std::size_t c = 0; c < m.size(); ++c)
    for (std::size_t y = 0; y < m[c].size(); ++y)
      for (std::size_t x = 0; x < m[c][y].size(); ++x) m[c][y][x] = a[c][y][x];
  return m;
}

Maps relu_pool(const Maps& in) {
  Maps out(in.size(), std::vector<std::vector<double>>(in[0].size() / 2, std::vector<double>(in[0][0].size() / 2)));
  for (std::size_t c = 0; c < in.size(); ++c)
    for (std::size_t y = 0; y < out[c].size(); ++y)
      for (std::size_t x = 0; x < out[c][y].size(); ++x) {
        double m = 0.0;  // relu folded in: max(0, window max)
        for (int i = 0; i < 2; ++i)
          for (int j = 0; j < 2; ++j) m = std::max(m, in[c][2 * y + i][2 * x + j]);
        out[c][y][x] = m;
      }
  return out;
}

double mean_abs_diff(const Maps& a, const Maps& b) {
  double s = 0.0;
  std::size_t n = 0;
  for (std::size_t c = 0; c < a.size(); ++c)
    for (std::size_t y = 0; y < a[c].size(); ++y)
      for (std::size_t x = 0; x < a[c][y].size(); ++x, ++n) s += std::fabs(a[c][y][x] - b[c][y][x]);
  return s / n;
}

ExtractorConfig tiny_vgg() {
  ExtractorConfig cfg;
  cfg.kind = BackboneKind::VggStyle;
  cfg.base_width = 2;
  cfg.blocks = {1, 1};
  cfg.tap_weights = {1.0, 0.5};
  cfg.normalize_input = false;
  return cfg;
}

// Known weights: small distinct values from a closed-form pattern.
FeatureExtractor tiny_fixed_extractor() {
  FeatureExtractor fx(tiny_vgg());
  fx->to(torch::kFloat64);
  torch::NoGradGuard guard;
  int k = 0;
  for (auto& p : fx->parameters()) {
    auto flat = torch::arange(p.numel(), kF64);
    p.copy_((torch::sin(flat * 0.7 + k) * 0.5).view(p.sizes()));
    ++k;
  }
  return fx;
}

double tiny_perceptual_oracle(FeatureExtractor& fx, const torch::Tensor& sr, const torch::Tensor& hr) {
  auto params = fx->named_parameters();
  const auto w0 = params["features.0.weight"], b0 = params["features.0.bias"];
  const auto w1 = params["features.3.weight"], b1 = params["features.3.bias"];
  double total = 0.0;
  for (std::int64_t n = 0; n < sr.size(0); ++n) {
    auto a0 = conv3x3(to_maps(sr[n]), w0, b0), h0 = conv3x3(to_maps(hr[n]), w0, b0);
    auto a1 = conv3x3(relu_pool(a0), w1, b1), h1 = conv3x3(relu_pool(h0), w1, b1);
    total += 1.0 * mean_abs_diff(a0, h0) + 0.5 * mean_abs_diff(a1, h1);
  }
  // Batch mean of per-image means equals the batch-wide mean for equal-sized images.
  return total / sr.size(0);
}

// Norm-wise relative error between analytic and central-difference gradients.
double gradient_error(const std::function<torch::Tensor(const torch::Tensor&)>& f, torch::Tensor x) {
  x = x.detach().clone().requires_grad_(true);
  auto y = f(x);
  y.backward();
  auto analytic = x.grad().detach().clone();
  auto numeric = torch::zeros_like(analytic);
  const double h = 1e-5;
  torch::NoGradGuard guard;
  auto flat = x.detach().view(-1);
  auto nflat = numeric.view(-1);
  for (std::int64_t i = 0; i < flat.numel(); ++i) {
    const double orig = flat[i].item<double>();
    flat[i] = orig + h;
    const double fp = f(x.detach()).item<double>();
    flat[i] = orig - h;
    const double fm = f(x.detach()).item<double>();
    flat[i] = orig;
    nflat[i] = (fp - fm) / (2 * h);
  }
  const double denom = std::max(analytic.norm().item<double>(), numeric.norm().item<double>());
  return denom == 0.0 ? 0.0 : (analytic - numeric).norm().item<double>() / denom;
}

}  // namespace

TEST_CASE("discriminator loss") {
  auto zeros = torch::zeros({2, 1, 4, 4}, kF64);
  CHECK(discriminator_loss(zeros, zeros).item<double>() == doctest::Approx(2.0 * std::numbers::ln2).epsilon(1e-12));
  auto big = torch::full({1, 1, 4, 4}, 40.0, kF64);
  CHECK(discriminator_loss(big, -big).item<double>() < 1e-15);

  Rng rng(1);
  auto gen = make_torch_generator(2);
  for (int i = 0; i < 5; ++i) {
    auto real = torch::randn({1, 1, 4, 4}, gen, kF64) * rng.uniform(0.5, 8.0);
    auto fake = torch::randn({1, 1, 4, 4}, gen, kF64) * rng.uniform(0.5, 8.0);
    const double expected = bce_oracle(real, true) + bce_oracle(fake, false);
    CHECK(std::abs(discriminator_loss(real, fake).item<double>() - expected) <= 1e-10);
  }
  CHECK_THROWS(discriminator_loss(torch::zeros({1, 1, 4, 4}), torch::zeros({1, 1, 2, 2})));
}

TEST_CASE("total discriminator loss") {
  LossWeights w;
  auto t = [](double v) { return torch::tensor(v, kF64); };
  CHECK(total_discriminator_loss(t(0.7), t(0.3), w).item<double>() == doctest::Approx(1.0).epsilon(1e-15));
  w.lambda2 = 0.0;
  CHECK(total_discriminator_loss(t(0.7), t(0.3), w).item<double>() == doctest::Approx(0.7).epsilon(1e-15));
  w.lambda1 = 2.0;
  w.lambda2 = 3.0;
  CHECK(total_discriminator_loss(t(1.0), t(1.0), w).item<double>() == doctest::Approx(5.0).epsilon(1e-15));
}

TEST_CASE("generator adversarial loss") {
  LossWeights w;
  auto big = torch::full({1, 1, 8, 8}, 40.0, kF64);
  CHECK(generator_adversarial_loss(big, big.narrow(2, 0, 4).narrow(3, 0, 4), w).item<double>() < 1e-15);
  auto zeros = torch::zeros({1, 1, 8, 8}, kF64);
  CHECK(generator_adversarial_loss(zeros, torch::zeros({1, 1, 4, 4}, kF64), w).item<double>() ==
        doctest::Approx(2.0 * std::numbers::ln2).epsilon(1e-12));

  auto gen = make_torch_generator(3);
  w.lambda1 = 0.7;
  w.lambda2 = 1.3;
  auto n = torch::randn({2, 1, 8, 8}, gen, kF64) * 3;
  auto s = torch::randn({2, 1, 4, 4}, gen, kF64) * 3;
  const double expected = 0.7 * bce_oracle(n, true) + 1.3 * bce_oracle(s, true);
  CHECK(std::abs(generator_adversarial_loss(n, s, w).item<double>() - expected) <= 1e-10);
}

TEST_CASE("content loss") {
  auto gen = make_torch_generator(4);
  auto hr = torch::rand({2, 3, 8, 8}, gen, kF64);
  CHECK(content_loss(hr, hr).item<double>() == 0.0);
  CHECK(content_loss(hr + 0.1, hr).item<double>() == doctest::Approx(0.1).epsilon(1e-12));
  auto sr = torch::rand({2, 3, 8, 8}, gen, kF64);
  CHECK(std::abs(content_loss(sr, hr).item<double>() - l1_oracle(sr, hr)) <= 1e-12);
  CHECK_THROWS(content_loss(sr, hr.narrow(3, 0, 4)));
}

TEST_CASE("perceptual loss") {
  auto fx = tiny_fixed_extractor();
  auto gen = make_torch_generator(5);
  auto sr = torch::rand({2, 3, 8, 8}, gen, kF64);
  auto hr = torch::rand({2, 3, 8, 8}, gen, kF64);

  CHECK(perceptual_loss(hr, hr, fx).item<double>() == 0.0);
  CHECK(perceptual_loss(sr, hr, fx).item<double>() == perceptual_loss(hr, sr, fx).item<double>());
  CHECK(std::abs(perceptual_loss(sr, hr, fx).item<double>() - tiny_perceptual_oracle(fx, sr, hr)) <= 1e-6);
  CHECK_THROWS(perceptual_loss(sr, hr.narrow(2, 0, 4), fx));
}

TEST_CASE("feature extractors") {
  SUBCASE("parameters are frozen and stay in evaluation mode") {
    FeatureExtractor fx(tiny_vgg());
    fx->train(true);
    CHECK(!fx->is_training());
    for (const auto& p : fx->parameters()) CHECK(!p.requires_grad());
  }
  SUBCASE("documented tap shapes") {
    FeatureExtractor vgg(ExtractorConfig::vgg19());
    auto shapes = vgg->tap_shapes(64, 64);
    REQUIRE(shapes.size() == 5);
    const std::array<std::array<std::int64_t, 3>, 5> expected{{{64, 64, 64}, {128, 32, 32}, {256, 16, 16},
                                                              {512, 8, 8}, {512, 4, 4}}};
    for (std::size_t i = 0; i < 5; ++i) CHECK(shapes[i] == expected[i]);

    FeatureExtractor res(ExtractorConfig::resnet50());
    auto rs = res->tap_shapes(64, 64);
    REQUIRE(rs.size() == 4);
    const std::array<std::array<std::int64_t, 3>, 4> rexp{{{256, 16, 16}, {512, 8, 8}, {1024, 4, 4}, {2048, 2, 2}}};
    for (std::size_t i = 0; i < 4; ++i) CHECK(rs[i] == rexp[i]);
  }
  SUBCASE("torchvision parameter names") {
    FeatureExtractor vgg(ExtractorConfig::vgg19());
    auto names = vgg->named_parameters();
    CHECK(names.contains("features.0.weight"));
    CHECK(names.contains("features.34.weight"));
    FeatureExtractor res(ExtractorConfig::resnet50());
    auto rn = res->named_parameters();
    CHECK(rn.contains("conv1.weight"));
    CHECK(rn.contains("layer1.0.downsample.0.weight"));
    CHECK(rn.contains("layer4.2.bn3.bias"));
    CHECK(rn.size() == 159);  // torchvision resnet50 minus the classifier
  }
  SUBCASE("missing pretrained weights fail loudly") {
    auto cfg = tiny_vgg();
    cfg.weights_path = "/nonexistent/backbone.pt";
    CHECK_THROWS_AS(FeatureExtractor{cfg}, std::runtime_error);
  }
  SUBCASE("config validation") {
    auto cfg = tiny_vgg();
    cfg.tap_weights = {1.0};
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    CHECK_THROWS_AS(backbone_kind_from_string("densenet"), std::invalid_argument);
  }
}

TEST_CASE("dual perceptual loss") {
  LossWeights w;
  auto t = [](double v) { return torch::tensor(v, kF64); };
  CHECK(dual_perceptual_loss(t(0.3), t(0.3), w).item<double>() == doctest::Approx(0.6).epsilon(1e-12));
  CHECK(dual_perceptual_loss(t(0.3), t(0.0), w).item<double>() == doctest::Approx(0.3).epsilon(1e-12));
  CHECK(dual_perceptual_zeta(0.2, 0.1, w) == doctest::Approx(2.0).epsilon(1e-6));
  CHECK(dual_perceptual_loss(t(0.2), t(0.1), w).item<double>() == doctest::Approx(0.4).epsilon(1e-6));

  // Direct evaluation of l_vgg + zeta / mu * l_res.
  w.mu = 2.5;
  w.c = 1e-3;
  Rng rng(8);
  for (int i = 0; i < 20; ++i) {
    const double a = rng.uniform(0.0, 2.0), b = rng.uniform(0.0, 2.0);
    const double zeta = (a + w.c) / (b + w.c);
    CHECK(std::abs(dual_perceptual_loss(t(a), t(b), w).item<double>() - (a + zeta / w.mu * b)) <= 1e-12);
    CHECK(std::abs(dual_perceptual_zeta(a, b, w) - zeta) <= 1e-12);
  }

  // zeta carries no gradient: d/d l_vgg = 1, d/d l_res = zeta / mu.
  auto lv = t(0.2).requires_grad_(true), lr = t(0.1).requires_grad_(true);
  dual_perceptual_loss(lv, lr, w).backward();
  CHECK(lv.grad().item<double>() == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(lr.grad().item<double>() == doctest::Approx((0.2 + w.c) / (0.1 + w.c) / w.mu).epsilon(1e-12));
}

TEST_CASE("total generator loss") {
  LossWeights w;
  auto t = [](double v) { return torch::tensor(v, kF64); };
  CHECK(total_generator_loss(t(0.5), t(1.0), t(0.3), w).item<double>() == doctest::Approx(0.9).epsilon(1e-12));
  CHECK(total_generator_loss(t(0), t(0), t(0), w).item<double>() == 0.0);

  w.gamma_perceptual = 0.0;
  auto p = t(0.3).requires_grad_(true);
  auto c = t(0.5).requires_grad_(true);
  total_generator_loss(c, t(1.0), p, w).backward();
  CHECK((!p.grad().defined() || p.grad().item<double>() == 0.0));
  CHECK(c.grad().item<double>() == 1.0);
}

TEST_CASE("loss weight validation") {
  LossWeights w;
  CHECK_NOTHROW(w.validate());
  w.mu = 0.0;
  CHECK_THROWS_AS(w.validate(), std::invalid_argument);
  w = LossWeights{};
  w.c = 0.0;
  CHECK_THROWS_AS(w.validate(), std::invalid_argument);
  w = LossWeights{};
  w.eta_adversarial = std::nan("");
  CHECK_THROWS_AS(w.validate(), std::invalid_argument);
}

TEST_CASE("gradients match central differences") {
  auto gen = make_torch_generator(6);
  auto hr = torch::rand({1, 3, 8, 8}, gen, kF64);
  auto sr = torch::rand({1, 3, 8, 8}, gen, kF64);

  SUBCASE("content") {
    CHECK(gradient_error([&](const torch::Tensor& x) { return content_loss(x, hr); }, sr) < 1e-4);
  }
  SUBCASE("adversarial") {
    LossWeights w;
    w.lambda2 = 0.6;
    auto ln = torch::randn({1, 1, 8, 8}, gen, kF64) * 2;
    auto ls = torch::randn({1, 1, 4, 4}, gen, kF64) * 2;
    auto both = torch::cat({ln.flatten(), ls.flatten()});
    auto f = [&](const torch::Tensor& v) {
      return generator_adversarial_loss(v.narrow(0, 0, 64).view({1, 1, 8, 8}), v.narrow(0, 64, 16).view({1, 1, 4, 4}), w);
    };
    CHECK(gradient_error(f, both) < 1e-4);
    auto fd = [&](const torch::Tensor& v) {
      return discriminator_loss(v.narrow(0, 0, 64).view({1, 1, 8, 8}), ln);
    };
    CHECK(gradient_error(fd, both) < 1e-4);
  }
  SUBCASE("dual perceptual") {
    auto vgg = tiny_fixed_extractor();
    auto res_cfg = tiny_vgg();
    res_cfg.tap_weights = {0.3, 1.0};
    FeatureExtractor res(res_cfg);
    res->to(torch::kFloat64);
    LossWeights w;
    w.mu = 1.5;
    // zeta is held at its value at the evaluation point, matching the detached weighting.
    const double zeta =
        dual_perceptual_zeta(perceptual_loss(sr, hr, vgg).item<double>(), perceptual_loss(sr, hr, res).item<double>(), w);
    auto frozen = [&](const torch::Tensor& x) {
      return perceptual_loss(x, hr, vgg) + zeta / w.mu * perceptual_loss(x, hr, res);
    };
    auto analytic = [&](const torch::Tensor& x) {
      return dual_perceptual_loss(perceptual_loss(x, hr, vgg), perceptual_loss(x, hr, res), w);
    };
    // Same value at the base point, and the analytic gradient matches the frozen-zeta differences.
    CHECK(std::abs(frozen(sr).item<double>() - analytic(sr).item<double>()) <= 1e-12);
    auto x = sr.clone().requires_grad_(true);
    analytic(x).backward();
    auto g = x.grad().clone();
    auto y = sr.clone().requires_grad_(true);
    frozen(y).backward();
    CHECK((g - y.grad()).abs().max().item<double>() <= 1e-12);
    CHECK(gradient_error(frozen, sr) < 1e-4);
  }
}
