#include <cmath>

#include "blindsr/discriminator.hpp"
#include "blindsr/random.hpp"

namespace blindsr {

namespace {

constexpr double kEps = 1e-12;

torch::Tensor unit(const torch::Tensor& x) { return x / x.norm().clamp_min(kEps); }

torch::Tensor as_matrix(const torch::Tensor& w) { return w.reshape({w.size(0), -1}); }

}  // namespace

PowerIterationState init_power_iteration(const torch::Tensor& weight, std::uint64_t seed) {
  torch::NoGradGuard guard;
  auto gen = make_torch_generator(seed);
  auto w = as_matrix(weight.detach());
  PowerIterationState st;
  st.u = unit(torch::randn({w.size(0)}, gen, w.options()));
  st.v = unit(torch::mv(w.t(), st.u));
  return st;
}

torch::Tensor spectral_sigma(const torch::Tensor& weight, const PowerIterationState& state) {
  auto w = as_matrix(weight);
  return torch::dot(state.u, torch::mv(w, state.v));
}

torch::Tensor spectral_normalize(const torch::Tensor& weight, PowerIterationState& state, int steps) {
  {
    torch::NoGradGuard guard;
    auto w = as_matrix(weight.detach());
    for (int i = 0; i < steps; ++i) {
      state.v = unit(torch::mv(w.t(), state.u));
      state.u = unit(torch::mv(w, state.v));
    }
  }
  return weight / spectral_sigma(weight, state);
}

SNConv2dImpl::SNConv2dImpl(const Conv2dSpec& spec, bool normalize, std::uint64_t seed)
    : spec_(spec), normalize_(normalize) {
  auto gen = make_torch_generator(seed);
  const double fan_in = static_cast<double>(spec.in) * spec.kernel * spec.kernel;
  const double bound = 1.0 / std::sqrt(fan_in);
  weight_orig = register_parameter(
      "weight_orig", (torch::rand({spec.out, spec.in, spec.kernel, spec.kernel}, gen) * 2.0 - 1.0) * bound);
  if (spec.bias) bias = register_parameter("bias", (torch::rand({spec.out}, gen) * 2.0 - 1.0) * bound);
  if (normalize_) {
    auto st = init_power_iteration(weight_orig, seed ^ 0x9e3779b97f4a7c15ULL);
    // Warm start so the first forward already sees a good sigma estimate.
    torch::NoGradGuard guard;
    spectral_normalize(weight_orig.detach(), st, 15);
    u_ = register_buffer("u", st.u);
    v_ = register_buffer("v", st.v);
  }
}

torch::Tensor SNConv2dImpl::effective_weight() {
  if (!normalize_) return weight_orig;
  if (is_training()) {
    PowerIterationState st{u_, v_};
    auto w = spectral_normalize(weight_orig, st, 1);
    torch::NoGradGuard guard;
    u_.copy_(st.u);
    v_.copy_(st.v);
    return w;
  }
  return weight_orig / spectral_sigma(weight_orig, PowerIterationState{u_.clone(), v_.clone()});
}

torch::Tensor SNConv2dImpl::forward(const torch::Tensor& x) {
  return torch::conv2d(x, effective_weight(), bias, spec_.stride, spec_.padding);
}

}  // namespace blindsr
