#pragma once

#include <stdexcept>
#include <string>

#include <torch/torch.h>

namespace blindsr {

// Copies every parameter and buffer of `src` into the same-named slot of
// `dst`. Throws if the two modules do not share an identical layout.
inline void copy_module_state(torch::nn::Module& dst, const torch::nn::Module& src) {
  torch::NoGradGuard guard;
  auto copy = [](const auto& from, const auto& to, const char* what) {
    if (from.size() != to.size()) throw std::invalid_argument(std::string("module ") + what + " count mismatch");
    for (const auto& item : from) {
      const auto* target = to.find(item.key());
      if (target == nullptr) throw std::invalid_argument(std::string("missing ") + what + " '" + item.key() + "'");
      if (!target->sizes().equals(item.value().sizes())) {
        throw std::invalid_argument(std::string("shape mismatch for ") + what + " '" + item.key() + "'");
      }
      target->copy_(item.value());
    }
  };
  copy(src.named_parameters(), dst.named_parameters(), "parameter");
  copy(src.named_buffers(), dst.named_buffers(), "buffer");
}

inline void set_requires_grad(torch::nn::Module& m, bool flag) {
  for (auto& p : m.parameters()) p.set_requires_grad(flag);
}

}  // namespace blindsr
