#define DOCTEST_CONFIG_IMPLEMENT
#undef CHECK  // torch ships its own CHECK
#include <doctest.h>

#include <torch/torch.h>

int main(int argc, char** argv) {
  // Single thread keeps every floating-point reduction order fixed.
  torch::set_num_threads(1);
  doctest::Context ctx(argc, argv);
  return ctx.run();
}
