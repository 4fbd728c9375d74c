// Complex cross-correlation through real convolution, then a short training
// run of the three architectures on a small synthetic dataset.

#include <cstdio>

#include "cplx/complexconv.hpp"
#include "cplx/experiments.hpp"
#include "cplx/signal.hpp"

int main() {
  using namespace cplx;

  const IqSequence z({1, 0, -1, 2, 0.5f}, {0, 1, 0.5f, -1, 1});
  const ComplexFilter h({0.5f, -1}, {1, 0.25f});
  const auto fast = complex_xcorr(z, h);
  const auto direct = complex_oracle(z, h);
  std::puts("n   via real conv        direct");
  for (std::size_t n = 0; n < fast.size(); ++n) {
    std::printf("%zu  %7.3f %+7.3fj   %7.3f %+7.3fj\n", n, fast.i()[n], fast.q()[n], direct.i()[n], direct.q()[n]);
  }

  const auto ds = signal::generate_dataset(4, 1);
  std::printf("\n%zu frames, %zu classes\n", ds.size(), ds.mod_names.size());

  ExperimentConfig cfg;
  cfg.paradigm = Paradigm::Exp1;
  cfg.trials = 1;
  cfg.seed = 1;
  cfg.train.epochs = 3;
  cfg.train.batch_size = 32;
  cfg.train.val_fraction = 0;
  for (const auto& r : run_paradigm(ds, cfg)) {
    std::printf("%-9s %8zu parameters  test accuracy %5.1f%%\n", r.architecture.c_str(), r.parameters,
                100 * r.overall_accuracy);
  }
}
