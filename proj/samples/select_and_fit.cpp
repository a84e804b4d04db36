// Draws a sample from the first preset, picks the number of bins with the D1
// block scheme and prints the fitted weights next to the truth.

#include <cstdio>

#include "histmix/histmix.hpp"

int main() {
  using namespace histmix;
  const auto model = preset("sim1");
  const std::size_t n = 300, k = 2;
  const std::uint64_t seed = 2024;
  const auto obs = sample(model, n, seed);

  EmConfig cfg;
  cfg.repeated = true;
  cfg.restarts = 10;

  std::vector<Partition> candidates;
  for (int p = 1; p <= max_p_for_n(n); ++p) candidates.push_back(dyadic_partition(p));
  const auto blocks = make_blocks(n, SchemeKind::D1, derive_seed(seed, {1}));
  const auto report = select_partition(obs.points, candidates, dyadic_partition(reference_p(k)), blocks,
                                       em_estimator(cfg), k, derive_seed(seed, {2}));
  const auto& part = report.chosen_partition();

  cfg.seed = derive_seed(seed, {3});
  const auto fit = em_fit(bin_sample(obs.points, part), k, cfg);
  std::printf("chosen bins: %zu (a_n=%zu, b_n=%zu)\n", part.size(), blocks.a_n, blocks.b_n);
  for (std::size_t j = 0; j < k; ++j)
    std::printf("theta[%zu] = %.4f   (true %.2f)\n", j, fit.params.theta[j], ordered(model.theta)[j]);
  std::printf("log-likelihood %.6f after %zu iterations\n", fit.loglik, fit.iterations);
  return 0;
}
