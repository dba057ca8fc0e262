#pragma once

#include <cstdint>
#include <vector>

#include "cogfuse/random.hpp"
#include "cogfuse/tensor.hpp"

namespace testing {

inline cogfuse::Tensor random_tensor(cogfuse::Shape shape, std::uint64_t seed, double sd = 1.0) {
  cogfuse::Rng rng(seed);
  std::vector<double> v(cogfuse::numel(shape));
  for (double& x : v) x = rng.normal(0.0, sd);
  return cogfuse::Tensor(std::move(shape), std::move(v));
}

inline void fill_normal(cogfuse::Parameter& p, cogfuse::Rng& rng, double sd = 0.5) {
  for (double& x : p.value) x = rng.normal(0.0, sd);
}

}  // namespace testing
