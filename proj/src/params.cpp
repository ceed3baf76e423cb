#include "dualpose/params.hpp"

#include <cmath>

namespace dualpose {

Affine Affine::init(int out, int in, std::mt19937_64& rng, double gain) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<double> w(static_cast<std::size_t>(out) * in);
  std::vector<double> b(static_cast<std::size_t>(out));
  for (double& x : w) x = gain * dist(rng);
  for (double& x : b) x = gain * dist(rng);
  return {ad::Tensor::from_data({out, in}, std::move(w), true), ad::Tensor::from_data({out}, std::move(b), true)};
}

Affine Affine::zeros(int out, int in) {
  return {ad::Tensor::zeros({out, in}, true), ad::Tensor::zeros({out}, true)};
}

ad::Tensor apply(const Affine& map, const ad::Tensor& x) { return ad::conv1d_pointwise(x, map.weight, map.bias); }

}  // namespace dualpose
