#pragma once

#include "dualpose/tensor.hpp"

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace dualpose {

/// Weight and bias of a 1x1 convolution / fully-connected map.
struct Affine {
  ad::Tensor weight;  // [out, in]
  ad::Tensor bias;    // [out]

  int out_dim() const { return weight.dim(0); }
  int in_dim() const { return weight.dim(1); }

  /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights and biases, times `gain`.
  static Affine init(int out, int in, std::mt19937_64& rng, double gain = 1.0);
  static Affine zeros(int out, int in);

  template <class F>
  void for_each_param(const std::string& prefix, F&& f) {
    f(prefix + ".weight", weight);
    f(prefix + ".bias", bias);
  }
};

/// x [S, in, N] -> [S, out, N]
ad::Tensor apply(const Affine& map, const ad::Tensor& x);

}  // namespace dualpose
