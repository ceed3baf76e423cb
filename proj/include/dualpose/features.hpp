#pragma once

#include "dualpose/params.hpp"
#include "dualpose/tensor.hpp"

#include <Eigen/Core>

#include <array>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

namespace dualpose {

/// k nearest neighbors per vertex, row-major [N x k], self excluded.
struct NeighborIndex {
  int k = 0;
  std::vector<int> indices;

  int vertex_count() const { return k == 0 ? 0 : static_cast<int>(indices.size()) / k; }
  std::span<const int> of(int i) const { return {indices.data() + static_cast<std::size_t>(i) * k, static_cast<std::size_t>(k)}; }
};

/// Brute-force kNN. Lists are sorted by ascending distance, ties by lower
/// index. Throws std::invalid_argument when k >= N.
NeighborIndex knn_index(std::span<const double> coords_3xn, int k);
NeighborIndex knn_index(const std::vector<Eigen::Vector3d>& points, int k);

/// Shared neighbor branch of a point convolution.
struct PointConvParams {
  ad::Tensor feature_weight;   // [out, in]
  ad::Tensor relative_weight;  // [out, 3]
  ad::Tensor bias;             // [out]

  int out_dim() const { return feature_weight.dim(0); }
  static PointConvParams init(int out, int in, std::mt19937_64& rng);

  template <class F>
  void for_each_param(const std::string& prefix, F&& f) {
    f(prefix + ".feature_weight", feature_weight);
    f(prefix + ".relative_weight", relative_weight);
    f(prefix + ".bias", bias);
  }
};

/// out[:, i] = max over j in idx(i) of
///   leaky_relu(W_f f_j + W_r (p_j - p_i) + b)
/// features [S, D_in, N], coords [S, 3, N] -> [S, D_out, N].
ad::Tensor point_conv(const ad::Tensor& features, const ad::Tensor& coords, const NeighborIndex& idx,
                      const PointConvParams& params, double slope = 0.2);

struct ExtractorStage {
  PointConvParams neighbor;
  Affine combine;  // [out, out + in]: max-pooled neighbor feature with the center feature

  template <class F>
  void for_each_param(const std::string& prefix, F&& f) {
    neighbor.for_each_param(prefix + ".neighbor", f);
    combine.for_each_param(prefix + ".combine", f);
  }
};

struct FeatureExtractorParams {
  static constexpr std::array<int, 3> kWidths{32, 64, 128};
  std::array<ExtractorStage, 3> stages;

  static FeatureExtractorParams init(std::mt19937_64& rng);
  int out_dim() const { return kWidths.back(); }

  template <class F>
  void for_each_param(const std::string& prefix, F&& f) {
    for (std::size_t s = 0; s < stages.size(); ++s) stages[s].for_each_param(prefix + ".stage" + std::to_string(s), f);
  }
};

struct FeatureMap {
  ad::Tensor features;  // [S, D, N]
  int vertex_count = 0;
  int width = 0;
};

/// Three point-conv stages (32, 64, 128 wide), no downsampling. coords [1, 3, N].
FeatureMap extract(const ad::Tensor& coords, const NeighborIndex& idx, const FeatureExtractorParams& params);

}  // namespace dualpose
