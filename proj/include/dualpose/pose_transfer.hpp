#pragma once

#include "dualpose/correspondence.hpp"
#include "dualpose/features.hpp"
#include "dualpose/mesh.hpp"
#include "dualpose/optim.hpp"
#include "dualpose/params.hpp"

#include <array>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace dualpose {

inline constexpr double kInstanceNormEpsilon = 1e-5;
inline constexpr double kLeakySlope = 0.2;

struct GeneratorConfig {
  int trunk_width = 1024;  // first trunk width; halved twice down the trunk
  int knn = 16;
  double sinkhorn_epsilon = kSinkhornEpsilon;
  int sinkhorn_iterations = kSinkhornIterations;
  double norm_epsilon = kInstanceNormEpsilon;
};

struct InstanceStats {
  ad::Tensor mean;   // [S, D, 1]
  ad::Tensor sigma;  // [S, D, 1], sqrt(biased variance + eps)
};

/// Per-sample, per-channel statistics over the vertex axis.
InstanceStats instance_stats(const ad::Tensor& h, double eps = kInstanceNormEpsilon);

struct ElainParams {
  Affine identity_projection;  // [D, F_id]
  Affine gamma;                // [D, D]
  Affine beta;                 // [D, D]
  Affine blend;                // [D, 2D] over concatenated channel means

  static ElainParams init(int width, int identity_width, std::mt19937_64& rng);

  template <class F>
  void for_each_param(const std::string& prefix, F&& f) {
    identity_projection.for_each_param(prefix + ".identity_projection", f);
    gamma.for_each_param(prefix + ".gamma", f);
    beta.for_each_param(prefix + ".beta", f);
    blend.for_each_param(prefix + ".blend", f);
  }
};

/// Elastic instance normalization of h_warp [1, D, N] conditioned on
/// identity features [1, F_id, N]. The logistic blend weight w mixes the
/// learned per-channel (gamma, beta), computed from the vertex mean of the
/// projected identity features, with the input's own (sigma, mu).
/// `forced_weight` overrides w for testing the limits.
ad::Tensor elain_forward(const ad::Tensor& h_warp, const ad::Tensor& identity_features, const ElainParams& params,
                         double eps = kInstanceNormEpsilon, std::optional<double> forced_weight = std::nullopt);

struct ResBlockParams {
  ElainParams elain;
  Affine conv;                 // [D_out, D]
  std::optional<Affine> skip;  // present when D_out != D

  static ResBlockParams init(int width, int out_width, int identity_width, std::mt19937_64& rng);

  template <class F>
  void for_each_param(const std::string& prefix, F&& f) {
    elain.for_each_param(prefix + ".elain", f);
    conv.for_each_param(prefix + ".conv", f);
    if (skip) skip->for_each_param(prefix + ".skip", f);
  }
};

/// skip(h) + conv(leaky_relu(elain(h)))
ad::Tensor elain_resblock(const ad::Tensor& h, const ad::Tensor& identity_features, const ResBlockParams& params,
                          double eps = kInstanceNormEpsilon);

struct TrunkParams {
  Affine input;   // 3 -> W
  Affine lift;    // W -> W
  std::array<ResBlockParams, 3> blocks;
  Affine down0;   // W -> W/2
  Affine down1;   // W/2 -> W/4
  Affine output;  // W/4 -> 3

  static TrunkParams init(int width, int identity_width, std::mt19937_64& rng);

  template <class F>
  void for_each_param(const std::string& prefix, F&& f) {
    input.for_each_param(prefix + ".input", f);
    lift.for_each_param(prefix + ".lift", f);
    for (std::size_t b = 0; b < blocks.size(); ++b) blocks[b].for_each_param(prefix + ".block" + std::to_string(b), f);
    down0.for_each_param(prefix + ".down0", f);
    down1.for_each_param(prefix + ".down1", f);
    output.for_each_param(prefix + ".output", f);
  }
};

/// Every learnable weight of the generator. One instance serves the main and
/// both auxiliary generator roles.
struct GeneratorParams {
  FeatureExtractorParams extractor;
  TrunkParams trunk;

  static GeneratorParams init(const GeneratorConfig& cfg, std::uint64_t seed);

  template <class F>
  void for_each_param(F&& f) {
    extractor.for_each_param("extractor", f);
    trunk.for_each_param("trunk", f);
  }

  /// Handles to every parameter tensor (shared storage).
  std::vector<ad::NamedTensor> named_parameters();
  std::vector<ad::Tensor> parameters();
  /// Deep copy with fresh gradient buffers, for a worker's private tape.
  GeneratorParams clone() const;
  std::size_t parameter_count();
};

/// Generator input: coordinates [1, 3, N] plus their neighbor index.
struct GeneratorInput {
  ad::Tensor coords;
  NeighborIndex knn;
};

GeneratorInput make_input(const ad::Tensor& coords, int k);
GeneratorInput make_input(const Mesh& mesh, int k);

struct GeneratorOutput {
  ad::Tensor output;      // [1, 3, N_id]
  MatchingMatrix plan;    // raw Sinkhorn plan
  ad::Tensor warped;      // [1, 3, N_id]
  ad::Tensor identity_features;
};

/// features -> correlation -> Sinkhorn -> row-normalize -> warp -> ElaIN trunk.
/// The trunk predicts a per-vertex offset added to the warped coordinates.
GeneratorOutput generate(const GeneratorInput& identity, const GeneratorInput& pose, const GeneratorParams& params,
                         const GeneratorConfig& cfg);

struct TransferResult {
  Mesh output;
  Mesh warped;
  MatchingMatrix plan;
};

/// Mesh-level inference: output and warped meshes take the identity's faces.
TransferResult transfer(const Mesh& identity, const Mesh& pose, const GeneratorParams& params,
                        const GeneratorConfig& cfg);

}  // namespace dualpose
