#pragma once

#include "dualpose/features.hpp"
#include "dualpose/mesh.hpp"
#include "dualpose/tensor.hpp"

#include <string>
#include <vector>

namespace dualpose {

inline constexpr double kSinkhornEpsilon = 0.03;
inline constexpr int kSinkhornIterations = 5;
/// Norm floor for cosine similarity of collapsed feature vectors.
inline constexpr double kFeatureNormFloor = 1e-8;
/// Switch to log-domain scaling once min(Z)/eps exceeds this.
inline constexpr double kLogDomainThreshold = 30.0;
/// Also switch once max(Z)/eps exceeds this: past it exp(-Z/eps) nears the
/// underflow range and the direct scalings lose entries.
inline constexpr double kLogDomainRangeLimit = 300.0;

/// Transport plan between the identity (rows) and pose (columns) vertex sets.
struct MatchingMatrix {
  ad::Tensor values;  // [N_id, N_pose]
  double epsilon = kSinkhornEpsilon;
  int iterations = kSinkhornIterations;
  bool log_domain = false;

  int rows() const { return values.dim(0); }
  int cols() const { return values.dim(1); }
};

/// Cosine similarity of per-vertex feature columns: [1, D, N_id] x [1, D, N_pose] -> [N_id, N_pose].
ad::Tensor correlation_matrix(const ad::Tensor& f_id, const ad::Tensor& f_pose);

/// Entropic OT on cost Z = 1 - C with uniform marginals, unrolled so the
/// result is differentiable w.r.t. C. The last update rescales rows, so row
/// sums are exactly 1/N_id.
MatchingMatrix solve_ot(const ad::Tensor& correlation, double epsilon = kSinkhornEpsilon,
                        int iterations = kSinkhornIterations, bool force_log_domain = false);

/// Same solver on an explicit cost matrix.
MatchingMatrix solve_ot_cost(const ad::Tensor& cost, double epsilon, int iterations, bool force_log_domain = false);

/// Rows scaled to sum to one. Throws on a zero row.
MatchingMatrix row_normalize(const MatchingMatrix& plan);

/// V_warp = T V_pose with T row-normalized. pose_coords [1, 3, N_pose] -> [1, 3, N_id].
ad::Tensor warp_coordinates(const MatchingMatrix& row_normalized, const ad::Tensor& pose_coords);

/// Warped pose mesh carrying the identity mesh's faces.
Mesh warp_pose_mesh(const MatchingMatrix& row_normalized, const std::vector<Vec3>& pose_vertices,
                    const std::vector<Face>& identity_faces);

/// V'_pose(i) = sum_j T(j, i) V_warp(j) / sum_j T(j, i): the column-normalized
/// transpose applied to warped coordinates. [1, 3, N_id] -> [1, 3, N_pose].
ad::Tensor backward_warp(const MatchingMatrix& plan, const ad::Tensor& warped_coords);

/// ||backward_warp(T, warp(T, V_pose)) - V_pose||^2 summed over all entries.
ad::Tensor backward_correspondence_loss(const MatchingMatrix& plan, const ad::Tensor& pose_coords);

/// Index of the largest entry in each row.
std::vector<int> row_argmax(const MatchingMatrix& plan);

/// PLY line set joining identity vertex i to pose vertex argmax_j T(i, j).
/// The pose mesh is offset along +x by `offset` for side-by-side viewing.
void save_correspondence_ply(const Mesh& identity, const Mesh& pose, const MatchingMatrix& plan,
                             const std::string& path, double offset);

/// Helpers for [1, 3, N] coordinate tensors.
ad::Tensor coords_tensor(const std::vector<Vec3>& vertices, bool requires_grad = false);
std::vector<Vec3> coords_to_vertices(const ad::Tensor& coords);

}  // namespace dualpose
