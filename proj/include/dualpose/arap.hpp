#pragma once

#include "dualpose/mesh.hpp"

#include <Eigen/Core>
#include <Eigen/SparseCholesky>

#include <cstdint>
#include <memory>
#include <optional>
#include <vector>

namespace dualpose {

inline constexpr double kArapAnchorFraction = 0.10;
inline constexpr int kArapIterations = 50;

struct ArapOptions {
  /// Clamp negative cotangent weights (obtuse triangles) to zero.
  bool clamp_negative_weights = false;
  /// Start free vertices from the best rigid fit of the rest anchors onto
  /// their targets instead of from the rest positions.
  bool rigid_initialization = true;
};

struct WeightedNeighbor {
  int index;
  double weight;
};

/// Rest mesh, cotangent weights, anchors and the per-vertex rotations of the
/// local/global alternation.
struct ArapProblem {
  std::vector<Vec3> rest;
  std::vector<std::vector<WeightedNeighbor>> neighbors;
  std::vector<int> anchors;
  std::vector<Vec3> anchor_targets;
  std::vector<Eigen::Matrix3d> rotations;
  std::vector<Vec3> positions;

  int vertex_count() const { return static_cast<int>(rest.size()); }
};

/// Builds the problem with positions = rest (anchors moved onto their
/// targets) and identity rotations. Anchor indices must be distinct and valid.
ArapProblem make_arap_problem(const Mesh& rest, std::vector<int> anchors, std::vector<Vec3> anchor_targets,
                              const ArapOptions& options = {});

/// E = sum_i sum_{j in N(i)} w_ij |(p_i - p_j) - R_i (v_i - v_j)|^2
double arap_energy(const ArapProblem& problem);

/// Optimal per-vertex rotations for the current positions (SVD of the
/// weighted covariance, reflection-corrected). A cell whose covariance
/// vanishes keeps its previous rotation.
void fit_rotations(ArapProblem& problem);

/// Sparse Cholesky factorization of the free-vertex Laplacian. Depends only
/// on the rest mesh and the anchor set, so it is reused across iterations.
class ArapSolver {
 public:
  /// Throws MeshError naming a connected component without anchors.
  explicit ArapSolver(const ArapProblem& problem);
  ArapSolver(const ArapSolver&) = delete;
  ArapSolver& operator=(const ArapSolver&) = delete;
  ~ArapSolver();

  /// Minimizes E over free positions with rotations and anchors fixed.
  /// Returns the relative residual of the solved system.
  double solve(ArapProblem& problem) const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// One-shot factor-and-solve.
double solve_positions(ArapProblem& problem);

/// ceil(fraction * N) distinct vertices, uniform without replacement.
std::vector<int> sample_anchors(int vertex_count, double fraction, std::uint64_t seed);

struct ArapDeformResult {
  Mesh mesh;
  std::vector<double> energy;  // after each iteration
};

/// Deforms `rest` so the sampled anchors land on the matching vertices of
/// `target`, alternating fit_rotations / solve for `iterations` rounds.
ArapDeformResult arap_deform(const Mesh& rest, const Mesh& target, double anchor_fraction = kArapAnchorFraction,
                             int iterations = kArapIterations, std::uint64_t seed = 0,
                             const ArapOptions& options = {});

}  // namespace dualpose
