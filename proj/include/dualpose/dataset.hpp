#pragma once

#include "dualpose/mesh.hpp"

#include <Eigen/Core>

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace dualpose {

/// Shape parameters of one synthetic body (model units, ~1.7 tall).
struct IdentityParams {
  double torso_height = 0.55;
  double torso_radius_x = 0.16;
  double torso_radius_z = 0.10;
  double upper_arm = 0.28;
  double forearm = 0.26;
  double arm_radius = 0.045;
  double thigh = 0.42;
  double shin = 0.40;
  double leg_radius = 0.065;
  double head_radius = 0.10;
};

/// Joints of the fixed skeleton. The pelvis drives the torso; every limb
/// hangs off the torso and bends at one intermediate joint.
enum Joint : int {
  kPelvis = 0,
  kNeck,
  kLeftShoulder,
  kLeftElbow,
  kRightShoulder,
  kRightElbow,
  kLeftHip,
  kLeftKnee,
  kRightHip,
  kRightKnee,
  kJointCount
};

/// Per-joint Euler angles (x, y, z), applied as Rz * Ry * Rx about the
/// joint's rest position, axes in the rest frame.
struct PoseParams {
  std::array<Eigen::Vector3d, kJointCount> angles;

  static PoseParams rest();
};

/// Shared topology plus a parametric description of every vertex.
struct BodyTemplate {
  struct VertexSpec {
    int part = 0;       // 0 torso, 1 head, 2..5 limbs (left arm, right arm, left leg, right leg)
    double along = 0;   // torso/limb: fraction along the axis; head: polar fraction
    double angle = 0;   // angle around the part axis
    bool pole = false;  // cap apex
  };
  std::vector<VertexSpec> vertices;
  std::vector<Face> faces;
  int torso_segments = 16;
  int torso_rings = 12;
  int limb_segments = 8;
  int limb_rings = 11;
  int head_segments = 8;
  int head_rings = 6;

  /// Ring/segment counts chosen so vertex_count() is as close as possible to
  /// `target_vertices`; the result differs from the request by the template
  /// granularity (a few vertices to a few tens).
  static BodyTemplate build(int target_vertices);
  int vertex_count() const { return static_cast<int>(vertices.size()); }
};

Mesh body_mesh(const BodyTemplate& tmpl, const IdentityParams& identity, const PoseParams& pose);

struct SyntheticDataset {
  BodyTemplate body;
  std::vector<IdentityParams> identities;
  std::vector<PoseParams> poses;

  int identity_count() const { return static_cast<int>(identities.size()); }
  int pose_count() const { return static_cast<int>(poses.size()); }
  /// Ground-truth mesh of identity i in pose p (raw, uncentered, template order).
  Mesh mesh(int identity, int pose) const;
};

/// Random identities and poses. Pose 0 is the rest pose.
SyntheticDataset generate_synthetic_dataset(int n_identities, int n_poses, int vertices_per_mesh,
                                            std::uint64_t seed);

/// Writes id<i>_pose<p>.obj for every pair plus triplets.csv (identity, pose, file).
void write_dataset(const SyntheticDataset& data, const std::string& dir);

}  // namespace dualpose
