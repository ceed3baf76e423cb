#include "dualpose/dataset.hpp"

#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <random>
#include <stdexcept>

namespace dualpose {
namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;
constexpr double kLimbGap = 0.02;

enum Part : int { kTorso = 0, kHead = 1, kLeftArm = 2, kRightArm = 3, kLeftLeg = 4, kRightLeg = 5 };

struct Frame {
  Vec3 e1;
  Vec3 e2;
};

double angle_in(const Frame& f, const Vec3& d) { return std::atan2(d.dot(f.e2), d.dot(f.e1)); }

// Triangulates the band between two closed loops, each given as
// (vertex, angle) with angles measured in compatible frames.
void zipper(std::vector<std::pair<int, double>> a, std::vector<std::pair<int, double>> b,
            std::vector<Face>& faces) {
  auto by_angle = [](const auto& x, const auto& y) { return x.second < y.second; };
  std::sort(a.begin(), a.end(), by_angle);
  std::sort(b.begin(), b.end(), by_angle);
  const int na = static_cast<int>(a.size());
  const int nb = static_cast<int>(b.size());
  auto next_angle = [](const auto& loop, int i) {
    const int n = static_cast<int>(loop.size());
    return i + 1 < n ? loop[i + 1].second : loop[0].second + kTwoPi;
  };
  int i = 0;
  int j = 0;
  while (i < na || j < nb) {
    const bool advance_a = j == nb || (i < na && next_angle(a, i) <= next_angle(b, j));
    if (advance_a) {
      faces.push_back({a[i % na].first, a[(i + 1) % na].first, b[j % nb].first});
      ++i;
    } else {
      faces.push_back({a[i % na].first, b[(j + 1) % nb].first, b[j % nb].first});
      ++j;
    }
  }
}

int template_size(int kt, int rt, int kl, int rl, int kh, int rh) {
  return rt * kt - 4 + 1 + 4 * (rl * kl + 1) + kh * (1 + rh) + 1;
}

double smoothstep(double x) {
  x = std::clamp(x, 0.0, 1.0);
  return x * x * (3.0 - 2.0 * x);
}

double torso_taper(double along) { return 1.0 - 0.25 * std::max(0.0, (along - 0.85) / 0.15); }

Vec3 limb_direction(int part) {
  switch (part) {
    case kLeftArm: return Vec3::UnitX();
    case kRightArm: return -Vec3::UnitX();
    default: return -Vec3::UnitY();
  }
}

// Ring frame of each limb; chosen so ring angles line up with the angles of
// the torso hole it is stitched to (measured in the wall frame (z, y)).
Frame limb_frame(int part) {
  switch (part) {
    case kLeftArm:
    case kRightArm: return {Vec3::UnitZ(), Vec3::UnitY()};
    case kLeftLeg: return {Vec3::UnitZ(), -Vec3::UnitX()};
    default: return {Vec3::UnitZ(), Vec3::UnitX()};
  }
}

const Frame kWallFrame{Vec3::UnitZ(), Vec3::UnitY()};
const Frame kHorizontalFrame{Vec3::UnitX(), Vec3::UnitZ()};

struct Skeleton {
  std::array<Vec3, kJointCount> joints;
  std::array<Vec3, 4> limb_roots;  // ring 0 centers, in part order 2..5
};

struct TorsoLayout {
  int rings;
  int segments;
  int hole_ring(int part) const { return part == kLeftArm || part == kRightArm ? rings - 2 : 1; }
  int hole_segment(int part) const { return part == kLeftArm || part == kLeftLeg ? 0 : segments / 2; }
};

Vec3 torso_point(const IdentityParams& id, double along, double angle) {
  const double f = torso_taper(along);
  return {id.torso_radius_x * f * std::cos(angle), along * id.torso_height,
          id.torso_radius_z * f * std::sin(angle)};
}

Skeleton skeleton(const IdentityParams& id, const TorsoLayout& torso) {
  Skeleton s;
  for (int part = kLeftArm; part <= kRightLeg; ++part) {
    const int r = torso.hole_ring(part);
    const double along = static_cast<double>(r) / (torso.rings - 1);
    const double angle = kTwoPi * torso.hole_segment(part) / torso.segments;
    const Vec3 hole = torso_point(id, along, angle);
    const bool leg = part >= kLeftLeg;
    const double gap = leg ? hole.y() + kLimbGap : kLimbGap;
    s.limb_roots[part - kLeftArm] = hole + gap * limb_direction(part);
  }
  s.joints[kPelvis] = {0.0, 0.1 * id.torso_height, 0.0};
  s.joints[kNeck] = {0.0, id.torso_height, 0.0};
  s.joints[kLeftShoulder] = s.limb_roots[0];
  s.joints[kLeftElbow] = s.limb_roots[0] + id.upper_arm * limb_direction(kLeftArm);
  s.joints[kRightShoulder] = s.limb_roots[1];
  s.joints[kRightElbow] = s.limb_roots[1] + id.upper_arm * limb_direction(kRightArm);
  s.joints[kLeftHip] = s.limb_roots[2];
  s.joints[kLeftKnee] = s.limb_roots[2] + id.thigh * limb_direction(kLeftLeg);
  s.joints[kRightHip] = s.limb_roots[3];
  s.joints[kRightKnee] = s.limb_roots[3] + id.thigh * limb_direction(kRightLeg);
  return s;
}

struct LimbDims {
  double upper;
  double lower;
  double radius;
  int root_joint;
  int mid_joint;
};

LimbDims limb_dims(const IdentityParams& id, int part) {
  switch (part) {
    case kLeftArm: return {id.upper_arm, id.forearm, id.arm_radius, kLeftShoulder, kLeftElbow};
    case kRightArm: return {id.upper_arm, id.forearm, id.arm_radius, kRightShoulder, kRightElbow};
    case kLeftLeg: return {id.thigh, id.shin, id.leg_radius, kLeftHip, kLeftKnee};
    default: return {id.thigh, id.shin, id.leg_radius, kRightHip, kRightKnee};
  }
}

double limb_taper(double along) { return 1.0 - 0.25 * along; }

double head_neck_radius(const IdentityParams& id) { return 0.45 * id.head_radius; }

// Rest position of one template vertex plus its skinning weights.
struct SkinnedVertex {
  Vec3 rest;
  std::array<std::pair<int, double>, 2> weights;
};

SkinnedVertex rest_vertex(const BodyTemplate::VertexSpec& v, const BodyTemplate& tmpl,
                          const IdentityParams& id, const Skeleton& sk) {
  SkinnedVertex out;
  out.weights = {std::pair{0, 1.0}, std::pair{0, 0.0}};
  if (v.part == kTorso) {
    out.rest = v.pole ? Vec3(0.0, -0.05 * id.torso_height, 0.0) : torso_point(id, v.along, v.angle);
    out.weights[0].first = kPelvis;
    return out;
  }
  if (v.part == kHead) {
    out.weights[0].first = kNeck;
    const double base = id.torso_height + 0.03;
    const Vec3 center(0.0, base + 1.1 * id.head_radius, 0.0);
    if (v.pole) {
      out.rest = center + id.head_radius * Vec3::UnitY();
    } else if (v.along == 0.0) {
      const double r = head_neck_radius(id);
      out.rest = Vec3(0.0, base, 0.0) + r * (std::cos(v.angle) * kHorizontalFrame.e1 +
                                            std::sin(v.angle) * kHorizontalFrame.e2);
    } else {
      const double polar = std::numbers::pi * (1.0 - v.along);
      out.rest = center + id.head_radius * Vec3(std::sin(polar) * std::cos(v.angle), std::cos(polar),
                                                std::sin(polar) * std::sin(v.angle));
    }
    return out;
  }
  const LimbDims dims = limb_dims(id, v.part);
  const Vec3 root = sk.limb_roots[v.part - kLeftArm];
  const Vec3 dir = limb_direction(v.part);
  const Frame frame = limb_frame(v.part);
  const double length = dims.upper + dims.lower;
  double s = v.along * length;
  if (v.pole) {
    s = length + 0.5 * dims.radius * limb_taper(1.0);
    out.rest = root + s * dir;
  } else {
    const double r = dims.radius * limb_taper(v.along);
    out.rest = root + s * dir + r * (std::cos(v.angle) * frame.e1 + std::sin(v.angle) * frame.e2);
  }
  const double blend = 1.5 * dims.radius;
  const double lower = smoothstep((s - dims.upper + blend) / (2.0 * blend));
  out.weights = {std::pair{dims.root_joint, 1.0 - lower}, std::pair{dims.mid_joint, lower}};
  (void)tmpl;
  return out;
}

constexpr std::array<int, kJointCount> kParent = {-1,      kPelvis,        kPelvis, kLeftShoulder,
                                                  kPelvis, kRightShoulder, kPelvis, kLeftHip,
                                                  kPelvis, kRightHip};

Eigen::Matrix3d euler(const Vec3& a) {
  return (Eigen::AngleAxisd(a.z(), Vec3::UnitZ()) * Eigen::AngleAxisd(a.y(), Vec3::UnitY()) *
          Eigen::AngleAxisd(a.x(), Vec3::UnitX()))
      .toRotationMatrix();
}

double opposite_angle(const Vec3& apex, const Vec3& a, const Vec3& b) {
  const Vec3 u = a - apex;
  const Vec3 v = b - apex;
  return std::atan2(u.cross(v).norm(), u.dot(v));
}

// Flips edges whose opposite angles sum past pi until the triangulation is
// Delaunay for the given positions, so cotangent weights are nonnegative.
void delaunay_flip(const std::vector<Vec3>& pos, std::vector<Face>& faces) {
  auto key = [](int a, int b) { return std::pair{std::min(a, b), std::max(a, b)}; };
  for (int pass = 0; pass < 100; ++pass) {
    std::map<std::pair<int, int>, std::vector<int>> edge_faces;
    for (int f = 0; f < static_cast<int>(faces.size()); ++f)
      for (int k = 0; k < 3; ++k) edge_faces[key(faces[f][k], faces[f][(k + 1) % 3])].push_back(f);
    std::vector<char> touched(faces.size(), 0);
    int flips = 0;
    for (const auto& [edge, fs] : edge_faces) {
      if (fs.size() != 2 || touched[fs[0]] || touched[fs[1]]) continue;
      Face f1 = faces[fs[0]];
      const Face& f2 = faces[fs[1]];
      while (!((f1[0] == edge.first || f1[0] == edge.second) && (f1[1] == edge.first || f1[1] == edge.second)))
        std::rotate(f1.begin(), f1.begin() + 1, f1.end());
      const int a = f1[0], b = f1[1], c = f1[2];
      int d = -1;
      for (int v : f2)
        if (v != a && v != b) d = v;
      if (d < 0 || d == c || edge_faces.count(key(c, d))) continue;
      const double sum = opposite_angle(pos[c], pos[a], pos[b]) + opposite_angle(pos[d], pos[a], pos[b]);
      if (sum <= std::numbers::pi + 1e-9) continue;
      faces[fs[0]] = {c, a, d};
      faces[fs[1]] = {d, b, c};
      touched[fs[0]] = touched[fs[1]] = 1;
      ++flips;
    }
    if (flips == 0) return;
  }
}

// Propagates one winding across shared edges, then turns it outward by the
// sign of the enclosed volume. Expects a closed, connected manifold.
void orient_outward(const std::vector<Vec3>& pos, std::vector<Face>& faces) {
  std::map<std::pair<int, int>, std::vector<int>> edge_faces;
  auto key = [](int a, int b) { return std::pair{std::min(a, b), std::max(a, b)}; };
  for (int f = 0; f < static_cast<int>(faces.size()); ++f)
    for (int k = 0; k < 3; ++k) edge_faces[key(faces[f][k], faces[f][(k + 1) % 3])].push_back(f);
  auto has_directed = [](const Face& f, int a, int b) {
    for (int k = 0; k < 3; ++k)
      if (f[k] == a && f[(k + 1) % 3] == b) return true;
    return false;
  };
  std::vector<char> seen(faces.size(), 0);
  std::vector<int> queue = {0};
  seen[0] = 1;
  for (std::size_t q = 0; q < queue.size(); ++q) {
    const Face f = faces[queue[q]];
    for (int k = 0; k < 3; ++k) {
      const int a = f[k], b = f[(k + 1) % 3];
      for (int g : edge_faces[key(a, b)]) {
        if (seen[g]) continue;
        // A consistently wound neighbor traverses the shared edge as b -> a.
        if (has_directed(faces[g], a, b)) std::swap(faces[g][1], faces[g][2]);
        seen[g] = 1;
        queue.push_back(g);
      }
    }
  }
  double volume = 0.0;
  for (const Face& f : faces) volume += pos[f[0]].dot(pos[f[1]].cross(pos[f[2]]));
  if (volume < 0)
    for (Face& f : faces) std::swap(f[1], f[2]);
}

BodyTemplate build_template(int kt, int rt, int kl, int rl, int kh, int rh) {
  BodyTemplate t;
  t.torso_segments = kt;
  t.torso_rings = rt;
  t.limb_segments = kl;
  t.limb_rings = rl;
  t.head_segments = kh;
  t.head_rings = rh;
  const TorsoLayout layout{rt, kt};
  const IdentityParams reference;
  const Skeleton sk = skeleton(reference, layout);

  auto add = [&t](int part, double along, double angle, bool pole) {
    t.vertices.push_back({part, along, angle, pole});
    return static_cast<int>(t.vertices.size()) - 1;
  };

  // Torso grid with four 1-vertex holes; each hole leaves an 8-vertex loop.
  auto is_hole = [&](int r, int s) {
    for (int part = kLeftArm; part <= kRightLeg; ++part)
      if (r == layout.hole_ring(part) && s == layout.hole_segment(part)) return true;
    return false;
  };
  std::vector<int> grid(rt * kt, -1);
  for (int r = 0; r < rt; ++r)
    for (int s = 0; s < kt; ++s)
      if (!is_hole(r, s))
        grid[r * kt + s] = add(kTorso, static_cast<double>(r) / (rt - 1), kTwoPi * s / kt, false);
  auto g = [&](int r, int s) { return grid[r * kt + ((s % kt) + kt) % kt]; };
  for (int r = 0; r + 1 < rt; ++r)
    for (int s = 0; s < kt; ++s) {
      const int a = g(r, s), b = g(r, s + 1), c = g(r + 1, s + 1), d = g(r + 1, s);
      if (a < 0 || b < 0 || c < 0 || d < 0) continue;
      t.faces.push_back({a, b, c});
      t.faces.push_back({a, c, d});
    }
  const int bottom = add(kTorso, 0.0, 0.0, true);
  for (int s = 0; s < kt; ++s) t.faces.push_back({bottom, g(0, s + 1), g(0, s)});

  auto rest_of = [&](int index) { return rest_vertex(t.vertices[index], t, reference, sk).rest; };

  // Limbs: ring tubes with an end cap, stitched to the torso holes.
  for (int part = kLeftArm; part <= kRightLeg; ++part) {
    std::vector<int> rings(rl * kl);
    for (int r = 0; r < rl; ++r)
      for (int s = 0; s < kl; ++s)
        rings[r * kl + s] = add(part, static_cast<double>(r) / (rl - 1), kTwoPi * s / kl, false);
    auto lr = [&](int r, int s) { return rings[r * kl + (s % kl)]; };
    for (int r = 0; r + 1 < rl; ++r)
      for (int s = 0; s < kl; ++s) {
        t.faces.push_back({lr(r, s), lr(r + 1, s), lr(r + 1, s + 1)});
        t.faces.push_back({lr(r, s), lr(r + 1, s + 1), lr(r, s + 1)});
      }
    const int tip = add(part, 1.0, 0.0, true);
    for (int s = 0; s < kl; ++s) t.faces.push_back({tip, lr(rl - 1, s), lr(rl - 1, s + 1)});

    const int hr = layout.hole_ring(part);
    const int hs = layout.hole_segment(part);
    const Vec3 hole_center =
        torso_point(reference, static_cast<double>(hr) / (rt - 1), kTwoPi * hs / kt);
    std::vector<std::pair<int, double>> loop;
    for (int dr = -1; dr <= 1; ++dr)
      for (int ds = -1; ds <= 1; ++ds) {
        if (dr == 0 && ds == 0) continue;
        const int v = g(hr + dr, hs + ds);
        loop.push_back({v, angle_in(kWallFrame, rest_of(v) - hole_center)});
      }
    std::vector<std::pair<int, double>> ring;
    for (int s = 0; s < kl; ++s) ring.push_back({lr(0, s), std::remainder(kTwoPi * s / kl, kTwoPi)});
    zipper(loop, ring, t.faces);
  }

  // Head: neck ring, sphere rings, top pole; neck ring stitched to the torso top.
  std::vector<int> head(kh * (rh + 1));
  for (int r = 0; r <= rh; ++r)
    for (int s = 0; s < kh; ++s)
      head[r * kh + s] = add(kHead, static_cast<double>(r) / (rh + 1), kTwoPi * s / kh, false);
  auto hr = [&](int r, int s) { return head[r * kh + (s % kh)]; };
  for (int r = 0; r < rh; ++r)
    for (int s = 0; s < kh; ++s) {
      t.faces.push_back({hr(r, s), hr(r, s + 1), hr(r + 1, s + 1)});
      t.faces.push_back({hr(r, s), hr(r + 1, s + 1), hr(r + 1, s)});
    }
  const int crown = add(kHead, 1.0, 0.0, true);
  for (int s = 0; s < kh; ++s) t.faces.push_back({crown, hr(rh, s), hr(rh, s + 1)});
  std::vector<std::pair<int, double>> top, neck;
  for (int s = 0; s < kt; ++s) top.push_back({g(rt - 1, s), std::remainder(kTwoPi * s / kt, kTwoPi)});
  for (int s = 0; s < kh; ++s) neck.push_back({hr(0, s), std::remainder(kTwoPi * s / kh, kTwoPi)});
  zipper(top, neck, t.faces);

  std::vector<Vec3> rest(t.vertices.size());
  for (std::size_t v = 0; v < rest.size(); ++v) rest[v] = rest_of(static_cast<int>(v));
  delaunay_flip(rest, t.faces);
  orient_outward(rest, t.faces);
  return t;
}

}  // namespace

PoseParams PoseParams::rest() {
  PoseParams p;
  p.angles.fill(Vec3::Zero());
  return p;
}

BodyTemplate BodyTemplate::build(int target_vertices) {
  if (target_vertices < 100) throw std::invalid_argument("vertices_per_mesh must be >= 100");
  int best_kt = 16, best_rt = 12;
  double best_score = 1e300;
  for (int kt = 8; kt <= 40; kt += 4) {
    for (int rt = 6; rt <= 80; ++rt) {
      const int kl = kt / 2;
      const int rl = std::max(4, static_cast<int>(std::lround(0.9 * rt)));
      const int rh = std::max(3, static_cast<int>(std::lround(0.5 * rt)));
      const int count = template_size(kt, rt, kl, rl, kl, rh);
      const double score = std::abs(count - target_vertices) + 2.0 * std::abs(kt - 4.0 / 3.0 * rt);
      if (score < best_score) {
        best_score = score;
        best_kt = kt;
        best_rt = rt;
      }
    }
  }
  const int kl = best_kt / 2;
  return build_template(best_kt, best_rt, kl, std::max(4, static_cast<int>(std::lround(0.9 * best_rt))),
                        kl, std::max(3, static_cast<int>(std::lround(0.5 * best_rt))));
}

Mesh body_mesh(const BodyTemplate& tmpl, const IdentityParams& identity, const PoseParams& pose) {
  const Skeleton sk = skeleton(identity, TorsoLayout{tmpl.torso_rings, tmpl.torso_segments});
  std::array<Eigen::Matrix3d, kJointCount> rot;
  std::array<Vec3, kJointCount> trans;
  for (int j = 0; j < kJointCount; ++j) {
    const Eigen::Matrix3d local = euler(pose.angles[j]);
    const Vec3 local_t = sk.joints[j] - local * sk.joints[j];
    if (kParent[j] < 0) {
      rot[j] = local;
      trans[j] = local_t;
    } else {
      rot[j] = rot[kParent[j]] * local;
      trans[j] = rot[kParent[j]] * local_t + trans[kParent[j]];
    }
  }
  std::vector<Vec3> vertices;
  vertices.reserve(tmpl.vertices.size());
  for (const auto& spec : tmpl.vertices) {
    const SkinnedVertex v = rest_vertex(spec, tmpl, identity, sk);
    Vec3 p = Vec3::Zero();
    for (const auto& [joint, w] : v.weights)
      if (w != 0.0) p += w * (rot[joint] * v.rest + trans[joint]);
    vertices.push_back(p);
  }
  return Mesh(std::move(vertices), tmpl.faces);
}

Mesh SyntheticDataset::mesh(int identity, int pose) const {
  const Mesh m = body_mesh(body, identities.at(identity), poses.at(pose));
  return Mesh(m.vertices(), m.faces(),
              "id" + std::to_string(identity) + "_pose" + std::to_string(pose));
}

SyntheticDataset generate_synthetic_dataset(int n_identities, int n_poses, int vertices_per_mesh,
                                            std::uint64_t seed) {
  if (n_identities < 1 || n_poses < 1) throw std::invalid_argument("dataset must be nonempty");
  SyntheticDataset data;
  data.body = BodyTemplate::build(vertices_per_mesh);
  std::mt19937_64 rng(seed);
  auto u = [&rng](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };

  for (int i = 0; i < n_identities; ++i) {
    IdentityParams p;
    const double length = u(0.85, 1.15);
    const double bulk = u(0.8, 1.25);
    p.torso_height *= length * u(0.9, 1.1);
    p.torso_radius_x *= bulk * u(0.9, 1.1);
    p.torso_radius_z *= bulk * u(0.9, 1.1);
    p.upper_arm *= length * u(0.9, 1.1);
    p.forearm *= length * u(0.9, 1.1);
    p.arm_radius *= bulk * u(0.85, 1.15);
    p.thigh *= length * u(0.9, 1.1);
    p.shin *= length * u(0.9, 1.1);
    p.leg_radius *= bulk * u(0.85, 1.15);
    p.head_radius *= u(0.85, 1.15);
    data.identities.push_back(p);
  }

  data.poses.push_back(PoseParams::rest());
  for (int k = 1; k < n_poses; ++k) {
    PoseParams p = PoseParams::rest();
    p.angles[kPelvis] = {u(-0.25, 0.25), u(-0.5, 0.5), u(-0.2, 0.2)};
    p.angles[kNeck] = {u(-0.4, 0.4), u(-0.6, 0.6), u(-0.4, 0.4)};
    p.angles[kLeftShoulder] = {u(-0.6, 0.6), u(-0.9, 0.9), u(-1.3, 0.7)};
    p.angles[kRightShoulder] = {u(-0.6, 0.6), u(-0.9, 0.9), u(-0.7, 1.3)};
    p.angles[kLeftElbow] = {0.0, u(-1.8, 0.0), 0.0};
    p.angles[kRightElbow] = {0.0, u(0.0, 1.8), 0.0};
    p.angles[kLeftHip] = {u(-1.2, 0.5), u(-0.4, 0.4), u(-0.15, 0.6)};
    p.angles[kRightHip] = {u(-1.2, 0.5), u(-0.4, 0.4), u(-0.6, 0.15)};
    p.angles[kLeftKnee] = {u(0.0, 1.6), 0.0, 0.0};
    p.angles[kRightKnee] = {u(0.0, 1.6), 0.0, 0.0};
    data.poses.push_back(p);
  }
  return data;
}

void write_dataset(const SyntheticDataset& data, const std::string& dir) {
  std::filesystem::create_directories(dir);
  std::ofstream csv(std::filesystem::path(dir) / "triplets.csv");
  if (!csv) throw std::runtime_error("cannot write " + dir + "/triplets.csv");
  csv << "identity,pose,file\n";
  for (int i = 0; i < data.identity_count(); ++i)
    for (int p = 0; p < data.pose_count(); ++p) {
      const Mesh m = data.mesh(i, p);
      const std::string file = m.name() + ".obj";
      save_obj(m, (std::filesystem::path(dir) / file).string());
      csv << i << ',' << p << ',' << file << '\n';
    }
}

}  // namespace dualpose
