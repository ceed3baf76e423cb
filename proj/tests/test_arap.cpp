#include "doctest.h"
#include "support.hpp"

#include "dualpose/arap.hpp"
#include "dualpose/dataset.hpp"

#include <chrono>
#include <set>

using namespace dualpose;
using namespace test_support;

namespace {

// Cotangent of the angle at o in triangle (o, a, b), from the angle itself.
double cot_at(const Vec3& o, const Vec3& a, const Vec3& b) {
  const double angle = std::acos(std::clamp((a - o).normalized().dot((b - o).normalized()), -1.0, 1.0));
  return 1.0 / std::tan(angle);
}

// Direct evaluation of the energy by walking every face: each face contributes
// half the cotangent of each angle to the opposite edge, and every edge is
// visited from both endpoints.
double energy_oracle(const Mesh& rest, const std::vector<Vec3>& pos, const std::vector<Eigen::Matrix3d>& rot) {
  std::map<std::pair<int, int>, double> w;
  const auto& v = rest.vertices();
  for (const Face& f : rest.faces()) {
    for (int k = 0; k < 3; ++k) {
      const int o = f[k], a = f[(k + 1) % 3], b = f[(k + 2) % 3];
      w[{std::min(a, b), std::max(a, b)}] += 0.5 * cot_at(v[o], v[a], v[b]);
    }
  }
  double e = 0.0;
  for (const auto& [edge, wij] : w) {
    const auto [i, j] = edge;
    e += wij * ((pos[i] - pos[j]) - rot[i] * (v[i] - v[j])).squaredNorm();
    e += wij * ((pos[j] - pos[i]) - rot[j] * (v[j] - v[i])).squaredNorm();
  }
  return e;
}

std::vector<Vec3> rigid(const std::vector<Vec3>& pts, const Eigen::Matrix3d& q, const Vec3& t) {
  std::vector<Vec3> out;
  out.reserve(pts.size());
  for (const Vec3& p : pts) out.push_back(q * p + t);
  return out;
}

Mesh rigid(const Mesh& m, const Eigen::Matrix3d& q, const Vec3& t) { return Mesh(rigid(m.vertices(), q, t), m.faces()); }

// Smooth nonrigid bend plus noise: a target the rest shape cannot match exactly.
Mesh bent(const Mesh& m, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1, 1);
  const double k = 0.8 * u(rng);
  std::vector<Vec3> out;
  for (const Vec3& p : m.vertices()) {
    const double a = k * p.y();
    out.emplace_back(std::cos(a) * p.x() - std::sin(a) * p.z(), p.y() + 0.1 * p.x() * p.x(),
                     std::sin(a) * p.x() + std::cos(a) * p.z());
    out.back() += 0.01 * Vec3(u(rng), u(rng), u(rng));
  }
  return Mesh(out, m.faces());
}

ArapProblem all_anchor_problem(const Mesh& rest, const std::vector<Vec3>& positions) {
  std::vector<int> anchors(rest.vertex_count());
  std::iota(anchors.begin(), anchors.end(), 0);
  return make_arap_problem(rest, anchors, positions);
}

void check_rotation(const Eigen::Matrix3d& r) {
  CHECK((r.transpose() * r - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() <= 1e-8);
  CHECK(r.determinant() == doctest::Approx(1.0).epsilon(1e-8));
}

}  // namespace

TEST_CASE("arap_energy") {
  const Mesh m = icosphere(2, 3, 0.1, {1, 0.7, 0.5});
  std::mt19937_64 rng(1);

  ArapProblem p = all_anchor_problem(m, m.vertices());
  CHECK(arap_energy(p) == 0.0);

  const Eigen::Matrix3d q = random_rotation(rng);
  p = all_anchor_problem(m, rigid(m.vertices(), q, {0.3, -1, 2}));
  std::fill(p.rotations.begin(), p.rotations.end(), q);
  CHECK(arap_energy(p) <= 1e-20);

  SUBCASE("matches the face-walk oracle for random positions and rotations") {
    for (int trial = 0; trial < 5; ++trial) {
      std::vector<Vec3> pos = m.vertices();
      for (Vec3& x : pos) x += 0.1 * random_points(1, rng)[0];
      ArapProblem r = all_anchor_problem(m, pos);
      for (Eigen::Matrix3d& rot : r.rotations) rot = random_rotation(rng);
      const double oracle = energy_oracle(m, pos, r.rotations);
      CHECK(arap_energy(r) == doctest::Approx(oracle).epsilon(1e-10));
    }
  }

  SUBCASE("one perturbed tetrahedron vertex") {
    const Mesh tet = unit_tetrahedron();
    for (int axis = 0; axis < 3; ++axis) {
      std::vector<Vec3> pos = tet.vertices();
      const double delta = 0.05 * (axis + 1);
      pos[2](axis) += delta;
      const ArapProblem t = all_anchor_problem(tet, pos);
      // Three incident edges, each with weight cot(60 deg) summed over its two
      // faces, counted from both endpoints.
      const double w = 2 * 0.5 / std::sqrt(3.0);
      CHECK(arap_energy(t) == doctest::Approx(2 * 3 * w * delta * delta).epsilon(1e-12));
      CHECK(arap_energy(t) == doctest::Approx(energy_oracle(tet, pos, t.rotations)).epsilon(1e-12));
    }
  }
}

TEST_CASE("fit_rotations") {
  const Mesh m = icosphere(2, 4, 0.1, {1, 0.6, 0.8});
  std::mt19937_64 rng(2);

  ArapProblem id = all_anchor_problem(m, m.vertices());
  fit_rotations(id);
  for (const Eigen::Matrix3d& r : id.rotations) CHECK((r - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() <= 1e-9);

  for (int trial = 0; trial < 5; ++trial) {
    const Eigen::Matrix3d q = random_rotation(rng);
    ArapProblem p = all_anchor_problem(m, rigid(m.vertices(), q, {1, 2, 3}));
    fit_rotations(p);
    for (const Eigen::Matrix3d& r : p.rotations) CHECK((r - q).cwiseAbs().maxCoeff() <= 1e-9);
  }

  SUBCASE("mirrored cells still get proper rotations") {
    const Eigen::Matrix3d mirror = Eigen::Vector3d(-1, 1, 1).asDiagonal();
    ArapProblem p = all_anchor_problem(m, rigid(m.vertices(), mirror, Vec3::Zero()));
    fit_rotations(p);
    for (const Eigen::Matrix3d& r : p.rotations) check_rotation(r);
  }

  SUBCASE("vanishing covariance keeps the previous rotation") {
    ArapProblem p = all_anchor_problem(m, std::vector<Vec3>(m.vertex_count(), Vec3(0.5, 0.5, 0.5)));
    const Eigen::Matrix3d q = random_rotation(rng);
    std::fill(p.rotations.begin(), p.rotations.end(), q);
    fit_rotations(p);
    for (const Eigen::Matrix3d& r : p.rotations) CHECK(r == q);
  }

  SUBCASE("fitted rotations never increase the energy") {
    ArapProblem p = all_anchor_problem(m, bent(m, rng).vertices());
    const double before = arap_energy(p);
    fit_rotations(p);
    CHECK(arap_energy(p) <= before);
  }
}

TEST_CASE("solve_positions") {
  const Mesh m = icosphere(2, 5, 0.1, {0.8, 1, 0.6});
  std::mt19937_64 rng(3);

  SUBCASE("all anchors") {
    const Mesh target = bent(m, rng);
    ArapProblem p = all_anchor_problem(m, target.vertices());
    solve_positions(p);
    CHECK(max_vertex_error(p.positions, target.vertices()) == 0.0);
  }

  SUBCASE("translated anchors translate every vertex") {
    const Vec3 t(0.4, -0.2, 1.1);
    const std::vector<int> anchors = sample_anchors(m.vertex_count(), 0.1, 7);
    std::vector<Vec3> targets;
    for (int a : anchors) targets.push_back(m.vertices()[a] + t);
    ArapProblem p = make_arap_problem(m, anchors, targets);
    const double residual = solve_positions(p);
    CHECK(residual <= 1e-10);
    CHECK(max_vertex_error(p.positions, rigid(m.vertices(), Eigen::Matrix3d::Identity(), t)) <= 1e-9);
  }

  SUBCASE("exact minimization never increases the energy") {
    const Mesh target = bent(m, rng);
    const std::vector<int> anchors = sample_anchors(m.vertex_count(), 0.1, 8);
    std::vector<Vec3> targets;
    for (int a : anchors) targets.push_back(target.vertices()[a]);
    ArapProblem p = make_arap_problem(m, anchors, targets);
    p.positions = target.vertices();
    for (int a = 0; a < static_cast<int>(anchors.size()); ++a) p.positions[anchors[a]] = targets[a];
    fit_rotations(p);
    const double before = arap_energy(p);
    const ArapSolver solver(p);
    CHECK(solver.solve(p) <= 1e-10);
    CHECK(arap_energy(p) <= before);
  }

  SUBCASE("a component without anchors is named") {
    const Mesh tet = unit_tetrahedron();
    std::vector<Vec3> v = tet.vertices();
    std::vector<Face> f = tet.faces();
    for (const Vec3& x : tet.vertices()) v.push_back(x + Vec3(3, 0, 0));
    for (const Face& x : tet.faces()) f.push_back({x[0] + 4, x[1] + 4, x[2] + 4});
    const Mesh two(v, f);
    const ArapProblem p = make_arap_problem(two, {0}, {v[0]});
    try {
      const ArapSolver solver(p);
      FAIL("expected MeshError");
    } catch (const MeshError& e) {
      CHECK(std::string(e.what()).find("component") != std::string::npos);
    }
  }

  CHECK_THROWS_AS(make_arap_problem(m, {1, 1}, {Vec3::Zero(), Vec3::Zero()}), std::exception);
  CHECK_THROWS_AS(make_arap_problem(m, {m.vertex_count()}, {Vec3::Zero()}), std::exception);
}

TEST_CASE("sample_anchors") {
  const std::vector<int> a = sample_anchors(602, 0.1, 3);
  CHECK(a.size() == 61);
  CHECK(std::set<int>(a.begin(), a.end()).size() == a.size());
  for (int i : a) CHECK((i >= 0 && i < 602));
  CHECK(sample_anchors(602, 0.1, 3) == a);
  CHECK(sample_anchors(602, 0.1, 4) != a);
  CHECK(sample_anchors(10, 0.1, 0).size() == 1);
  CHECK(kArapAnchorFraction == 0.10);
  CHECK(kArapIterations == 50);
}

TEST_CASE("arap_deform") {
  std::mt19937_64 rng(4);
  const SyntheticDataset data = generate_synthetic_dataset(3, 4, 600, 11);

  SUBCASE("target equal to rest is a fixed point") {
    const Mesh m = data.mesh(0, 0);
    CHECK(max_vertex_error(arap_deform(m, m).mesh.vertices(), m.vertices()) <= 1e-9);
  }

  SUBCASE("posed bodies need clamped weights for the fixed point") {
    // Bent joints give obtuse triangles; with raw weights the energy is
    // indefinite and drifts below zero, so rest is no longer the minimizer.
    ArapOptions clamp;
    clamp.clamp_negative_weights = true;
    for (int pose = 1; pose < 4; ++pose) {
      const Mesh m = data.mesh(0, pose);
      const ArapDeformResult r = arap_deform(m, m, 0.1, 50, 0, clamp);
      CHECK(max_vertex_error(r.mesh.vertices(), m.vertices()) <= 1e-9);
      CHECK(r.energy.back() >= 0.0);
    }
  }

  SUBCASE("rigid motion is recovered with 10% anchors") {
    std::vector<Mesh> meshes = {data.mesh(0, 0), data.mesh(1, 2), icosphere(3, 6, 0.1, {1, 0.5, 0.7})};
    for (const Mesh& m : meshes) {
      for (int trial = 0; trial < 3; ++trial) {
        const Mesh target = rigid(m, random_rotation(rng), 0.5 * random_points(1, rng)[0]);
        const ArapDeformResult r = arap_deform(m, target, 0.1, 50, trial);
        CHECK(max_vertex_error(r.mesh.vertices(), target.vertices()) <= 1e-6);
        CHECK(r.energy.back() <= 1e-10);
        CHECK(r.mesh.faces() == m.faces());
      }
    }
  }

  SUBCASE("energy is non-increasing over 50 iterations on 20 meshes") {
    int monotone = 0;
    for (int k = 0; k < 20; ++k) {
      Mesh rest, target;
      if (k < 8) {
        rest = data.mesh(k % 3, k % 4);
        target = data.mesh(k % 3, (k + 1) % 4);
      } else {
        rest = icosphere(3, 100 + k, 0.1, Vec3(1, 0.5, 0.8) + 0.3 * random_points(1, rng, 0, 1)[0]);
        target = bent(rest, rng);
      }
      const ArapDeformResult r = arap_deform(rest, target, 0.1, 50, k);
      REQUIRE(r.energy.size() == 50);
      bool ok = true;
      for (std::size_t i = 1; i < r.energy.size(); ++i) ok &= r.energy[i] <= r.energy[i - 1] * (1 + 1e-12) + 1e-15;
      monotone += ok;
    }
    CHECK(monotone == 20);
  }

  SUBCASE("commutes with a global rigid motion") {
    const Mesh rest = data.mesh(2, 0);
    const Mesh target = data.mesh(2, 3);
    const ArapDeformResult base = arap_deform(rest, target, 0.1, 50, 5);
    for (int trial = 0; trial < 3; ++trial) {
      const Eigen::Matrix3d q = random_rotation(rng);
      const Vec3 t = random_points(1, rng)[0];
      const ArapDeformResult moved = arap_deform(rigid(rest, q, t), rigid(target, q, t), 0.1, 50, 5);
      CHECK(max_vertex_error(moved.mesh.vertices(), rigid(base.mesh.vertices(), q, t)) <= 1e-6);
    }
  }

  SUBCASE("rotations stay orthonormal") {
    const Mesh rest = data.mesh(1, 0);
    const Mesh target = data.mesh(1, 3);
    const std::vector<int> anchors = sample_anchors(rest.vertex_count(), 0.1, 1);
    std::vector<Vec3> targets;
    for (int a : anchors) targets.push_back(target.vertices()[a]);
    ArapProblem p = make_arap_problem(rest, anchors, targets);
    const ArapSolver solver(p);
    for (int it = 0; it < 10; ++it) {
      fit_rotations(p);
      solver.solve(p);
    }
    for (const Eigen::Matrix3d& r : p.rotations) check_rotation(r);
  }

  SUBCASE("600-vertex mesh deforms within 2 s") {
    const Mesh rest = data.mesh(0, 0);
    const Mesh target = data.mesh(0, 2);
    const auto start = std::chrono::steady_clock::now();
    arap_deform(rest, target);
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    MESSAGE("arap_deform " << rest.vertex_count() << " vertices: " << seconds << " s");
    CHECK(seconds <= 2.0);
  }

  SUBCASE("clamp flag removes negative weights") {
    // Flattened sphere has obtuse triangles near the rim.
    const Mesh flat = icosphere(2, 9, 0.0, {1, 1, 0.05});
    const ArapProblem raw = make_arap_problem(flat, {0}, {flat.vertices()[0]});
    ArapOptions clamp;
    clamp.clamp_negative_weights = true;
    const ArapProblem clamped = make_arap_problem(flat, {0}, {flat.vertices()[0]}, clamp);
    bool any_negative = false, clamped_negative = false;
    for (const auto& ring : raw.neighbors)
      for (const WeightedNeighbor& n : ring) any_negative |= n.weight < 0;
    for (const auto& ring : clamped.neighbors)
      for (const WeightedNeighbor& n : ring) clamped_negative |= n.weight < 0;
    CHECK(any_negative);
    CHECK_FALSE(clamped_negative);
  }

  CHECK_THROWS(arap_deform(data.mesh(0, 0), icosphere(1, 1, 0.0)));
}
