#include "dualpose/arap.hpp"

#include <Eigen/Geometry>
#include <Eigen/LU>
#include <Eigen/SVD>
#include <Eigen/Sparse>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace dualpose {

ArapProblem make_arap_problem(const Mesh& rest, std::vector<int> anchors, std::vector<Vec3> anchor_targets,
                              const ArapOptions& options) {
  const int n = rest.vertex_count();
  if (anchors.size() != anchor_targets.size()) throw MeshError("arap: anchor/target count mismatch");
  std::vector<char> used(static_cast<std::size_t>(n), 0);
  for (int a : anchors) {
    if (a < 0 || a >= n) throw MeshError("arap: anchor index " + std::to_string(a) + " out of range");
    if (used[a]) throw MeshError("arap: duplicate anchor " + std::to_string(a));
    used[a] = 1;
  }

  ArapProblem p;
  p.rest = rest.vertices();
  p.neighbors.resize(static_cast<std::size_t>(n));
  const EdgeWeights weights = cotangent_weights(rest);
  for (const auto& [edge, w] : weights.entries()) {
    const double weight = options.clamp_negative_weights ? std::max(w, 0.0) : w;
    p.neighbors[edge.first].push_back({edge.second, weight});
    p.neighbors[edge.second].push_back({edge.first, weight});
  }
  p.rotations.assign(static_cast<std::size_t>(n), Eigen::Matrix3d::Identity());
  p.positions = p.rest;
  for (std::size_t k = 0; k < anchors.size(); ++k) p.positions[anchors[k]] = anchor_targets[k];
  p.anchors = std::move(anchors);
  p.anchor_targets = std::move(anchor_targets);
  return p;
}

double arap_energy(const ArapProblem& p) {
  double e = 0.0;
  for (int i = 0; i < p.vertex_count(); ++i) {
    for (const auto& [j, w] : p.neighbors[i]) {
      const Vec3 r = (p.positions[i] - p.positions[j]) - p.rotations[i] * (p.rest[i] - p.rest[j]);
      e += w * r.squaredNorm();
    }
  }
  return e;
}

void fit_rotations(ArapProblem& p) {
  for (int i = 0; i < p.vertex_count(); ++i) {
    Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
    for (const auto& [j, w] : p.neighbors[i]) {
      cov += w * (p.rest[i] - p.rest[j]) * (p.positions[i] - p.positions[j]).transpose();
    }
    if (!(cov.norm() > 1e-14)) continue;
    Eigen::JacobiSVD<Eigen::Matrix3d> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Eigen::Matrix3d u = svd.matrixU();
    const Eigen::Matrix3d v = svd.matrixV();
    Eigen::Matrix3d r = v * u.transpose();
    if (r.determinant() < 0.0) {
      u.col(2) *= -1.0;  // smallest singular value
      r = v * u.transpose();
    }
    p.rotations[i] = r;
  }
}

struct ArapSolver::Impl {
  std::vector<int> free_index;  // vertex -> row in the reduced system, -1 for anchors
  std::vector<int> free_vertices;
  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> ldlt;
  Eigen::SparseMatrix<double> laplacian;
};

namespace {

// Connected components of the edge graph; returns component id per vertex.
std::vector<int> components(const ArapProblem& p, int& count) {
  std::vector<int> comp(static_cast<std::size_t>(p.vertex_count()), -1);
  count = 0;
  std::vector<int> stack;
  for (int s = 0; s < p.vertex_count(); ++s) {
    if (comp[s] != -1) continue;
    comp[s] = count;
    stack.push_back(s);
    while (!stack.empty()) {
      const int v = stack.back();
      stack.pop_back();
      for (const auto& nb : p.neighbors[v]) {
        if (comp[nb.index] == -1) {
          comp[nb.index] = count;
          stack.push_back(nb.index);
        }
      }
    }
    ++count;
  }
  return comp;
}

}  // namespace

ArapSolver::ArapSolver(const ArapProblem& p) : impl_(std::make_unique<Impl>()) {
  const int n = p.vertex_count();
  int n_comp = 0;
  const auto comp = components(p, n_comp);
  std::vector<char> anchored(static_cast<std::size_t>(n_comp), 0);
  for (int a : p.anchors) anchored[comp[a]] = 1;
  for (int c = 0; c < n_comp; ++c) {
    if (!anchored[c]) {
      const int first = static_cast<int>(std::find(comp.begin(), comp.end(), c) - comp.begin());
      const auto size = std::count(comp.begin(), comp.end(), c);
      throw MeshError("arap: singular system, component " + std::to_string(c) + " (" + std::to_string(size) +
                      " vertices, first vertex " + std::to_string(first) + ") has no anchor");
    }
  }

  impl_->free_index.assign(static_cast<std::size_t>(n), -1);
  std::vector<char> is_anchor(static_cast<std::size_t>(n), 0);
  for (int a : p.anchors) is_anchor[a] = 1;
  for (int v = 0; v < n; ++v) {
    if (!is_anchor[v]) {
      impl_->free_index[v] = static_cast<int>(impl_->free_vertices.size());
      impl_->free_vertices.push_back(v);
    }
  }
  const int m = static_cast<int>(impl_->free_vertices.size());
  std::vector<Eigen::Triplet<double>> trips;
  for (int v : impl_->free_vertices) {
    const int row = impl_->free_index[v];
    double diag = 0.0;
    for (const auto& [j, w] : p.neighbors[v]) {
      diag += w;
      if (impl_->free_index[j] >= 0) trips.emplace_back(row, impl_->free_index[j], -w);
    }
    trips.emplace_back(row, row, diag);
  }
  impl_->laplacian.resize(m, m);
  impl_->laplacian.setFromTriplets(trips.begin(), trips.end());
  if (m > 0) {
    impl_->ldlt.compute(impl_->laplacian);
    if (impl_->ldlt.info() != Eigen::Success) throw MeshError("arap: factorization of the Laplacian failed");
  }
}

ArapSolver::~ArapSolver() = default;

double ArapSolver::solve(ArapProblem& p) const {
  const int m = static_cast<int>(impl_->free_vertices.size());
  for (std::size_t k = 0; k < p.anchors.size(); ++k) p.positions[p.anchors[k]] = p.anchor_targets[k];
  if (m == 0) return 0.0;
  Eigen::MatrixXd rhs = Eigen::MatrixXd::Zero(m, 3);
  for (int v : impl_->free_vertices) {
    const int row = impl_->free_index[v];
    Vec3 b = Vec3::Zero();
    for (const auto& [j, w] : p.neighbors[v]) {
      b += 0.5 * w * (p.rotations[v] + p.rotations[j]) * (p.rest[v] - p.rest[j]);
      if (impl_->free_index[j] < 0) b += w * p.positions[j];
    }
    rhs.row(row) = b.transpose();
  }
  const Eigen::MatrixXd x = impl_->ldlt.solve(rhs);
  for (int v : impl_->free_vertices) p.positions[v] = x.row(impl_->free_index[v]).transpose();
  const double rhs_norm = rhs.norm();
  const double res = (impl_->laplacian * x - rhs).norm();
  return rhs_norm > 0.0 ? res / rhs_norm : res;
}

double solve_positions(ArapProblem& p) { return ArapSolver(p).solve(p); }

std::vector<int> sample_anchors(int vertex_count, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0) || fraction > 1.0) throw std::invalid_argument("arap: anchor fraction must be in (0, 1]");
  const int count = std::min(vertex_count, static_cast<int>(std::ceil(fraction * vertex_count - 1e-9)));
  std::vector<int> all(static_cast<std::size_t>(vertex_count));
  std::iota(all.begin(), all.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(all.begin(), all.end(), rng);
  all.resize(static_cast<std::size_t>(count));
  std::sort(all.begin(), all.end());
  return all;
}

ArapDeformResult arap_deform(const Mesh& rest, const Mesh& target, double anchor_fraction, int iterations,
                             std::uint64_t seed, const ArapOptions& options) {
  if (rest.vertex_count() != target.vertex_count() || rest.faces() != target.faces()) {
    throw MeshError("arap: rest and target meshes must share topology");
  }
  auto anchors = sample_anchors(rest.vertex_count(), anchor_fraction, seed);
  std::vector<Vec3> targets;
  targets.reserve(anchors.size());
  for (int a : anchors) targets.push_back(target.vertices()[a]);
  ArapProblem problem = make_arap_problem(rest, std::move(anchors), std::move(targets), options);
  if (options.rigid_initialization && problem.anchors.size() >= 3) {
    Eigen::Matrix3Xd src(3, problem.anchors.size());
    Eigen::Matrix3Xd dst(3, problem.anchors.size());
    for (std::size_t k = 0; k < problem.anchors.size(); ++k) {
      src.col(k) = problem.rest[problem.anchors[k]];
      dst.col(k) = problem.anchor_targets[k];
    }
    const Eigen::Matrix4d fit = Eigen::umeyama(src, dst, false);
    for (int v = 0; v < problem.vertex_count(); ++v)
      problem.positions[v] = fit.topLeftCorner<3, 3>() * problem.rest[v] + fit.topRightCorner<3, 1>();
    for (std::size_t k = 0; k < problem.anchors.size(); ++k)
      problem.positions[problem.anchors[k]] = problem.anchor_targets[k];
  }
  const ArapSolver solver(problem);
  ArapDeformResult result;
  result.energy.reserve(static_cast<std::size_t>(iterations));
  for (int it = 0; it < iterations; ++it) {
    fit_rotations(problem);
    solver.solve(problem);
    result.energy.push_back(arap_energy(problem));
  }
  result.mesh = rest.with_vertices(problem.positions);
  return result;
}

}  // namespace dualpose
