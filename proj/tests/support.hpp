#pragma once

#include "dualpose/mesh.hpp"
#include "dualpose/tensor.hpp"

#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <map>
#include <numeric>
#include <random>
#include <string>
#include <vector>

namespace test_support {

using dualpose::Face;
using dualpose::Mesh;
using dualpose::Vec3;
namespace ad = dualpose::ad;

/// Regular tetrahedron with unit edges.
inline Mesh unit_tetrahedron() {
  const double s = 1.0 / std::sqrt(2.0);
  std::vector<Vec3> v = {{1, 0, -s}, {-1, 0, -s}, {0, 1, s}, {0, -1, s}};
  for (Vec3& p : v) p *= 0.5;
  return Mesh(v, {{0, 1, 2}, {0, 3, 1}, {0, 2, 3}, {1, 3, 2}});
}

/// (n+1) x (n+1) vertex grid in the z = 0 plane, each cell split along the
/// same diagonal.
inline Mesh plane_grid(int n, double spacing = 1.0) {
  std::vector<Vec3> v;
  std::vector<Face> f;
  for (int y = 0; y <= n; ++y)
    for (int x = 0; x <= n; ++x) v.emplace_back(x * spacing, y * spacing, 0.0);
  const auto id = [n](int x, int y) { return y * (n + 1) + x; };
  for (int y = 0; y < n; ++y) {
    for (int x = 0; x < n; ++x) {
      f.push_back({id(x, y), id(x + 1, y), id(x + 1, y + 1)});
      f.push_back({id(x, y), id(x + 1, y + 1), id(x, y + 1)});
    }
  }
  return Mesh(v, f);
}

/// Subdivided icosahedron with radial noise and an anisotropic scale: a
/// closed, well-shaped random surface.
inline Mesh icosphere(int levels, unsigned seed, double noise, Vec3 scale = {1, 1, 1}) {
  const double t = (1 + std::sqrt(5.0)) / 2;
  std::vector<Vec3> v = {{-1, t, 0}, {1, t, 0}, {-1, -t, 0}, {1, -t, 0}, {0, -1, t},  {0, 1, t},
                         {0, -1, -t}, {0, 1, -t}, {t, 0, -1}, {t, 0, 1},  {-t, 0, -1}, {-t, 0, 1}};
  for (Vec3& p : v) p.normalize();
  std::vector<Face> f = {{0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11}, {1, 5, 9},  {5, 11, 4},
                         {11, 10, 2}, {10, 7, 6}, {7, 1, 8},   {3, 9, 4},  {3, 4, 2},   {3, 2, 6},  {3, 6, 8},
                         {3, 8, 9},  {4, 9, 5},  {2, 4, 11},  {6, 2, 10}, {8, 6, 7},   {9, 8, 1}};
  for (int l = 0; l < levels; ++l) {
    std::map<std::pair<int, int>, int> mid;
    std::vector<Face> nf;
    const auto midpoint = [&](int a, int b) {
      const auto key = std::pair{std::min(a, b), std::max(a, b)};
      const auto it = mid.find(key);
      if (it != mid.end()) return it->second;
      v.push_back((v[a] + v[b]).normalized());
      return mid[key] = static_cast<int>(v.size()) - 1;
    };
    for (const Face& x : f) {
      const int a = midpoint(x[0], x[1]), b = midpoint(x[1], x[2]), c = midpoint(x[2], x[0]);
      nf.push_back({x[0], a, c});
      nf.push_back({x[1], b, a});
      nf.push_back({x[2], c, b});
      nf.push_back({a, b, c});
    }
    f = std::move(nf);
  }
  std::mt19937 rng(seed);
  std::uniform_real_distribution<double> u(-1, 1);
  for (Vec3& p : v) p = (1 + noise * u(rng)) * p.cwiseProduct(scale);
  return Mesh(v, f);
}

inline Eigen::Matrix3d random_rotation(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::Quaterniond q(n(rng), n(rng), n(rng), n(rng));
  return q.normalized().toRotationMatrix();
}

inline std::vector<Vec3> random_points(int n, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<Vec3> p(n);
  for (Vec3& x : p) x = {u(rng), u(rng), u(rng)};
  return p;
}

inline ad::Tensor random_tensor(ad::Shape shape, std::mt19937_64& rng, double lo, double hi,
                                bool requires_grad = true) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> data(ad::shape_numel(shape));
  for (double& x : data) x = u(rng);
  return ad::Tensor::from_data(std::move(shape), std::move(data), requires_grad);
}

/// Relative error |g - fd| / max(|g|, |fd|, floor) between the tape
/// gradient and central differences, measured over the concatenation of all
/// leaves. `f` must rebuild its graph from the leaves on every call.
inline double gradient_error(const std::function<ad::Tensor(const std::vector<ad::Tensor>&)>& f,
                             std::vector<ad::Tensor> leaves, double h = 1e-5, double floor = 1e-8) {
  for (ad::Tensor& l : leaves) l.zero_grad();
  ad::backward(f(leaves));
  std::vector<double> tape, numeric;
  for (ad::Tensor& leaf : leaves) {
    const auto g = leaf.grad();
    auto x = leaf.mutable_data();
    for (std::size_t i = 0; i < x.size(); ++i) {
      tape.push_back(g.empty() ? 0.0 : g[i]);
      const double keep = x[i];
      x[i] = keep + h;
      const double up = f(leaves).item();
      x[i] = keep - h;
      const double down = f(leaves).item();
      x[i] = keep;
      numeric.push_back((up - down) / (2 * h));
    }
  }
  double diff = 0.0, a = 0.0, b = 0.0;
  for (std::size_t i = 0; i < tape.size(); ++i) {
    diff += (tape[i] - numeric[i]) * (tape[i] - numeric[i]);
    a += tape[i] * tape[i];
    b += numeric[i] * numeric[i];
  }
  return std::sqrt(diff) / std::max({std::sqrt(a), std::sqrt(b), floor});
}

/// Exact optimum of the uniform-marginal n x n transport LP. Its feasible
/// set is the Birkhoff polytope scaled by 1/n, whose vertices (basic
/// feasible solutions) are the scaled permutation matrices, so the optimum
/// is the best permutation.
inline double transport_lp_optimum(const std::vector<double>& cost, int n) {
  std::vector<int> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  double best = std::numeric_limits<double>::infinity();
  do {
    double c = 0.0;
    for (int i = 0; i < n; ++i) c += cost[i * n + perm[i]];
    best = std::min(best, c / n);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

/// Fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("dualpose_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline double max_vertex_error(const std::vector<Vec3>& a, const std::vector<Vec3>& b) {
  double e = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) e = std::max(e, (a[i] - b[i]).norm());
  return e;
}

}  // namespace test_support
