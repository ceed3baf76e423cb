#include "dualpose/correspondence.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace dualpose {

using ad::Tensor;

Tensor coords_tensor(const std::vector<Vec3>& vertices, bool requires_grad) {
  const std::size_t n = vertices.size();
  std::vector<double> data(3 * n);
  for (std::size_t i = 0; i < n; ++i) {
    data[i] = vertices[i].x();
    data[n + i] = vertices[i].y();
    data[2 * n + i] = vertices[i].z();
  }
  return Tensor::from_data({1, 3, static_cast<int>(n)}, std::move(data), requires_grad);
}

std::vector<Vec3> coords_to_vertices(const Tensor& coords) {
  if (coords.rank() != 3 || coords.dim(0) != 1 || coords.dim(1) != 3) {
    throw ad::TensorError("coords_to_vertices: expected [1, 3, N], got " + ad::to_string(coords.shape()));
  }
  const auto d = coords.data();
  const std::size_t n = static_cast<std::size_t>(coords.dim(2));
  std::vector<Vec3> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = Vec3(d[i], d[n + i], d[2 * n + i]);
  return out;
}

Tensor correlation_matrix(const Tensor& f_id, const Tensor& f_pose) {
  if (f_id.rank() != 3 || f_pose.rank() != 3 || f_id.dim(0) != 1 || f_pose.dim(0) != 1 ||
      f_id.dim(1) != f_pose.dim(1)) {
    throw ad::TensorError("correlation_matrix: feature shapes " + ad::to_string(f_id.shape()) + " and " +
                          ad::to_string(f_pose.shape()));
  }
  auto unit_columns = [](const Tensor& f) {
    const int d = f.dim(1);
    const int n = f.dim(2);
    Tensor m = ad::reshape(f, {d, n});
    // max(||f||, floor), clamped before the sqrt so a zero column has a finite gradient
    Tensor norms = ad::sqrt(ad::clamp_min(ad::sum(ad::square(m), 0), kFeatureNormFloor * kFeatureNormFloor));
    return ad::div(m, norms);
  };
  return ad::matmul(ad::transpose(unit_columns(f_id)), unit_columns(f_pose));
}

MatchingMatrix solve_ot_cost(const Tensor& cost, double epsilon, int iterations, bool force_log_domain) {
  if (!(epsilon > 0.0)) throw std::invalid_argument("solve_ot: epsilon must be positive");
  if (iterations < 1) throw std::invalid_argument("solve_ot: need at least one iteration");
  if (cost.rank() != 2) throw ad::TensorError("solve_ot: cost must be a matrix");
  const int n_id = cost.dim(0);
  const int n_pose = cost.dim(1);
  const double row_mass = 1.0 / n_id;
  const double col_mass = 1.0 / n_pose;

  const auto z = cost.data();
  const auto [z_min, z_max] = std::minmax_element(z.begin(), z.end());
  const bool log_domain =
      force_log_domain || *z_min / epsilon > kLogDomainThreshold || *z_max / epsilon > kLogDomainRangeLimit;

  MatchingMatrix plan;
  plan.epsilon = epsilon;
  plan.iterations = iterations;
  plan.log_domain = log_domain;

  const Tensor kernel_log = ad::scale(cost, -1.0 / epsilon);
  if (!log_domain) {
    const Tensor u = ad::exp(kernel_log);
    const Tensor ut = ad::transpose(u);
    const Tensor row_target = Tensor::full({n_id, 1}, row_mass);
    const Tensor col_target = Tensor::full({n_pose, 1}, col_mass);
    Tensor a = row_target;
    Tensor b;
    for (int it = 0; it < iterations; ++it) {
      b = ad::div(col_target, ad::matmul(ut, a));
      a = ad::div(row_target, ad::matmul(u, b));
    }
    plan.values = ad::mul(ad::mul(a, u), ad::reshape(b, {1, n_pose}));
  } else {
    // f = log a, g = log b
    Tensor f = Tensor::full({n_id, 1}, std::log(row_mass));
    Tensor g;
    for (int it = 0; it < iterations; ++it) {
      g = ad::add_scalar(ad::neg(ad::logsumexp(ad::add(kernel_log, f), 0)), std::log(col_mass));
      f = ad::add_scalar(ad::neg(ad::logsumexp(ad::add(kernel_log, g), 1)), std::log(row_mass));
    }
    plan.values = ad::exp(ad::add(ad::add(kernel_log, f), g));
  }
  return plan;
}

MatchingMatrix solve_ot(const Tensor& correlation, double epsilon, int iterations, bool force_log_domain) {
  return solve_ot_cost(ad::add_scalar(ad::neg(correlation), 1.0), epsilon, iterations, force_log_domain);
}

MatchingMatrix row_normalize(const MatchingMatrix& plan) {
  const Tensor sums = ad::sum(plan.values, 1);
  for (double s : sums.data()) {
    if (!(s > 0.0)) throw ad::TensorError("row_normalize: zero row in matching matrix");
  }
  MatchingMatrix out = plan;
  out.values = ad::div(plan.values, sums);
  return out;
}

Tensor warp_coordinates(const MatchingMatrix& row_normalized, const Tensor& pose_coords) {
  const int n_pose = pose_coords.dim(2);
  if (row_normalized.cols() != n_pose) throw ad::TensorError("warp: plan columns do not match pose vertex count");
  const Tensor warped = ad::matmul(ad::reshape(pose_coords, {3, n_pose}), ad::transpose(row_normalized.values));
  return ad::reshape(warped, {1, 3, row_normalized.rows()});
}

Mesh warp_pose_mesh(const MatchingMatrix& row_normalized, const std::vector<Vec3>& pose_vertices,
                    const std::vector<Face>& identity_faces) {
  const Tensor warped = warp_coordinates(row_normalized, coords_tensor(pose_vertices));
  // Mesh validates faces against the identity vertex count.
  return Mesh(coords_to_vertices(warped), identity_faces);
}

Tensor backward_warp(const MatchingMatrix& plan, const Tensor& warped_coords) {
  const int n_id = plan.rows();
  const int n_pose = plan.cols();
  if (warped_coords.dim(2) != n_id) throw ad::TensorError("backward_warp: warped vertex count mismatch");
  const Tensor col_sums = ad::sum(plan.values, 0);
  for (double s : col_sums.data()) {
    if (!(s > 0.0)) throw ad::TensorError("backward_warp: zero column in matching matrix");
  }
  const Tensor col_normalized = ad::div(plan.values, col_sums);  // [N_id, N_pose]
  const Tensor out = ad::matmul(ad::reshape(warped_coords, {3, n_id}), col_normalized);
  return ad::reshape(out, {1, 3, n_pose});
}

Tensor backward_correspondence_loss(const MatchingMatrix& plan, const Tensor& pose_coords) {
  const MatchingMatrix normalized = row_normalize(plan);
  const Tensor warped = warp_coordinates(normalized, pose_coords);
  const Tensor rebuilt = backward_warp(plan, warped);
  return ad::sum_all(ad::square(ad::sub(rebuilt, pose_coords)));
}

std::vector<int> row_argmax(const MatchingMatrix& plan) {
  const int rows = plan.rows();
  const int cols = plan.cols();
  const auto v = plan.values.data();
  std::vector<int> out(static_cast<std::size_t>(rows));
  for (int i = 0; i < rows; ++i) {
    const double* row = v.data() + static_cast<std::size_t>(i) * cols;
    out[i] = static_cast<int>(std::max_element(row, row + cols) - row);
  }
  return out;
}

namespace {

std::array<std::uint8_t, 3> position_color(const Vec3& p, const Vec3& lo, const Vec3& hi) {
  std::array<std::uint8_t, 3> c{};
  for (int k = 0; k < 3; ++k) {
    const double span = hi[k] - lo[k];
    const double t = span > 0.0 ? (p[k] - lo[k]) / span : 0.5;
    c[k] = static_cast<std::uint8_t>(std::clamp(t, 0.0, 1.0) * 255.0 + 0.5);
  }
  return c;
}

}  // namespace

void save_correspondence_ply(const Mesh& identity, const Mesh& pose, const MatchingMatrix& plan,
                             const std::string& path, double offset) {
  if (plan.rows() != identity.vertex_count() || plan.cols() != pose.vertex_count()) {
    throw MeshError("correspondence export: plan shape does not match meshes");
  }
  Vec3 lo = Vec3::Constant(std::numeric_limits<double>::max());
  Vec3 hi = -lo;
  for (const Vec3& v : identity.vertices()) {
    lo = lo.cwiseMin(v);
    hi = hi.cwiseMax(v);
  }
  const auto match = row_argmax(plan);
  std::vector<ColoredPoint> points;
  points.reserve(identity.vertices().size() + pose.vertices().size());
  std::vector<std::array<std::uint8_t, 3>> pose_colors(pose.vertices().size(), {128, 128, 128});
  for (std::size_t i = 0; i < identity.vertices().size(); ++i) {
    const auto c = position_color(identity.vertices()[i], lo, hi);
    points.push_back({identity.vertices()[i], c});
    pose_colors[match[i]] = c;
  }
  const Vec3 shift(offset, 0.0, 0.0);
  for (std::size_t j = 0; j < pose.vertices().size(); ++j) points.push_back({pose.vertices()[j] + shift, pose_colors[j]});
  std::vector<std::pair<int, int>> lines;
  lines.reserve(match.size());
  for (std::size_t i = 0; i < match.size(); ++i) {
    lines.emplace_back(static_cast<int>(i), identity.vertex_count() + match[i]);
  }
  save_ply_lines(points, lines, path);
}

}  // namespace dualpose
