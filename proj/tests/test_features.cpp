#include "doctest.h"
#include "support.hpp"

#include "dualpose/correspondence.hpp"
#include "dualpose/features.hpp"

using namespace dualpose;
using namespace test_support;
using ad::Tensor;

namespace {

// Direct evaluation of max_j leaky(W_f f_j + W_r (p_j - p_i) + b) with Eigen.
Eigen::MatrixXd point_conv_oracle(const Tensor& features, const Tensor& coords, const NeighborIndex& idx,
                                  const PointConvParams& p, double slope) {
  const int d_in = features.dim(1), n = features.dim(2), d_out = p.out_dim();
  const Eigen::Map<const Eigen::MatrixXd> f(features.data().data(), n, d_in);  // column c is channel c
  const Eigen::Map<const Eigen::MatrixXd> x(coords.data().data(), n, 3);
  const Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> wf(
      p.feature_weight.data().data(), d_out, d_in);
  const Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> wr(
      p.relative_weight.data().data(), d_out, 3);
  const Eigen::Map<const Eigen::VectorXd> b(p.bias.data().data(), d_out);
  Eigen::MatrixXd out = Eigen::MatrixXd::Constant(d_out, n, -std::numeric_limits<double>::infinity());
  for (int i = 0; i < n; ++i) {
    for (int j : idx.of(i)) {
      Eigen::VectorXd y = wf * f.row(j).transpose() + wr * (x.row(j) - x.row(i)).transpose() + b;
      for (int o = 0; o < d_out; ++o) out(o, i) = std::max(out(o, i), y(o) >= 0 ? y(o) : slope * y(o));
    }
  }
  return out;
}

// Columns of a [1, D, N] tensor relabeled so new column i is old column forward[i].
Tensor permute_columns(const Tensor& t, const std::vector<int>& forward) {
  const int d = t.dim(1), n = t.dim(2);
  std::vector<double> out(t.numel());
  for (int c = 0; c < d; ++c)
    for (int i = 0; i < n; ++i) out[c * n + i] = t.data()[c * n + forward[i]];
  return Tensor::from_data(t.shape(), std::move(out));
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  double e = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) e = std::max(e, std::abs(a.data()[i] - b.data()[i]));
  return e;
}

}  // namespace

TEST_CASE("knn_index") {
  SUBCASE("tie goes to the lower index") {
    const NeighborIndex idx = knn_index(std::vector<Vec3>{{0, 0, 0}, {1, 0, 0}, {2, 0, 0}}, 1);
    CHECK(idx.of(1)[0] == 0);
    CHECK(idx.of(0)[0] == 1);
    CHECK(idx.of(2)[0] == 1);
  }
  SUBCASE("brute-force oracle") {
    std::mt19937_64 rng(3);
    std::vector<std::vector<Vec3>> clouds = {{{0, 0, 0}, {1, 0, 0}, {0, 1, 0}, {1, 1, 1}}, random_points(40, rng)};
    for (const auto& pts : clouds) {
      const int n = static_cast<int>(pts.size());
      for (int k : {1, 2, 3}) {
        const NeighborIndex idx = knn_index(pts, k);
        CHECK(idx.vertex_count() == n);
        for (int i = 0; i < n; ++i) {
          std::vector<std::pair<double, int>> all;
          for (int j = 0; j < n; ++j)
            if (j != i) all.emplace_back((pts[i] - pts[j]).squaredNorm(), j);
          std::sort(all.begin(), all.end());
          for (int r = 0; r < k; ++r) CHECK(idx.of(i)[r] == all[r].second);
        }
      }
    }
  }
  SUBCASE("duplicates are neighbors, never self") {
    std::mt19937_64 rng(5);
    std::vector<Vec3> pts = random_points(10, rng);
    const std::vector<Vec3> copy = pts;
    pts.insert(pts.end(), copy.begin(), copy.end());
    const NeighborIndex idx = knn_index(pts, 3);
    for (int i = 0; i < 20; ++i) {
      CHECK(idx.of(i)[0] == (i + 10) % 20);
      for (int j : idx.of(i)) CHECK(j != i);
    }
  }
  SUBCASE("coordinate-array overload agrees") {
    std::mt19937_64 rng(8);
    const std::vector<Vec3> pts = random_points(25, rng);
    CHECK(knn_index(coords_tensor(pts).data(), 4).indices == knn_index(pts, 4).indices);
  }
  CHECK_THROWS_AS(knn_index(std::vector<Vec3>{{0, 0, 0}, {1, 0, 0}}, 2), std::invalid_argument);
}

TEST_CASE("point_conv") {
  std::mt19937_64 rng(11);
  const std::vector<Vec3> pts = random_points(30, rng);
  const Tensor coords = coords_tensor(pts);
  const Tensor feats = random_tensor({1, 5, 30}, rng, -1, 1, false);
  const PointConvParams p = PointConvParams::init(7, 5, rng);

  for (int k : {1, 4}) {
    const NeighborIndex idx = knn_index(pts, k);
    const Tensor out = point_conv(feats, coords, idx, p, 0.2);
    REQUIRE(out.shape() == ad::Shape{1, 7, 30});
    const Eigen::MatrixXd oracle = point_conv_oracle(feats, coords, idx, p, 0.2);
    double err = 0.0;
    for (int o = 0; o < 7; ++o)
      for (int i = 0; i < 30; ++i) err = std::max(err, std::abs(out.data()[o * 30 + i] - oracle(o, i)));
    CHECK(err < 1e-12);
  }

  SUBCASE("neighbor order does not matter") {
    NeighborIndex idx = knn_index(pts, 5);
    const Tensor before = point_conv(feats, coords, idx, p);
    for (int i = 0; i < 30; ++i) std::reverse(idx.indices.begin() + i * 5, idx.indices.begin() + (i + 1) * 5);
    CHECK(max_abs_diff(before, point_conv(feats, coords, idx, p)) == 0.0);
  }

  SUBCASE("relative-offset branch is translation invariant") {
    const NeighborIndex idx = knn_index(pts, 6);
    std::vector<Vec3> moved = pts;
    for (Vec3& x : moved) x += Vec3(3.0, -1.5, 0.25);
    CHECK(max_abs_diff(point_conv(feats, coords, idx, p), point_conv(feats, coords_tensor(moved), idx, p)) < 1e-12);
  }

  SUBCASE("vertex relabeling permutes the output") {
    const auto [shuffled, perm] = shuffle_vertices(Mesh(pts, {}), 4);
    const Tensor out = point_conv(feats, coords, knn_index(pts, 6), p);
    const Tensor f2 = permute_columns(feats, perm.forward);
    const Tensor out2 = point_conv(f2, coords_tensor(shuffled.vertices()), knn_index(shuffled.vertices(), 6), p);
    CHECK(max_abs_diff(permute_columns(out, perm.forward), out2) < 1e-12);
  }

  CHECK_THROWS_AS(point_conv(random_tensor({1, 4, 30}, rng, -1, 1), coords, knn_index(pts, 3), p), ad::TensorError);
}

TEST_CASE("extract") {
  std::mt19937_64 rng(21);
  const FeatureExtractorParams params = FeatureExtractorParams::init(rng);
  CHECK(params.out_dim() == 128);
  for (std::size_t s = 0; s < params.stages.size(); ++s) {
    CHECK(params.stages[s].combine.out_dim() == FeatureExtractorParams::kWidths[s]);
  }
  CHECK(FeatureExtractorParams::kWidths == std::array<int, 3>{32, 64, 128});

  const Mesh m = center_by_bbox(icosphere(2, 2, 0.2, {1, 0.6, 0.8}));
  const Tensor coords = coords_tensor(m.vertices());
  const FeatureMap f = extract(coords, knn_index(m.vertices(), 16), params);
  CHECK(f.width == 128);
  CHECK(f.vertex_count == m.vertex_count());
  CHECK(f.features.shape() == ad::Shape{1, 128, m.vertex_count()});

  SUBCASE("permutation equivariance over 5 seeds") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      const auto [shuffled, perm] = shuffle_vertices(m, seed);
      const FeatureMap g =
          extract(coords_tensor(shuffled.vertices()), knn_index(shuffled.vertices(), 16), params);
      CHECK(max_abs_diff(permute_columns(f.features, perm.forward), g.features) < 1e-6);
    }
  }
}
