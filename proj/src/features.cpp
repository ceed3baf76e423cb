#include "dualpose/features.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <limits>
#include <stdexcept>

namespace dualpose {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

}  // namespace

NeighborIndex knn_index(std::span<const double> coords, int k) {
  if (coords.size() % 3 != 0) throw std::invalid_argument("knn_index: coordinate array is not 3 x N");
  const int n = static_cast<int>(coords.size() / 3);
  if (k < 1 || k >= n) {
    throw std::invalid_argument("knn_index: need 1 <= k < N (k=" + std::to_string(k) + ", N=" + std::to_string(n) + ")");
  }
  const double* x = coords.data();
  const double* y = x + n;
  const double* z = y + n;
  NeighborIndex idx;
  idx.k = k;
  idx.indices.resize(static_cast<std::size_t>(n) * k);
  std::vector<std::pair<double, int>> cand(static_cast<std::size_t>(n - 1));
  for (int i = 0; i < n; ++i) {
    int c = 0;
    for (int j = 0; j < n; ++j) {
      if (j == i) continue;
      const double dx = x[j] - x[i];
      const double dy = y[j] - y[i];
      const double dz = z[j] - z[i];
      cand[c++] = {dx * dx + dy * dy + dz * dz, j};
    }
    std::partial_sort(cand.begin(), cand.begin() + k, cand.end());
    for (int t = 0; t < k; ++t) idx.indices[static_cast<std::size_t>(i) * k + t] = cand[t].second;
  }
  return idx;
}

NeighborIndex knn_index(const std::vector<Eigen::Vector3d>& points, int k) {
  const std::size_t n = points.size();
  std::vector<double> coords(3 * n);
  for (std::size_t i = 0; i < n; ++i) {
    coords[i] = points[i].x();
    coords[n + i] = points[i].y();
    coords[2 * n + i] = points[i].z();
  }
  return knn_index(coords, k);
}

PointConvParams PointConvParams::init(int out, int in, std::mt19937_64& rng) {
  // One affine map over the concatenated [feature, relative offset] input.
  Affine joint = Affine::init(out, in + 3, rng);
  const auto w = joint.weight.data();
  std::vector<double> wf(static_cast<std::size_t>(out) * in);
  std::vector<double> wr(static_cast<std::size_t>(out) * 3);
  for (int o = 0; o < out; ++o) {
    for (int c = 0; c < in; ++c) wf[o * in + c] = w[o * (in + 3) + c];
    for (int c = 0; c < 3; ++c) wr[o * 3 + c] = w[o * (in + 3) + in + c];
  }
  return {ad::Tensor::from_data({out, in}, std::move(wf), true), ad::Tensor::from_data({out, 3}, std::move(wr), true),
          joint.bias};
}

ad::Tensor point_conv(const ad::Tensor& features, const ad::Tensor& coords, const NeighborIndex& idx,
                      const PointConvParams& params, double slope) {
  const auto& fs = features.shape();
  const auto& cs = coords.shape();
  if (fs.size() != 3 || cs.size() != 3 || cs[1] != 3 || cs[0] != fs[0] || cs[2] != fs[2]) {
    throw ad::TensorError("point_conv: features " + ad::to_string(fs) + " vs coords " + ad::to_string(cs));
  }
  const int s_count = fs[0];
  const int din = fs[1];
  const int n = fs[2];
  const int dout = params.out_dim();
  const int k = idx.k;
  if (params.feature_weight.dim(1) != din || idx.vertex_count() != n) {
    throw ad::TensorError("point_conv: parameter or neighbor index shape mismatch");
  }

  // W_r (p_j - p_i) = P_j - P_i with P = W_r X, so the neighbor term only
  // needs B = W_f F + P gathered at j, and leaky_relu commutes with max.
  const std::size_t plane = static_cast<std::size_t>(dout) * n;
  std::vector<double> out(static_cast<std::size_t>(s_count) * plane);
  auto argmax = std::make_shared<std::vector<int>>(out.size());
  auto pre_positive = std::make_shared<std::vector<char>>(out.size());
  ConstMap Wf(params.feature_weight.data().data(), dout, din);
  ConstMap Wr(params.relative_weight.data().data(), dout, 3);
  const double* bias = params.bias.data().data();
  RowMat B(dout, n);
  RowMat P(dout, n);
  for (int s = 0; s < s_count; ++s) {
    P.noalias() = Wr * ConstMap(coords.data().data() + static_cast<std::size_t>(s) * 3 * n, 3, n);
    B.noalias() = Wf * ConstMap(features.data().data() + static_cast<std::size_t>(s) * din * n, din, n);
    B += P;
    for (int d = 0; d < dout; ++d) {
      const double* brow = B.data() + static_cast<std::size_t>(d) * n;
      const double* prow = P.data() + static_cast<std::size_t>(d) * n;
      for (int i = 0; i < n; ++i) {
        const int* nb = idx.indices.data() + static_cast<std::size_t>(i) * k;
        int best_j = nb[0];
        double best = brow[best_j];
        for (int t = 1; t < k; ++t) {
          const double v = brow[nb[t]];
          if (v > best) {
            best = v;
            best_j = nb[t];
          }
        }
        const double pre = best - prow[i] + bias[d];
        const std::size_t o = s * plane + static_cast<std::size_t>(d) * n + i;
        out[o] = pre >= 0.0 ? pre : slope * pre;
        (*argmax)[o] = best_j;
        (*pre_positive)[o] = pre >= 0.0;
      }
    }
  }

  return ad::custom_op(
      {s_count, dout, n}, std::move(out),
      {features, coords, params.feature_weight, params.relative_weight, params.bias},
      [features, coords, params, argmax, pre_positive, s_count, din, dout, n, plane, slope](
          std::span<const double> g, std::vector<std::span<double>>& grads) {
        ConstMap Wf(params.feature_weight.data().data(), dout, din);
        ConstMap Wr(params.relative_weight.data().data(), dout, 3);
        RowMat dB(dout, n);
        RowMat dP(dout, n);
        for (int s = 0; s < s_count; ++s) {
          dB.setZero();
          dP.setZero();
          for (int d = 0; d < dout; ++d) {
            for (int i = 0; i < n; ++i) {
              const std::size_t o = s * plane + static_cast<std::size_t>(d) * n + i;
              const double gp = g[o] * ((*pre_positive)[o] ? 1.0 : slope);
              dB(d, (*argmax)[o]) += gp;
              dP(d, i) -= gp;
              if (!grads[4].empty()) grads[4][d] += gp;
            }
          }
          dP += dB;  // B = A + P
          ConstMap F(features.data().data() + static_cast<std::size_t>(s) * din * n, din, n);
          ConstMap X(coords.data().data() + static_cast<std::size_t>(s) * 3 * n, 3, n);
          if (!grads[0].empty()) {
            MutMap(grads[0].data() + static_cast<std::size_t>(s) * din * n, din, n).noalias() += Wf.transpose() * dB;
          }
          if (!grads[1].empty()) {
            MutMap(grads[1].data() + static_cast<std::size_t>(s) * 3 * n, 3, n).noalias() += Wr.transpose() * dP;
          }
          if (!grads[2].empty()) MutMap(grads[2].data(), dout, din).noalias() += dB * F.transpose();
          if (!grads[3].empty()) MutMap(grads[3].data(), dout, 3).noalias() += dP * X.transpose();
        }
      });
}

FeatureExtractorParams FeatureExtractorParams::init(std::mt19937_64& rng) {
  FeatureExtractorParams p;
  int in = 3;
  for (std::size_t s = 0; s < kWidths.size(); ++s) {
    const int out = kWidths[s];
    p.stages[s].neighbor = PointConvParams::init(out, in, rng);
    p.stages[s].combine = Affine::init(out, out + in, rng);
    in = out;
  }
  return p;
}

FeatureMap extract(const ad::Tensor& coords, const NeighborIndex& idx, const FeatureExtractorParams& params) {
  ad::Tensor h = coords;
  for (std::size_t s = 0; s < params.stages.size(); ++s) {
    const ExtractorStage& stage = params.stages[s];
    ad::Tensor pooled = point_conv(h, coords, idx, stage.neighbor);
    ad::Tensor next = apply(stage.combine, ad::concat({pooled, h}, 1));
    if (s + 1 < params.stages.size()) next = ad::leaky_relu(next, 0.2);
    h = next;
  }
  return {h, coords.dim(2), h.dim(1)};
}

}  // namespace dualpose
