#include "dualpose/pose_transfer.hpp"

#include <algorithm>

namespace dualpose {

using ad::Tensor;

InstanceStats instance_stats(const Tensor& h, double eps) {
  if (h.rank() != 3) throw ad::TensorError("instance_stats: expected [S, D, N], got " + ad::to_string(h.shape()));
  return {ad::mean(h, 2), ad::std(h, 2, eps)};
}

ElainParams ElainParams::init(int width, int identity_width, std::mt19937_64& rng) {
  return {Affine::init(width, identity_width, rng), Affine::init(width, width, rng), Affine::init(width, width, rng),
          Affine::init(width, 2 * width, rng)};
}

Tensor elain_forward(const Tensor& h_warp, const Tensor& identity_features, const ElainParams& params, double eps,
                     std::optional<double> forced_weight) {
  const InstanceStats stats = instance_stats(h_warp, eps);
  // gamma, beta and w are per channel. The maps are affine, so applying them
  // to the vertex mean of h_id equals averaging their per-vertex outputs.
  const Tensor id_mean = apply(params.identity_projection, ad::mean(identity_features, 2));
  if (id_mean.dim(0) != h_warp.dim(0) || id_mean.dim(1) != h_warp.dim(1)) {
    throw ad::TensorError("elain: projected identity features " + ad::to_string(id_mean.shape()) +
                          " do not match h_warp " + ad::to_string(h_warp.shape()));
  }
  Tensor w;
  if (forced_weight) {
    w = Tensor::full({h_warp.dim(0), h_warp.dim(1), 1}, *forced_weight);
  } else {
    w = ad::sigmoid(apply(params.blend, ad::concat({stats.mean, id_mean}, 1)));
  }
  const Tensor one_minus_w = ad::add_scalar(ad::neg(w), 1.0);
  const Tensor gamma = ad::add(ad::mul(w, apply(params.gamma, id_mean)), ad::mul(one_minus_w, stats.sigma));
  const Tensor beta = ad::add(ad::mul(w, apply(params.beta, id_mean)), ad::mul(one_minus_w, stats.mean));
  const Tensor normalized = ad::div(ad::sub(h_warp, stats.mean), stats.sigma);
  return ad::add(ad::mul(gamma, normalized), beta);
}

ResBlockParams ResBlockParams::init(int width, int out_width, int identity_width, std::mt19937_64& rng) {
  ResBlockParams p{ElainParams::init(width, identity_width, rng), Affine::init(out_width, width, rng), std::nullopt};
  if (out_width != width) p.skip = Affine::init(out_width, width, rng);
  return p;
}

Tensor elain_resblock(const Tensor& h, const Tensor& identity_features, const ResBlockParams& params, double eps) {
  const Tensor branch = apply(params.conv, ad::leaky_relu(elain_forward(h, identity_features, params.elain, eps), kLeakySlope));
  const Tensor skip = params.skip ? apply(*params.skip, h) : h;
  return ad::add(skip, branch);
}

TrunkParams TrunkParams::init(int width, int identity_width, std::mt19937_64& rng) {
  if (width < 4 || width % 4 != 0) throw std::invalid_argument("trunk width must be a positive multiple of 4");
  TrunkParams p;
  p.input = Affine::init(width, 3, rng);
  p.lift = Affine::init(width, width, rng);
  p.blocks[0] = ResBlockParams::init(width, width, identity_width, rng);
  p.down0 = Affine::init(width / 2, width, rng);
  p.blocks[1] = ResBlockParams::init(width / 2, width / 2, identity_width, rng);
  p.down1 = Affine::init(width / 4, width / 2, rng);
  p.blocks[2] = ResBlockParams::init(width / 4, width / 4, identity_width, rng);
  p.output = Affine::init(3, width / 4, rng, 0.1);
  return p;
}

GeneratorParams GeneratorParams::init(const GeneratorConfig& cfg, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  GeneratorParams p;
  p.extractor = FeatureExtractorParams::init(rng);
  p.trunk = TrunkParams::init(cfg.trunk_width, p.extractor.out_dim(), rng);
  return p;
}

std::vector<ad::NamedTensor> GeneratorParams::named_parameters() {
  std::vector<ad::NamedTensor> out;
  for_each_param([&](const std::string& name, Tensor& t) { out.emplace_back(name, t); });
  return out;
}

std::vector<Tensor> GeneratorParams::parameters() {
  std::vector<Tensor> out;
  for_each_param([&](const std::string&, Tensor& t) { out.push_back(t); });
  return out;
}

GeneratorParams GeneratorParams::clone() const {
  GeneratorParams copy = *this;
  copy.for_each_param([](const std::string&, Tensor& t) { t = t.clone_leaf(); });
  return copy;
}

std::size_t GeneratorParams::parameter_count() {
  std::size_t n = 0;
  for_each_param([&](const std::string&, Tensor& t) { n += t.numel(); });
  return n;
}

GeneratorInput make_input(const Tensor& coords, int k) {
  const int n = coords.dim(2);
  return {coords, knn_index(coords.data(), std::min(k, n - 1))};
}

GeneratorInput make_input(const Mesh& mesh, int k) { return make_input(coords_tensor(mesh.vertices()), k); }

GeneratorOutput generate(const GeneratorInput& identity, const GeneratorInput& pose, const GeneratorParams& params,
                         const GeneratorConfig& cfg) {
  const FeatureMap f_id = extract(identity.coords, identity.knn, params.extractor);
  const FeatureMap f_pose = extract(pose.coords, pose.knn, params.extractor);
  const Tensor corr = correlation_matrix(f_id.features, f_pose.features);
  GeneratorOutput out;
  out.plan = solve_ot(corr, cfg.sinkhorn_epsilon, cfg.sinkhorn_iterations);
  out.warped = warp_coordinates(row_normalize(out.plan), pose.coords);
  out.identity_features = f_id.features;

  const TrunkParams& t = params.trunk;
  Tensor h = ad::leaky_relu(apply(t.input, out.warped), kLeakySlope);
  h = ad::leaky_relu(apply(t.lift, h), kLeakySlope);
  h = elain_resblock(h, f_id.features, t.blocks[0], cfg.norm_epsilon);
  h = apply(t.down0, h);
  h = elain_resblock(h, f_id.features, t.blocks[1], cfg.norm_epsilon);
  h = apply(t.down1, h);
  h = elain_resblock(h, f_id.features, t.blocks[2], cfg.norm_epsilon);
  out.output = ad::add(out.warped, apply(t.output, h));
  return out;
}

TransferResult transfer(const Mesh& identity, const Mesh& pose, const GeneratorParams& params,
                        const GeneratorConfig& cfg) {
  const GeneratorOutput g = generate(make_input(identity, cfg.knn), make_input(pose, cfg.knn), params, cfg);
  return {Mesh(coords_to_vertices(g.output), identity.faces(), identity.name()),
          Mesh(coords_to_vertices(g.warped), identity.faces(), identity.name()), g.plan};
}

}  // namespace dualpose
