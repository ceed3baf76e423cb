#include "dualpose/trainer.hpp"

#include "dualpose/arap.hpp"
#include "dualpose/metrics.hpp"
#include "dualpose/optim.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <mutex>
#include <numeric>
#include <random>
#include <sstream>
#include <thread>

namespace dualpose {

using ad::Tensor;

namespace {

// splitmix64 finalizer, used to derive independent per-item seeds.
std::uint64_t mix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0, std::uint64_t c = 0) {
  return mix(mix(mix(mix(seed) ^ a) ^ b) ^ c);
}

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

template <class T>
T parse_number(const std::string& key, const std::string& value) {
  T out{};
  const auto* end = value.data() + value.size();
  const auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || ptr != end) throw std::invalid_argument("config: bad value for " + key + ": '" + value + "'");
  return out;
}

bool finite(const LossBreakdown& l) {
  return std::isfinite(l.rec_a) && std::isfinite(l.rec_b) && std::isfinite(l.corr) && std::isfinite(l.edge) &&
         std::isfinite(l.total);
}

}  // namespace

void TrainConfig::validate() const {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw std::invalid_argument("config: " + what);
  };
  require(lambda_rec > 0.0, "lambda_rec must be > 0");
  require(lambda_corr >= 0.0, "lambda_corr must be >= 0");
  require(epochs >= 0, "epochs must be >= 0");
  require(arap_start_epoch >= 0 && arap_start_epoch <= epochs, "arap_start_epoch must be in [0, epochs]");
  require(learning_rate > 0.0, "learning_rate must be > 0");
  require(final_lr_fraction > 0.0 && final_lr_fraction <= 1.0, "final_lr_fraction must be in (0, 1]");
  require(batch_size >= 1, "batch_size must be >= 1");
  require(pairs_per_epoch >= 1, "pairs_per_epoch must be >= 1");
  require(sinkhorn_epsilon > 0.0, "sinkhorn_epsilon must be > 0");
  require(sinkhorn_iterations >= 1, "sinkhorn_iterations must be >= 1");
  require(anchor_fraction > 0.0 && anchor_fraction <= 1.0, "anchor_fraction must be in (0, 1]");
  require(arap_iterations >= 1, "arap_iterations must be >= 1");
  require(trunk_width >= 4 && trunk_width % 4 == 0, "trunk_width must be a positive multiple of 4");
  require(knn >= 1, "knn must be >= 1");
  require(workers >= 1, "workers must be >= 1");
  require(checkpoint_every >= 0, "checkpoint_every must be >= 0");
  require(n_identities >= 1 && n_poses >= 1, "dataset must be nonempty");
  require(vertices_per_mesh >= 100, "vertices_per_mesh must be >= 100");
  require(holdout_poses >= 0 && holdout_poses < n_poses, "holdout_poses must leave at least one training pose");
}

GeneratorConfig TrainConfig::generator() const {
  GeneratorConfig g;
  g.trunk_width = trunk_width;
  g.knn = knn;
  g.sinkhorn_epsilon = sinkhorn_epsilon;
  g.sinkhorn_iterations = sinkhorn_iterations;
  return g;
}

double TrainConfig::learning_rate_at(int epoch) const {
  const int half = epochs / 2;
  if (epoch < half || epochs - half <= 0) return learning_rate;
  const double t = static_cast<double>(epoch - half + 1) / (epochs - half);
  return learning_rate * (1.0 - (1.0 - final_lr_fraction) * std::min(t, 1.0));
}

void set_config_value(TrainConfig& cfg, const std::string& key, const std::string& value) {
  using Setter = std::function<void(TrainConfig&, const std::string&)>;
  auto real = [](double TrainConfig::*field) {
    return Setter([field](TrainConfig& c, const std::string& v) { c.*field = std::stod(v); });
  };
  auto integer = [](int TrainConfig::*field, std::string name) {
    return Setter([field, name](TrainConfig& c, const std::string& v) { c.*field = parse_number<int>(name, v); });
  };
  auto seed = [](std::uint64_t TrainConfig::*field, std::string name) {
    return Setter(
        [field, name](TrainConfig& c, const std::string& v) { c.*field = parse_number<std::uint64_t>(name, v); });
  };
  static const std::map<std::string, Setter> setters = {
      {"lambda_rec", real(&TrainConfig::lambda_rec)},
      {"lambda_corr", real(&TrainConfig::lambda_corr)},
      {"epochs", integer(&TrainConfig::epochs, "epochs")},
      {"arap_start_epoch", integer(&TrainConfig::arap_start_epoch, "arap_start_epoch")},
      {"learning_rate", real(&TrainConfig::learning_rate)},
      {"final_lr_fraction", real(&TrainConfig::final_lr_fraction)},
      {"batch_size", integer(&TrainConfig::batch_size, "batch_size")},
      {"pairs_per_epoch", integer(&TrainConfig::pairs_per_epoch, "pairs_per_epoch")},
      {"sinkhorn_epsilon", real(&TrainConfig::sinkhorn_epsilon)},
      {"sinkhorn_iterations", integer(&TrainConfig::sinkhorn_iterations, "sinkhorn_iterations")},
      {"anchor_fraction", real(&TrainConfig::anchor_fraction)},
      {"arap_iterations", integer(&TrainConfig::arap_iterations, "arap_iterations")},
      {"arap_clamp_negative_weights",
       [](TrainConfig& c, const std::string& v) {
         if (v == "true" || v == "1") c.arap_clamp_negative_weights = true;
         else if (v == "false" || v == "0") c.arap_clamp_negative_weights = false;
         else throw std::invalid_argument("config: arap_clamp_negative_weights must be true or false, got '" + v +
                                          "'");
       }},
      {"seed", seed(&TrainConfig::seed, "seed")},
      {"mode",
       [](TrainConfig& c, const std::string& v) {
         if (v == "unsupervised") c.mode = TrainMode::kUnsupervised;
         else if (v == "supervised") c.mode = TrainMode::kSupervised;
         else throw std::invalid_argument("config: mode must be unsupervised or supervised, got '" + v + "'");
       }},
      {"trunk_width", integer(&TrainConfig::trunk_width, "trunk_width")},
      {"knn", integer(&TrainConfig::knn, "knn")},
      {"workers", integer(&TrainConfig::workers, "workers")},
      {"checkpoint_every", integer(&TrainConfig::checkpoint_every, "checkpoint_every")},
      {"output_dir", [](TrainConfig& c, const std::string& v) { c.output_dir = v; }},
      {"n_identities", integer(&TrainConfig::n_identities, "n_identities")},
      {"n_poses", integer(&TrainConfig::n_poses, "n_poses")},
      {"vertices_per_mesh", integer(&TrainConfig::vertices_per_mesh, "vertices_per_mesh")},
      {"holdout_poses", integer(&TrainConfig::holdout_poses, "holdout_poses")},
      {"data_seed", seed(&TrainConfig::data_seed, "data_seed")},
  };
  const auto it = setters.find(key);
  if (it == setters.end()) throw std::invalid_argument("config: unknown key '" + key + "'");
  try {
    it->second(cfg, value);
  } catch (const std::invalid_argument&) {
    throw std::invalid_argument("config: bad value for " + key + ": '" + value + "'");
  } catch (const std::out_of_range&) {
    throw std::invalid_argument("config: value out of range for " + key + ": '" + value + "'");
  }
}

TrainConfig load_train_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path);
  TrainConfig cfg;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    line = trim(line.substr(0, line.find('#')));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument(path + ":" + std::to_string(line_no) + ": expected key = value");
    }
    try {
      set_config_value(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return cfg;
}

std::string to_config_text(const TrainConfig& c) {
  std::ostringstream s;
  s << std::setprecision(17);
  s << "lambda_rec = " << c.lambda_rec << "\nlambda_corr = " << c.lambda_corr << "\nepochs = " << c.epochs
    << "\narap_start_epoch = " << c.arap_start_epoch << "\nlearning_rate = " << c.learning_rate
    << "\nfinal_lr_fraction = " << c.final_lr_fraction << "\nbatch_size = " << c.batch_size
    << "\npairs_per_epoch = " << c.pairs_per_epoch << "\nsinkhorn_epsilon = " << c.sinkhorn_epsilon
    << "\nsinkhorn_iterations = " << c.sinkhorn_iterations << "\nanchor_fraction = " << c.anchor_fraction
    << "\narap_iterations = " << c.arap_iterations
    << "\narap_clamp_negative_weights = " << (c.arap_clamp_negative_weights ? "true" : "false") << "\nseed = " << c.seed
    << "\nmode = " << (c.mode == TrainMode::kSupervised ? "supervised" : "unsupervised")
    << "\ntrunk_width = " << c.trunk_width << "\nknn = " << c.knn << "\nworkers = " << c.workers
    << "\ncheckpoint_every = " << c.checkpoint_every << "\noutput_dir = " << c.output_dir
    << "\nn_identities = " << c.n_identities << "\nn_poses = " << c.n_poses
    << "\nvertices_per_mesh = " << c.vertices_per_mesh << "\nholdout_poses = " << c.holdout_poses
    << "\ndata_seed = " << c.data_seed << "\n";
  return s.str();
}

PreparedMesh prepare_mesh(const Mesh& raw, std::uint64_t shuffle_seed, int knn) {
  auto [mesh, perm] = shuffle_vertices(center_by_bbox(raw), shuffle_seed);
  GeneratorInput input = make_input(mesh, knn);
  return {std::move(mesh), std::move(perm), std::move(input)};
}

Tensor reconstruction_loss(const Tensor& recon, const Tensor& original) {
  if (recon.shape() != original.shape()) {
    throw std::invalid_argument("reconstruction_loss: shape mismatch " + ad::to_string(recon.shape()) + " vs " +
                                ad::to_string(original.shape()));
  }
  return ad::sum_all(ad::square(ad::sub(recon, original)));
}

Tensor reconstruction_loss(const Mesh& recon, const Mesh& original) {
  if (recon.vertex_count() != original.vertex_count()) {
    throw std::invalid_argument("reconstruction_loss: vertex count mismatch");
  }
  return reconstruction_loss(coords_tensor(recon.vertices()), coords_tensor(original.vertices()));
}

Tensor edge_loss(const Tensor& coords, const std::vector<std::pair<int, int>>& edges) {
  if (coords.rank() != 3 || coords.dim(0) != 1 || coords.dim(1) != 3) {
    throw std::invalid_argument("edge_loss: expected coordinates [1, 3, N]");
  }
  const std::size_t n = static_cast<std::size_t>(coords.dim(2));
  const auto x = coords.data();
  double value = 0.0;
  for (const auto& [a, b] : edges) {
    for (std::size_t c = 0; c < 3; ++c) {
      const double d = x[c * n + a] - x[c * n + b];
      value += 2.0 * d * d;
    }
  }
  return ad::custom_op({1}, {value}, {coords},
                       [coords, edges, n](std::span<const double> g, std::vector<std::span<double>>& grads) {
                         const auto xv = coords.data();
                         for (const auto& [a, b] : edges) {
                           for (std::size_t c = 0; c < 3; ++c) {
                             const double d = 4.0 * g[0] * (xv[c * n + a] - xv[c * n + b]);
                             grads[0][c * n + a] += d;
                             grads[0][c * n + b] -= d;
                           }
                         }
                       });
}

Tensor edge_loss(const Mesh& mesh) { return edge_loss(coords_tensor(mesh.vertices()), unique_edges(mesh)); }

namespace {

Tensor assemble_total(const Tensor& rec, const Tensor& corr, const Tensor& edge, const TrainConfig& cfg,
                      LossBreakdown& losses) {
  Tensor total = ad::add(ad::scale(rec, cfg.lambda_rec), edge);
  if (corr.defined()) total = ad::add(total, ad::scale(corr, cfg.lambda_corr));
  losses.edge = edge.item();
  losses.corr = corr.defined() ? corr.item() : 0.0;
  losses.total = total.item();
  return total;
}

}  // namespace

StepResult dual_step(const MeshPair& pair, const GeneratorParams& params, const TrainConfig& cfg,
                     const StepOptions& options) {
  const GeneratorConfig gcfg = cfg.generator();
  const GeneratorOutput main = generate(pair.a.input, pair.b.input, params, gcfg);

  StepResult r;
  r.output = main.output;
  r.refined = main.output;
  if (options.arap) {
    const Mesh out_mesh = pair.a.mesh.with_vertices(coords_to_vertices(main.output));
    ArapOptions arap_options;
    arap_options.clamp_negative_weights = cfg.arap_clamp_negative_weights;
    const ArapDeformResult refined = arap_deform(pair.a.mesh, out_mesh, cfg.anchor_fraction, cfg.arap_iterations,
                                                 options.arap_seed, arap_options);
    const Tensor values = coords_tensor(refined.mesh.vertices());
    r.refined = ad::straight_through(main.output, {values.data().begin(), values.data().end()});
  }

  const GeneratorInput refined_input = make_input(r.refined, gcfg.knn);
  const GeneratorOutput recon_a = generate(refined_input, pair.a.input, params, gcfg);
  const GeneratorOutput recon_b = generate(pair.b.input, refined_input, params, gcfg);

  const Tensor rec_a = reconstruction_loss(recon_a.output, pair.a.input.coords);
  const Tensor rec_b = reconstruction_loss(recon_b.output, pair.b.input.coords);
  const Tensor edge = edge_loss(main.output, unique_edges(pair.a.mesh));
  Tensor corr;
  if (cfg.lambda_corr > 0.0) corr = backward_correspondence_loss(main.plan, pair.b.input.coords);

  r.losses.rec_a = rec_a.item();
  r.losses.rec_b = rec_b.item();
  r.total = assemble_total(ad::add(rec_a, rec_b), corr, edge, cfg, r.losses);
  return r;
}

StepResult supervised_step(const SupervisedTriplet& item, const GeneratorParams& params, const TrainConfig& cfg) {
  if (static_cast<int>(item.ground_truth.size()) != item.identity.mesh.vertex_count()) {
    throw std::invalid_argument("supervised_step: ground truth is not in the identity's vertex order");
  }
  const GeneratorOutput g = generate(item.identity.input, item.pose.input, params, cfg.generator());
  StepResult r;
  r.output = g.output;
  r.refined = g.output;
  const Tensor rec = reconstruction_loss(g.output, coords_tensor(item.ground_truth));
  const Tensor edge = edge_loss(g.output, unique_edges(item.identity.mesh));
  Tensor corr;
  if (cfg.lambda_corr > 0.0) corr = backward_correspondence_loss(g.plan, item.pose.input.coords);
  r.losses.rec_a = rec.item();
  r.total = assemble_total(rec, corr, edge, cfg, r.losses);
  return r;
}

void write_loss_log(const std::vector<LossRow>& rows, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "epoch,step,L_A_rec,L_B_rec,L_corr,L_edge,total,lr\n" << std::setprecision(17);
  for (const auto& r : rows) {
    out << r.epoch << ',' << r.step << ',' << r.losses.rec_a << ',' << r.losses.rec_b << ',' << r.losses.corr << ','
        << r.losses.edge << ',' << r.losses.total << ',' << r.lr << '\n';
  }
}

std::vector<double> epoch_means(const std::vector<LossRow>& rows) {
  std::vector<double> sum;
  std::vector<int> count;
  for (const auto& r : rows) {
    if (r.epoch >= static_cast<int>(sum.size())) {
      sum.resize(r.epoch + 1, 0.0);
      count.resize(r.epoch + 1, 0);
    }
    sum[r.epoch] += r.losses.total;
    ++count[r.epoch];
  }
  for (std::size_t e = 0; e < sum.size(); ++e) sum[e] = count[e] ? sum[e] / count[e] : 0.0;
  return sum;
}

namespace {

// (identity, identity pose, pose-mesh identity, pose) index tuple.
struct PairSpec {
  int id_a;
  int pose_a;
  int id_b;
  int pose_b;
};

std::vector<PairSpec> draw_pairs(const TrainConfig& cfg, int n_id, int n_train_poses) {
  std::mt19937_64 rng(derive_seed(cfg.seed, 0x7061697273ULL));
  std::uniform_int_distribution<int> id(0, n_id - 1);
  std::uniform_int_distribution<int> pose(0, n_train_poses - 1);
  std::vector<PairSpec> pairs(static_cast<std::size_t>(cfg.pairs_per_epoch));
  for (auto& p : pairs) p = {id(rng), pose(rng), id(rng), pose(rng)};
  return pairs;
}

struct ItemResult {
  LossBreakdown losses;
  std::vector<std::vector<double>> grads;  // only when run on a worker copy
};

// Forward + backward of one batch item. The loss is divided by the batch
// size so the accumulated gradient is the batch mean.
LossBreakdown run_item(const SyntheticDataset& data, const PairSpec& spec, const TrainConfig& cfg,
                       const GeneratorParams& params, int epoch, std::uint64_t item_key, int batch_size) {
  const std::uint64_t sa = derive_seed(cfg.seed, epoch, item_key, 1);
  const std::uint64_t sb = derive_seed(cfg.seed, epoch, item_key, 2);
  StepResult r;
  if (cfg.mode == TrainMode::kSupervised) {
    SupervisedTriplet t{prepare_mesh(data.mesh(spec.id_a, spec.pose_a), sa, cfg.knn),
                        prepare_mesh(data.mesh(spec.id_b, spec.pose_b), sb, cfg.knn), {}};
    t.ground_truth =
        apply_permutation(center_by_bbox(data.mesh(spec.id_a, spec.pose_b)), t.identity.permutation).vertices();
    r = supervised_step(t, params, cfg);
  } else {
    MeshPair pair{prepare_mesh(data.mesh(spec.id_a, spec.pose_a), sa, cfg.knn),
                  prepare_mesh(data.mesh(spec.id_b, spec.pose_b), sb, cfg.knn)};
    r = dual_step(pair, params, cfg, {cfg.arap_active(epoch), derive_seed(cfg.seed, epoch, item_key, 3)});
  }
  if (finite(r.losses)) ad::backward(ad::scale(r.total, 1.0 / batch_size));
  return r.losses;
}

}  // namespace

TrainResult train(const SyntheticDataset& data, const TrainConfig& cfg, const StepCallback& on_step) {
  cfg.validate();
  if (data.identity_count() < 1 || data.pose_count() < 1) throw std::invalid_argument("train: empty dataset");
  const int n_train_poses = std::max(1, data.pose_count() - cfg.holdout_poses);

  TrainResult result{GeneratorParams::init(cfg.generator(), cfg.seed), {}, {}};
  GeneratorParams& params = result.params;
  std::vector<Tensor> tensors = params.parameters();
  ad::AdamState adam;

  namespace fs = std::filesystem;
  const bool write = !cfg.output_dir.empty();
  if (write) {
    fs::create_directories(cfg.output_dir);
    std::ofstream(fs::path(cfg.output_dir) / "config.txt") << to_config_text(cfg);
  }
  auto checkpoint = [&](const std::string& name) {
    const std::string prefix = (fs::path(cfg.output_dir) / name).string();
    ad::save_checkpoint(prefix, params.named_parameters(), adam.step);
    return prefix;
  };

  const std::vector<PairSpec> pairs = draw_pairs(cfg, data.identity_count(), n_train_poses);
  int step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    adam.learning_rate = cfg.learning_rate_at(epoch);
    std::vector<int> order(pairs.size());
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 shuffle_rng(derive_seed(cfg.seed, 0x6f72646572ULL, epoch));
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    const int n_batches = static_cast<int>((order.size() + cfg.batch_size - 1) / cfg.batch_size);
    for (int b = 0; b < n_batches; ++b) {
      const int begin = b * cfg.batch_size;
      const int end = std::min<int>(begin + cfg.batch_size, static_cast<int>(order.size()));
      const int count = end - begin;
      std::vector<LossBreakdown> item_losses(count);

      if (cfg.workers <= 1 || count == 1) {
        for (int k = 0; k < count; ++k) {
          item_losses[k] = run_item(data, pairs[order[begin + k]], cfg, params, epoch, begin + k, count);
        }
      } else {
        // Each item runs on a private copy of the weights; gradients are
        // summed into the shared parameters in item order at the barrier.
        std::vector<GeneratorParams> copies;
        for (int k = 0; k < count; ++k) copies.push_back(params.clone());
        std::vector<std::exception_ptr> errors(count);
        int next = 0;
        std::mutex next_mutex;
        auto worker = [&]() {
          for (;;) {
            int k;
            {
              std::lock_guard<std::mutex> lock(next_mutex);
              if (next >= count) return;
              k = next++;
            }
            try {
              item_losses[k] = run_item(data, pairs[order[begin + k]], cfg, copies[k], epoch, begin + k, count);
            } catch (...) {
              errors[k] = std::current_exception();
            }
          }
        };
        std::vector<std::thread> threads;
        for (int w = 0; w < std::min(cfg.workers, count); ++w) threads.emplace_back(worker);
        for (auto& t : threads) t.join();
        for (const auto& e : errors)
          if (e) std::rethrow_exception(e);
        for (int k = 0; k < count; ++k) {
          std::vector<Tensor> local = copies[k].parameters();
          for (std::size_t p = 0; p < tensors.size(); ++p) {
            const auto g = local[p].grad();
            if (g.empty()) continue;
            auto dst = tensors[p].mutable_grad();
            for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
          }
        }
      }

      LossRow row{epoch, step, {}, adam.learning_rate};
      for (int k = 0; k < count; ++k) {
        if (!finite(item_losses[k])) {
          throw TrainError("non-finite loss in epoch " + std::to_string(epoch) + ", batch " + std::to_string(b) +
                           " (step " + std::to_string(step) + ", item " + std::to_string(k) + ")");
        }
        row.losses.rec_a += item_losses[k].rec_a / count;
        row.losses.rec_b += item_losses[k].rec_b / count;
        row.losses.corr += item_losses[k].corr / count;
        row.losses.edge += item_losses[k].edge / count;
        row.losses.total += item_losses[k].total / count;
      }
      ad::adam_step(tensors, adam);
      for (auto& t : tensors) t.zero_grad();
      result.log.push_back(row);
      if (on_step) on_step(row);
      ++step;
    }
    if (write && cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0) {
      checkpoint("checkpoint_epoch" + std::to_string(epoch + 1));
    }
  }
  if (write) {
    result.checkpoint = checkpoint("final");
    write_loss_log(result.log, (fs::path(cfg.output_dir) / "loss_log.csv").string());
  }
  return result;
}

GeneratorParams load_generator(const std::string& prefix, GeneratorConfig& cfg) {
  const ad::Checkpoint ckpt = ad::load_checkpoint(prefix);
  const auto input = std::find_if(ckpt.tensors.begin(), ckpt.tensors.end(),
                                  [](const ad::NamedTensor& t) { return t.first == "trunk.input.weight"; });
  if (input == ckpt.tensors.end()) throw std::runtime_error(prefix + ": not a generator checkpoint");
  cfg.trunk_width = input->second.shape().at(0);
  GeneratorParams params = GeneratorParams::init(cfg, 0);
  std::vector<ad::NamedTensor> named = params.named_parameters();
  ad::restore_parameters(ckpt, named);
  return params;
}

std::vector<EvalTriplet> heldout_triplets(const SyntheticDataset& data, const TrainConfig& cfg, int count,
                                          std::uint64_t seed) {
  const int n_id = data.identity_count();
  const int n_train = std::max(1, data.pose_count() - cfg.holdout_poses);
  const int first_holdout = cfg.holdout_poses > 0 ? n_train : 0;
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> id(0, n_id - 1);
  std::uniform_int_distribution<int> train_pose(0, n_train - 1);
  std::uniform_int_distribution<int> test_pose(first_holdout, data.pose_count() - 1);
  std::vector<EvalTriplet> out;
  for (int k = 0; k < count; ++k) {
    const int i = id(rng);
    int other = id(rng);
    if (n_id > 1)
      while (other == i) other = id(rng);
    const int p_id = train_pose(rng);
    const int p = test_pose(rng);
    out.push_back({"id" + std::to_string(i) + "_pose" + std::to_string(p) + "_from" + std::to_string(other),
                   data.mesh(i, p_id), data.mesh(other, p), data.mesh(i, p)});
  }
  return out;
}

HeldoutScores evaluate_heldout(const std::vector<EvalTriplet>& triplets, const GeneratorParams& params,
                               const TrainConfig& cfg, std::uint64_t seed) {
  HeldoutScores s;
  if (triplets.empty()) return s;
  const GeneratorConfig gcfg = cfg.generator();
  for (std::size_t k = 0; k < triplets.size(); ++k) {
    const auto& t = triplets[k];
    const PreparedMesh identity = prepare_mesh(t.identity, derive_seed(seed, k, 1), cfg.knn);
    const PreparedMesh pose = prepare_mesh(t.pose, derive_seed(seed, k, 2), cfg.knn);
    const Mesh gt = apply_permutation(center_by_bbox(t.ground_truth), identity.permutation);
    const GeneratorOutput g = generate(identity.input, pose.input, params, gcfg);
    s.model_pmd += pmd(coords_to_vertices(g.output), gt.vertices());
    s.identity_copy_pmd += pmd(identity.mesh, gt);
  }
  s.model_pmd /= static_cast<double>(triplets.size());
  s.identity_copy_pmd /= static_cast<double>(triplets.size());
  return s;
}

}  // namespace dualpose
