// Command-line front end: dataset generation, training, inference, ARAP,
// evaluation and correspondence export.
#include "dualpose/arap.hpp"
#include "dualpose/correspondence.hpp"
#include "dualpose/dataset.hpp"
#include "dualpose/metrics.hpp"
#include "dualpose/pose_transfer.hpp"
#include "dualpose/trainer.hpp"

#include "CLI11.hpp"

#include <filesystem>
#include <iomanip>
#include <iostream>

namespace {

using namespace dualpose;

Vec3 bbox_center(const Mesh& m) {
  Vec3 lo = m.vertices().front();
  Vec3 hi = lo;
  for (const Vec3& v : m.vertices()) {
    lo = lo.cwiseMin(v);
    hi = hi.cwiseMax(v);
  }
  return 0.5 * (lo + hi);
}

Mesh translated(const Mesh& m, const Vec3& offset) {
  std::vector<Vec3> v = m.vertices();
  for (Vec3& p : v) p += offset;
  return Mesh(std::move(v), m.faces(), m.name());
}

GeneratorParams generator_from(const std::string& ckpt, GeneratorConfig& cfg, std::uint64_t seed) {
  if (!ckpt.empty()) return load_generator(ckpt, cfg);
  std::cerr << "warning: no --ckpt given, using untrained weights (seed " << seed << ")\n";
  return GeneratorParams::init(cfg, seed);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Unsupervised mesh pose transfer: correspondence, generator, ARAP, metrics"};
  app.require_subcommand(1);

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "Write a synthetic body dataset as OBJ files plus triplets.csv");
  int gen_ids = 8, gen_poses = 40, gen_vertices = 600;
  std::uint64_t gen_seed = 7;
  std::string gen_out = "data";
  gen->add_option("--identities", gen_ids, "Number of body shapes")->capture_default_str();
  gen->add_option("--poses", gen_poses, "Number of poses (pose 0 is the rest pose)")->capture_default_str();
  gen->add_option("--vertices", gen_vertices, "Requested vertices per mesh")->capture_default_str();
  gen->add_option("--seed", gen_seed, "Random seed")->capture_default_str();
  gen->add_option("-o,--output", gen_out, "Output directory")->capture_default_str();

  // train
  auto* tr = app.add_subcommand("train", "Train a generator on a synthetic dataset");
  std::string tr_config, tr_out;
  std::optional<int> tr_epochs;
  std::vector<std::string> tr_sets;
  tr->add_option("--config", tr_config, "key = value config file")->check(CLI::ExistingFile);
  tr->add_option("--epochs", tr_epochs, "Override the number of epochs");
  tr->add_option("--output-dir", tr_out, "Override output_dir (default: run)");
  tr->add_option("--set", tr_sets, "Override a config key, as key=value (repeatable)");

  // transfer
  auto* tf = app.add_subcommand("transfer", "Transfer the pose of one mesh onto another's identity");
  std::string tf_identity, tf_pose, tf_out, tf_ckpt, tf_warped;
  std::uint64_t tf_seed = 0;
  tf->add_option("identity", tf_identity, "Identity mesh (.obj)")->required()->check(CLI::ExistingFile);
  tf->add_option("pose", tf_pose, "Pose mesh (.obj)")->required()->check(CLI::ExistingFile);
  tf->add_option("-o,--output", tf_out, "Output mesh (.obj)")->required();
  tf->add_option("--ckpt", tf_ckpt, "Checkpoint prefix (without .bin/.json)");
  tf->add_option("--warped", tf_warped, "Also write the warped pose mesh (.obj)");
  tf->add_option("--seed", tf_seed, "Weight seed when no checkpoint is given")->capture_default_str();

  // arap
  auto* ar = app.add_subcommand("arap", "Deform rest toward target with as-rigid-as-possible anchors");
  std::string ar_rest, ar_target, ar_out = "arap.obj";
  double ar_fraction = kArapAnchorFraction;
  int ar_iterations = kArapIterations;
  std::uint64_t ar_seed = 0;
  bool ar_clamp = false;
  ar->add_option("rest", ar_rest, "Rest mesh (.obj)")->required()->check(CLI::ExistingFile);
  ar->add_option("target", ar_target, "Target mesh with the same topology (.obj)")->required()->check(CLI::ExistingFile);
  ar->add_option("-o,--output", ar_out, "Output mesh (.obj)")->capture_default_str();
  ar->add_option("--anchor-fraction", ar_fraction, "Fraction of vertices fixed to the target")->capture_default_str();
  ar->add_option("--iterations", ar_iterations, "Local/global iterations")->capture_default_str();
  ar->add_option("--seed", ar_seed, "Anchor sampling seed")->capture_default_str();
  ar->add_flag("--clamp-negative-weights", ar_clamp, "Clamp negative cotangent weights to zero");

  // eval
  auto* ev = app.add_subcommand("eval", "PMD / CD / EMD between predicted and ground-truth meshes");
  std::string ev_pred, ev_gt, ev_csv = "metrics.csv", ev_json = "metrics.json";
  ev->add_option("--pred-dir", ev_pred, "Directory of predicted .obj files")->required()->check(CLI::ExistingDirectory);
  ev->add_option("--gt-dir", ev_gt, "Directory of ground-truth .obj files")->required()->check(CLI::ExistingDirectory);
  ev->add_option("--csv", ev_csv, "Per-pair CSV output")->capture_default_str();
  ev->add_option("--json", ev_json, "Aggregate JSON output")->capture_default_str();

  // corr
  auto* co = app.add_subcommand("corr", "Export argmax correspondences between two meshes as PLY lines");
  std::string co_a, co_b, co_out = "correspondence.ply", co_ckpt;
  double co_offset = 1.0;
  std::uint64_t co_seed = 0;
  co->add_option("a", co_a, "Identity mesh (.obj)")->required()->check(CLI::ExistingFile);
  co->add_option("b", co_b, "Pose mesh (.obj)")->required()->check(CLI::ExistingFile);
  co->add_option("-o,--output", co_out, "Output PLY")->capture_default_str();
  co->add_option("--ckpt", co_ckpt, "Checkpoint prefix (without .bin/.json)");
  co->add_option("--offset", co_offset, "x offset of the second mesh")->capture_default_str();
  co->add_option("--seed", co_seed, "Weight seed when no checkpoint is given")->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      const SyntheticDataset data = generate_synthetic_dataset(gen_ids, gen_poses, gen_vertices, gen_seed);
      write_dataset(data, gen_out);
      std::cout << "wrote " << data.identity_count() * data.pose_count() << " meshes with "
                << data.body.vertex_count() << " vertices to " << gen_out << "\n";
    } else if (tr->parsed()) {
      TrainConfig cfg = tr_config.empty() ? TrainConfig{} : load_train_config(tr_config);
      for (const auto& kv : tr_sets) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw std::invalid_argument("--set expects key=value, got '" + kv + "'");
        set_config_value(cfg, kv.substr(0, eq), kv.substr(eq + 1));
      }
      if (tr_epochs) {
        cfg.epochs = *tr_epochs;
        cfg.arap_start_epoch = std::min(cfg.arap_start_epoch, cfg.epochs);
      }
      if (!tr_out.empty()) cfg.output_dir = tr_out;
      if (cfg.output_dir.empty()) cfg.output_dir = "run";
      cfg.validate();
      const SyntheticDataset data =
          generate_synthetic_dataset(cfg.n_identities, cfg.n_poses, cfg.vertices_per_mesh, cfg.data_seed);
      const int steps_per_epoch = (cfg.pairs_per_epoch + cfg.batch_size - 1) / cfg.batch_size;
      const TrainResult result = train(data, cfg, [&](const LossRow& row) {
        if ((row.step + 1) % steps_per_epoch == 0) {
          std::cout << "epoch " << row.epoch << " step " << row.step << " total " << row.losses.total << " lr "
                    << row.lr << std::endl;
        }
      });
      std::cout << "checkpoint " << result.checkpoint << "\n";
    } else if (tf->parsed()) {
      GeneratorConfig cfg;
      const GeneratorParams params = generator_from(tf_ckpt, cfg, tf_seed);
      const Mesh identity = load_obj(tf_identity);
      const Mesh pose = load_obj(tf_pose);
      const Vec3 center = bbox_center(identity);
      const TransferResult r = transfer(center_by_bbox(identity), center_by_bbox(pose), params, cfg);
      save_obj(translated(r.output, center), tf_out);
      if (!tf_warped.empty()) save_obj(translated(r.warped, center), tf_warped);
      std::cout << "wrote " << tf_out << " (" << r.output.vertex_count() << " vertices)\n";
    } else if (ar->parsed()) {
      const ArapOptions options{ar_clamp};
      const ArapDeformResult r =
          arap_deform(load_obj(ar_rest), load_obj(ar_target), ar_fraction, ar_iterations, ar_seed, options);
      save_obj(r.mesh, ar_out);
      std::cout << "wrote " << ar_out << ", final energy " << (r.energy.empty() ? 0.0 : r.energy.back()) << "\n";
    } else if (ev->parsed()) {
      const MetricReport report = evaluate_directories(ev_pred, ev_gt);
      if (report.pairs.empty()) throw std::runtime_error("eval: no .obj files in " + ev_pred);
      report.write_csv(ev_csv);
      report.write_json(ev_json);
      std::cout << report.table() << "emd mode: " << report.emd_mode() << "\n";
    } else if (co->parsed()) {
      GeneratorConfig cfg;
      const GeneratorParams params = generator_from(co_ckpt, cfg, co_seed);
      const Mesh a = center_by_bbox(load_obj(co_a));
      const Mesh b = center_by_bbox(load_obj(co_b));
      const TransferResult r = transfer(a, b, params, cfg);
      save_correspondence_ply(a, b, r.plan, co_out, co_offset);
      std::cout << "wrote " << co_out << "\n";
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
