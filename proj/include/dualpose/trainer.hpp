#pragma once

#include "dualpose/dataset.hpp"
#include "dualpose/mesh.hpp"
#include "dualpose/pose_transfer.hpp"
#include "dualpose/tensor.hpp"

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace dualpose {

inline constexpr double kLambdaRec = 2000.0;
inline constexpr double kLambdaCorr = 200.0;

class TrainError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class TrainMode { kUnsupervised, kSupervised };

/// Every knob of a training run. Defaults are the desk-scale setting.
struct TrainConfig {
  double lambda_rec = kLambdaRec;
  double lambda_corr = kLambdaCorr;
  int epochs = 60;
  int arap_start_epoch = 45;
  double learning_rate = 1e-3;
  /// lr is constant for the first half of the epochs, then decays linearly
  /// to final_lr_fraction * learning_rate at the last epoch.
  double final_lr_fraction = 0.5;
  int batch_size = 4;
  int pairs_per_epoch = 64;
  double sinkhorn_epsilon = kSinkhornEpsilon;
  int sinkhorn_iterations = kSinkhornIterations;
  double anchor_fraction = 0.10;
  int arap_iterations = 50;
  /// Posed bodies have obtuse triangles; their raw cotangent energy is indefinite.
  bool arap_clamp_negative_weights = true;
  std::uint64_t seed = 0;
  TrainMode mode = TrainMode::kUnsupervised;

  int trunk_width = 256;
  int knn = 16;
  int workers = 1;
  int checkpoint_every = 0;  // epochs between checkpoints; 0 writes only the final one
  std::string output_dir;    // empty: nothing is written

  int n_identities = 8;
  int n_poses = 40;
  int vertices_per_mesh = 600;
  int holdout_poses = 8;  // last poses are reserved for evaluation
  std::uint64_t data_seed = 7;

  /// Throws std::invalid_argument on an inconsistent configuration.
  void validate() const;
  GeneratorConfig generator() const;
  double learning_rate_at(int epoch) const;
  bool arap_active(int epoch) const { return epoch >= arap_start_epoch; }
};

/// Applies one `key = value` setting; keys are the field names above,
/// mode takes "unsupervised" or "supervised".
void set_config_value(TrainConfig& cfg, const std::string& key, const std::string& value);
/// Flat key = value file; '#' starts a comment.
TrainConfig load_train_config(const std::string& path);
std::string to_config_text(const TrainConfig& cfg);

/// A mesh centered by its bounding box and randomly relabeled, with the
/// generator input built from it.
struct PreparedMesh {
  Mesh mesh;
  VertexPermutation permutation;
  GeneratorInput input;
};

PreparedMesh prepare_mesh(const Mesh& raw, std::uint64_t shuffle_seed, int knn);

/// Unsupervised training item: identity M_A and pose M_B.
struct MeshPair {
  PreparedMesh a;
  PreparedMesh b;
};

/// Supervised item: ground truth reordered to the identity's vertex order.
struct SupervisedTriplet {
  PreparedMesh identity;
  PreparedMesh pose;
  std::vector<Vec3> ground_truth;
};

struct MeshPairBatch {
  std::vector<MeshPair> pairs;
};

/// Sum over vertices of squared coordinate differences.
ad::Tensor reconstruction_loss(const ad::Tensor& recon, const ad::Tensor& original);
ad::Tensor reconstruction_loss(const Mesh& recon, const Mesh& original);

/// sum_v sum_{n in N(v)} |x_v - x_n|^2, every edge counted from both ends.
ad::Tensor edge_loss(const ad::Tensor& coords, const std::vector<std::pair<int, int>>& edges);
ad::Tensor edge_loss(const Mesh& mesh);

struct LossBreakdown {
  double rec_a = 0.0;
  double rec_b = 0.0;
  double corr = 0.0;
  double edge = 0.0;
  double total = 0.0;
};

struct StepResult {
  LossBreakdown losses;
  ad::Tensor total;        // scalar with live history
  ad::Tensor output;       // M_output coordinates [1, 3, N_A]
  ad::Tensor refined;      // M_output after ARAP (the same tensor outside the window)
};

struct StepOptions {
  bool arap = false;
  std::uint64_t arap_seed = 0;
};

/// Main generator, optional ARAP refinement with a straight-through
/// gradient, then the two auxiliary reconstructions with shared weights.
StepResult dual_step(const MeshPair& pair, const GeneratorParams& params, const TrainConfig& cfg,
                     const StepOptions& options = {});

/// Single generator against ground truth.
StepResult supervised_step(const SupervisedTriplet& item, const GeneratorParams& params, const TrainConfig& cfg);

struct LossRow {
  int epoch = 0;
  int step = 0;
  LossBreakdown losses;
  double lr = 0.0;
};

void write_loss_log(const std::vector<LossRow>& rows, const std::string& path);
/// Mean total loss per epoch, in epoch order.
std::vector<double> epoch_means(const std::vector<LossRow>& rows);

struct TrainResult {
  GeneratorParams params;
  std::vector<LossRow> log;
  std::string checkpoint;  // prefix of the final checkpoint, empty when nothing was written
};

/// Called after every optimizer step.
using StepCallback = std::function<void(const LossRow&)>;

TrainResult train(const SyntheticDataset& data, const TrainConfig& cfg, const StepCallback& on_step = {});

/// Restores a generator from a checkpoint prefix. The trunk width is read
/// from the stored tensor shapes and written into `cfg`.
GeneratorParams load_generator(const std::string& prefix, GeneratorConfig& cfg);

/// Held-out evaluation item: identity i in a training pose, pose mesh of
/// another identity in a held-out pose, and identity i in that pose.
struct EvalTriplet {
  std::string id;
  Mesh identity;
  Mesh pose;
  Mesh ground_truth;
};

std::vector<EvalTriplet> heldout_triplets(const SyntheticDataset& data, const TrainConfig& cfg, int count,
                                          std::uint64_t seed);

struct HeldoutScores {
  double model_pmd = 0.0;
  double identity_copy_pmd = 0.0;
};

/// Mean PMD of the transferred meshes (centered, vertex order of the
/// shuffled identity) and of the identity-copy baseline.
HeldoutScores evaluate_heldout(const std::vector<EvalTriplet>& triplets, const GeneratorParams& params,
                               const TrainConfig& cfg, std::uint64_t seed);

}  // namespace dualpose
