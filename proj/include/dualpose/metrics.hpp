#pragma once

#include "dualpose/mesh.hpp"

#include <string>
#include <vector>

namespace dualpose {

inline constexpr int kEmdExactLimit = 1024;
inline constexpr int kEmdMaxPoints = 4096;
inline constexpr double kEmdEpsilon = 0.002;
inline constexpr int kEmdIterations = 500;

/// Mean over vertices of the squared distance between corresponding vertices.
double pmd(const Mesh& a, const Mesh& b);
double pmd(const std::vector<Vec3>& a, const std::vector<Vec3>& b);

/// mean_a min_b |a - b|^2 + mean_b min_a |a - b|^2
double chamfer(const std::vector<Vec3>& a, const std::vector<Vec3>& b);

enum class EmdMode { kAuto, kExact, kEntropic };

struct EmdResult {
  double value = 0.0;
  bool exact = true;
};

/// (1/N) min over bijections of sum |a_i - b_pi(i)| (unsquared). kAuto uses
/// the exact assignment up to kEmdExactLimit points, entropic OT above.
EmdResult emd(const std::vector<Vec3>& a, const std::vector<Vec3>& b, EmdMode mode = EmdMode::kAuto);

/// Minimum-cost perfect matching of a square cost matrix (row-major n*n).
/// Returns assignment[row] = column.
std::vector<int> hungarian(const std::vector<double>& cost, int n);

struct PairMetrics {
  std::string pair_id;
  double pmd = 0.0;
  double cd = 0.0;
  double emd = 0.0;
  bool emd_exact = true;
};

struct MetricReport {
  std::vector<PairMetrics> pairs;

  double pmd_mean() const;
  double cd_mean() const;
  double emd_mean() const;
  /// "exact", "entropic" or "mixed".
  std::string emd_mode() const;

  void write_csv(const std::string& path) const;
  void write_json(const std::string& path) const;
  /// Human-readable table in display units (PMD and CD x1e-3, EMD x1e-2).
  std::string table() const;
};

PairMetrics evaluate_pair(const std::string& pair_id, const Mesh& pred, const Mesh& gt,
                          EmdMode mode = EmdMode::kAuto);

/// Pairs every .obj in `pred_dir` with the same file stem in `gt_dir`.
MetricReport evaluate_directories(const std::string& pred_dir, const std::string& gt_dir,
                                  EmdMode mode = EmdMode::kAuto);

}  // namespace dualpose
