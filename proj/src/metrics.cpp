#include "dualpose/metrics.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace dualpose {

double pmd(const std::vector<Vec3>& a, const std::vector<Vec3>& b) {
  if (a.size() != b.size()) throw std::invalid_argument("pmd: vertex count mismatch");
  if (a.empty()) return 0.0;
  double sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) sum += (a[i] - b[i]).squaredNorm();
  return sum / static_cast<double>(a.size());
}

double pmd(const Mesh& a, const Mesh& b) { return pmd(a.vertices(), b.vertices()); }

namespace {

double directed_mean_nn(const std::vector<Vec3>& from, const std::vector<Vec3>& to) {
  double sum = 0.0;
  for (const Vec3& p : from) {
    double best = std::numeric_limits<double>::infinity();
    for (const Vec3& q : to) best = std::min(best, (p - q).squaredNorm());
    sum += best;
  }
  return sum / static_cast<double>(from.size());
}

double emd_exact(const std::vector<Vec3>& a, const std::vector<Vec3>& b) {
  const int n = static_cast<int>(a.size());
  std::vector<double> cost(static_cast<std::size_t>(n) * n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) cost[static_cast<std::size_t>(i) * n + j] = (a[i] - b[j]).norm();
  const auto match = hungarian(cost, n);
  double sum = 0.0;
  for (int i = 0; i < n; ++i) sum += cost[static_cast<std::size_t>(i) * n + match[i]];
  return sum / n;
}

// Log-domain Sinkhorn with uniform marginals and epsilon scaling; returns (1/N)-normalized cost
// of the entropic plan, i.e. N * sum_ij T_ij C_ij.
double emd_entropic(const std::vector<Vec3>& a, const std::vector<Vec3>& b) {
  const int n = static_cast<int>(a.size());
  Eigen::MatrixXd c(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) c(i, j) = (a[i] - b[j]).norm();
  double eps = kEmdEpsilon;
  const double log_mass = -std::log(static_cast<double>(n));
  Eigen::VectorXd f = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd g = Eigen::VectorXd::Zero(n);
  const Eigen::MatrixXd ct = c.transpose();
  // out_i = eps * (log(1/N) - log sum_j exp((other_j - cost_ij) / eps))
  auto softmin = [&](const Eigen::MatrixXd& cost, const Eigen::VectorXd& other, Eigen::VectorXd& out) {
    const Eigen::ArrayXXd z = ((-cost).rowwise() + other.transpose()).array() / eps;
    const Eigen::ArrayXd m = z.rowwise().maxCoeff();
    const Eigen::ArrayXd s = (z.colwise() - m).exp().rowwise().sum();
    out = (eps * (log_mass - m - s.log())).matrix();
  };
  // Epsilon scaling: anneal geometrically from the cost scale to kEmdEpsilon
  // over the first half of the iterations, then iterate at kEmdEpsilon.
  const double eps_start = std::max(c.maxCoeff(), kEmdEpsilon);
  const int anneal = kEmdIterations / 2;
  for (int it = 0; it < kEmdIterations; ++it) {
    eps = it < anneal ? std::max(kEmdEpsilon, eps_start * std::pow(kEmdEpsilon / eps_start, double(it) / anneal))
                      : kEmdEpsilon;
    softmin(c, g, f);
    softmin(ct, f, g);
  }
  double total = 0.0;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) total += std::exp((f(i) + g(j) - c(i, j)) / eps) * c(i, j);
  return total;
}

}  // namespace

double chamfer(const std::vector<Vec3>& a, const std::vector<Vec3>& b) {
  if (a.empty() || b.empty()) throw std::invalid_argument("chamfer: empty point set");
  return directed_mean_nn(a, b) + directed_mean_nn(b, a);
}

std::vector<int> hungarian(const std::vector<double>& cost, int n) {
  // Shortest augmenting path with row/column potentials, O(n^3).
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0), minv(n + 1);
  std::vector<int> p(n + 1, 0), way(n + 1, 0);
  std::vector<char> used(n + 1);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::fill(minv.begin(), minv.end(), inf);
    std::fill(used.begin(), used.end(), 0);
    do {
      used[j0] = 1;
      const int i0 = p[j0];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost[static_cast<std::size_t>(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<int> assignment(n);
  for (int j = 1; j <= n; ++j) assignment[p[j] - 1] = j - 1;
  return assignment;
}

EmdResult emd(const std::vector<Vec3>& a, const std::vector<Vec3>& b, EmdMode mode) {
  if (a.size() != b.size()) throw std::invalid_argument("emd: point sets must have equal size");
  if (a.size() > static_cast<std::size_t>(kEmdMaxPoints)) throw std::invalid_argument("emd: more than 4096 points");
  if (a.empty()) return {0.0, true};
  const bool exact = mode == EmdMode::kExact ||
                     (mode == EmdMode::kAuto && a.size() <= static_cast<std::size_t>(kEmdExactLimit));
  return exact ? EmdResult{emd_exact(a, b), true} : EmdResult{emd_entropic(a, b), false};
}

double MetricReport::pmd_mean() const {
  double s = 0.0;
  for (const auto& p : pairs) s += p.pmd;
  return pairs.empty() ? 0.0 : s / pairs.size();
}

double MetricReport::cd_mean() const {
  double s = 0.0;
  for (const auto& p : pairs) s += p.cd;
  return pairs.empty() ? 0.0 : s / pairs.size();
}

double MetricReport::emd_mean() const {
  double s = 0.0;
  for (const auto& p : pairs) s += p.emd;
  return pairs.empty() ? 0.0 : s / pairs.size();
}

std::string MetricReport::emd_mode() const {
  const auto exact = std::count_if(pairs.begin(), pairs.end(), [](const auto& p) { return p.emd_exact; });
  if (exact == static_cast<long>(pairs.size())) return "exact";
  if (exact == 0) return "entropic";
  return "mixed";
}

void MetricReport::write_csv(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "pair_id,pmd,cd,emd\n" << std::setprecision(17);
  for (const auto& p : pairs) out << p.pair_id << ',' << p.pmd << ',' << p.cd << ',' << p.emd << '\n';
}

void MetricReport::write_json(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  nlohmann::json j = {{"pmd_mean", pmd_mean()},
                      {"cd_mean", cd_mean()},
                      {"emd_mean", emd_mean()},
                      {"n_pairs", pairs.size()},
                      {"emd_mode", emd_mode()}};
  out << j.dump(2) << '\n';
}

std::string MetricReport::table() const {
  std::ostringstream s;
  s << std::left << std::setw(24) << "pair" << std::right << std::setw(14) << "PMD(x1e-3)" << std::setw(14)
    << "CD(x1e-3)" << std::setw(14) << "EMD(x1e-2)" << '\n'
    << std::fixed << std::setprecision(4);
  auto row = [&s](const std::string& id, double pmd_v, double cd_v, double emd_v) {
    s << std::left << std::setw(24) << id << std::right << std::setw(14) << pmd_v / 1e-3 << std::setw(14)
      << cd_v / 1e-3 << std::setw(14) << emd_v / 1e-2 << '\n';
  };
  for (const auto& p : pairs) row(p.pair_id, p.pmd, p.cd, p.emd);
  row("mean", pmd_mean(), cd_mean(), emd_mean());
  return s.str();
}

PairMetrics evaluate_pair(const std::string& pair_id, const Mesh& pred, const Mesh& gt, EmdMode mode) {
  PairMetrics m;
  m.pair_id = pair_id;
  m.pmd = pmd(pred, gt);
  m.cd = chamfer(pred.vertices(), gt.vertices());
  const EmdResult e = emd(pred.vertices(), gt.vertices(), mode);
  m.emd = e.value;
  m.emd_exact = e.exact;
  return m;
}

MetricReport evaluate_directories(const std::string& pred_dir, const std::string& gt_dir, EmdMode mode) {
  namespace fs = std::filesystem;
  std::vector<fs::path> preds;
  for (const auto& entry : fs::directory_iterator(pred_dir))
    if (entry.is_regular_file() && entry.path().extension() == ".obj") preds.push_back(entry.path());
  std::sort(preds.begin(), preds.end());
  MetricReport report;
  for (const auto& p : preds) {
    const fs::path gt = fs::path(gt_dir) / p.filename();
    if (!fs::exists(gt)) throw std::runtime_error("eval: no ground truth for " + p.stem().string() + " in " + gt_dir);
    report.pairs.push_back(evaluate_pair(p.stem().string(), load_obj(p.string()), load_obj(gt.string()), mode));
  }
  return report;
}

}  // namespace dualpose
