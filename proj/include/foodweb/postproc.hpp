#pragma once

// Posterior post-processing: means, equal-tailed credible intervals and
// credible levels on the reporting grid, Procrustes alignment of latent
// clouds, DIC, and plot-ready graph data.

#include <Eigen/Dense>
#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "foodweb/sampler.hpp"

namespace foodweb {

// Grid of reporting levels: 0.05 steps from 0.50 plus the tail levels
// used in published credible-level tables.
inline const std::vector<double>& default_credible_grid() {
  static const std::vector<double> g = {0.50, 0.55, 0.60, 0.65, 0.70,
                                        0.75, 0.80, 0.85, 0.90, 0.95,
                                        0.99, 0.995};
  return g;
}

// Linear-interpolation empirical quantile (R type 7).
inline double empirical_quantile(std::vector<double> sorted, double p) {
  int n = static_cast<int>(sorted.size());
  if (n == 1) return sorted[0];
  double h = (n - 1) * p;
  int lo = static_cast<int>(std::floor(h));
  int hi = std::min(lo + 1, n - 1);
  return sorted[lo] + (h - lo) * (sorted[hi] - sorted[lo]);
}

struct Interval {
  double level;
  double lo;
  double hi;
  bool excludes_zero() const { return lo > 0.0 || hi < 0.0; }
};

struct ParamSummary {
  std::string name;
  double mean;
  std::vector<Interval> intervals;  // one per grid level, nested
  double credible_level;            // max grid level excluding 0
  int sign;                         // sign of posterior mean

  const Interval& at_level(double level) const {
    for (const auto& iv : intervals)
      if (std::abs(iv.level - level) < 1e-12) return iv;
    throw ValidationError("level not in grid");
  }
};

inline ParamSummary summarize_draws(const std::string& name,
                                    const Eigen::VectorXd& draws,
                                    const std::vector<double>& grid) {
  if (draws.size() == 0) throw ValidationError("empty chain");
  ParamSummary s;
  s.name = name;
  s.mean = draws.mean();
  s.sign = s.mean > 0.0 ? 1 : (s.mean < 0.0 ? -1 : 0);
  std::vector<double> sorted(draws.data(), draws.data() + draws.size());
  std::sort(sorted.begin(), sorted.end());
  s.credible_level = 0.50;
  for (double level : grid) {
    double tail = (1.0 - level) / 2.0;
    Interval iv{level, empirical_quantile(sorted, tail),
                empirical_quantile(sorted, 1.0 - tail)};
    s.intervals.push_back(iv);
    if (iv.excludes_zero()) s.credible_level = std::max(s.credible_level, level);
  }
  return s;
}

struct Summary {
  std::vector<ParamSummary> params;
  std::vector<double> grid;

  const ParamSummary& operator[](const std::string& name) const {
    for (const auto& p : params)
      if (p.name == name) return p;
    throw ValidationError("no parameter '" + name + "' in summary");
  }
};

inline Summary summarize(const ChainTable& chain,
                         const std::vector<double>& grid =
                             default_credible_grid()) {
  if (chain.draws.rows() == 0) throw ValidationError("empty chain");
  Summary s;
  s.grid = grid;
  for (size_t c = 0; c < chain.names.size(); ++c)
    s.params.push_back(summarize_draws(
        chain.names[c], chain.draws.col(static_cast<int>(c)), grid));
  return s;
}

// Summary CSV mirroring the credible-interval table layout. lo/hi are the
// interval at the reported credible level.
inline void write_summary_csv(const Summary& s, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ParseError("cannot write " + path);
  out << "parameter,mean,lo,hi,credible_level,flag_bold\n";
  for (const auto& p : s.params) {
    const Interval& iv = p.at_level(p.credible_level);
    out << p.name << "," << csv::format_double(p.mean) << ","
        << csv::format_double(iv.lo) << "," << csv::format_double(iv.hi) << ","
        << csv::format_double(p.credible_level) << ","
        << (p.credible_level > 0.50 ? 1 : 0) << "\n";
  }
}

// ---------------------------------------------------------------------------
// Procrustes alignment

// Orthogonal (rotation/reflection, no scaling or translation) transform R
// minimizing ||A R - ref||_F.
inline Eigen::Matrix2d procrustes_rotation(const Eigen::MatrixXd& a,
                                           const Eigen::MatrixXd& ref) {
  Eigen::Matrix2d m = a.transpose() * ref;
  Eigen::JacobiSVD<Eigen::Matrix2d> svd(
      m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  return svd.matrixU() * svd.matrixV().transpose();
}

struct LatentCloud {
  std::vector<int> node_ids;           // rows of each draw
  std::vector<Eigen::MatrixXd> draws;  // aligned, one (m x 2) per draw
  Eigen::MatrixXd reference;           // m x 2
  Eigen::MatrixXd mean;                // m x 2 per-node mean position
};

inline void check_reference(const Eigen::MatrixXd& ref) {
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(ref);
  if (svd.rank() < 2 ||
      svd.singularValues()(1) < 1e-9 * svd.singularValues()(0))
    throw ValidationError(
        "collinear alignment reference: choose a different reference draw");
}

inline LatentCloud procrustes_align(const std::vector<Eigen::MatrixXd>& draws,
                                    const Eigen::MatrixXd& ref,
                                    const std::vector<int>& node_ids = {}) {
  if (draws.empty()) throw ValidationError("no draws to align");
  check_reference(ref);
  LatentCloud cloud;
  cloud.node_ids = node_ids;
  cloud.reference = ref;
  cloud.mean = Eigen::MatrixXd::Zero(ref.rows(), 2);
  for (const auto& d : draws) {
    Eigen::Matrix2d rot = procrustes_rotation(d, ref);
    cloud.draws.push_back(d * rot);
    cloud.mean += cloud.draws.back();
  }
  cloud.mean /= static_cast<double>(draws.size());
  return cloud;
}

// Deterministic reference: provisional alignment of every draw to the
// final draw, then the mean over the second half of the provisionally
// aligned sequence.
inline Eigen::MatrixXd two_pass_reference(
    const std::vector<Eigen::MatrixXd>& draws) {
  if (draws.empty()) throw ValidationError("no draws");
  const Eigen::MatrixXd& provisional = draws.back();
  check_reference(provisional);
  size_t half = draws.size() / 2;
  Eigen::MatrixXd mean = Eigen::MatrixXd::Zero(provisional.rows(), 2);
  for (size_t d = half; d < draws.size(); ++d)
    mean += draws[d] * procrustes_rotation(draws[d], provisional);
  mean /= static_cast<double>(draws.size() - half);
  return mean;
}

// Joint alignment of u/v draws of the same iteration with one shared
// orthogonal transform per draw, which leaves every inner product
// u_i . v_j invariant.
inline std::pair<LatentCloud, LatentCloud> procrustes_align_joint(
    const std::vector<Eigen::MatrixXd>& u_draws,
    const std::vector<Eigen::MatrixXd>& v_draws,
    const std::vector<int>& u_ids, const std::vector<int>& v_ids) {
  if (u_draws.size() != v_draws.size() || u_draws.empty())
    throw ValidationError("u/v draw sequences must be equal-length");
  std::vector<Eigen::MatrixXd> stacked;
  stacked.reserve(u_draws.size());
  long nu = u_draws[0].rows();
  long nv = v_draws[0].rows();
  for (size_t d = 0; d < u_draws.size(); ++d) {
    Eigen::MatrixXd s(nu + nv, 2);
    s << u_draws[d], v_draws[d];
    stacked.push_back(std::move(s));
  }
  Eigen::MatrixXd ref = two_pass_reference(stacked);
  LatentCloud u_cloud, v_cloud;
  u_cloud.node_ids = u_ids;
  v_cloud.node_ids = v_ids;
  u_cloud.reference = ref.topRows(nu);
  v_cloud.reference = ref.bottomRows(nv);
  u_cloud.mean = Eigen::MatrixXd::Zero(nu, 2);
  v_cloud.mean = Eigen::MatrixXd::Zero(nv, 2);
  for (const auto& s : stacked) {
    Eigen::Matrix2d rot = procrustes_rotation(s, ref);
    Eigen::MatrixXd aligned = s * rot;
    u_cloud.draws.push_back(aligned.topRows(nu));
    v_cloud.draws.push_back(aligned.bottomRows(nv));
    u_cloud.mean += u_cloud.draws.back();
    v_cloud.mean += v_cloud.draws.back();
  }
  u_cloud.mean /= static_cast<double>(stacked.size());
  v_cloud.mean /= static_cast<double>(stacked.size());
  return {std::move(u_cloud), std::move(v_cloud)};
}

// ---------------------------------------------------------------------------
// DIC

struct DicResult {
  double dic;
  double dbar;
  double pd;
};

// Posterior-mean state: plain means of every stored parameter (variances
// averaged on the variance scale), pinned entries refreshed.
inline ParameterState posterior_mean_state(
    const std::vector<ParameterState>& draws, const ModelSpec& spec,
    const ReducedWeb& web) {
  if (draws.empty()) throw ValidationError("empty chain");
  Eigen::VectorXd acc =
      flatten_state(draws[0], spec, web);
  for (size_t d = 1; d < draws.size(); ++d)
    acc += flatten_state(draws[d], spec, web);
  acc /= static_cast<double>(draws.size());
  ParameterState mean = unflatten_state(acc, spec, web);
  if (!mean.variances_positive())
    throw NumericalError("posterior-mean state has non-positive variance");
  apply_pinned_effects(mean, spec, web);
  return mean;
}

inline DicResult compute_dic(const std::vector<ParameterState>& draws,
                             const ModelSpec& spec, const ReducedWeb& web) {
  if (draws.empty()) throw ValidationError("empty chain");
  double dbar = 0.0;
  for (const auto& st : draws) dbar += -2.0 * log_likelihood(st, spec, web);
  dbar /= static_cast<double>(draws.size());
  ParameterState mean = posterior_mean_state(draws, spec, web);
  double d_at_mean = -2.0 * log_likelihood(mean, spec, web);
  double pd = dbar - d_at_mean;
  return {dbar + pd, dbar, pd};
}

// ---------------------------------------------------------------------------
// Plot data

enum class GraphKind { sr, u, v };

struct GraphPoint {
  int node;
  double x;
  double y;
};

struct GraphData {
  std::vector<GraphPoint> means;
  // optional per-draw positions: (draw, node, x, y)
  std::vector<std::array<double, 4>> cloud;
  std::vector<std::pair<int, int>> arrows;  // (prey, pred)
};

inline GraphData emit_graph_data(const std::vector<ParameterState>& draws,
                                 const ModelSpec& spec, const ReducedWeb& web,
                                 GraphKind kind, bool with_cloud = false) {
  if (draws.empty()) throw ValidationError("empty chain");
  GraphData g;
  for (const auto& lk : web.links) g.arrows.emplace_back(lk.prey, lk.pred);

  if (kind == GraphKind::sr) {
    // one point per node; pinned entries are stored per draw already
    Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(web.n, 2);
    for (const auto& st : draws) {
      acc.col(0) += st.s;
      acc.col(1) += st.r;
    }
    acc /= static_cast<double>(draws.size());
    for (int i = 0; i < web.n; ++i) g.means.push_back({i, acc(i, 0), acc(i, 1)});
    if (with_cloud)
      for (size_t d = 0; d < draws.size(); ++d)
        for (int i = 0; i < web.n; ++i)
          g.cloud.push_back({static_cast<double>(d), static_cast<double>(i),
                             draws[d].s(i), draws[d].r(i)});
    return g;
  }

  if (!spec.interaction)
    throw ValidationError(
        "u/v graph data requires a chain fitted with interaction=true");
  std::vector<int> u_ids, v_ids;
  for (int i = 0; i < web.n; ++i) {
    if (web.nodes.is_sender(i)) u_ids.push_back(i);
    if (web.nodes.is_receiver(i)) v_ids.push_back(i);
  }
  std::vector<Eigen::MatrixXd> u_draws, v_draws;
  for (const auto& st : draws) {
    Eigen::MatrixXd um(u_ids.size(), 2), vm(v_ids.size(), 2);
    for (size_t k = 0; k < u_ids.size(); ++k) um.row(k) = st.u.row(u_ids[k]);
    for (size_t k = 0; k < v_ids.size(); ++k) vm.row(k) = st.v.row(v_ids[k]);
    u_draws.push_back(std::move(um));
    v_draws.push_back(std::move(vm));
  }
  auto [u_cloud, v_cloud] =
      procrustes_align_joint(u_draws, v_draws, u_ids, v_ids);
  const LatentCloud& cloud = kind == GraphKind::u ? u_cloud : v_cloud;
  for (size_t k = 0; k < cloud.node_ids.size(); ++k)
    g.means.push_back(
        {cloud.node_ids[k], cloud.mean(k, 0), cloud.mean(k, 1)});
  if (with_cloud)
    for (size_t d = 0; d < cloud.draws.size(); ++d)
      for (size_t k = 0; k < cloud.node_ids.size(); ++k)
        g.cloud.push_back({static_cast<double>(d),
                           static_cast<double>(cloud.node_ids[k]),
                           cloud.draws[d](k, 0), cloud.draws[d](k, 1)});
  return g;
}

inline void write_graph_csv(const GraphData& g, const ReducedWeb& web,
                            const std::string& points_path,
                            const std::string& arrows_path,
                            const std::string& cloud_path = "") {
  {
    std::ofstream out(points_path);
    if (!out) throw ParseError("cannot write " + points_path);
    out << "node,mean_x,mean_y\n";
    for (const auto& p : g.means)
      out << web.names[p.node] << "," << csv::format_double(p.x) << ","
          << csv::format_double(p.y) << "\n";
  }
  {
    std::ofstream out(arrows_path);
    if (!out) throw ParseError("cannot write " + arrows_path);
    out << "prey,predator\n";
    for (auto [i, j] : g.arrows)
      out << web.names[i] << "," << web.names[j] << "\n";
  }
  if (!cloud_path.empty()) {
    std::ofstream out(cloud_path);
    if (!out) throw ParseError("cannot write " + cloud_path);
    out << "draw,node,x,y\n";
    for (const auto& row : g.cloud)
      out << static_cast<long>(row[0]) << ","
          << web.names[static_cast<int>(row[1])] << ","
          << csv::format_double(row[2]) << "," << csv::format_double(row[3])
          << "\n";
  }
}

}  // namespace foodweb
