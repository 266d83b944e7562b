#pragma once

// Convergence diagnostics: split-Rhat and effective sample size per
// scalar parameter. Verdict: converged iff all split-Rhat < 1.05 and
// ESS > 100; chains with (numerically) constant traces yield NaN with a
// flag and an inconclusive verdict.

#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "foodweb/sampler.hpp"

namespace foodweb {

namespace detail {

inline double chain_mean(const Eigen::VectorXd& x) { return x.mean(); }

inline double chain_var(const Eigen::VectorXd& x) {
  double m = x.mean();
  return (x.array() - m).square().sum() / (x.size() - 1);
}

}  // namespace detail

// Split each chain in half and compute the potential scale reduction
// factor over the resulting 2*m half-chains.
inline double split_rhat(const std::vector<Eigen::VectorXd>& chains) {
  std::vector<Eigen::VectorXd> halves;
  for (const auto& c : chains) {
    int n = static_cast<int>(c.size()) / 2;
    if (n < 2) return std::numeric_limits<double>::quiet_NaN();
    halves.push_back(c.head(n));
    halves.push_back(c.segment(n, n));
  }
  int m = static_cast<int>(halves.size());
  int n = static_cast<int>(halves[0].size());
  double grand = 0.0;
  for (const auto& h : halves) grand += h.mean();
  grand /= m;
  double b = 0.0, w = 0.0;
  for (const auto& h : halves) {
    double d = h.mean() - grand;
    b += d * d;
    w += detail::chain_var(h);
  }
  b *= static_cast<double>(n) / (m - 1);
  w /= m;
  if (!(w > 0.0)) return std::numeric_limits<double>::quiet_NaN();
  double var_plus = (n - 1.0) / n * w + b / n;
  return std::sqrt(var_plus / w);
}

// Combined-chain ESS via per-chain autocorrelations and Geyer's initial
// monotone positive sequence.
inline double effective_sample_size(
    const std::vector<Eigen::VectorXd>& chains) {
  int m = static_cast<int>(chains.size());
  int n = static_cast<int>(chains[0].size());
  if (n < 4) return std::numeric_limits<double>::quiet_NaN();
  double w = 0.0, b = 0.0, grand = 0.0;
  for (const auto& c : chains) grand += c.mean();
  grand /= m;
  for (const auto& c : chains) {
    double d = c.mean() - grand;
    b += m > 1 ? d * d : 0.0;
    w += detail::chain_var(c);
  }
  w /= m;
  b = m > 1 ? b * n / (m - 1) : 0.0;
  if (!(w > 0.0)) return std::numeric_limits<double>::quiet_NaN();
  double var_plus = (n - 1.0) / n * w + (m > 1 ? b / n : 0.0);

  // mean autocovariance at each lag across chains
  auto acov = [&](int lag) {
    double s = 0.0;
    for (const auto& c : chains) {
      double mu = c.mean();
      double acc = 0.0;
      for (int t = 0; t + lag < n; ++t)
        acc += (c(t) - mu) * (c(t + lag) - mu);
      s += acc / n;
    }
    return s / m;
  };

  // rho_t = 1 - (w - acov_t)/var_plus; sum Geyer pairs while positive,
  // enforcing monotone decrease.
  double rho_sum = 0.0;
  double prev_pair = std::numeric_limits<double>::infinity();
  for (int lag = 1; lag + 1 < n; lag += 2) {
    double rho_a = 1.0 - (w - acov(lag)) / var_plus;
    double rho_b = 1.0 - (w - acov(lag + 1)) / var_plus;
    double pair = rho_a + rho_b;
    if (pair < 0.0) break;
    pair = std::min(pair, prev_pair);
    prev_pair = pair;
    rho_sum += pair;
  }
  double ess = static_cast<double>(m) * n / (1.0 + 2.0 * rho_sum);
  return std::min(ess, static_cast<double>(m) * n);
}

struct ParamDiag {
  std::string name;
  double rhat;
  double ess;
  bool defined;  // false when the trace is constant
};

struct DiagReport {
  std::vector<ParamDiag> params;
  bool converged = false;
  bool inconclusive = false;

  double max_rhat() const {
    double r = 0.0;
    for (const auto& p : params)
      if (p.defined) r = std::max(r, p.rhat);
    return r;
  }
};

inline DiagReport diagnostics(const std::vector<PosteriorChain>& chains,
                              const ReducedWeb& web) {
  if (chains.size() < 2)
    throw ValidationError("diagnostics require at least 2 chains");
  size_t len = chains[0].draws.size();
  for (const auto& c : chains)
    if (c.draws.size() != len)
      throw ValidationError("diagnostics require equal-length chains");
  if (len < 50)
    throw ValidationError(
        "diagnostics refused: fewer than 50 post-burn-in draws");
  const ModelSpec& spec = chains[0].spec;
  auto names = parameter_names(spec, web);
  int np = static_cast<int>(names.size());

  std::vector<Eigen::MatrixXd> mats;
  for (const auto& c : chains) {
    Eigen::MatrixXd m(static_cast<int>(len), np);
    for (size_t d = 0; d < len; ++d)
      m.row(static_cast<int>(d)) =
          flatten_state(c.draws[d], spec, web).transpose();
    mats.push_back(std::move(m));
  }

  DiagReport rep;
  rep.converged = true;
  for (int p = 0; p < np; ++p) {
    std::vector<Eigen::VectorXd> traces;
    bool constant = true;
    for (const auto& m : mats) {
      traces.push_back(m.col(p));
      if (detail::chain_var(traces.back()) > 0.0) constant = false;
    }
    ParamDiag pd;
    pd.name = names[p];
    pd.defined = !constant;
    if (constant) {
      pd.rhat = pd.ess = std::numeric_limits<double>::quiet_NaN();
      rep.inconclusive = true;
    } else {
      pd.rhat = split_rhat(traces);
      pd.ess = effective_sample_size(traces);
      if (!(pd.rhat < 1.05) || !(pd.ess > 100.0)) rep.converged = false;
    }
    rep.params.push_back(pd);
  }
  if (rep.inconclusive) rep.converged = false;
  return rep;
}

}  // namespace foodweb
