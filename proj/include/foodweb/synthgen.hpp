#pragma once

// Synthetic reduced webs generated from known parameter values, for
// oracle tests, parameter-recovery studies and DIC calibration. Responses
// are generated directly on the transformed (Gaussian) scale.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <set>
#include <string>
#include <vector>

#include "foodweb/postproc.hpp"
#include "foodweb/rng.hpp"
#include "foodweb/sampler.hpp"

namespace foodweb {

struct SynthConfig {
  int n = 30;
  double frac_basal = 0.1;
  double frac_top = 0.1;
  double density = 0.35;       // fraction of eligible dyads linked
  double mutual_frac = 0.15;   // of linked middle-middle dyads made mutual
  ModelSpec spec;              // covariate subset, interaction, k, a
  // Truth hyperparameters; node effects are sampled from the hierarchy.
  Eigen::VectorXd beta;        // length = covariates + 1
  double lambda = 0.5;
  double phi2 = 0.3;
  double sigma_s2 = 0.5;
  double sigma2 = 0.25;
  double z = 0.3;
  Eigen::Vector2d sigma_u2{0.5, 0.5};
  Eigen::Vector2d sigma_v2{0.5, 0.5};
  std::uint64_t seed = 1;

  void validate() const {
    if (n < 3) throw ValidationError("synth: need at least 3 nodes");
    if (frac_basal < 0 || frac_top < 0 || frac_basal + frac_top >= 1.0)
      throw ValidationError("synth: inconsistent basal/top fractions");
    int nb = std::max(1, static_cast<int>(frac_basal * n));
    int nt = static_cast<int>(frac_top * n);
    if (n - nb - nt < 1)
      throw ValidationError("synth: no middle nodes; degenerate web");
    if (!(density > 0.0 && density <= 1.0))
      throw ValidationError("synth: density must be in (0,1]");
  }
};

namespace detail {

// Deterministic topology: guarantee every node its required roles, then
// fill with random links to the target density.
struct Topology {
  std::vector<int> basal, middle, top;
  // directed links prey->pred; mutual pairs appear as both directions
  std::vector<std::pair<int, int>> links;
};

inline Topology make_topology(const SynthConfig& cfg, Rng& rng) {
  Topology t;
  int nb = std::max(1, static_cast<int>(cfg.frac_basal * cfg.n));
  int nt = static_cast<int>(cfg.frac_top * cfg.n);
  int nm = cfg.n - nb - nt;
  for (int i = 0; i < nb; ++i) t.basal.push_back(i);
  for (int i = nb; i < nb + nm; ++i) t.middle.push_back(i);
  for (int i = nb + nm; i < cfg.n; ++i) t.top.push_back(i);

  std::set<std::pair<int, int>> have;
  auto add = [&](int a, int b) { have.emplace(a, b); };
  auto pick = [&](const std::vector<int>& from) {
    return from[rng.below(from.size())];
  };
  // every basal node sends to some middle node
  for (int i : t.basal) add(i, pick(t.middle));
  // every top node receives from some middle node
  for (int i : t.top) add(pick(t.middle), i);
  // every middle node both sends and receives
  for (int i : t.middle) {
    std::vector<int> recv;
    for (int j : t.middle)
      if (j != i) recv.push_back(j);
    for (int j : t.top) recv.push_back(j);
    if (!recv.empty()) add(i, pick(recv));
    std::vector<int> send;
    for (int j : t.basal) send.push_back(j);
    for (int j : t.middle)
      if (j != i) send.push_back(j);
    if (!send.empty()) add(pick(send), i);
  }
  // eligible extra links: sender in basal+middle, receiver in middle+top
  std::vector<std::pair<int, int>> eligible;
  auto is_middle = [&](int i) { return i >= nb && i < nb + nm; };
  for (int i = 0; i < cfg.n; ++i) {
    bool i_sends = i < nb + nm;
    for (int j = 0; j < cfg.n; ++j) {
      if (i == j || !i_sends || j < nb) continue;
      if (!have.count({i, j})) eligible.emplace_back(i, j);
    }
  }
  int target = static_cast<int>(cfg.density * (eligible.size() + have.size()));
  while (static_cast<int>(have.size()) < target && !eligible.empty()) {
    size_t k = rng.below(eligible.size());
    add(eligible[k].first, eligible[k].second);
    eligible.erase(eligible.begin() + static_cast<long>(k));
  }
  // drop one direction of accidental mutual dyads, then re-add mutuals
  // at the requested fraction among middle-middle linked dyads
  std::vector<std::pair<int, int>> final_links;
  std::set<std::pair<int, int>> dropped;
  for (auto [i, j] : have) {
    if (i < j && have.count({j, i})) {
      if (!(is_middle(i) && is_middle(j))) dropped.emplace(j, i);
    }
  }
  for (auto [i, j] : have)
    if (!dropped.count({i, j})) final_links.emplace_back(i, j);

  std::set<std::pair<int, int>> linkset(final_links.begin(),
                                        final_links.end());
  if (cfg.mutual_frac > 0.0) {
    std::vector<std::pair<int, int>> candidates;
    for (auto [i, j] : final_links)
      if (is_middle(i) && is_middle(j) && !linkset.count({j, i}))
        candidates.emplace_back(j, i);
    for (auto [i, j] : candidates)
      if (rng.uniform() < cfg.mutual_frac) linkset.emplace(i, j);
  } else {
    // density 0 on mutual pairs: strip all mutual dyads to one direction
    std::set<std::pair<int, int>> strip;
    for (auto [i, j] : linkset)
      if (i < j && linkset.count({j, i})) strip.emplace(j, i);
    for (auto p : strip) linkset.erase(p);
  }
  t.links.assign(linkset.begin(), linkset.end());
  return t;
}

}  // namespace detail

// Sample node effects from the hierarchy and responses from the dyad
// likelihood; classification of the result reproduces the intended
// partitions. Returns the web and the fully materialized true state.
inline std::pair<ReducedWeb, ParameterState> generate_web(
    const SynthConfig& cfg) {
  cfg.validate();
  cfg.spec.validate();
  Rng rng(cfg.seed);
  detail::Topology topo = detail::make_topology(cfg, rng);

  ReducedWeb web;
  web.n = cfg.n;
  web.mode = cfg.spec.mode;
  for (int i = 0; i < cfg.n; ++i) web.names.push_back("n" + std::to_string(i + 1));

  // link table with dyad bookkeeping
  Eigen::MatrixXd adj = Eigen::MatrixXd::Zero(cfg.n, cfg.n);
  for (auto [i, j] : topo.links) adj(i, j) = 1.0;
  web.nodes = classify_nodes(adj);
  web.dyads = classify_dyads(adj);
  if (web.nodes.basal.size() != topo.basal.size() ||
      web.nodes.top.size() != topo.top.size())
    throw ValidationError("synth: generated topology lost a node role");

  auto add_link = [&](int prey, int pred, int pair) {
    Link lk;
    lk.prey = prey;
    lk.pred = pred;
    lk.pair = pair;
    web.links.push_back(lk);
  };
  for (auto [i, j] : web.dyads.mutual) {
    int p = static_cast<int>(web.pairs.size());
    int a = web.n_links();
    add_link(i, j, p);
    add_link(j, i, p);
    web.pairs.emplace_back(a, a + 1);
  }
  for (auto [i, j] : web.dyads.send_only) add_link(i, j, -1);
  for (auto [i, j] : web.dyads.receive_only) add_link(j, i, -1);
  web.rebuild_link_index();

  // covariates: integer taxonomic distances for taxdist, standard-normal
  // node attributes otherwise; every column centered over links
  int L = static_cast<int>(cfg.spec.covariates.size());
  web.covariate_names = cfg.spec.covariates;
  int nl = web.n_links();
  Eigen::MatrixXd cols(nl, L);
  Eigen::MatrixXd dist(cfg.n, cfg.n);
  for (int i = 0; i < cfg.n; ++i)
    for (int j = 0; j <= i; ++j)
      dist(i, j) = dist(j, i) = 1.0 + static_cast<double>(rng.below(8));
  Eigen::MatrixXd node_attr(cfg.n, 4);  // prey/pred biomass+harvest sources
  for (int i = 0; i < cfg.n; ++i)
    for (int c = 0; c < 4; ++c) node_attr(i, c) = rng.normal();
  for (int c = 0; c < L; ++c) {
    const std::string& name = cfg.spec.covariates[c];
    for (int l = 0; l < nl; ++l) {
      const Link& lk = web.links[l];
      if (name == "taxdist")
        cols(l, c) = std::log(dist(lk.prey, lk.pred));
      else if (name == "prey_biomass")
        cols(l, c) = node_attr(lk.prey, 0);
      else if (name == "prey_harvest")
        cols(l, c) = node_attr(lk.prey, 1);
      else if (name == "pred_biomass")
        cols(l, c) = node_attr(lk.pred, 2);
      else if (name == "pred_harvest")
        cols(l, c) = node_attr(lk.pred, 3);
      else
        throw ValidationError("synth: unknown covariate '" + name + "'");
    }
    cols.col(c).array() -= cols.col(c).mean();
  }
  for (int l = 0; l < nl; ++l) {
    web.links[l].x.resize(L + 1);
    web.links[l].x(0) = 1.0;
    for (int c = 0; c < L; ++c) web.links[l].x(c + 1) = cols(l, c);
  }

  // truth: hyperparameters from cfg, node effects from the hierarchy
  ParameterState truth = make_zero_state(cfg.spec, web);
  if (cfg.beta.size() != L + 1)
    throw ValidationError("synth: beta length must be covariates+1");
  truth.beta = cfg.beta;
  truth.lambda = cfg.lambda;
  truth.phi2 = cfg.phi2;
  truth.sigma_s2 = cfg.sigma_s2;
  truth.sigma2 = cfg.sigma2;
  truth.z = cfg.z;
  truth.sigma_u2 = cfg.sigma_u2;
  truth.sigma_v2 = cfg.sigma_v2;
  for (int i : web.nodes.basal)
    truth.s(i) = rng.normal(0.0, std::sqrt(truth.sigma_s2));
  for (int i : web.nodes.middle) {
    truth.s(i) = rng.normal(0.0, std::sqrt(truth.sigma_s2));
    truth.r(i) = rng.normal(truth.lambda * truth.s(i), std::sqrt(truth.phi2));
  }
  for (int i : web.nodes.top)
    truth.r(i) = rng.normal(0.0, std::sqrt(truth.sigma_r2()));
  if (cfg.spec.interaction) {
    for (int i = 0; i < cfg.n; ++i) {
      if (web.nodes.is_sender(i))
        for (int q = 0; q < 2; ++q)
          truth.u(i, q) = rng.normal(0.0, std::sqrt(truth.sigma_u2(q)));
      if (web.nodes.is_receiver(i))
        for (int q = 0; q < 2; ++q)
          truth.v(i, q) = rng.normal(0.0, std::sqrt(truth.sigma_v2(q)));
    }
  }
  apply_pinned_effects(truth, cfg.spec, web);

  // responses: bivariate normal on mutual pairs, univariate on singles
  double rho = truth.rho();
  double sd = std::sqrt(truth.sigma2);
  std::vector<char> in_pair(nl, 0);
  for (auto [la, lb] : web.pairs) {
    in_pair[la] = in_pair[lb] = 1;
    double e1 = rng.normal() * sd;
    double e2 = rho * e1 + std::sqrt(1.0 - rho * rho) * sd * rng.normal();
    web.links[la].y = linear_predictor(truth, cfg.spec, web, la) + e1;
    web.links[lb].y = linear_predictor(truth, cfg.spec, web, lb) + e2;
  }
  for (int l = 0; l < nl; ++l)
    if (!in_pair[l])
      web.links[l].y =
          linear_predictor(truth, cfg.spec, web, l) + rng.normal() * sd;
  return {std::move(web), std::move(truth)};
}

// ---------------------------------------------------------------------------
// Recovery study

struct RecoveryReport {
  struct PerParam {
    std::string name;
    int covered = 0;   // 90% interval covers truth
    double bias = 0.0; // mean over replicates of (post mean - truth)
  };
  std::vector<PerParam> params;
  int n_replicates = 0;
  int n_converged = 0;
  int n_excluded = 0;

  const PerParam& operator[](const std::string& name) const {
    for (const auto& p : params)
      if (p.name == name) return p;
    throw ValidationError("no parameter '" + name + "' in recovery report");
  }
};

// Scalar truth value for a named parameter.
inline double truth_value(const std::string& name, const ParameterState& st,
                          const ModelSpec& spec, const ReducedWeb& web) {
  Eigen::VectorXd flat = flatten_state(st, spec, web);
  auto names = parameter_names(spec, web);
  for (size_t i = 0; i < names.size(); ++i)
    if (names[i] == name) return flat(static_cast<int>(i));
  throw ValidationError("unknown parameter '" + name + "'");
}

inline RecoveryReport recovery_study(const SynthConfig& base,
                                     const SamplerConfig& scfg,
                                     int n_replicates,
                                     const std::vector<std::string>& track) {
  if (n_replicates < 10)
    throw ValidationError("recovery study needs at least 10 replicates");
  RecoveryReport rep;
  rep.n_replicates = n_replicates;
  for (const auto& name : track) rep.params.push_back({name, 0, 0.0});

  for (int r = 0; r < n_replicates; ++r) {
    SynthConfig cfg = base;
    cfg.seed = base.seed + static_cast<std::uint64_t>(r) * 1000003ULL;
    auto [web, truth] = generate_web(cfg);
    SamplerConfig sc = scfg;
    sc.seed = scfg.seed + static_cast<std::uint64_t>(r) * 7919ULL;
    auto chains = run_chains(base.spec, web, sc);
    bool failed = false;
    for (const auto& c : chains) failed = failed || c.error_flag;
    if (failed) {
      ++rep.n_excluded;
      continue;
    }
    ++rep.n_converged;
    // pool chains for summaries
    auto pnames = parameter_names(base.spec, web);
    size_t total = 0;
    for (const auto& c : chains) total += c.draws.size();
    Eigen::MatrixXd pooled(static_cast<int>(total),
                           static_cast<int>(pnames.size()));
    int row = 0;
    for (const auto& c : chains)
      for (const auto& st : c.draws)
        pooled.row(row++) = flatten_state(st, base.spec, web).transpose();
    for (auto& p : rep.params) {
      int col = -1;
      for (size_t i = 0; i < pnames.size(); ++i)
        if (pnames[i] == p.name) col = static_cast<int>(i);
      if (col < 0) throw ValidationError("unknown parameter " + p.name);
      ParamSummary s =
          summarize_draws(p.name, pooled.col(col), default_credible_grid());
      double tv = truth_value(p.name, truth, base.spec, web);
      const Interval& iv90 = s.at_level(0.90);
      if (iv90.lo <= tv && tv <= iv90.hi) ++p.covered;
      p.bias += s.mean - tv;
    }
  }
  for (auto& p : rep.params)
    if (rep.n_converged > 0) p.bias /= rep.n_converged;
  return rep;
}

}  // namespace foodweb
