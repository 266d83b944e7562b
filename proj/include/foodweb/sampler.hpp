#pragma once

// Metropolis-within-Gibbs engine. Every parameter that enters the linear
// predictor linearly is drawn from its exact Gaussian full conditional via
// a shared quadratic-form accumulator that handles the Omega-correlated
// mutual pairs; precisions are conjugate Gamma draws; z gets an adapted
// random-walk Metropolis step.
//
// Top predators have no modelled sender links, yet their receiver effect
// carries the marginal N(0, sigma_r2) prior. The sweep augments each top
// node with a latent sender coordinate (no data term) so that every
// s/r-related conditional stays conjugate; the latent is internal to the
// sampler and the stored s for top nodes remains the pinned constant.

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "foodweb/modelcore.hpp"
#include "foodweb/rng.hpp"

namespace foodweb {

struct SamplerConfig {
  int n_iter = 10000;
  int burn_in = 5000;
  int thin = 1;
  int n_chains = 2;
  std::uint64_t seed = 1;
  double z_proposal_sd = 0.5;
  double target_accept = 0.44;
  enum class Init { prior_draw, least_squares, zeros };
  Init init = Init::zeros;
  bool random_scan = false;

  void validate() const {
    if (n_iter <= 0 || burn_in < 0 || thin < 1 || n_chains < 1)
      throw ValidationError("sampler config: counts must be positive");
    if (burn_in >= n_iter)
      throw ValidationError("sampler config: burn_in must be < n_iter");
    if (!(target_accept > 0.0 && target_accept < 1.0))
      throw ValidationError("sampler config: target_accept must be in (0,1)");
  }
};

struct PosteriorChain {
  std::vector<ParameterState> draws;
  double accept_rate_z = 0.0;
  std::uint64_t seed = 0;
  int chain_index = 0;
  ModelSpec spec;
  bool error_flag = false;
  std::string error_msg;
};

class GibbsSampler {
 public:
  GibbsSampler(const ModelSpec& spec, const ReducedWeb& web, Rng& rng)
      : spec_(spec),
        web_(web),
        rng_(rng),
        aux_s_(Eigen::VectorXd::Zero(web.n)),
        x5_(spec.random_slopes ? web.covariate_index("pred_harvest") + 1 : -1),
        z_step_(0.5) {
    spec_.validate();
  }

  // ----- initialization ------------------------------------------------

  ParameterState init_state(SamplerConfig::Init strategy) {
    ParameterState st = make_zero_state(spec_, web_);
    switch (strategy) {
      case SamplerConfig::Init::zeros:
        break;
      case SamplerConfig::Init::least_squares:
        init_least_squares(st);
        break;
      case SamplerConfig::Init::prior_draw:
        init_prior_draw(st);
        break;
    }
    apply_pinned_effects(st, spec_, web_);
    return st;
  }

  // ----- one full systematic sweep ------------------------------------

  void sweep(ParameterState& st, bool adapt_z) {
    int order[8] = {0, 1, 2, 3, 4, 5, 6, 7};
    if (random_scan_)
      for (int i = 7; i > 0; --i)
        std::swap(order[i], order[static_cast<int>(rng_.below(i + 1))]);
    for (int step : order) {
      switch (step) {
        case 0: update_beta(st); break;
        case 1: update_sr(st); break;
        case 2: update_recenter(st); break;
        case 3: if (spec_.interaction) update_uv(st); break;
        case 4: update_lambda(st); break;
        case 5: update_variances(st); break;
        case 6: update_z(st, adapt_z); break;
        case 7: if (spec_.random_slopes) update_slopes(st); break;
      }
    }
  }

  void set_random_scan(bool on) { random_scan_ = on; }

  // ----- individual updates (public for oracle tests) ------------------

  // beta from its exact multivariate-normal full conditional, whitening
  // mutual pairs with Omega^{-1}. With random slopes the pred_harvest
  // column is owned by the slope layer and skipped here.
  void update_beta(ParameterState& st) {
    int p = static_cast<int>(st.beta.size());
    std::vector<int> cols;
    for (int c = 0; c < p; ++c)
      if (c != x5_) cols.push_back(c);
    int d = static_cast<int>(cols.size());
    if (d == 0) return;
    auto coeff = [&](int link, Eigen::VectorXd& c) {
      for (int k = 0; k < d; ++k) c(k) = web_.links[link].x(cols[k]);
    };
    Eigen::VectorXd cur(d);
    for (int k = 0; k < d; ++k) cur(k) = st.beta(cols[k]);
    Eigen::MatrixXd prior_prec =
        spec_.a * Eigen::MatrixXd::Identity(d, d);
    Eigen::VectorXd out = draw_block(st, all_links_, coeff, cur, prior_prec,
                                     Eigen::VectorXd::Zero(d), "beta");
    for (int k = 0; k < d; ++k) st.beta(cols[k]) = out(k);
  }

  // Blocked per node: (s_i, r_i) for middle nodes; s_i alone for basal;
  // (latent s, r_i) for top nodes.
  void update_sr(ParameterState& st) {
    ensure_all_links();
    Eigen::Matrix2d q = sr_prior_precision(st);
    for (int i : web_.nodes.basal) {
      auto coeff = [&](int, Eigen::VectorXd& c) { c(0) = 1.0; };
      Eigen::VectorXd cur(1);
      cur(0) = st.s(i);
      Eigen::MatrixXd pp(1, 1);
      pp(0, 0) = 1.0 / st.sigma_s2;
      st.s(i) = draw_block(st, web_.links_of_sender[i], coeff, cur, pp,
                           Eigen::VectorXd::Zero(1), "s")(0);
    }
    for (int i : web_.nodes.middle) {
      // c = (d eta / d s_i, d eta / d r_i) per link
      auto coeff = [&](int link, Eigen::VectorXd& c) {
        c(0) = web_.links[link].prey == i ? 1.0 : 0.0;
        c(1) = web_.links[link].pred == i ? 1.0 : 0.0;
      };
      std::vector<int> affected = web_.links_of_sender[i];
      affected.insert(affected.end(), web_.links_of_receiver[i].begin(),
                      web_.links_of_receiver[i].end());
      Eigen::VectorXd cur(2);
      cur << st.s(i), st.r(i);
      Eigen::VectorXd out = draw_block(st, affected, coeff, cur, q,
                                       Eigen::VectorXd::Zero(2), "sr");
      st.s(i) = out(0);
      st.r(i) = out(1);
    }
    for (int i : web_.nodes.top) {
      auto coeff = [&](int, Eigen::VectorXd& c) {
        c(0) = 0.0;  // latent sender coordinate, no data term
        c(1) = 1.0;
      };
      Eigen::VectorXd cur(2);
      cur << aux_s_(i), st.r(i);
      Eigen::VectorXd out = draw_block(st, web_.links_of_receiver[i], coeff,
                                       cur, q, Eigen::VectorXd::Zero(2), "sr");
      aux_s_(i) = out(0);
      st.r(i) = out(1);
    }
  }

  // u_i then v_j, each a 2-D Gaussian full conditional (model linear in
  // each holding the other fixed).
  void update_uv(ParameterState& st) {
    for (int i = 0; i < web_.n; ++i) {
      if (!web_.nodes.is_sender(i)) continue;
      auto coeff = [&](int link, Eigen::VectorXd& c) {
        c = st.v.row(web_.links[link].pred).transpose();
      };
      Eigen::Matrix2d pp = Eigen::Vector2d(1.0 / st.sigma_u2(0),
                                           1.0 / st.sigma_u2(1))
                               .asDiagonal();
      Eigen::VectorXd cur = st.u.row(i).transpose();
      st.u.row(i) = draw_block(st, web_.links_of_sender[i], coeff, cur, pp,
                               Eigen::VectorXd::Zero(2), "u")
                        .transpose();
    }
    for (int j = 0; j < web_.n; ++j) {
      if (!web_.nodes.is_receiver(j)) continue;
      auto coeff = [&](int link, Eigen::VectorXd& c) {
        c = st.u.row(web_.links[link].prey).transpose();
      };
      Eigen::Matrix2d pp = Eigen::Vector2d(1.0 / st.sigma_v2(0),
                                           1.0 / st.sigma_v2(1))
                               .asDiagonal();
      Eigen::VectorXd cur = st.v.row(j).transpose();
      st.v.row(j) = draw_block(st, web_.links_of_receiver[j], coeff, cur, pp,
                               Eigen::VectorXd::Zero(2), "v")
                        .transpose();
    }
  }

  // lambda is the regression coefficient of r on s across nodes that carry
  // both effects; exact scalar Gaussian conditional.
  void update_lambda(ParameterState& st) {
    double prec = spec_.a;
    double lin = 0.0;
    for (int i : web_.nodes.middle) {
      prec += st.s(i) * st.s(i) / st.phi2;
      lin += st.s(i) * st.r(i) / st.phi2;
    }
    for (int i : web_.nodes.top) {
      prec += aux_s_(i) * aux_s_(i) / st.phi2;
      lin += aux_s_(i) * st.r(i) / st.phi2;
    }
    st.lambda = rng_.normal(lin / prec, std::sqrt(1.0 / prec));
    apply_pinned_effects(st, spec_, web_);
  }

  // Conjugate Gamma draws for each precision. sigma2 scales Omega as a
  // whole, so its full conditional stays Gamma with the R^{-1}-weighted
  // quadratic form over mutual pairs; the diagonal-Omega case is the plain
  // sum of squares.
  void update_variances(ParameterState& st) {
    const double a = spec_.a;
    // sigma_s2: free senders plus the latent coordinates of top nodes.
    {
      double ss = 0.0;
      int cnt = 0;
      for (int i : web_.nodes.basal) ss += st.s(i) * st.s(i), ++cnt;
      for (int i : web_.nodes.middle) ss += st.s(i) * st.s(i), ++cnt;
      for (int i : web_.nodes.top) ss += aux_s_(i) * aux_s_(i), ++cnt;
      st.sigma_s2 = 1.0 / rng_.gamma(a + 0.5 * cnt, a + 0.5 * ss);
    }
    // phi2: residuals of r about lambda * s.
    {
      double ss = 0.0;
      int cnt = 0;
      for (int i : web_.nodes.middle) {
        double e = st.r(i) - st.lambda * st.s(i);
        ss += e * e;
        ++cnt;
      }
      for (int i : web_.nodes.top) {
        double e = st.r(i) - st.lambda * aux_s_(i);
        ss += e * e;
        ++cnt;
      }
      st.phi2 = 1.0 / rng_.gamma(a + 0.5 * cnt, a + 0.5 * ss);
    }
    if (spec_.interaction) {
      for (int q = 0; q < 2; ++q) {
        double ssu = 0.0, ssv = 0.0;
        int cu = 0, cv = 0;
        for (int i = 0; i < web_.n; ++i) {
          if (web_.nodes.is_sender(i)) ssu += st.u(i, q) * st.u(i, q), ++cu;
          if (web_.nodes.is_receiver(i)) ssv += st.v(i, q) * st.v(i, q), ++cv;
        }
        st.sigma_u2(q) = 1.0 / rng_.gamma(a + 0.5 * cu, a + 0.5 * ssu);
        st.sigma_v2(q) = 1.0 / rng_.gamma(a + 0.5 * cv, a + 0.5 * ssv);
      }
    }
    update_sigma2(st);
    apply_pinned_effects(st, spec_, web_);
  }

  void update_sigma2(ParameterState& st) {
    double rho = st.rho();
    double omr2 = 1.0 - rho * rho;
    double q = 0.0;
    std::vector<char> in_pair(web_.n_links(), 0);
    for (auto [la, lb] : web_.pairs) {
      in_pair[la] = in_pair[lb] = 1;
      double e1 = residual(st, la);
      double e2 = residual(st, lb);
      q += (e1 * e1 - 2.0 * rho * e1 * e2 + e2 * e2) / omr2;
    }
    for (int l = 0; l < web_.n_links(); ++l)
      if (!in_pair[l]) {
        double e = residual(st, l);
        q += e * e;
      }
    int m = web_.n_links();
    st.sigma2 = 1.0 / rng_.gamma(spec_.a + 0.5 * m, spec_.a + 0.5 * q);
  }

  // Random-walk Metropolis on z; the step size adapts toward
  // target_accept during burn-in and is frozen afterwards.
  void update_z(ParameterState& st, bool adapt) {
    if (web_.pairs.empty()) {
      // no mutual pairs: z carries no likelihood term, conditional = prior
      st.z = rng_.normal(0.0, spec_.z_prior_sd);
      ++z_attempts_;
      ++z_accepts_;
      return;
    }
    double cur = st.z;
    double prop = rng_.normal(cur, z_step_);
    double la = z_target(st, prop) - z_target(st, cur);
    bool accept = std::log(rng_.uniform()) < la;
    if (accept) st.z = prop;
    ++z_attempts_;
    z_accepts_ += accept ? 1 : 0;
    if (adapt && z_attempts_ % kAdaptBatch == 0) {
      double rate =
          static_cast<double>(z_accepts_ - z_accepts_prev_) / kAdaptBatch;
      z_accepts_prev_ = z_accepts_;
      double gain = std::min(
          0.25, std::pow(static_cast<double>(z_attempts_ / kAdaptBatch), -0.5));
      z_step_ *= std::exp(gain * (rate - cfg_target_accept_));
      z_step_ = std::min(std::max(z_step_, 1e-3), 10.0);
    }
  }

  // Per-receiver slope on pred_harvest, then its hyper mean and variance.
  void update_slopes(ParameterState& st) {
    double beta5 = st.beta(x5_);
    for (int j = 0; j < web_.n; ++j) {
      if (!web_.nodes.is_receiver(j)) continue;
      auto coeff = [&](int link, Eigen::VectorXd& c) {
        c(0) = web_.links[link].x(x5_);
      };
      Eigen::VectorXd cur(1);
      cur(0) = st.slope_beta(j);
      Eigen::MatrixXd pp(1, 1);
      pp(0, 0) = 1.0 / st.slope_var;
      Eigen::VectorXd mean(1);
      mean(0) = beta5;
      st.slope_beta(j) = draw_block(st, web_.links_of_receiver[j], coeff, cur,
                                    pp, mean, "slope")(0);
    }
    // beta5 | slopes: normal; slope precision: Gamma.
    double sum = 0.0;
    int cnt = 0;
    for (int j = 0; j < web_.n; ++j)
      if (web_.nodes.is_receiver(j)) {
        sum += st.slope_beta(j);
        ++cnt;
      }
    double prec = spec_.a + cnt / st.slope_var;
    st.beta(x5_) = rng_.normal(sum / st.slope_var / prec,
                               std::sqrt(1.0 / prec));
    beta5 = st.beta(x5_);
    double ss = 0.0;
    for (int j = 0; j < web_.n; ++j)
      if (web_.nodes.is_receiver(j)) {
        double e = st.slope_beta(j) - beta5;
        ss += e * e;
      }
    st.slope_var = 1.0 / rng_.gamma(spec_.a + 0.5 * cnt, spec_.a + 0.5 * ss);
  }

  // Design columns that are constant within sender (or receiver) groups
  // form exact likelihood ridges with the additive effects: eta is
  // invariant under beta_c -= delta, effect += delta * w. Resampling the
  // split along each ridge from its exact (prior-driven) conditional
  // breaks the slow random walk the single-site scan would otherwise do.
  void update_recenter(ParameterState& st) {
    if (!moves_built_) build_recenter_moves();
    const double a = spec_.a;
    for (const auto& mv : moves_) {
      double prec = a, lin = a * st.beta(mv.col);
      if (mv.receiver_side) {
        for (int j = 0; j < web_.n; ++j) {
          if (!web_.nodes.is_receiver(j)) continue;
          double w = mv.w(j);
          double m = st.lambda *
                     (web_.nodes.is_sender(j) ? st.s(j) : aux_s_(j));
          prec += w * w / st.phi2;
          lin -= w * (st.r(j) - m) / st.phi2;
        }
      } else {
        for (int i = 0; i < web_.n; ++i) {
          if (!web_.nodes.is_sender(i)) continue;
          double w = mv.w(i);
          prec += w * w / st.sigma_s2;
          lin -= w * st.s(i) / st.sigma_s2;
          if (web_.nodes.is_receiver(i)) {
            prec += st.lambda * st.lambda * w * w / st.phi2;
            lin += st.lambda * w * (st.r(i) - st.lambda * st.s(i)) / st.phi2;
          }
        }
      }
      double delta = rng_.normal(lin / prec, std::sqrt(1.0 / prec));
      st.beta(mv.col) -= delta;
      if (mv.receiver_side) {
        for (int j = 0; j < web_.n; ++j)
          if (web_.nodes.is_receiver(j)) st.r(j) += delta * mv.w(j);
      } else {
        for (int i = 0; i < web_.n; ++i)
          if (web_.nodes.is_sender(i)) st.s(i) += delta * mv.w(i);
      }
    }
  }

  void set_z_proposal(double sd, double target) {
    z_step_ = sd;
    cfg_target_accept_ = target;
  }

  double z_accept_rate() const {
    return z_attempts_ > 0
               ? static_cast<double>(z_accepts_) / z_attempts_
               : 0.0;
  }
  double z_step() const { return z_step_; }
  double aux_sender(int i) const { return aux_s_(i); }
  void set_aux_sender(int i, double v) { aux_s_(i) = v; }

  // Gaussian full-conditional moments of a linear block; exposed so oracle
  // tests can compare mean/precision against quadrature directly.
  template <class CoeffFn>
  void conditional_moments(const ParameterState& st,
                           const std::vector<int>& affected,
                           const CoeffFn& coeff_fn,
                           const Eigen::VectorXd& current,
                           const Eigen::MatrixXd& prior_prec,
                           const Eigen::VectorXd& prior_mean,
                           Eigen::MatrixXd& post_prec,
                           Eigen::VectorXd& post_mean) {
    ensure_all_links();
    int d = static_cast<int>(current.size());
    Eigen::MatrixXd A = Eigen::MatrixXd::Zero(d, d);
    Eigen::VectorXd b = Eigen::VectorXd::Zero(d);
    accumulate(st, affected, coeff_fn, current, A, b);
    post_prec = prior_prec + A;
    post_mean = post_prec.llt().solve(prior_prec * prior_mean + b);
  }

 private:
  static constexpr int kAdaptBatch = 50;

  struct RecenterMove {
    int col;
    bool receiver_side;
    Eigen::VectorXd w;  // per-node column value
  };

  void build_recenter_moves() {
    moves_built_ = true;
    // intercept rides against both effect sets
    RecenterMove ic{0, true, Eigen::VectorXd::Ones(web_.n)};
    moves_.push_back(ic);
    ic.receiver_side = false;
    moves_.push_back(ic);
    for (int c = 1; c <= web_.L(); ++c) {
      if (c == x5_) continue;  // owned by the slope layer
      bool recv_const = true, send_const = true;
      Eigen::VectorXd wr = Eigen::VectorXd::Zero(web_.n);
      Eigen::VectorXd ws = Eigen::VectorXd::Zero(web_.n);
      std::vector<char> seen_r(web_.n, 0), seen_s(web_.n, 0);
      for (const auto& lk : web_.links) {
        double v = lk.x(c);
        if (!seen_r[lk.pred]) {
          seen_r[lk.pred] = 1;
          wr(lk.pred) = v;
        } else if (std::abs(wr(lk.pred) - v) > 1e-9) {
          recv_const = false;
        }
        if (!seen_s[lk.prey]) {
          seen_s[lk.prey] = 1;
          ws(lk.prey) = v;
        } else if (std::abs(ws(lk.prey) - v) > 1e-9) {
          send_const = false;
        }
      }
      if (recv_const)
        moves_.push_back({c, true, wr});
      else if (send_const)
        moves_.push_back({c, false, ws});
    }
  }

  void ensure_all_links() {
    if (static_cast<int>(all_links_.size()) != web_.n_links()) {
      all_links_.resize(web_.n_links());
      for (int l = 0; l < web_.n_links(); ++l) all_links_[l] = l;
    }
  }

  double residual(const ParameterState& st, int link) const {
    return web_.links[link].y - linear_predictor(st, spec_, web_, link);
  }

  Eigen::Matrix2d sr_prior_precision(const ParameterState& st) const {
    // Joint precision of (s, r) implied by s~N(0,sigma_s2), r|s~N(lambda s, phi2).
    Eigen::Matrix2d q;
    q(0, 0) = 1.0 / st.sigma_s2 + st.lambda * st.lambda / st.phi2;
    q(0, 1) = q(1, 0) = -st.lambda / st.phi2;
    q(1, 1) = 1.0 / st.phi2;
    return q;
  }

  // Quadratic form of the likelihood in the block: with theta removed from
  // eta, loglik(theta) = -1/2 theta'A theta + b'theta + const.
  template <class CoeffFn>
  void accumulate(const ParameterState& st, const std::vector<int>& affected,
                  const CoeffFn& coeff_fn, const Eigen::VectorXd& current,
                  Eigen::MatrixXd& A, Eigen::VectorXd& b) {
    int d = static_cast<int>(current.size());
    double sigma2 = st.sigma2;
    double rho = st.rho();
    double omr2 = 1.0 - rho * rho;
    if (pair_touched_.size() != web_.pairs.size())
      pair_touched_.assign(web_.pairs.size(), 0);
    std::vector<int> touched_pairs;
    Eigen::VectorXd c(d);
    auto base_resid = [&](int link, const Eigen::VectorXd& cl) {
      return residual(st, link) + cl.dot(current);
    };
    for (int l : affected) {
      int p = web_.links[l].pair;
      if (p >= 0) {
        if (!pair_touched_[p]) {
          pair_touched_[p] = 1;
          touched_pairs.push_back(p);
        }
        continue;
      }
      coeff_fn(l, c);
      double e0 = base_resid(l, c);
      A.noalias() += c * c.transpose() / sigma2;
      b.noalias() += c * (e0 / sigma2);
    }
    for (int p : touched_pairs) {
      pair_touched_[p] = 0;
      auto [la, lb] = web_.pairs[p];
      Eigen::VectorXd ca = Eigen::VectorXd::Zero(d);
      Eigen::VectorXd cb = Eigen::VectorXd::Zero(d);
      if (is_affected(affected, la)) coeff_fn(la, ca);
      if (is_affected(affected, lb)) coeff_fn(lb, cb);
      double ea = base_resid(la, ca);
      double eb = base_resid(lb, cb);
      // W = Omega^{-1}
      double w11 = 1.0 / (sigma2 * omr2);
      double w12 = -rho / (sigma2 * omr2);
      A.noalias() += w11 * (ca * ca.transpose() + cb * cb.transpose()) +
                     w12 * (ca * cb.transpose() + cb * ca.transpose());
      b.noalias() += ca * (w11 * ea + w12 * eb) + cb * (w11 * eb + w12 * ea);
    }
  }

  static bool is_affected(const std::vector<int>& affected, int link) {
    for (int l : affected)
      if (l == link) return true;
    return false;
  }

  template <class CoeffFn>
  Eigen::VectorXd draw_block(ParameterState& st,
                             const std::vector<int>& affected,
                             const CoeffFn& coeff_fn,
                             const Eigen::VectorXd& current,
                             const Eigen::MatrixXd& prior_prec,
                             const Eigen::VectorXd& prior_mean,
                             const char* what) {
    ensure_all_links();
    int d = static_cast<int>(current.size());
    Eigen::MatrixXd A = Eigen::MatrixXd::Zero(d, d);
    Eigen::VectorXd b = Eigen::VectorXd::Zero(d);
    accumulate(st, affected, coeff_fn, current, A, b);
    Eigen::MatrixXd prec = prior_prec + A;
    Eigen::LLT<Eigen::MatrixXd> llt(prec);
    if (llt.info() != Eigen::Success)
      throw NumericalError(std::string("non-positive-definite full "
                                       "conditional precision in update ") +
                           what + dump_state(st));
    Eigen::VectorXd mean = llt.solve(prior_prec * prior_mean + b);
    Eigen::VectorXd zvec(d);
    for (int k = 0; k < d; ++k) zvec(k) = rng_.normal();
    // theta = mean + L^{-T} z
    Eigen::VectorXd out =
        mean + llt.matrixU().solve(zvec);
    if (!out.allFinite())
      throw NumericalError(std::string("non-finite draw in update ") + what +
                           dump_state(st));
    return out;
  }

  double z_target(const ParameterState& st, double z) const {
    double rho = rho_from_z(z);
    double omr2 = 1.0 - rho * rho;
    double t = -z * z / (2.0 * spec_.z_prior_sd * spec_.z_prior_sd);
    for (auto [la, lb] : web_.pairs) {
      double e1 = residual(st, la);
      double e2 = residual(st, lb);
      t += -0.5 * std::log(omr2) -
           (e1 * e1 - 2.0 * rho * e1 * e2 + e2 * e2) / (2.0 * st.sigma2 * omr2);
    }
    return t;
  }

  void init_least_squares(ParameterState& st) {
    int p = web_.L() + 1;
    int m = web_.n_links();
    Eigen::MatrixXd X(m, p);
    Eigen::VectorXd y(m);
    for (int l = 0; l < m; ++l) {
      X.row(l) = web_.links[l].x.transpose();
      y(l) = web_.links[l].y;
    }
    Eigen::MatrixXd xtx = X.transpose() * X;
    Eigen::LLT<Eigen::MatrixXd> llt(xtx);
    Eigen::VectorXd beta;
    if (llt.info() == Eigen::Success) {
      beta = llt.solve(X.transpose() * y);
    }
    if (llt.info() != Eigen::Success || !beta.allFinite() ||
        xtx.ldlt().rcond() < 1e-12) {
      // singular design; fall back to zeros
      return;
    }
    st.beta = beta;
    double rss = (y - X * beta).squaredNorm();
    double dof = std::max(1, m - p);
    double v = std::max(rss / dof, 1e-6);
    st.sigma2 = v;
    st.sigma_s2 = st.phi2 = std::max(v / 2.0, 1e-6);
    if (spec_.random_slopes) {
      st.slope_beta.setConstant(st.beta(x5_));
      st.slope_var = 1.0;
    }
  }

  void init_prior_draw(ParameterState& st) {
    const double a = spec_.a;
    st.sigma2 = 1.0 / rng_.gamma(a, a);
    st.sigma_s2 = 1.0 / rng_.gamma(a, a);
    st.phi2 = 1.0 / rng_.gamma(a, a);
    st.lambda = rng_.normal(0.0, std::sqrt(1.0 / a));
    st.z = rng_.normal(0.0, spec_.z_prior_sd);
    for (int c = 0; c < st.beta.size(); ++c)
      st.beta(c) = rng_.normal(0.0, std::sqrt(1.0 / a));
    for (int i : web_.nodes.basal)
      st.s(i) = rng_.normal(0.0, std::sqrt(st.sigma_s2));
    for (int i : web_.nodes.middle) {
      st.s(i) = rng_.normal(0.0, std::sqrt(st.sigma_s2));
      st.r(i) = rng_.normal(st.lambda * st.s(i), std::sqrt(st.phi2));
    }
    for (int i : web_.nodes.top) {
      aux_s_(i) = rng_.normal(0.0, std::sqrt(st.sigma_s2));
      st.r(i) = rng_.normal(st.lambda * aux_s_(i), std::sqrt(st.phi2));
    }
    if (spec_.interaction) {
      for (int q = 0; q < 2; ++q) {
        st.sigma_u2(q) = 1.0 / rng_.gamma(a, a);
        st.sigma_v2(q) = 1.0 / rng_.gamma(a, a);
      }
      for (int i = 0; i < web_.n; ++i) {
        if (web_.nodes.is_sender(i))
          for (int q = 0; q < 2; ++q)
            st.u(i, q) = rng_.normal(0.0, std::sqrt(st.sigma_u2(q)));
        if (web_.nodes.is_receiver(i))
          for (int q = 0; q < 2; ++q)
            st.v(i, q) = rng_.normal(0.0, std::sqrt(st.sigma_v2(q)));
      }
    }
    if (spec_.random_slopes) {
      st.slope_var = 1.0 / rng_.gamma(a, a);
      for (int j = 0; j < web_.n; ++j)
        if (web_.nodes.is_receiver(j))
          st.slope_beta(j) =
              rng_.normal(st.beta(x5_), std::sqrt(st.slope_var));
    }
  }

  std::string dump_state(const ParameterState& st) const {
    std::ostringstream os;
    os << " [sigma2=" << st.sigma2 << " sigma_s2=" << st.sigma_s2
       << " phi2=" << st.phi2 << " lambda=" << st.lambda << " z=" << st.z
       << "]";
    return os.str();
  }

  ModelSpec spec_;
  const ReducedWeb& web_;
  Rng& rng_;
  Eigen::VectorXd aux_s_;
  int x5_ = -1;
  std::vector<int> all_links_;
  std::vector<char> pair_touched_;
  bool random_scan_ = false;
  std::vector<RecenterMove> moves_;
  bool moves_built_ = false;
  double z_step_ = 0.5;
  double cfg_target_accept_ = 0.44;
  long z_attempts_ = 0;
  long z_accepts_ = 0;
  long z_accepts_prev_ = 0;
};

inline PosteriorChain run_chain(const ModelSpec& spec, const ReducedWeb& web,
                                const SamplerConfig& cfg, int chain_index = 0) {
  cfg.validate();
  spec.validate();
  Rng rng(cfg.seed, static_cast<std::uint64_t>(chain_index));
  GibbsSampler gs(spec, web, rng);
  gs.set_z_proposal(cfg.z_proposal_sd, cfg.target_accept);
  gs.set_random_scan(cfg.random_scan);
  PosteriorChain chain;
  chain.seed = cfg.seed;
  chain.chain_index = chain_index;
  chain.spec = spec;
  chain.draws.reserve((cfg.n_iter - cfg.burn_in) / cfg.thin + 1);
  ParameterState st = gs.init_state(cfg.init);
  try {
    for (int it = 1; it <= cfg.n_iter; ++it) {
      gs.sweep(st, it <= cfg.burn_in);
      if (it > cfg.burn_in && (it - cfg.burn_in - 1) % cfg.thin == 0)
        chain.draws.push_back(st);
    }
  } catch (const NumericalError& e) {
    chain.error_flag = true;
    chain.error_msg = e.what();
  }
  // floor((n_iter - burn_in)/thin) stored draws
  size_t want = static_cast<size_t>((cfg.n_iter - cfg.burn_in) / cfg.thin);
  if (!chain.error_flag && chain.draws.size() > want)
    chain.draws.resize(want);
  chain.accept_rate_z = gs.z_accept_rate();
  return chain;
}

inline std::vector<PosteriorChain> run_chains(const ModelSpec& spec,
                                              const ReducedWeb& web,
                                              const SamplerConfig& cfg) {
  std::vector<PosteriorChain> chains(cfg.n_chains);
  std::vector<std::thread> workers;
  workers.reserve(cfg.n_chains);
  for (int c = 0; c < cfg.n_chains; ++c)
    workers.emplace_back(
        [&, c] { chains[c] = run_chain(spec, web, cfg, c); });
  for (auto& w : workers) w.join();
  return chains;
}

// ---------------------------------------------------------------------------
// Scalar trace extraction and chain CSV serialization

inline std::vector<std::string> parameter_names(const ModelSpec& spec,
                                                const ReducedWeb& web) {
  std::vector<std::string> names;
  for (int c = 0; c <= web.L(); ++c)
    names.push_back("beta" + std::to_string(c));
  for (int i = 0; i < web.n; ++i) names.push_back("s." + web.names[i]);
  for (int i = 0; i < web.n; ++i) names.push_back("r." + web.names[i]);
  if (spec.interaction) {
    for (int i = 0; i < web.n; ++i)
      if (web.nodes.is_sender(i)) {
        names.push_back("u." + web.names[i] + ".1");
        names.push_back("u." + web.names[i] + ".2");
      }
    for (int i = 0; i < web.n; ++i)
      if (web.nodes.is_receiver(i)) {
        names.push_back("v." + web.names[i] + ".1");
        names.push_back("v." + web.names[i] + ".2");
      }
  }
  if (spec.random_slopes) {
    for (int i = 0; i < web.n; ++i)
      if (web.nodes.is_receiver(i))
        names.push_back("beta5." + web.names[i]);
    names.push_back("sigma_beta5_2");
  }
  names.insert(names.end(),
               {"lambda", "phi2", "sigma2", "sigma_s2"});
  if (spec.interaction)
    names.insert(names.end(),
                 {"sigma_u1_2", "sigma_u2_2", "sigma_v1_2", "sigma_v2_2"});
  names.insert(names.end(), {"z", "rho", "rho_sr", "sigma_r2"});
  return names;
}

inline Eigen::VectorXd flatten_state(const ParameterState& st,
                                     const ModelSpec& spec,
                                     const ReducedWeb& web) {
  std::vector<double> vals;
  for (int c = 0; c < st.beta.size(); ++c) vals.push_back(st.beta(c));
  for (int i = 0; i < web.n; ++i) vals.push_back(st.s(i));
  for (int i = 0; i < web.n; ++i) vals.push_back(st.r(i));
  if (spec.interaction) {
    for (int i = 0; i < web.n; ++i)
      if (web.nodes.is_sender(i)) {
        vals.push_back(st.u(i, 0));
        vals.push_back(st.u(i, 1));
      }
    for (int i = 0; i < web.n; ++i)
      if (web.nodes.is_receiver(i)) {
        vals.push_back(st.v(i, 0));
        vals.push_back(st.v(i, 1));
      }
  }
  if (spec.random_slopes) {
    for (int i = 0; i < web.n; ++i)
      if (web.nodes.is_receiver(i)) vals.push_back(st.slope_beta(i));
    vals.push_back(st.slope_var);
  }
  vals.push_back(st.lambda);
  vals.push_back(st.phi2);
  vals.push_back(st.sigma2);
  vals.push_back(st.sigma_s2);
  if (spec.interaction) {
    vals.push_back(st.sigma_u2(0));
    vals.push_back(st.sigma_u2(1));
    vals.push_back(st.sigma_v2(0));
    vals.push_back(st.sigma_v2(1));
  }
  vals.push_back(st.z);
  vals.push_back(st.rho());
  vals.push_back(st.rho_sr());
  vals.push_back(st.sigma_r2());
  return Eigen::Map<Eigen::VectorXd>(vals.data(),
                                     static_cast<int>(vals.size()));
}

// Inverse of flatten_state for the stored (non-derived) entries.
inline ParameterState unflatten_state(const Eigen::VectorXd& row,
                                      const ModelSpec& spec,
                                      const ReducedWeb& web) {
  ParameterState st = make_zero_state(spec, web);
  int p = 0;
  for (int c = 0; c < st.beta.size(); ++c) st.beta(c) = row(p++);
  for (int i = 0; i < web.n; ++i) st.s(i) = row(p++);
  for (int i = 0; i < web.n; ++i) st.r(i) = row(p++);
  if (spec.interaction) {
    for (int i = 0; i < web.n; ++i)
      if (web.nodes.is_sender(i)) {
        st.u(i, 0) = row(p++);
        st.u(i, 1) = row(p++);
      }
    for (int i = 0; i < web.n; ++i)
      if (web.nodes.is_receiver(i)) {
        st.v(i, 0) = row(p++);
        st.v(i, 1) = row(p++);
      }
  }
  if (spec.random_slopes) {
    for (int i = 0; i < web.n; ++i)
      if (web.nodes.is_receiver(i)) st.slope_beta(i) = row(p++);
    st.slope_var = row(p++);
  }
  st.lambda = row(p++);
  st.phi2 = row(p++);
  st.sigma2 = row(p++);
  st.sigma_s2 = row(p++);
  if (spec.interaction) {
    st.sigma_u2(0) = row(p++);
    st.sigma_u2(1) = row(p++);
    st.sigma_v2(0) = row(p++);
    st.sigma_v2(1) = row(p++);
  }
  st.z = row(p++);
  return st;
}

inline void write_chain_csv(const PosteriorChain& chain, const ReducedWeb& web,
                            const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ParseError("cannot write " + path);
  auto names = parameter_names(chain.spec, web);
  for (size_t i = 0; i < names.size(); ++i)
    out << (i ? "," : "") << names[i];
  out << "\n";
  for (const auto& st : chain.draws) {
    Eigen::VectorXd row = flatten_state(st, chain.spec, web);
    for (int i = 0; i < row.size(); ++i)
      out << (i ? "," : "") << csv::format_double(row(i));
    out << "\n";
  }
}

struct ChainTable {
  std::vector<std::string> names;
  Eigen::MatrixXd draws;  // rows = stored iterations
};

inline ChainTable read_chain_csv(const std::string& path) {
  csv::Table t = csv::read_file(path);
  ChainTable ct;
  ct.names = t.header;
  ct.draws.resize(static_cast<int>(t.rows.size()),
                  static_cast<int>(t.header.size()));
  for (size_t r = 0; r < t.rows.size(); ++r) {
    if (t.rows[r].size() != t.header.size())
      throw ParseError(path + ": ragged row " + std::to_string(r + 2));
    for (size_t c = 0; c < t.rows[r].size(); ++c)
      ct.draws(static_cast<int>(r), static_cast<int>(c)) = csv::to_double(
          t.rows[r][c], path + " row " + std::to_string(r + 2));
  }
  return ct;
}

}  // namespace foodweb
