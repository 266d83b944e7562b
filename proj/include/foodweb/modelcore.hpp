#pragma once

// Model definition: parameter state, reparameterized sender/receiver
// covariance, exact log-likelihood and log-prior for a ReducedWeb.
//
// The dyadic residual covariance is Omega = sigma2 * [[1, rho], [rho, 1]]
// on mutual pairs; single links are univariate N(eta, sigma2). The
// sender/receiver covariance is carried in regression form:
//   s_i ~ N(0, sigma_s2),  r_i | s_i ~ N(lambda s_i, phi2),
//   sigma_r2 = phi2 + lambda^2 sigma_s2,  rho_sr = lambda sigma_s / sigma_r.
// rho enters only through z with rho = tanh(z).

#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "foodweb/errors.hpp"
#include "foodweb/webdata.hpp"

namespace foodweb {

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

enum class PinScale { sd, var };

struct ModelSpec {
  ResponseMode mode = ResponseMode::population;
  std::vector<std::string> covariates;  // subset of all_covariate_names()
  bool interaction = false;
  bool random_slopes = false;  // per-receiver slope on pred_harvest
  int k = 2;                   // latent dimension, fixed
  double a = 0.005;            // prior diffuseness hyperparameter
  double z_prior_sd = 0.82;
  PinScale pin_scale = PinScale::sd;

  void validate() const {
    if (k != 2) throw ValidationError("latent dimension k must be 2");
    if (!(a > 0.0 && a < 0.01))
      throw ValidationError("hyperparameter a must lie in (0, 0.01)");
    if (random_slopes) {
      if (interaction)
        throw ValidationError(
            "random_slopes requires interaction=false");
      bool has_x5 = false;
      for (const auto& c : covariates)
        if (c == "pred_harvest") has_x5 = true;
      if (!has_x5)
        throw ValidationError(
            "random_slopes requires pred_harvest among the covariates");
    }
  }
};

// rho = tanh(z), strictly inside (-1, 1) for finite z.
inline double rho_from_z(double z) { return std::tanh(z); }

inline double z_from_rho(double rho) {
  return 0.5 * std::log((1.0 + rho) / (1.0 - rho));
}

struct SrDerived {
  double sigma_r2;
  double rho_sr;
};

inline SrDerived derived_sr_params(double lambda, double phi2,
                                   double sigma_s2) {
  if (!(phi2 > 0.0) || !(sigma_s2 > 0.0))
    throw ValidationError("phi2 and sigma_s2 must be positive");
  double sigma_r2 = phi2 + lambda * lambda * sigma_s2;
  double rho_sr = lambda * std::sqrt(sigma_s2) / std::sqrt(sigma_r2);
  return {sigma_r2, rho_sr};
}

inline double pinned_effect_value(double variance, PinScale scale) {
  return scale == PinScale::sd ? -4.0 * std::sqrt(variance) : -4.0 * variance;
}

struct ParameterState {
  Eigen::VectorXd beta;  // design coefficients, length L+1
  Eigen::VectorXd s;     // length n; entries for top nodes are pinned
  Eigen::VectorXd r;     // length n; entries for basal nodes are pinned
  Eigen::MatrixXd u;     // n x 2 when interaction, else 0 x 0
  Eigen::MatrixXd v;     // n x 2 when interaction, else 0 x 0
  double lambda = 0.0;
  double phi2 = 1.0;
  double sigma2 = 1.0;
  double sigma_s2 = 1.0;
  Eigen::Vector2d sigma_u2{1.0, 1.0};
  Eigen::Vector2d sigma_v2{1.0, 1.0};
  double z = 0.0;
  // Random-slope layer (empty unless spec.random_slopes). The hyper-mean
  // beta5 lives in beta at the pred_harvest position.
  Eigen::VectorXd slope_beta;  // length n; entries for receivers used
  double slope_var = 1.0;      // sigma_beta5^2

  double rho() const { return rho_from_z(z); }
  double sigma_r2() const { return phi2 + lambda * lambda * sigma_s2; }
  double rho_sr() const {
    return lambda * std::sqrt(sigma_s2) / std::sqrt(sigma_r2());
  }

  bool variances_positive() const {
    return sigma2 > 0.0 && sigma_s2 > 0.0 && phi2 > 0.0 &&
           (sigma_u2.array() > 0.0).all() && (sigma_v2.array() > 0.0).all() &&
           slope_var > 0.0;
  }
};

// Refresh the display-only constants: s_i for top predators and r_i for
// basal nodes sit in the far left tail of their distributions.
inline void apply_pinned_effects(ParameterState& st, const ModelSpec& spec,
                                 const ReducedWeb& web) {
  double ps = pinned_effect_value(st.sigma_s2, spec.pin_scale);
  double pr = pinned_effect_value(st.sigma_r2(), spec.pin_scale);
  for (int i : web.nodes.top) st.s(i) = ps;
  for (int i : web.nodes.basal) st.r(i) = pr;
}

inline ParameterState make_zero_state(const ModelSpec& spec,
                                      const ReducedWeb& web) {
  ParameterState st;
  st.beta = Eigen::VectorXd::Zero(web.L() + 1);
  st.s = Eigen::VectorXd::Zero(web.n);
  st.r = Eigen::VectorXd::Zero(web.n);
  if (spec.interaction) {
    st.u = Eigen::MatrixXd::Zero(web.n, 2);
    st.v = Eigen::MatrixXd::Zero(web.n, 2);
  }
  if (spec.random_slopes) st.slope_beta = Eigen::VectorXd::Zero(web.n);
  apply_pinned_effects(st, spec, web);
  return st;
}

inline double linear_predictor(const ParameterState& st, const ModelSpec& spec,
                               const ReducedWeb& web, int link) {
  const Link& lk = web.links[link];
  double eta;
  if (spec.random_slopes) {
    int x5 = web.covariate_index("pred_harvest") + 1;  // design column
    eta = 0.0;
    for (int c = 0; c < lk.x.size(); ++c) {
      double coef = c == x5 ? st.slope_beta(lk.pred) : st.beta(c);
      eta += coef * lk.x(c);
    }
  } else {
    eta = lk.x.dot(st.beta);
  }
  eta += st.s(lk.prey) + st.r(lk.pred);
  if (spec.interaction) eta += st.u.row(lk.prey).dot(st.v.row(lk.pred));
  return eta;
}

namespace detail {

inline double log_normal_pdf(double x, double mean, double var) {
  double d = x - mean;
  return -0.5 * std::log(6.283185307179586477 * var) - d * d / (2.0 * var);
}

// Gamma(shape, rate) log density, mean shape/rate.
inline double log_gamma_pdf(double x, double shape, double rate) {
  if (!(x > 0.0)) return kNegInf;
  return shape * std::log(rate) - std::lgamma(shape) +
         (shape - 1.0) * std::log(x) - rate * x;
}

// Bivariate normal log density with covariance sigma2 * [[1,rho],[rho,1]].
inline double log_bvn_pair(double e1, double e2, double sigma2, double rho) {
  double omr2 = 1.0 - rho * rho;
  return -std::log(6.283185307179586477 * sigma2) - 0.5 * std::log(omr2) -
         (e1 * e1 - 2.0 * rho * e1 * e2 + e2 * e2) / (2.0 * sigma2 * omr2);
}

}  // namespace detail

// Sum over mutual pairs of the bivariate normal log density plus the
// univariate terms for single links. Returns -inf (never throws) when the
// residual covariance is invalid, so Metropolis proposals reject cleanly.
inline double log_likelihood(const ParameterState& st, const ModelSpec& spec,
                             const ReducedWeb& web) {
  double rho = st.rho();
  if (!(st.sigma2 > 0.0) || !(std::abs(rho) < 1.0)) return kNegInf;
  double ll = 0.0;
  std::vector<char> in_pair(web.n_links(), 0);
  for (auto [la, lb] : web.pairs) {
    in_pair[la] = in_pair[lb] = 1;
    double e1 = web.links[la].y - linear_predictor(st, spec, web, la);
    double e2 = web.links[lb].y - linear_predictor(st, spec, web, lb);
    ll += detail::log_bvn_pair(e1, e2, st.sigma2, rho);
  }
  for (int l = 0; l < web.n_links(); ++l) {
    if (in_pair[l]) continue;
    double e = web.links[l].y - linear_predictor(st, spec, web, l);
    ll += detail::log_normal_pdf(e, 0.0, st.sigma2);
  }
  return std::isfinite(ll) ? ll : kNegInf;
}

// Joint log prior density. Precisions carry the Gamma(a,a) prior and are
// the integration variables for the variance-type parameters.
inline double log_prior(const ParameterState& st, const ModelSpec& spec,
                        const ReducedWeb& web) {
  if (!st.variances_positive()) return kNegInf;
  using detail::log_gamma_pdf;
  using detail::log_normal_pdf;
  const double a = spec.a;
  double lp = 0.0;

  int x5 = spec.random_slopes ? web.covariate_index("pred_harvest") + 1 : -1;
  for (int c = 0; c < st.beta.size(); ++c)
    lp += log_normal_pdf(st.beta(c), 0.0, 1.0 / a);
  lp += log_normal_pdf(st.lambda, 0.0, 1.0 / a);
  lp += log_normal_pdf(st.z, 0.0, spec.z_prior_sd * spec.z_prior_sd);

  lp += log_gamma_pdf(1.0 / st.sigma2, a, a);
  lp += log_gamma_pdf(1.0 / st.sigma_s2, a, a);
  lp += log_gamma_pdf(1.0 / st.phi2, a, a);
  if (spec.interaction) {
    for (int q = 0; q < 2; ++q) {
      lp += log_gamma_pdf(1.0 / st.sigma_u2(q), a, a);
      lp += log_gamma_pdf(1.0 / st.sigma_v2(q), a, a);
    }
  }

  // Free sender effects; receiver effects conditionally on s for middle
  // nodes, marginally N(0, sigma_r2) for top predators.
  for (int i : web.nodes.basal) lp += log_normal_pdf(st.s(i), 0.0, st.sigma_s2);
  for (int i : web.nodes.middle) {
    lp += log_normal_pdf(st.s(i), 0.0, st.sigma_s2);
    lp += log_normal_pdf(st.r(i), st.lambda * st.s(i), st.phi2);
  }
  double sigma_r2 = st.sigma_r2();
  for (int i : web.nodes.top) lp += log_normal_pdf(st.r(i), 0.0, sigma_r2);

  if (spec.interaction) {
    for (int i = 0; i < web.n; ++i) {
      if (web.nodes.is_sender(i))
        for (int q = 0; q < 2; ++q)
          lp += log_normal_pdf(st.u(i, q), 0.0, st.sigma_u2(q));
      if (web.nodes.is_receiver(i))
        for (int q = 0; q < 2; ++q)
          lp += log_normal_pdf(st.v(i, q), 0.0, st.sigma_v2(q));
    }
  }

  if (spec.random_slopes) {
    double beta5 = st.beta(x5);
    lp += log_gamma_pdf(1.0 / st.slope_var, a, a);
    for (int i = 0; i < web.n; ++i)
      if (web.nodes.is_receiver(i))
        lp += log_normal_pdf(st.slope_beta(i), beta5, st.slope_var);
  }
  return std::isfinite(lp) ? lp : kNegInf;
}

}  // namespace foodweb
