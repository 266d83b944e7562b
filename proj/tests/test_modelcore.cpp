#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "foodweb/modelcore.hpp"
#include "foodweb/rng.hpp"
#include "oracles.hpp"

using namespace foodweb;

namespace {

// 4-node web: 0 basal; 1,2 middle (mutual pair); 3 top.
ReducedWeb small_web() {
  Eigen::MatrixXd y = Eigen::MatrixXd::Zero(4, 4);
  y(0, 1) = 1.2;
  y(0, 2) = 0.8;
  y(1, 2) = 1.5;
  y(2, 1) = 1.1;
  y(1, 3) = 0.6;
  return oracles::web_from_y(y);
}

ModelSpec basic_spec() {
  ModelSpec spec;
  return spec;
}

}  // namespace

TEST_CASE("fisher transform") {
  CHECK(rho_from_z(0.0) == 0.0);
  CHECK(rho_from_z(0.5) == doctest::Approx(0.46211715726).epsilon(1e-10));
  for (double z : {-3.0, -0.7, 0.01, 1.4, 9.0}) {
    CHECK(rho_from_z(z) == doctest::Approx(-rho_from_z(-z)).epsilon(1e-14));
    CHECK(std::abs(rho_from_z(z)) < 1.0);
  }
  // roundtrip is exact away from the tanh saturation region
  for (double z : {-3.0, -0.7, 0.01, 1.4})
    CHECK(z_from_rho(rho_from_z(z)) == doctest::Approx(z).epsilon(1e-12));
  // strictly increasing
  CHECK(rho_from_z(0.1) < rho_from_z(0.2));
}

TEST_CASE("reparameterized sender/receiver covariance") {
  SUBCASE("independence case") {
    auto d = derived_sr_params(0.0, 0.7, 1.3);
    CHECK(d.sigma_r2 == doctest::Approx(0.7));
    CHECK(d.rho_sr == 0.0);
  }
  SUBCASE("hand algebra") {
    auto d = derived_sr_params(1.0, 1.0, 1.0);
    CHECK(d.sigma_r2 == doctest::Approx(2.0));
    CHECK(d.rho_sr == doctest::Approx(1.0 / std::sqrt(2.0)));
  }
  SUBCASE("roundtrip through the inverse map") {
    Rng rng(11);
    for (int i = 0; i < 200; ++i) {
      double lambda = rng.normal() * 2.0;
      double phi2 = std::exp(rng.normal());
      double sigma_s2 = std::exp(rng.normal());
      auto d = derived_sr_params(lambda, phi2, sigma_s2);
      double sigma_r = std::sqrt(d.sigma_r2);
      double lam2 = d.rho_sr * sigma_r / std::sqrt(sigma_s2);
      double phi2b = (1.0 - d.rho_sr * d.rho_sr) * d.sigma_r2;
      auto d2 = derived_sr_params(lam2, phi2b, sigma_s2);
      CHECK(lam2 == doctest::Approx(lambda).epsilon(1e-12));
      CHECK(d2.sigma_r2 == doctest::Approx(d.sigma_r2).epsilon(1e-12));
      CHECK(d2.rho_sr == doctest::Approx(d.rho_sr).epsilon(1e-12));
      // the identity rho_sr^2 = (sigma_r2 - phi2)/sigma_r2
      CHECK(d.rho_sr * d.rho_sr ==
            doctest::Approx((d.sigma_r2 - phi2) / d.sigma_r2).epsilon(1e-12));
    }
  }
  SUBCASE("non-positive variances rejected") {
    CHECK_THROWS_AS(derived_sr_params(1.0, 0.0, 1.0), ValidationError);
    CHECK_THROWS_AS(derived_sr_params(1.0, 1.0, -2.0), ValidationError);
  }
}

TEST_CASE("pinned effects") {
  CHECK(pinned_effect_value(1.0, PinScale::sd) == doctest::Approx(-4.0));
  CHECK(pinned_effect_value(9.0, PinScale::sd) == doctest::Approx(-12.0));
  CHECK(pinned_effect_value(9.0, PinScale::var) == doctest::Approx(-36.0));
  // degenerates to the mean as the variance vanishes
  CHECK(pinned_effect_value(1e-20, PinScale::sd) ==
        doctest::Approx(0.0).epsilon(1e-9));

  ReducedWeb web = small_web();
  ModelSpec spec = basic_spec();
  ParameterState st = make_zero_state(spec, web);
  st.sigma_s2 = 4.0;
  st.phi2 = 2.0;
  st.lambda = 1.0;
  apply_pinned_effects(st, spec, web);
  CHECK(st.s(3) == doctest::Approx(-8.0));          // top node, -4*sd_s
  CHECK(st.r(0) == doctest::Approx(-4.0 * std::sqrt(6.0)));  // basal, -4*sd_r
  spec.pin_scale = PinScale::var;
  apply_pinned_effects(st, spec, web);
  CHECK(st.s(3) == doctest::Approx(-16.0));
  CHECK(st.r(0) == doctest::Approx(-24.0));
  // a web with no top nodes has no pinned s values
  Eigen::MatrixXd y = Eigen::MatrixXd::Zero(3, 3);
  y(0, 1) = y(0, 2) = y(1, 2) = y(2, 1) = 1.0;
  ReducedWeb topless = oracles::web_from_y(y);
  CHECK(topless.nodes.top.empty());
}

TEST_CASE("model spec validation") {
  ModelSpec spec;
  CHECK_NOTHROW(spec.validate());
  SUBCASE("k fixed at 2") {
    spec.k = 3;
    CHECK_THROWS_AS(spec.validate(), ValidationError);
  }
  SUBCASE("a must lie in (0, 0.01)") {
    spec.a = 0.01;
    CHECK_THROWS_AS(spec.validate(), ValidationError);
    spec.a = 0.0;
    CHECK_THROWS_AS(spec.validate(), ValidationError);
    spec.a = 0.009;
    CHECK_NOTHROW(spec.validate());
  }
  SUBCASE("random slopes need pred_harvest and no interaction") {
    spec.random_slopes = true;
    CHECK_THROWS_AS(spec.validate(), ValidationError);
    spec.covariates = {"pred_harvest"};
    CHECK_NOTHROW(spec.validate());
    spec.interaction = true;
    CHECK_THROWS_AS(spec.validate(), ValidationError);
  }
}

TEST_CASE("linear predictor") {
  ReducedWeb web = small_web();
  ModelSpec spec = basic_spec();
  SUBCASE("intercept only, all effects zero") {
    ParameterState st = make_zero_state(spec, web);
    st.beta(0) = 2.5;
    // link 1->3 hits the pinned s? no: prey=1 middle; receiver 3 top r free
    int l = -1;
    for (int i = 0; i < web.n_links(); ++i)
      if (web.links[i].prey == 0 && web.links[i].pred == 1) l = i;
    REQUIRE(l >= 0);
    st.s(0) = 0.0;
    st.r(1) = 0.0;
    CHECK(linear_predictor(st, spec, web, l) == doctest::Approx(2.5));
  }
  SUBCASE("interaction adds exactly u.v") {
    ModelSpec ispec = spec;
    ispec.interaction = true;
    ParameterState st = make_zero_state(ispec, web);
    Rng rng(3);
    st.beta(0) = rng.normal();
    for (int i = 0; i < web.n; ++i) {
      st.s(i) = rng.normal();
      st.r(i) = rng.normal();
      st.u(i, 0) = rng.normal();
      st.u(i, 1) = rng.normal();
      st.v(i, 0) = rng.normal();
      st.v(i, 1) = rng.normal();
    }
    for (int l = 0; l < web.n_links(); ++l) {
      double with = linear_predictor(st, ispec, web, l);
      double base = linear_predictor(st, spec, web, l);
      const Link& lk = web.links[l];
      CHECK(with - base ==
            doctest::Approx(st.u.row(lk.prey).dot(st.v.row(lk.pred))));
    }
  }
  SUBCASE("random slopes substitute the per-receiver coefficient") {
    ReducedWeb web5 = small_web();
    Rng rng(5);
    oracles::add_random_covariates(web5, 1, rng);
    web5.covariate_names = {"pred_harvest"};
    ModelSpec rspec = spec;
    rspec.covariates = {"pred_harvest"};
    rspec.random_slopes = true;
    ModelSpec fspec = spec;
    fspec.covariates = {"pred_harvest"};
    ParameterState st = make_zero_state(rspec, web5);
    st.beta << 0.4, 1.7;
    for (int i = 0; i < web5.n; ++i) st.slope_beta(i) = 0.3 * i - 0.2;
    for (int l = 0; l < web5.n_links(); ++l) {
      const Link& lk = web5.links[l];
      double with = linear_predictor(st, rspec, web5, l);
      double fixed = linear_predictor(st, fspec, web5, l);
      CHECK(with - fixed ==
            doctest::Approx((st.slope_beta(lk.pred) - st.beta(1)) * lk.x(1)));
    }
  }
}

TEST_CASE("log likelihood") {
  ModelSpec spec = basic_spec();
  SUBCASE("single send-only link with zero residual") {
    Eigen::MatrixXd y = Eigen::MatrixXd::Zero(2, 2);
    y(0, 1) = 1.4;
    ReducedWeb web = oracles::web_from_y(y);
    ParameterState st = make_zero_state(spec, web);
    st.beta(0) = 1.4;
    st.s(0) = 0.0;
    st.r(1) = 0.0;
    st.sigma2 = 0.7;
    CHECK(log_likelihood(st, spec, web) ==
          doctest::Approx(-0.5 * std::log(2.0 * M_PI * 0.7)).epsilon(1e-12));
  }
  SUBCASE("mutual pair with rho=0 factorizes") {
    Eigen::MatrixXd y = Eigen::MatrixXd::Zero(3, 3);
    y(0, 1) = y(0, 2) = 0.5;  // keep nodes classified
    y(1, 2) = 1.0;
    y(2, 1) = 0.9;
    ReducedWeb web = oracles::web_from_y(y);
    REQUIRE(web.pairs.size() == 1);
    ParameterState st = make_zero_state(spec, web);
    st.z = 0.0;
    st.sigma2 = 0.6;
    double ll = log_likelihood(st, spec, web);
    double indep = 0.0;
    for (int l = 0; l < web.n_links(); ++l) {
      double e = web.links[l].y - linear_predictor(st, spec, web, l);
      indep += detail::log_normal_pdf(e, 0.0, st.sigma2);
    }
    CHECK(ll == doctest::Approx(indep).epsilon(1e-12));
  }
  SUBCASE("mutual pair with rho=0.5 matches the 2x2 inverse formula") {
    Eigen::MatrixXd y = Eigen::MatrixXd::Zero(3, 3);
    y(0, 1) = y(0, 2) = 0.5;
    y(1, 2) = 1.0;
    y(2, 1) = 0.9;
    ReducedWeb web = oracles::web_from_y(y);
    ParameterState st = make_zero_state(spec, web);
    st.z = z_from_rho(0.5);
    st.sigma2 = 0.6;
    CHECK(log_likelihood(st, spec, web) ==
          doctest::Approx(oracles::dense_log_likelihood(st, spec, web))
              .epsilon(1e-10));
  }
  SUBCASE("pair density is exchangeable in the dyad labels") {
    Eigen::MatrixXd y = Eigen::MatrixXd::Zero(3, 3);
    y(0, 1) = y(0, 2) = 0.5;
    y(1, 2) = 1.0;
    y(2, 1) = 0.9;
    ReducedWeb web = oracles::web_from_y(y);
    // swap labels 1<->2: same dyads, same density
    Eigen::MatrixXd ys = Eigen::MatrixXd::Zero(3, 3);
    ys(0, 2) = ys(0, 1) = 0.5;
    ys(2, 1) = 1.0;
    ys(1, 2) = 0.9;
    ReducedWeb webs = oracles::web_from_y(ys);
    ParameterState st = make_zero_state(spec, web);
    st.z = 0.8;
    st.sigma2 = 0.4;
    ParameterState st2 = st;
    std::swap(st2.s(1), st2.s(2));
    std::swap(st2.r(1), st2.r(2));
    CHECK(log_likelihood(st, spec, web) ==
          doctest::Approx(log_likelihood(st2, spec, webs)).epsilon(1e-12));
  }
  SUBCASE("invalid covariance yields -inf, not a crash") {
    ReducedWeb web = small_web();
    ParameterState st = make_zero_state(spec, web);
    st.sigma2 = -1.0;
    CHECK(log_likelihood(st, spec, web) == kNegInf);
    st.sigma2 = 0.0;
    CHECK(log_likelihood(st, spec, web) == kNegInf);
  }
  SUBCASE("interaction off equals interaction on at u=0") {
    ReducedWeb web = small_web();
    ModelSpec ispec = spec;
    ispec.interaction = true;
    ParameterState st = make_zero_state(ispec, web);
    Rng rng(7);
    for (int i = 0; i < web.n; ++i) st.v(i, 0) = rng.normal();
    double on = log_likelihood(st, ispec, web);
    double off = log_likelihood(st, spec, web);
    CHECK(on == doctest::Approx(off).epsilon(1e-12));
  }
  SUBCASE("dense-covariance oracle on random webs") {
    Rng rng(42);
    int done = 0;
    while (done < 50) {
      int n = 3 + static_cast<int>(rng.below(3));
      Eigen::MatrixXd y = Eigen::MatrixXd::Zero(n, n);
      int links = 0;
      for (int i = 0; i < n && links < 6; ++i)
        for (int j = 0; j < n && links < 6; ++j)
          if (i != j && rng.uniform() < 0.45) {
            y(i, j) = 0.2 + rng.uniform() * 2.0;
            ++links;
          }
      bool ok = true;
      for (int i = 0; i < n; ++i)
        if (y.row(i).sum() == 0.0 && y.col(i).sum() == 0.0) ok = false;
      if (!ok) continue;
      ReducedWeb web = oracles::web_from_y(y);
      ParameterState st = make_zero_state(basic_spec(), web);
      st.beta(0) = rng.normal();
      for (int i = 0; i < n; ++i) {
        if (web.nodes.is_sender(i)) st.s(i) = rng.normal();
        if (web.nodes.is_receiver(i)) st.r(i) = rng.normal();
      }
      st.sigma2 = 0.2 + rng.uniform();
      st.z = rng.normal();
      double fast = log_likelihood(st, basic_spec(), web);
      double dense = oracles::dense_log_likelihood(st, basic_spec(), web);
      CHECK(std::abs(fast - dense) < 1e-8);
      ++done;
    }
  }
}

TEST_CASE("log prior") {
  ReducedWeb web = small_web();
  ModelSpec spec = basic_spec();
  ParameterState st = make_zero_state(spec, web);
  SUBCASE("deterministic and finite at a reference state") {
    double a = log_prior(st, spec, web);
    double b = log_prior(st, spec, web);
    CHECK(a == b);
    CHECK(std::isfinite(a));
  }
  SUBCASE("lambda contribution matches the closed-form normal density") {
    ParameterState st2 = st;
    st2.lambda = 1.3;
    double diff = log_prior(st2, spec, web) - log_prior(st, spec, web);
    // lambda also moves sigma_r2, which scales the marginal prior of the
    // free receiver effect on the single top node (r(3) = 0 here)
    double expect = detail::log_normal_pdf(1.3, 0.0, 1.0 / spec.a) -
                    detail::log_normal_pdf(0.0, 0.0, 1.0 / spec.a) +
                    detail::log_normal_pdf(0.0, 0.0, st2.sigma_r2()) -
                    detail::log_normal_pdf(0.0, 0.0, st.sigma_r2());
    CHECK(diff == doctest::Approx(expect).epsilon(1e-12));
    // doubling a rescales the normal prior as the closed form dictates
    ModelSpec spec2 = spec;
    spec2.a = 2.0 * spec.a;
    double diff2 = log_prior(st2, spec2, web) - log_prior(st2, spec, web);
    double expect2 =
        (detail::log_normal_pdf(st2.lambda, 0.0, 1.0 / spec2.a) -
         detail::log_normal_pdf(st2.lambda, 0.0, 1.0 / spec.a)) +
        (st2.beta.size() *
         (detail::log_normal_pdf(0.0, 0.0, 1.0 / spec2.a) -
          detail::log_normal_pdf(0.0, 0.0, 1.0 / spec.a))) +
        3.0 * (detail::log_gamma_pdf(1.0, spec2.a, spec2.a) -
               detail::log_gamma_pdf(1.0, spec.a, spec.a));
    CHECK(diff2 == doctest::Approx(expect2).epsilon(1e-10));
  }
  SUBCASE("gamma term at precision 1") {
    double a = 0.007;
    CHECK(detail::log_gamma_pdf(1.0, a, a) ==
          doctest::Approx(a * std::log(a) - std::lgamma(a) - a).epsilon(1e-12));
  }
  SUBCASE("non-positive variance yields -inf") {
    ParameterState st2 = st;
    st2.phi2 = 0.0;
    CHECK(log_prior(st2, spec, web) == kNegInf);
  }
  SUBCASE("augmented top-node representation integrates to the marginal") {
    // N(r; 0, sigma_r2) must equal the integral over the latent sender
    // coordinate of N(aux; 0, sigma_s2) N(r; lambda*aux, phi2)
    double lambda = 0.8, phi2 = 0.5, sigma_s2 = 1.4, r = 0.9;
    double sigma_r2 = phi2 + lambda * lambda * sigma_s2;
    auto logf = [&](double aux) {
      return detail::log_normal_pdf(aux, 0.0, sigma_s2) +
             detail::log_normal_pdf(r, lambda * aux, phi2);
    };
    // quadrature of the joint over aux, compared at two r values via ratios
    auto moments = oracles::simpson_moments(logf, -20.0, 20.0, 8000);
    // E[aux | r] = lambda*sigma_s2/sigma_r2 * r for the joint normal
    CHECK(moments.mean ==
          doctest::Approx(lambda * sigma_s2 / sigma_r2 * r).epsilon(1e-8));
    CHECK(moments.var ==
          doctest::Approx(sigma_s2 * phi2 / sigma_r2).epsilon(1e-8));
  }
}
