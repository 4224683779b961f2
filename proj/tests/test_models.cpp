#include <doctest.h>

#include <cmath>
#include <random>

#include "escalate/error.hpp"
#include "escalate/models.hpp"
#include "oracles.hpp"

using namespace escalate;

TEST_CASE("power_prob examples") {
  CHECK(power_prob(0.30, 0.0) == doctest::Approx(0.30).epsilon(1e-15));
  CHECK(power_prob(0.25, std::log(2.0)) == doctest::Approx(0.0625).epsilon(1e-14));
  const long double ref = std::pow(0.20L, std::exp(0.5L));
  CHECK(std::abs(power_prob(0.20, 0.5) - static_cast<double>(ref)) < 1e-15);
}

TEST_CASE("power_prob rejects doses outside (0,1)") {
  CHECK_THROWS_AS(power_prob(0.0, 0.1), DomainError);
  CHECK_THROWS_AS(power_prob(1.0, 0.1), DomainError);
  CHECK_THROWS_AS(power_prob(-0.2, 0.1), DomainError);
  CHECK_THROWS_AS(power_prob(1.5, 0.1), DomainError);
}

TEST_CASE("power_prob is increasing in dose and decreasing in beta") {
  for (double beta = -3.0; beta <= 3.0; beta += 0.25) {
    for (double d = 0.02; d < 0.97; d += 0.02) {
      CHECK(power_prob(d + 0.01, beta) > power_prob(d, beta));
      CHECK(power_prob(d, beta + 0.1) < power_prob(d, beta));
    }
  }
}

TEST_CASE("logistic2_prob examples and saturation") {
  CHECK(logistic2_prob(0.0, 0.0, 1.0) == 0.5);
  CHECK(logistic2_prob(1.0, 0.0, 0.0) == 0.5);
  const double eta = -1.0 + 2.0 * 0.3;
  CHECK(logistic2_prob(0.3, -1.0, 2.0) == doctest::Approx(1.0 / (1.0 + std::exp(-eta))).epsilon(1e-15));
  for (double eta_big : {-700.0, -300.0, 300.0, 700.0}) {
    const double p = logistic2_prob(1.0, eta_big, 0.0);
    CHECK(std::isfinite(p));
    CHECK(p >= 0.0);
    CHECK(p <= 1.0);
    const auto lp = logistic2_log_prob(1.0, eta_big, 0.0);
    CHECK(std::isfinite(lp.log_p));
    CHECK(std::isfinite(lp.log_q));
  }
  CHECK(logistic2_log_prob(1.0, -700.0, 0.0).log_p == doctest::Approx(-700.0));
  CHECK(logistic2_log_prob(1.0, 700.0, 0.0).log_q == doctest::Approx(-700.0));
}

TEST_CASE("power_log_prob matches direct logs where both are representable") {
  for (double beta : {-2.0, -0.5, 0.0, 0.7, 1.5}) {
    for (double d : {0.05, 0.2, 0.5, 0.9}) {
      const auto lp = power_log_prob(d, beta);
      const double p = std::pow(d, std::exp(beta));
      CHECK(lp.log_p == doctest::Approx(std::log(p)).epsilon(1e-13));
      CHECK(lp.log_q == doctest::Approx(std::log1p(-p)).epsilon(1e-12));
    }
  }
}

TEST_CASE("calibrate_skeleton anchor and recursion oracle") {
  const auto a = calibrate_skeleton(3, 1, 0.25, 1e-9);
  CHECK(a.values[1] == 0.25);

  const auto s2 = calibrate_skeleton(6, 1, 0.25, 0.05);
  const auto o2 = oracle::getprior(0.05, 0.25, 1, 6);
  CHECK(s2.values[1] == 0.25);
  for (int i = 0; i < 6; ++i) CHECK(s2.values[i] == doctest::Approx(o2[i]).epsilon(1e-13));

  const auto s3 = calibrate_skeleton(6, 2, 0.25, 0.05);
  const auto o3 = oracle::getprior(0.05, 0.25, 2, 6);
  CHECK(s3.values[2] == 0.25);
  for (int i = 0; i < 6; ++i) CHECK(s3.values[i] == doctest::Approx(o3[i]).epsilon(1e-13));
  CHECK(s3.prior_mtd == 2);
}

TEST_CASE("calibrate_skeleton rejects half-widths outside the target interval") {
  CHECK_THROWS_AS(calibrate_skeleton(6, 1, 0.25, 0.25), ValidationError);
  CHECK_THROWS_AS(calibrate_skeleton(6, 1, 0.25, 0.3), ValidationError);
  CHECK_THROWS_AS(calibrate_skeleton(6, 1, 0.8, 0.2), ValidationError);
  CHECK_THROWS_AS(calibrate_skeleton(6, 6, 0.25, 0.05), ValidationError);
  CHECK_THROWS_AS(calibrate_skeleton(6, 1, 0.25, 0.0), ValidationError);
}

TEST_CASE("calibrate_skeleton is increasing, bounded and anchored on a parameter grid") {
  for (std::size_t m = 1; m <= 20; ++m) {
    for (double gamma = 0.1; gamma <= 0.4 + 1e-9; gamma += 0.05) {
      for (double frac : {0.1, 0.25, 0.5}) {
        const double delta = gamma * frac;
        for (std::size_t mtd = 0; mtd < m; mtd += 3) {
          const auto o = oracle::getprior(delta, gamma, static_cast<int>(mtd), static_cast<int>(m));
          bool representable = true;
          for (std::size_t i = 0; i < m; ++i) {
            representable = representable && o[i] > 0.0 && o[i] < 1.0 && (i == 0 || o[i] > o[i - 1]);
          }
          if (!representable) {
            CHECK_THROWS_AS(calibrate_skeleton(m, mtd, gamma, delta), ValidationError);
            continue;
          }
          const auto s = calibrate_skeleton(m, mtd, gamma, delta);
          CHECK(s.values[mtd] == gamma);
          for (std::size_t i = 0; i < m; ++i) {
            CHECK(s.values[i] > 0.0);
            CHECK(s.values[i] < 1.0);
            if (i > 0) CHECK(s.values[i] > s.values[i - 1]);
          }
          CHECK_NOTHROW(s.validate());
        }
      }
    }
  }
}

TEST_CASE("Skeleton validation names the offending entry") {
  Skeleton s{{0.1, 0.3, 0.2}, 0};
  try {
    s.validate();
    FAIL("expected a validation error");
  } catch (const ValidationError& e) {
    CHECK(e.path() == "values[2]");
  }
  CHECK_THROWS_AS((Skeleton{{0.1, 1.0}, 0}).validate(), ValidationError);
  CHECK_THROWS_AS((Skeleton{{0.1, 0.2}, 2}).validate(), ValidationError);
  CHECK_THROWS_AS((Skeleton{{}, 0}).validate(), ValidationError);
}

TEST_CASE("ModelSpec validation") {
  ModelSpec m;
  m.power_prior.variance = 0.0;
  CHECK_THROWS_AS(m.validate(), ValidationError);
  ModelSpec l;
  l.kind = ModelKind::Logistic2;
  l.logistic_prior.covariance = {{{1.0, 2.0}, {2.0, 1.0}}};
  CHECK_THROWS_AS(l.validate(), ValidationError);
  l.logistic_prior.covariance = {{{1.0, 0.3}, {0.3, 1.0}}};
  CHECK_NOTHROW(l.validate());
}

TEST_CASE("standardized doses") {
  const Skeleton sk{{0.2, 0.3, 0.4}, 1};
  ModelSpec m;
  CHECK(standardized_doses(m, sk) == sk.values);
  for (std::size_t i = 0; i < 3; ++i) CHECK(power_prob(standardized_doses(m, sk)[i], 0.0) == doctest::Approx(sk.values[i]));

  m.scaling = DoseScaling::PriorMean;
  const auto d = standardized_doses(m, sk);
  const double plug = std::exp(1.34 / 2.0);
  for (std::size_t i = 0; i < 3; ++i) CHECK(std::pow(d[i], plug) == doctest::Approx(sk.values[i]).epsilon(1e-13));

  ModelSpec l;
  l.kind = ModelKind::Logistic2;
  l.scaling = DoseScaling::Logit;
  const auto z = standardized_doses(l, sk);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(z[i] == doctest::Approx(std::log(sk.values[i] / (1 - sk.values[i]))));
    CHECK(logistic2_prob(z[i], 0.0, 1.0) == doctest::Approx(sk.values[i]).epsilon(1e-13));
  }

  ModelSpec e;
  e.scaling = DoseScaling::Explicit;
  e.doses = {0.1, 0.2};
  CHECK_THROWS_AS(standardized_doses(e, sk), ValidationError);
}
