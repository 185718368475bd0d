#include <cmath>
#include <random>

#include "doctest.h"
#include "mvd/schedule.hpp"

using namespace mvd;

namespace {

struct Moments {
  double mean = 0.0;
  double var = 0.0;
};

Moments moments(const std::vector<double>& v) {
  Moments m;
  for (double x : v) m.mean += x;
  m.mean /= v.size();
  for (double x : v) m.var += (x - m.mean) * (x - m.mean);
  m.var /= (v.size() - 1);
  return m;
}

NoiseSchedule quarter_schedule() {
  // One step with abar = 0.25.
  return NoiseSchedule::from_betas({0.75});
}

}  // namespace

TEST_SUITE("schedule") {

TEST_CASE("linear schedule shape") {
  const NoiseSchedule s = NoiseSchedule::linear(ScheduleConfig{});
  REQUIRE(s.steps() == 100);
  CHECK(s.beta(1) == doctest::Approx(1e-3));
  CHECK(s.beta(100) == doctest::Approx(0.2));
  CHECK(s.alpha_bar(0) == 1.0);
  CHECK(s.alpha_bar(1) < 1.0);
  CHECK(s.alpha_bar(100) > 0.0);
  CHECK(s.alpha_bar(100) < 1e-4);
  for (int t = 1; t <= s.steps(); ++t) {
    CHECK(s.alpha_bar(t) < s.alpha_bar(t - 1));
    CHECK(s.alpha_bar(t) == (1.0 - s.beta(t)) * s.alpha_bar(t - 1));
  }
  CHECK_THROWS_AS(s.beta(0), Error);
  CHECK_THROWS_AS(s.alpha_bar(101), Error);
}

TEST_CASE("random beta sequences keep the product identity") {
  Rng rng(2);
  std::uniform_real_distribution<double> u(1e-4, 0.5);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> betas(1 + trial * 5);
    for (double& b : betas) b = u(rng);
    const NoiseSchedule s = NoiseSchedule::from_betas(betas);
    double prod = 1.0;
    for (int t = 1; t <= s.steps(); ++t) {
      prod *= 1.0 - betas[t - 1];
      CHECK(s.alpha_bar(t) == prod);
      CHECK(s.alpha_bar(t) < s.alpha_bar(t - 1));
    }
  }
  CHECK_THROWS_AS(NoiseSchedule::from_betas({0.5, 1.0}), Error);
  CHECK_THROWS_AS(NoiseSchedule::from_betas({}), Error);
}

TEST_CASE("forward noise identities") {
  const NoiseSchedule s = quarter_schedule();
  const std::vector<double> x0{2.0, -1.0, 0.5};
  const std::vector<double> zero(3, 0.0), one(3, 1.0);
  auto a = forward_noise(x0, 1, zero, s);
  for (int i = 0; i < 3; ++i) CHECK(a[i] == doctest::Approx(0.5 * x0[i]));
  a = forward_noise(zero, 1, one, s);
  for (double v : a) CHECK(v == doctest::Approx(std::sqrt(0.75)));
  CHECK(forward_noise(std::vector<double>{2.0}, 1, std::vector<double>{1.0}, s)[0] ==
        doctest::Approx(1.8660254));
  CHECK_THROWS_AS(forward_noise(x0, 1, std::span<const double>(one).subspan(0, 2), s), Error);
  CHECK_THROWS_AS(forward_noise(x0, 2, one, s), Error);

  // E[forward_noise] = sqrt(abar) x0.
  const NoiseSchedule lin = NoiseSchedule::linear(ScheduleConfig{});
  Rng rng(8);
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<double> draws;
  for (int i = 0; i < 10000; ++i) {
    const double e = n(rng);
    draws.push_back(forward_noise(std::vector<double>{0.7}, 40, std::vector<double>{e}, lin)[0]);
  }
  const Moments m = moments(draws);
  CHECK(std::abs(m.mean - std::sqrt(lin.alpha_bar(40)) * 0.7) < 3.0 * std::sqrt(m.var / 1e4));
}

TEST_CASE("expected depth") {
  const NoiseSchedule s = NoiseSchedule::from_betas({0.19});
  CHECK(expected_depth(std::vector<double>{0.9}, 1, s)[0] == doctest::Approx(1.0));
  const NoiseSchedule lin = NoiseSchedule::linear(ScheduleConfig{});
  const std::vector<double> d0{-0.3, 0.8};
  const std::vector<double> zero(2, 0.0);
  const auto back = expected_depth(forward_noise(d0, 57, zero, lin), 57, lin);
  for (int i = 0; i < 2; ++i) CHECK(back[i] == doctest::Approx(d0[i]).epsilon(1e-14));
  CHECK_THROWS_AS(expected_depth(d0, 0, lin), Error);
}

TEST_CASE("expected depth is unbiased (Monte Carlo)") {
  const NoiseSchedule lin = NoiseSchedule::linear(ScheduleConfig{});
  Rng rng(21);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int t : {1, 25, 50, 75}) {
    const double d0 = 0.35;
    std::vector<double> est;
    for (int i = 0; i < 10000; ++i) {
      const std::vector<double> dt =
          forward_noise(std::vector<double>{d0}, t, std::vector<double>{n(rng)}, lin);
      est.push_back(expected_depth(dt, t, lin)[0]);
    }
    const Moments m = moments(est);
    CHECK(std::abs(m.mean - d0) < 3.0 * std::sqrt(m.var / est.size()));
  }
}

TEST_CASE("depth sigma forms") {
  const NoiseSchedule lin = NoiseSchedule::linear(ScheduleConfig{});
  DepthSampleParams rec, verb;
  verb.form = SigmaForm::Verbatim;
  CHECK(rec.samples == 3);
  CHECK(rec.form == SigmaForm::Reciprocal);
  for (int t = 2; t <= lin.steps(); ++t) {
    CHECK(depth_sigma(t, rec, lin) > depth_sigma(t - 1, rec, lin));
    CHECK(depth_sigma(t, verb, lin) < depth_sigma(t - 1, verb, lin));
    const double a = lin.alpha_bar(t);
    CHECK(depth_sigma(t, rec, lin) == doctest::Approx(std::sqrt(1 - a) / std::sqrt(a)));
    CHECK(depth_sigma(t, verb, lin) == doctest::Approx(std::sqrt(a) / std::sqrt(1 - a)));
  }
  CHECK(parse_sigma_form("verbatim") == SigmaForm::Verbatim);
  CHECK_THROWS_AS(parse_sigma_form("inverted"), Error);
}

TEST_CASE("sample_depths moments match sigma(t)") {
  const NoiseSchedule lin = NoiseSchedule::linear(ScheduleConfig{});
  for (SigmaForm form : {SigmaForm::Reciprocal, SigmaForm::Verbatim}) {
    DepthSampleParams p;
    p.form = form;
    p.samples = 4;
    p.k = 0.5;
    const int t = 30;
    const double dt = 0.2;
    Rng rng(17);
    std::vector<double> rays(2500, dt);
    const auto out = sample_depths(rays, t, p, lin, rng, -1e6, 1e6);
    REQUIRE(out.size() == 10000);
    const Moments m = moments(out);
    const double sigma = depth_sigma(t, p, lin);
    const double mean = expected_depth(std::vector<double>{dt}, t, lin)[0];
    CHECK(std::abs(m.mean - mean) < 3.0 * sigma / 100.0);
    CHECK(std::abs(std::sqrt(m.var) / sigma - 1.0) < 0.05);
  }
}

TEST_CASE("sample_depths layout, clamping and determinism") {
  const NoiseSchedule lin = NoiseSchedule::linear(ScheduleConfig{});
  DepthSampleParams p;
  p.k = 0.0;
  Rng rng(1);
  const std::vector<double> dt{0.1, -5.0, 9.0};
  const auto out = sample_depths(dt, 10, p, lin, rng, -1.0, 1.0);
  REQUIRE(out.size() == 9);
  const auto mean = expected_depth(dt, 10, lin);
  for (int r = 0; r < 3; ++r)
    for (int j = 0; j < 3; ++j) CHECK(out[r * 3 + j] == std::clamp(mean[r], -1.0, 1.0));
  p.k = 1.0;
  Rng a(5), b(5);
  CHECK(sample_depths(dt, 60, p, lin, a, -1, 1) == sample_depths(dt, 60, p, lin, b, -1, 1));
  Rng c(5);
  for (double v : sample_depths(dt, 100, p, lin, c, 0.0, 0.5)) CHECK((v >= 0.0 && v <= 0.5));
  CHECK_THROWS_AS(sample_depths(dt, 10, p, lin, rng, 1.0, 1.0), Error);
  try {
    sample_depths(dt, 10, p, lin, rng, 2.0, 1.0);
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::InvalidBounds);
  }
}

TEST_CASE("classifier-free guidance combination") {
  const std::vector<double> c{1.0, -2.0, 0.25}, u{0.0, 3.0, 1.0};
  CHECK(cfg_combine(c, u, 1.0) == c);
  const auto two = cfg_combine(c, u, 2.0);
  CHECK(two[0] == 2.0);
  CHECK(two[1] == -7.0);
  CHECK(two[2] == -0.5);
  CHECK(cfg_combine(c, u, 0.0) == u);
  CHECK_THROWS_AS(cfg_combine(c, std::vector<double>{1.0}, 2.0), Error);
}

TEST_CASE("ancestral step") {
  const NoiseSchedule lin = NoiseSchedule::linear(ScheduleConfig{});
  // Perfect noise prediction at t = 1 returns x0 exactly (up to rounding).
  const std::vector<double> x0{0.3, -0.6};
  const std::vector<double> eps{1.1, 0.4};
  const auto x1 = forward_noise(x0, 1, eps, lin);
  Rng rng(1);
  const auto back = ancestral_step(x1, eps, 1, lin, rng);
  for (int i = 0; i < 2; ++i) CHECK(back[i] == doctest::Approx(x0[i]).epsilon(1e-12));

  // Posterior mean and variance at t = 50 (Monte Carlo).
  const int t = 50;
  const double b = lin.beta(t), a = lin.alpha(t), ab = lin.alpha_bar(t);
  CHECK(lin.posterior_variance(t) ==
        doctest::Approx(b * (1 - lin.alpha_bar(t - 1)) / (1 - ab)));
  std::vector<double> draws;
  Rng r2(3);
  for (int i = 0; i < 10000; ++i)
    draws.push_back(ancestral_step(std::vector<double>{0.5}, std::vector<double>{0.2}, t, lin, r2)[0]);
  const Moments m = moments(draws);
  const double mean = (0.5 - b / std::sqrt(1 - ab) * 0.2) / std::sqrt(a);
  CHECK(std::abs(m.mean - mean) < 3.0 * std::sqrt(m.var / 1e4));
  CHECK(std::abs(m.var / lin.posterior_variance(t) - 1.0) < 0.05);
  // Explicit-noise variant agrees with the drawn variant.
  const std::vector<double> z{0.7};
  CHECK(ancestral_step_with_noise(std::vector<double>{0.5}, std::vector<double>{0.2}, t, lin, z)[0] ==
        doctest::Approx(mean + std::sqrt(lin.posterior_variance(t)) * 0.7));
}

}
