#include "doctest.h"

#include <cmath>
#include <limits>

#include "intseg/adam.hpp"
#include "intseg/losses.hpp"
#include "intseg/maskops.hpp"

using namespace intseg;

TEST_SUITE("losses") {

TEST_CASE("sparse_bce hand-computed values") {
  ProbMap p(3, 3, 0.5);
  TriMask t(3, 3, kIgnore);
  t.at(1, 1) = 1;
  CHECK(std::abs(sparse_bce(p, t) - std::log(2.0)) < 1e-12);

  t.at(0, 2) = 0;
  CHECK(std::abs(sparse_bce(p, t) - 2.0 * std::log(2.0)) < 1e-12);

  ProbMap q(2, 2);
  TriMask u(2, 2);
  q[0] = 0.9, q[1] = 0.8, q[2] = 0.7, q[3] = 0.2;
  u[0] = 1, u[1] = 1, u[2] = 1, u[3] = 0;
  const double expected = (-std::log(0.9) - std::log(0.8) - std::log(0.7)) / 3.0 - std::log(0.8);
  CHECK(std::abs(sparse_bce(q, u) - expected) < 1e-12);
}

TEST_CASE("ignored pixels do not contribute") {
  ProbMap p(2, 3, 0.3);
  TriMask t(2, 3, kIgnore);
  t.at(0, 0) = 1;
  const double base = sparse_bce(p, t);
  p.at(1, 2) = 0.999;
  p.at(1, 1) = 1e-9;
  CHECK(sparse_bce(p, t) == base);
}

TEST_CASE("single-class targets drop the empty term") {
  const ProbMap p(4, 4, 0.6);
  const TriMask ones(4, 4, 1);
  CHECK(std::abs(dense_pseudo_bce(p, ones) + std::log(0.6)) < 1e-12);
  const TriMask zeros(4, 4, 0);
  CHECK(std::abs(sparse_bce(p, zeros) + std::log(0.4)) < 1e-12);
}

TEST_CASE("all-ignore targets are rejected") {
  CHECK_THROWS_AS(sparse_bce(ProbMap(2, 2, 0.5), TriMask(2, 2, kIgnore)), EmptyTarget);
  CHECK_THROWS_AS(dense_pseudo_bce(ProbMap(2, 2, 0.5), TriMask(2, 2, kIgnore)), EmptyTarget);
  CHECK_THROWS_AS(sparse_bce(ProbMap(2, 2, 0.5), TriMask(2, 3, 1)), DimensionMismatch);
}

TEST_CASE("dense and sparse entry points agree") {
  ProbMap p(3, 5);
  TriMask t(3, 5);
  for (std::size_t i = 0; i < p.size(); ++i) {
    p[i] = 0.05 + 0.06 * static_cast<double>(i);
    t[i] = static_cast<std::int8_t>(static_cast<int>(i % 3) - 1);
  }
  CHECK(sparse_bce(p, t) == dense_pseudo_bce(p, t));
}

TEST_CASE("saturated correct prediction has near-zero loss") {
  ProbMap p(2, 2);
  p[0] = 0.99, p[1] = 0.01, p[2] = 0.99, p[3] = 0.01;
  const TriMask pseudo = to_trimask(binarize(p));
  CHECK(dense_pseudo_bce(p, pseudo) < 0.03);
}

TEST_CASE("probabilities are clamped inside the log") {
  ProbMap p(1, 2);
  p[0] = 0.0;
  p[1] = 1.0;
  TriMask t(1, 2);
  t[0] = 1;
  t[1] = 0;
  const double expected = -2.0 * std::log(kProbClamp);
  CHECK(std::abs(sparse_bce(p, t) - expected) < 1e-9);
}

TEST_CASE("logit gradient matches the derivative of the loss") {
  TriMask t(1, 3);
  t[0] = 1;
  t[1] = 1;
  t[2] = 0;
  const BalancedWeights w = balanced_weights(t);
  CHECK(w.positives == 2);
  CHECK(w.negatives == 1);
  const double z[3] = {0.3, -1.2, 0.8};
  auto loss_at = [&](int i, double dz) {
    ProbMap p(1, 3);
    for (int k = 0; k < 3; ++k) p[k] = 1.0 / (1.0 + std::exp(-(z[k] + (k == i ? dz : 0.0))));
    return sparse_bce(p, t);
  };
  for (int i = 0; i < 3; ++i) {
    const double p = 1.0 / (1.0 + std::exp(-z[i]));
    const double numeric = (loss_at(i, 1e-5) - loss_at(i, -1e-5)) / 2e-5;
    CHECK(balanced_bce_logit_grad(p, t[i] == 1, w) == doctest::Approx(numeric).epsilon(1e-7));
  }
  CHECK(balanced_bce_logit_grad(1.0, false, w) == 0.0);
  CHECK(balanced_bce_logit_grad(0.0, true, w) == 0.0);
}

}  // TEST_SUITE

TEST_SUITE("adam") {

TEST_CASE("zero gradient leaves parameters unchanged and decays moments") {
  std::vector<double> x{1.0, -2.0};
  OptimizerState s;
  s.m = {0.5, -0.5};
  s.v = {0.25, 0.04};
  s.step = 3;
  const std::vector<double> g{0.0, 0.0};
  adam_step(x, g, s, 0.1);
  // Stale momentum still moves the parameters.
  const double c1 = 1 - std::pow(0.9, 4);
  const double c2 = 1 - std::pow(0.999, 4);
  CHECK(x[0] == doctest::Approx(1.0 - 0.1 * (0.45 / c1) / (std::sqrt(0.24975 / c2) + 1e-8)));
  CHECK(x[1] == doctest::Approx(-2.0 - 0.1 * (-0.45 / c1) / (std::sqrt(0.03996 / c2) + 1e-8)));
  CHECK(s.m[0] == doctest::Approx(0.45));
  CHECK(s.v[1] == doctest::Approx(0.03996));
  CHECK(s.step == 4);

  // From a fresh state the update term is exactly zero.
  std::vector<double> y{1.0, -2.0};
  OptimizerState fresh;
  adam_step(y, g, fresh, 0.1);
  CHECK(y == std::vector<double>{1.0, -2.0});
}

TEST_CASE("first step by hand") {
  std::vector<double> x{0.5, 0.5, 0.5};
  const std::vector<double> g{2.0, -0.001, 1e-12};
  OptimizerState s;
  const double lr = 0.01;
  adam_step(x, g, s, lr);
  for (int i = 0; i < 3; ++i) {
    // m_hat = g, v_hat = g^2 at t = 1.
    const double expected = 0.5 - lr * g[i] / (std::abs(g[i]) + 1e-8);
    CHECK(x[i] == doctest::Approx(expected).epsilon(1e-14));
    CHECK(s.m[i] == doctest::Approx(0.1 * g[i]));
  }
  CHECK(s.step == 1);
}

TEST_CASE("identical calls give identical results") {
  std::vector<double> a{0.1, 0.2}, b{0.1, 0.2};
  OptimizerState sa, sb;
  const std::vector<double> g{0.3, -0.7};
  for (int i = 0; i < 5; ++i) {
    adam_step(a, g, sa, 1e-3);
    adam_step(b, g, sb, 1e-3);
  }
  CHECK(a == b);
  CHECK(sa == sb);
}

TEST_CASE("bad gradients are rejected before any change") {
  std::vector<double> x{1.0, 2.0};
  OptimizerState s = OptimizerState::zeros(2);
  const std::vector<double> nan{0.1, std::numeric_limits<double>::quiet_NaN()};
  CHECK_THROWS_AS(adam_step(x, nan, s, 0.1), std::domain_error);
  CHECK(x == std::vector<double>{1.0, 2.0});
  CHECK(s == OptimizerState::zeros(2));

  const std::vector<double> short_g{0.1};
  CHECK_THROWS_AS(adam_step(x, short_g, s, 0.1), std::invalid_argument);
  OptimizerState wrong = OptimizerState::zeros(3);
  const std::vector<double> g{0.1, 0.1};
  CHECK_THROWS_AS(adam_step(x, g, wrong, 0.1), std::invalid_argument);
}

}  // TEST_SUITE
