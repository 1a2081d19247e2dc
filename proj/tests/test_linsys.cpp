#include <cmath>
#include <random>
#include <sstream>

#include "doctest.h"
#include "ddismc/linsys.hpp"

using namespace ddismc;

namespace {

double interior_rms(const VectorXd& a, const VectorXd& b, double frac = 0.1) {
  const int T = static_cast<int>(a.size());
  const int lo = static_cast<int>(frac * T);
  const int hi = T - lo;
  return std::sqrt((a.segment(lo, hi - lo) - b.segment(lo, hi - lo)).squaredNorm() / (hi - lo));
}

RationalMatrix second_order_model() {
  // 1/(1+2s)^2
  return RationalMatrix::diagonal({{{1.0}, {1.0, 4.0, 4.0}}, {{1.0}, {1.0, 4.0, 4.0}}});
}

}  // namespace

TEST_CASE("poly arithmetic") {
  Poly a{1.0, 1.0};
  Poly b{2.0, 0.0, 1.0};
  CHECK(poly::mul(a, b) == Poly{2.0, 2.0, 1.0, 1.0});
  Poly q, r;
  poly::divmod(poly::mul(a, b), b, &q, &r);
  CHECK(q.size() == 2);
  CHECK(q[0] == doctest::Approx(1.0));
  CHECK(r.empty());
  auto z = poly::roots({6.0, 5.0, 1.0});
  REQUIRE(z.size() == 2);
  CHECK(std::min(z[0].real(), z[1].real()) == doctest::Approx(-3.0));
}

TEST_CASE("StateSpace validates dimensions") {
  CHECK_THROWS_AS(StateSpace(MatrixXd::Zero(2, 3), MatrixXd::Zero(2, 1), MatrixXd::Zero(1, 2),
                             MatrixXd::Zero(1, 1)),
                  std::invalid_argument);
  CHECK_THROWS_AS(StateSpace(MatrixXd::Zero(2, 2), MatrixXd::Zero(3, 1), MatrixXd::Zero(1, 2),
                             MatrixXd::Zero(1, 1)),
                  std::invalid_argument);
  MatrixXd A = MatrixXd::Zero(1, 1);
  A(0, 0) = std::nan("");
  CHECK_THROWS_AS(StateSpace(A, MatrixXd::Zero(1, 1), MatrixXd::Zero(1, 1), MatrixXd::Zero(1, 1)),
                  std::invalid_argument);
}

TEST_CASE("simulate") {
  SUBCASE("scalar decay") {
    StateSpace s(MatrixXd::Constant(1, 1, -1.0), MatrixXd::Zero(1, 1), MatrixXd::Identity(1, 1),
                 MatrixXd::Zero(1, 1));
    auto r = simulate(s, SampledSignal::zeros(0, 1e-3, 1, 1), VectorXd::Ones(1), 1.0, 1e-3);
    CHECK(r.x.T() == 1001);
    CHECK(std::abs(r.x.values()(1000, 0) - std::exp(-1.0)) < 1e-6);
  }
  SUBCASE("equilibrium stays at zero") {
    MatrixXd A(2, 2);
    A << 0, 1, -2, -0.3;
    StateSpace s(A, MatrixXd::Ones(2, 1), MatrixXd::Identity(2, 2), MatrixXd::Zero(2, 1));
    auto r = simulate(s, SampledSignal::zeros(0, 0.1, 3, 1), VectorXd::Zero(2), 5.0, 1e-2);
    CHECK(r.x.values().cwiseAbs().maxCoeff() == 0.0);
    CHECK(r.y.values().cwiseAbs().maxCoeff() == 0.0);
  }
  SUBCASE("fourth-order step-halving") {
    MatrixXd A(2, 2);
    A << 0, 1, -4, -0.5;
    StateSpace s(A, MatrixXd::Ones(2, 1), MatrixXd::Identity(2, 2), MatrixXd::Zero(2, 1));
    FeedbackLaw one = [](double, const VectorXd&) { return VectorXd::Ones(1); };
    VectorXd x0(2);
    x0 << 1.0, 0.0;
    auto fin = [&](double dt) { return simulate(s, one, x0, 4.0, dt).x.row(static_cast<int>(std::llround(4.0 / dt))); };
    VectorXd a = fin(0.04), b = fin(0.02), c = fin(0.01);
    const double ratio = (a - b).norm() / (b - c).norm();
    CHECK(ratio > 13.0);
    CHECK(ratio < 19.0);
  }
  SUBCASE("divergence reports time") {
    StateSpace s(MatrixXd::Constant(1, 1, 800.0), MatrixXd::Zero(1, 1), MatrixXd::Identity(1, 1),
                 MatrixXd::Zero(1, 1));
    CHECK_THROWS_AS(simulate(s, SampledSignal::zeros(0, 1, 1, 1), VectorXd::Ones(1), 10.0, 0.01),
                    std::runtime_error);
  }
  SUBCASE("dimension mismatch") {
    StateSpace s(MatrixXd::Constant(1, 1, -1.0), MatrixXd::Zero(1, 1), MatrixXd::Identity(1, 1),
                 MatrixXd::Zero(1, 1));
    CHECK_THROWS_AS(simulate(s, SampledSignal::zeros(0, 1, 1, 2), VectorXd::Ones(1), 1.0, 0.01),
                    std::invalid_argument);
  }
}

TEST_CASE("realize") {
  SUBCASE("reference model") {
    auto ss = realize(second_order_model());
    CHECK(ss.n() == 4);
    Eigen::EigenSolver<MatrixXd> es(ss.A());
    for (int i = 0; i < 4; ++i) {
      CHECK(std::abs(es.eigenvalues()(i) - Complex(-0.5, 0.0)) < 1e-6);
    }
    auto G0 = ss.freq_response(0.0);
    CHECK(std::abs(G0(0, 0) - 1.0) < 1e-12);
    CHECK(std::abs(G0(0, 1)) < 1e-12);
  }
  SUBCASE("identity") {
    auto ss = realize(RationalMatrix::identity(3));
    CHECK(ss.n() == 0);
    CHECK(ss.D().isApprox(MatrixXd::Identity(3, 3)));
  }
  SUBCASE("first order") {
    auto ss = realize(RationalMatrix::scalar({1.0}, {1.0, 1.0}));
    REQUIRE(ss.n() == 1);
    CHECK(ss.A()(0, 0) == doctest::Approx(-1.0));
    CHECK(ss.freq_response(0.0)(0, 0).real() == doctest::Approx(1.0));
  }
  SUBCASE("improper rejected") {
    CHECK_THROWS_AS(realize(RationalMatrix::scalar({0.0, 1.0}, {1.0})), std::invalid_argument);
  }
  SUBCASE("shared denominators are trimmed") {
    RationalMatrix tf(2, 2);
    tf.set(0, 0, {1.0}, {2.0, 1.0});
    tf.set(1, 0, {3.0}, {2.0, 1.0});
    tf.set(0, 1, {1.0, 1.0}, {0.0, 1.0});
    tf.set(1, 1, {2.0}, {0.0, 1.0});
    CHECK(realize(tf).n() == 2);
  }
  SUBCASE("frequency response consistency on random matrices") {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> U(-1.0, 1.0);
    for (int trial = 0; trial < 5; ++trial) {
      RationalMatrix tf(2, 3);
      for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 3; ++j) {
          const double p1 = 0.5 + std::abs(U(rng)), p2 = 1.5 + std::abs(U(rng));
          tf.set(i, j, {U(rng), U(rng), U(rng)}, poly::mul({p1, 1.0}, {p2, 1.0}));
        }
      auto ss = realize(tf);
      for (int k = 0; k < 20; ++k) {
        const double w = std::pow(10.0, 2.0 * U(rng));
        auto G = ss.freq_response(w);
        auto R = tf.eval(Complex(0.0, w));
        CHECK((G - R).norm() <= 1e-9 * (1.0 + R.norm()));
      }
    }
  }
}

TEST_CASE("invariant zeros") {
  SUBCASE("SISO numerator root") {
    auto ss = realize(RationalMatrix::scalar({1.0, 1.0}, poly::mul({2.0, 1.0}, {3.0, 1.0})));
    auto z = invariant_zeros(ss);
    REQUIRE(z.zeros.size() == 1);
    CHECK(std::abs(z.zeros[0] - Complex(-1.0, 0.0)) < 1e-10);
    // Brute-force rank sweep over a real grid: the smallest singular value dips only at -1.
    double best = 1e9, argbest = 0.0;
    for (int k = 0; k <= 4000; ++k) {
      const double x = -4.0 + 0.002 * k;
      Eigen::MatrixXcd Q(ss.n() + 1, ss.n() + 1);
      Q.topLeftCorner(ss.n(), ss.n()) = Complex(x, 0.0) * Eigen::MatrixXcd::Identity(ss.n(), ss.n()) -
                                        ss.A().cast<Complex>();
      Q.topRightCorner(ss.n(), 1) = -ss.B().cast<Complex>();
      Q.bottomLeftCorner(1, ss.n()) = ss.C().cast<Complex>();
      Q.bottomRightCorner(1, 1) = ss.D().cast<Complex>();
      Eigen::JacobiSVD<Eigen::MatrixXcd> svd(Q);
      const double smin = svd.singularValues()(ss.n());
      if (smin < best) {
        best = smin;
        argbest = x;
      }
    }
    CHECK(argbest == doctest::Approx(-1.0).epsilon(1e-3));
  }
  SUBCASE("no finite zeros") {
    auto z = invariant_zeros(realize(RationalMatrix::scalar({1.0}, {2.0, 1.0})));
    CHECK(z.zeros.empty());
    CHECK_FALSE(z.degenerate);
  }
  SUBCASE("random SISO numerators") {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> U(0.2, 3.0);
    for (int trial = 0; trial < 20; ++trial) {
      std::vector<double> zr{-U(rng), -U(rng) - 3.5, U(rng) + 7.0};
      Poly num{1.0};
      for (double z : zr) num = poly::mul(num, {-z, 1.0});
      Poly den{1.0};
      for (int k = 0; k < 4; ++k) den = poly::mul(den, {U(rng) + 2.0 * k, 1.0});
      num = poly::scale(num, 2.5);
      auto z = invariant_zeros(realize(RationalMatrix::scalar(num, den)));
      REQUIRE(z.zeros.size() == 3);
      std::sort(zr.begin(), zr.end());
      for (int k = 0; k < 3; ++k) CHECK(std::abs(z.zeros[k] - Complex(zr[k], 0.0)) < 1e-8 * (1.0 + std::abs(zr[k])));
    }
  }
  SUBCASE("degenerate pencil") {
    MatrixXd A = -MatrixXd::Identity(2, 2);
    MatrixXd B(2, 2);
    B << 1, 1, 1, 1;
    auto z = invariant_zeros(StateSpace(A, B, MatrixXd::Identity(2, 2), MatrixXd::Zero(2, 2)));
    CHECK(z.degenerate);
    CHECK(z.zeros.empty());
  }
  SUBCASE("non-square rejected") {
    CHECK_THROWS_AS(invariant_zeros(StateSpace(-MatrixXd::Identity(2, 2), MatrixXd::Ones(2, 1),
                                               MatrixXd::Identity(2, 2), MatrixXd::Zero(2, 1))),
                    std::invalid_argument);
  }
}

TEST_CASE("freq_response") {
  auto f = freq_response(RationalMatrix::scalar({1.0}, {1.0, 1.0}), {0.0, 1.0});
  CHECK(std::abs(f[0].value(0, 0) - Complex(1.0, 0.0)) < 1e-15);
  CHECK(std::abs(f[1].value(0, 0)) == doctest::Approx(1.0 / std::sqrt(2.0)));
  auto m = freq_response(second_order_model(), {0.5});
  CHECK(std::abs(m[0].value(0, 0)) == doctest::Approx(0.5));
  auto p = freq_response(RationalMatrix::scalar({1.0}, {0.0, 1.0}), {0.0, 2.0});
  CHECK(p[0].at_pole);
  CHECK_FALSE(p[1].at_pole);
}

TEST_CASE("offline_filter") {
  const double tau = 0.01;
  const int T = 2001;
  SUBCASE("integrator on a constant gives a ramp") {
    SampledSignal one(0.0, tau, MatrixXd::Ones(T, 1));
    FilterReport rep;
    auto y = offline_filter(RationalMatrix::scalar({1.0}, {0.0, 1.0}), one, {}, &rep);
    CHECK(rep.bin_shifted);
    const int lo = T / 10, hi = T - T / 10;
    const double slope = (y.values()(hi, 0) - y.values()(lo, 0)) / (y.time(hi) - y.time(lo));
    CHECK(std::abs(slope - 1.0) < 1e-3);
    CHECK(std::abs(y.values()(T / 2, 0) - y.time(T / 2)) < 0.05);
  }
  SUBCASE("derivative of a sinusoid") {
    const double w = 2.0;
    MatrixXd v(T, 1);
    VectorXd ref(T);
    for (int k = 0; k < T; ++k) {
      v(k, 0) = std::sin(w * k * tau);
      ref(k) = w * std::cos(w * k * tau);
    }
    auto y = offline_filter(RationalMatrix::scalar({0.0, 1.0}, {1.0}), SampledSignal(0, tau, v));
    const double rms_ref = std::sqrt(ref.squaredNorm() / T);
    CHECK(interior_rms(y.values().col(0), ref) <= 0.01 * rms_ref);
  }
  SUBCASE("inverse model then model is the identity") {
    const int Tl = 20001;
    MatrixXd v(Tl, 2);
    for (int k = 0; k < Tl; ++k) {
      const double t = k * tau;
      const double env = std::exp(-std::pow((t - 100.0) / 25.0, 2));
      v(k, 0) = env * (std::sin(0.7 * t) + 0.3 * std::cos(1.9 * t));
      v(k, 1) = env * std::cos(0.4 * t);
    }
    SampledSignal x(0, tau, v);
    RationalMatrix inv = RationalMatrix::diagonal({{{1.0, 4.0, 4.0}, {1.0}}, {{1.0, 4.0, 4.0}, {1.0}}});
    auto back = offline_filter(second_order_model(), offline_filter(inv, x));
    for (int j = 0; j < 2; ++j) CHECK(interior_rms(back.values().col(j), v.col(j)) <= 1e-6);
  }
  SUBCASE("linearity") {
    std::mt19937_64 rng(3);
    std::normal_distribution<double> N(0.0, 1.0);
    MatrixXd a(500, 1), b(500, 1);
    for (int k = 0; k < 500; ++k) {
      a(k, 0) = N(rng);
      b(k, 0) = N(rng);
    }
    RationalMatrix op = RationalMatrix::scalar({1.0, 0.0, 2.0}, {0.0, 1.0, 1.0});
    auto fa = offline_filter(op, SampledSignal(0, tau, a));
    auto fb = offline_filter(op, SampledSignal(0, tau, b));
    auto fab = offline_filter(op, SampledSignal(0, tau, 2.0 * a - 3.0 * b));
    MatrixXd comb = 2.0 * fa.values() - 3.0 * fb.values();
    CHECK((fab.values() - comb).norm() <= 1e-10 * comb.norm());
  }
  SUBCASE("excess limit") {
    FilterOptions opt;
    opt.max_excess = 1;
    CHECK_THROWS_AS(offline_filter(RationalMatrix::scalar({0, 0, 1.0}, {1.0}),
                                   SampledSignal::zeros(0, tau, 10, 1), opt),
                    std::invalid_argument);
  }
}

TEST_CASE("prbs") {
  auto a = prbs(2, 100.0, 0.1, {0.0005}, 2.0, 42);
  CHECK(a.T() == 1001);
  for (int k = 0; k < a.T(); ++k)
    for (int j = 0; j < 2; ++j) CHECK(std::abs(a.values()(k, j)) == 0.0005);
  CHECK(a.values().array().square().mean() == doctest::Approx(0.0005 * 0.0005).epsilon(1e-14));
  auto b = prbs(2, 100.0, 0.1, {0.0005}, 2.0, 42);
  CHECK(a.values() == b.values());
  CHECK(a.values().col(0) != a.values().col(1));
  auto z = prbs(1, 10.0, 0.1, {0.0}, 1.0, 1);
  CHECK(z.values().cwiseAbs().maxCoeff() == 0.0);
  // held for a bit period
  for (int k = 0; k + 1 < a.T(); ++k)
    if ((k + 1) % 20 != 0) CHECK(a.values()(k, 0) == a.values()(k + 1, 0));
  CHECK_THROWS_AS(prbs(1, 10.0, 0.1, {1.0}, 0.05, 1), std::invalid_argument);
}

TEST_CASE("csv round trip") {
  MatrixXd v(3, 2);
  v << 0.1, -1.0 / 3.0, 2e-300, 1e300, std::acos(-1.0), 7.0;
  SampledSignal s(0.5, 0.25, v);
  std::stringstream ss;
  s.write_csv(ss);
  CHECK(ss.str().substr(0, 11) == "t,ch0,ch1\n0");
  auto r = SampledSignal::read_csv(ss);
  CHECK(r.values() == v);
  CHECK(r.t0() == 0.5);
  CHECK(r.tau() == 0.25);
}
