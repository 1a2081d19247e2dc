#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numbers>
#include <random>
#include <string>

#include "ddismc/bench.hpp"
#include "ddismc/ellipsoid.hpp"
#include "ddismc/errors.hpp"
#include "ddismc/ismc.hpp"
#include "ddismc/vrft.hpp"

using namespace ddismc;

namespace {

int failures = 0;

void report(int id, const std::string& name, bool ok, double seconds, double limit, const std::string& detail) {
  const bool pass = ok && seconds <= limit;
  if (!pass) ++failures;
  std::printf("%s %d %s: %s runtime=%.2fs (limit %.0fs)\n", pass ? "PASS" : "FAIL", id, name.c_str(), detail.c_str(),
              seconds, limit);
  std::fflush(stdout);
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* f, double a) {
  char buf[128];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

double sup_rows(const MatrixXd& v) {
  double s = 0.0;
  for (int k = 0; k < v.rows(); ++k) s = std::max(s, v.row(k).norm());
  return s;
}

StateSpace random_stable(int n, int m, int p, std::mt19937_64& rng, bool with_d) {
  std::normal_distribution<double> N;
  MatrixXd A(n, n), B(n, m), C(p, n), D = MatrixXd::Zero(p, m);
  for (int i = 0; i < A.size(); ++i) A.data()[i] = N(rng);
  const double shift = Eigen::EigenSolver<MatrixXd>(A, false).eigenvalues().real().maxCoeff();
  A -= (shift + 0.5 + std::abs(N(rng))) * MatrixXd::Identity(n, n);
  for (int i = 0; i < B.size(); ++i) B.data()[i] = N(rng);
  for (int i = 0; i < C.size(); ++i) C.data()[i] = N(rng);
  if (with_d)
    for (int i = 0; i < D.size(); ++i) D.data()[i] = N(rng);
  return StateSpace(A, B, C, D);
}

void vrft_consistency() {
  const auto t0 = std::chrono::steady_clock::now();
  const double tau = 0.01, horizon = 200.0;
  StateSpace P(MatrixXd::Constant(1, 1, -1.0), MatrixXd::Ones(1, 1), MatrixXd::Ones(1, 1), MatrixXd::Zero(1, 1));
  const SampledSignal u = prbs(1, horizon, tau, {1.0}, 5.0, 11);
  const SampledSignal y = simulate(P, u, VectorXd::Zero(1), horizon, tau).y;
  const auto cls = ControllerClass::pi(1);
  const auto vs = virtual_signals(RationalMatrix::scalar({1.0}, {1.0, 0.5}), y);
  const auto fit = solve_theta(cls, regressors(cls, vs.e_v), u, VrftOptions{});
  const Eigen::Vector2d ideal(2.0, 2.0);
  const double err = (fit.params.theta - ideal).norm() / ideal.norm();
  report(1, "vrft consistency", err <= 1e-3, seconds_since(t0), 10.0,
         "theta=(" + fmt("%.5f", fit.params.theta(0)) + "," + fmt("%.5f", fit.params.theta(1)) +
             ") rel_err=" + fmt("%.2e", err) + " (<= 1e-3)");
}

void sliding_poles() {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<int> plant_dim(2, 4), ctrl_dim(1, 3), model_dim(2, 4);
  int matched = 0, total = 20;
  for (int k = 0; k < total; ++k) {
    const auto P = random_stable(plant_dim(rng), 2, 2, rng, false);
    const auto R = random_stable(ctrl_dim(rng), 2, 2, rng, true);
    const auto M = random_stable(model_dim(rng), 2, 2, rng, false);
    if (sliding_poles_check(P, R, M, 1e-6).matched) ++matched;
  }
  report(2, "sliding-mode poles", matched == total, seconds_since(t0), 5.0,
         std::to_string(matched) + "/" + std::to_string(total) + " random triples matched at tol 1e-6");
}

struct TankRun {
  BenchmarkConfig cfg;
  ArtifactBundle bundle;
  SimulateArtifacts half;  // every scenario again at dt/2
  double seconds = 0.0;
};

const Scenario& find(const SimulateArtifacts& s, const std::string& name) {
  for (const auto& x : s.scenarios)
    if (x.name == name) return x;
  throw std::runtime_error("missing scenario " + name);
}

TankRun tank_run() {
  const auto t0 = std::chrono::steady_clock::now();
  TankRun run;
  run.bundle = run_pipeline(run.cfg, {});
  BenchmarkConfig half = run.cfg;
  half.run.dt = 0.5 * run.cfg.run.dt;
  half.ismc.tau_eq = 100.0 * run.cfg.run.dt;
  run.half = stage_simulate(half, &*run.bundle.vrft, *run.bundle.kdesign, {});
  run.seconds = seconds_since(t0);
  return run;
}

void tank_tracking(const TankRun& run) {
  const auto& kd = *run.bundle.kdesign;
  const auto& on = find(*run.bundle.simulate, "vrft_smc");
  const auto& off = find(*run.bundle.simulate, "vrft_nosmc");
  const auto& on_half = find(run.half, "vrft_smc");
  const double dt = run.cfg.run.dt;
  const double dscale = kd.CBbar.jacobiSvd().singularValues()(0) * run.cfg.d_bar;
  const double bound = 5.0 * on.boundary_layer + 100.0 * dt * dscale;
  const double halving = on.metrics.sup_error / on_half.metrics.sup_error;
  const double separation = off.metrics.sup_error / on.metrics.sup_error;
  // order-of-magnitude comparison with the reference design values
  MatrixXd Kp(2, 2);
  Kp << 3.9665, 5.1174, -6.4973, 4.5234;
  const double rho_ratio = kd.rho0 / 0.000477;
  const double d0_ratio = run.bundle.resid->d0_bar / 0.0006446;
  const double k_ratio = kd.K.norm() / Kp.norm();
  bool signs = true;
  for (int i = 0; i < 4; ++i) signs &= (kd.K.data()[i] > 0) == (Kp.data()[i] > 0);
  auto decade = [](double r) { return r >= 0.1 && r <= 10.0; };
  const bool ok = on.metrics.sup_error <= bound && halving >= 1.5 && halving <= 2.5 && separation >= 5.0 &&
                  decade(rho_ratio) && decade(d0_ratio) && decade(k_ratio) && signs;
  report(3, "triple-tank closed loop", ok, run.seconds, 60.0,
         "sup|y-y_o|=" + fmt("%.3e", on.metrics.sup_error) + " bound=" + fmt("%.3e", bound) +
             " halving_ratio=" + fmt("%.2f", halving) + " smc_off/on=" + fmt("%.1f", separation) +
             " rho0/reference=" + fmt("%.2f", rho_ratio) + " d0bar/reference=" + fmt("%.2f", d0_ratio) +
             " |K|/reference=" + fmt("%.2f", k_ratio) + (signs ? " K signs agree" : " K signs differ"));
}

void equivalent_control_recovery(const TankRun& run) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto& ideal = find(*run.bundle.simulate, "ideal_smc");
  const double tau_eq = run.bundle.simulate->tau_eq;
  const SampledSignal ueq = equivalent_control(ideal.trace.u1, tau_eq);
  const int start = static_cast<int>(std::ceil(3.0 * tau_eq / ueq.tau()));
  const MatrixXd gap = (ueq.values() + ideal.trace.d.values()).bottomRows(ueq.T() - start);
  const double rms = std::sqrt(gap.rowwise().squaredNorm().mean());
  report(4, "equivalent-control recovery", rms <= 0.1 * run.cfg.d_bar, run.seconds + seconds_since(t0), 30.0,
         "rms|u_eq+d|=" + fmt("%.3e", rms) + " (<= " + fmt("%.3e", 0.1 * run.cfg.d_bar) + ")");
}

// Tuples of ydot(0) = CB (u + d(0)) from a simulated plant with a constant disturbance.
std::vector<InitialTuple> plant_tuples(const StateSpace& P, int N, double dbar, std::mt19937_64& rng) {
  const int m = P.m();
  InputSampler ins = [m](std::mt19937_64& g) {
    std::uniform_real_distribution<double> U(-1.0, 1.0);
    VectorXd u(m);
    for (int i = 0; i < m; ++i) u(i) = U(g);
    return u;
  };
  DisturbanceSampler dis = [m, dbar](std::mt19937_64& g) -> std::function<VectorXd(double)> {
    std::normal_distribution<double> N;
    std::uniform_real_distribution<double> U(0.0, 1.0);
    VectorXd d(m);
    for (int i = 0; i < m; ++i) d(i) = N(g);
    d *= dbar * U(g) / d.norm();
    return [d](double) { return d; };
  };
  return collect_initial_tuples(P, N, ins, dis, 1e-3, rng());
}

void design_chain() {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(77);
  int qmi_ok = 0, outer_ok = 0, pd_ok = 0;
  double worst_tuple = -1e300, worst_outer = -1e300, worst_eig = 1e300;
  const int cases = 20;
  for (int c = 0; c < cases; ++c) {
    const StateSpace P = random_stable(3, 2, 2, rng, false);
    const MatrixXd CB = P.C() * P.B();
    const double dbar = 0.05;
    const auto tuples = plant_tuples(P, 30, dbar, rng);
    const auto ell = build_ellipsoids(tuples, dbar);
    const MatrixXd Z = CB.inverse().transpose();
    bool all = true;
    for (size_t i = 0; i < ell.size(); ++i) {
      const double scale = dbar * dbar + tuples[i].u0.squaredNorm();
      const double v = qmi_value(ell[i], Z) / scale;
      worst_tuple = std::max(worst_tuple, v);
      all &= v <= 1e-8;
    }
    qmi_ok += all;
    const OverApprox oa = overapproximate(ell);
    const double vo = qmi_value(oa, Z);
    worst_outer = std::max(worst_outer, vo);
    outer_ok += vo <= 1e-8;
    const KDesign kd = solve_K(oa);
    if (kd.feasible) {
      const PdCheck pd = verify_pd(CB, kd.K);
      worst_eig = std::min(worst_eig, pd.min_eig_sym);
      pd_ok += pd.pd;
    }
  }
  // scalar case against a grid over the over-approximated interval
  int agree = 0, feasible_cases = 0;
  const int scalar_cases = 20;
  for (int c = 0; c < scalar_cases; ++c) {
    std::uniform_real_distribution<double> U(0.5, 2.0);
    const double b = (c % 2 ? -1.0 : 1.0) * U(rng);
    StateSpace P(MatrixXd::Constant(1, 1, -1.0), MatrixXd::Constant(1, 1, b), MatrixXd::Ones(1, 1),
                 MatrixXd::Zero(1, 1));
    const double dbar = c % 4 < 2 ? 0.1 : 2.0;
    const auto tuples = plant_tuples(P, 10, dbar, rng);
    const OverApprox oa = overapproximate(build_ellipsoids(tuples, dbar));
    const bool sdp_feasible = solve_K(oa).feasible;
    const double r = 1.0 / std::sqrt(oa.Abar(0, 0));
    const double lo = oa.zeta_bar(0, 0) - 2.0 * r, hi = oa.zeta_bar(0, 0) + 2.0 * r;
    bool pos = false, neg = false;
    const int grid = 10000;
    for (int k = 0; k < grid; ++k) {
      const double z = lo + (hi - lo) * (k + 0.5) / grid;
      if (qmi_value(oa, MatrixXd::Constant(1, 1, z)) <= 0.0) (z > 0 ? pos : neg) = true;
    }
    const bool grid_feasible = pos != neg;
    feasible_cases += grid_feasible;
    agree += grid_feasible == sdp_feasible;
  }
  const bool ok = qmi_ok == cases && outer_ok == cases && pd_ok == cases && agree == scalar_cases;
  report(5, "ellipsoid and gain design chain", ok, seconds_since(t0), 60.0,
         "tuple_qmi " + std::to_string(qmi_ok) + "/20 (worst " + fmt("%.1e", worst_tuple) + "), outer " +
             std::to_string(outer_ok) + "/20 (worst " + fmt("%.1e", worst_outer) + "), pd " + std::to_string(pd_ok) +
             "/20 (min eig " + fmt("%.3e", worst_eig) + "), scalar grid agreement " + std::to_string(agree) +
             "/20 with " + std::to_string(feasible_cases) + " feasible");
}

void residual_bound(const TankRun& run) {
  const auto& on = find(*run.bundle.simulate, "vrft_smc");
  const double oracle = sup_rows(on.trace.d0_true.values());
  const double est = run.bundle.resid->d0_bar;
  const double ratio = est / oracle;
  report(6, "residual disturbance bound", ratio >= 0.5 && ratio <= 2.0, run.seconds, 30.0,
         "estimate=" + fmt("%.4e", est) + " oracle=" + fmt("%.4e", oracle) + " ratio=" + fmt("%.3f", ratio) +
             " (in [0.5, 2])");
}

void gain_necessity(const TankRun& run) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto& kd = *run.bundle.kdesign;
  const StateSpace controller = theta_to_controller(controller_class(run.cfg), run.bundle.vrft->theta).second;
  const double rho = 0.1 * kd.rho0;
  // candidate directions: a circle plus the direction hardest to cancel through K
  std::vector<VectorXd> dirs;
  for (int i = 0; i < 8; ++i) {
    const double a = 2.0 * std::numbers::pi * i / 8.0;
    dirs.push_back(Eigen::Vector2d(std::cos(a), std::sin(a)));
  }
  Eigen::JacobiSVD<MatrixXd> svd(kd.K, Eigen::ComputeFullU);
  dirs.push_back(svd.matrixU().col(1));
  dirs.push_back(-svd.matrixU().col(1));
  double worst = 0.0, layer = 0.0;
  for (const auto& v : dirs) {
    const VectorXd d = run.cfg.d_bar * v.normalized();
    ScenarioRequest req;
    req.rho = rho;
    const Scenario sc =
        run_scenario(run.cfg, controller, kd, TimeFunction([d](double) { return d; }), req);
    if (sc.metrics.sup_sigma > worst) {
      worst = sc.metrics.sup_sigma;
      layer = sc.boundary_layer;
    }
  }
  report(7, "gain-bound necessity", worst > 10.0 * layer, seconds_since(t0), 30.0,
         "rho=0.1*rho0=" + fmt("%.3e", rho) + " worst sup|sigma|=" + fmt("%.3e", worst) + " > 10*layer=" +
             fmt("%.3e", 10.0 * layer));
}

void sliding_identity(const TankRun& run) {
  const double dt = run.cfg.run.dt;
  bool ok = true;
  std::string detail;
  double cmax = 0.0;
  for (const auto& sc : run.bundle.simulate->scenarios) {
    const auto& h = find(run.half, sc.name);
    const double ratio = sc.metrics.identity_sup / h.metrics.identity_sup;
    cmax = std::max(cmax, sc.metrics.identity_sup / dt);
    ok &= ratio >= 1.5 && ratio <= 2.5 && std::isfinite(ratio);
    detail += " " + sc.name + "=" + fmt("%.2f", ratio);
  }
  report(8, "sliding variable identity", ok, run.seconds, 60.0,
         "c=" + fmt("%.3e", cmax) + " halving ratios:" + detail + " (in [1.5, 2.5])");
}

}  // namespace

int main() {
  try {
    vrft_consistency();
    sliding_poles();
    const TankRun run = tank_run();
    tank_tracking(run);
    equivalent_control_recovery(run);
    design_chain();
    residual_bound(run);
    gain_necessity(run);
    sliding_identity(run);
  } catch (const std::exception& e) {
    std::printf("FAIL aborted: %s\n", e.what());
    return 1;
  }
  return failures == 0 ? 0 : 1;
}
