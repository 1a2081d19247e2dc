#include "ddismc/ismc.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "ddismc/errors.hpp"

namespace ddismc {

void IsmcConfig::validate() const {
  if (!(rho > 0.0) || !std::isfinite(rho)) throw std::invalid_argument("IsmcConfig: rho must be positive");
  if (K.size() == 0 || K.rows() != K.cols()) throw std::invalid_argument("IsmcConfig: K must be square");
  if (!K.allFinite()) throw std::invalid_argument("IsmcConfig: K must be finite");
  if (!(boundary_layer >= 0.0)) throw std::invalid_argument("IsmcConfig: boundary_layer must be >= 0");
  if (!(eq_filter_tau >= 0.0)) throw std::invalid_argument("IsmcConfig: eq_filter_tau must be >= 0");
}

double default_boundary_layer(double rho, const MatrixXd& K, const MatrixXd& CB_estimate, double dt, double kappa) {
  const MatrixXd G = CB_estimate * K;
  return kappa * dt * rho * G.jacobiSvd().singularValues()(0);
}

VectorXd unit_vector_control(const VectorXd& sigma, const IsmcConfig& cfg) {
  if (!sigma.allFinite()) throw std::invalid_argument("unit_vector_control: sigma must be finite");
  if (sigma.size() != cfg.K.cols()) throw std::invalid_argument("unit_vector_control: sigma size does not match K");
  const double n = sigma.norm();
  if (n == 0.0) return VectorXd::Zero(cfg.K.rows());
  const double den = n > cfg.boundary_layer ? n : cfg.boundary_layer;
  return cfg.rho * (cfg.K * sigma) / den;
}

namespace {

double interp_index(const SampledSignal& s, double t, int* k0) {
  const double x = (t - s.t0()) / s.tau();
  if (x <= 0.0) {
    *k0 = 0;
    return 0.0;
  }
  if (x >= s.T() - 1) {
    *k0 = std::max(0, s.T() - 2);
    return s.T() > 1 ? 1.0 : 0.0;
  }
  *k0 = static_cast<int>(std::floor(x));
  return x - *k0;
}

VectorXd interp(const MatrixXd& v, int k0, double a) {
  if (v.rows() == 1) return v.row(0).transpose();
  return ((1.0 - a) * v.row(k0) + a * v.row(k0 + 1)).transpose();
}

}  // namespace

Reference reference_from_signal(const SampledSignal& r) {
  if (r.T() < 1) throw std::invalid_argument("reference_from_signal: empty signal");
  const int T = r.T();
  MatrixXd dv = MatrixXd::Zero(T, r.channels());
  if (T > 1) {
    dv.row(0) = (r.values().row(1) - r.values().row(0)) / r.tau();
    dv.row(T - 1) = (r.values().row(T - 1) - r.values().row(T - 2)) / r.tau();
    for (int k = 1; k < T - 1; ++k) dv.row(k) = (r.values().row(k + 1) - r.values().row(k - 1)) / (2.0 * r.tau());
  }
  const SampledSignal d(r.t0(), r.tau(), dv);
  Reference ref;
  ref.r = [r](double t) {
    int k;
    const double a = interp_index(r, t, &k);
    return interp(r.values(), k, a);
  };
  ref.rdot = [d](double t) {
    int k;
    const double a = interp_index(d, t, &k);
    return interp(d.values(), k, a);
  };
  return ref;
}

ClosedLoopTrace closed_loop_simulate(const StateSpace& plant, const DisturbanceSource& disturbance,
                                     const StateSpace& controller, const StateSpace& Mreal, const Reference& ref,
                                     const IsmcConfig& cfg, const ClosedLoopOptions& opt) {
  const int m = plant.m();
  if (plant.p() != m) throw std::invalid_argument("closed_loop_simulate: plant must be square");
  if (plant.D().norm() != 0.0) throw std::invalid_argument("closed_loop_simulate: plant must be strictly proper");
  if (controller.m() != m || controller.p() != m)
    throw std::invalid_argument("closed_loop_simulate: controller channel count does not match the plant");
  if (Mreal.m() != m || Mreal.p() != m)
    throw std::invalid_argument("closed_loop_simulate: reference model channel count does not match the plant");
  if (Mreal.D().norm() != 0.0) throw std::invalid_argument("closed_loop_simulate: reference model must be strictly proper");
  if (opt.ideal && (opt.ideal->m() != m || opt.ideal->p() != m))
    throw std::invalid_argument("closed_loop_simulate: ideal controller channel count does not match the plant");
  if (!(opt.dt > 0.0)) throw std::invalid_argument("closed_loop_simulate: dt must be > 0");
  if (!ref.r) throw std::invalid_argument("closed_loop_simulate: reference is empty");
  if (opt.zeta_scheme == ZetaScheme::Derivative && !ref.rdot)
    throw std::invalid_argument("closed_loop_simulate: derivative scheme needs rdot");
  if (opt.smc_enabled) {
    cfg.validate();
    if (cfg.K.rows() != m) throw std::invalid_argument("closed_loop_simulate: K size does not match the plant");
  }
  if (const auto* s = std::get_if<SampledSignal>(&disturbance))
    if (s->channels() != m) throw std::invalid_argument("closed_loop_simulate: disturbance channel mismatch");

  const int n = plant.n(), nc = controller.n(), nm = Mreal.n(), ni = opt.ideal ? opt.ideal->n() : 0;
  const int ix = 0, iz = n, im = n + nc, ii = n + nc + nm;
  const int N_state = ii + ni;
  const double dt = opt.dt;
  const int N = static_cast<int>(std::llround(opt.horizon / dt));

  const MatrixXd &A = plant.A(), &B = plant.B(), &C = plant.C();
  const MatrixXd &A0 = controller.A(), &B0 = controller.B(), &C0 = controller.C(), &D0 = controller.D();
  const MatrixXd &Am = Mreal.A(), &Bm = Mreal.B(), &Cm = Mreal.C();
  const MatrixXd CmAm = Cm * Am, CmBm = Cm * Bm;

  auto dist = [&](double t) -> VectorXd {
    if (const auto* s = std::get_if<SampledSignal>(&disturbance)) return s->hold(t);
    VectorXd d = std::get<TimeFunction>(disturbance)(t);
    if (d.size() != m) throw std::invalid_argument("closed_loop_simulate: disturbance returned wrong size");
    return d;
  };
  auto reference = [&](double t) -> VectorXd {
    VectorXd r = ref.r(t);
    if (r.size() != m) throw std::invalid_argument("closed_loop_simulate: reference returned wrong size");
    return r;
  };

  auto f = [&](double t, const VectorXd& X, const VectorXd& u1) {
    const VectorXd r = reference(t);
    const VectorXd e = r - C * X.segment(ix, n);
    const VectorXd u0 = C0 * X.segment(iz, nc) + D0 * e;
    VectorXd dX(N_state);
    dX.segment(ix, n) = A * X.segment(ix, n) + B * (u0 + u1 + dist(t));
    dX.segment(iz, nc) = A0 * X.segment(iz, nc) + B0 * e;
    dX.segment(im, nm) = Am * X.segment(im, nm) + Bm * r;
    if (ni) dX.segment(ii, ni) = opt.ideal->A() * X.segment(ii, ni) + opt.ideal->B() * e;
    return dX;
  };

  VectorXd X = VectorXd::Zero(N_state);
  if (opt.x0.size()) {
    if (opt.x0.size() != n) throw std::invalid_argument("closed_loop_simulate: x0 dimension mismatch");
    X.segment(ix, n) = opt.x0;
  }
  VectorXd zeta = -(reference(0.0) - C * X.segment(ix, n));

  MatrixXd R(N + 1, m), Y(N + 1, m), Yo(N + 1, m), E(N + 1, m), S(N + 1, m), Z(N + 1, m), U0(N + 1, m),
      U1(N + 1, m), U(N + 1, m), D(N + 1, m), D0t(ni ? N + 1 : 0, m), XA(N + 1, n + nc + nm), L(N + 1, m);
  for (int k = 0; k <= N; ++k) {
    const double t = k * dt;
    const VectorXd r = reference(t);
    const VectorXd y = C * X.segment(ix, n);
    const VectorXd e = r - y;
    const VectorXd sigma = e + zeta;
    const VectorXd yo = Cm * X.segment(im, nm);
    const VectorXd u0 = C0 * X.segment(iz, nc) + D0 * e;
    const VectorXd u1 = opt.smc_enabled ? unit_vector_control(sigma, cfg) : VectorXd::Zero(m);
    const VectorXd d = dist(t);
    R.row(k) = r.transpose();
    Y.row(k) = y.transpose();
    Yo.row(k) = yo.transpose();
    E.row(k) = e.transpose();
    S.row(k) = sigma.transpose();
    Z.row(k) = zeta.transpose();
    U0.row(k) = u0.transpose();
    U1.row(k) = u1.transpose();
    U.row(k) = (u0 + u1).transpose();
    D.row(k) = d.transpose();
    L.row(k) = (sigma - (yo - y)).transpose();
    XA.row(k) = X.head(n + nc + nm).transpose();
    if (ni) D0t.row(k) = (u0 - (opt.ideal->C() * X.segment(ii, ni) + opt.ideal->D() * e)).transpose();
    if (k == N) break;
    const VectorXd k1 = f(t, X, u1);
    const VectorXd k2 = f(t + 0.5 * dt, X + 0.5 * dt * k1, u1);
    const VectorXd k3 = f(t + 0.5 * dt, X + 0.5 * dt * k2, u1);
    const VectorXd k4 = f(t + dt, X + dt * k3, u1);
    zeta += dt * (CmAm * X.segment(im, nm) + CmBm * r);
    if (opt.zeta_scheme == ZetaScheme::Increment)
      zeta -= reference(t + dt) - r;
    else
      zeta -= dt * ref.rdot(t);
    X += dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    if (!X.allFinite()) throw NumericalFailure("closed_loop_simulate: state diverged at t=" + format_double(t + dt));
  }
  auto sig = [&](MatrixXd v) { return SampledSignal(0.0, dt, std::move(v)); };
  ClosedLoopTrace tr;
  tr.r = sig(R);
  tr.y = sig(Y);
  tr.y_o = sig(Yo);
  tr.e = sig(E);
  tr.sigma = sig(S);
  tr.zeta = sig(Z);
  tr.u0 = sig(U0);
  tr.u1 = sig(U1);
  tr.u = sig(U);
  tr.d = sig(D);
  if (ni) tr.d0_true = sig(D0t);
  tr.x_a = sig(XA);
  tr.identity_residual = sig(L);
  return tr;
}

SampledSignal equivalent_control(const SampledSignal& u1, double tau_eq) {
  if (!(tau_eq >= 5.0 * u1.tau())) throw std::invalid_argument("equivalent_control: tau_eq must be >= 5 tau");
  const double a = std::exp(-u1.tau() / tau_eq);
  MatrixXd out(u1.T(), u1.channels());
  VectorXd s = VectorXd::Zero(u1.channels());
  for (int k = 0; k < u1.T(); ++k) {
    out.row(k) = s.transpose();
    s = a * s + (1.0 - a) * u1.row(k);
  }
  return SampledSignal(u1.t0(), u1.tau(), out);
}

AugmentedSystem build_augmented(const StateSpace& plant, const StateSpace& controller, const StateSpace& Mreal) {
  const int n = plant.n(), nc = controller.n(), nm = Mreal.n(), m = plant.m();
  if (plant.p() != m || controller.m() != m || controller.p() != m || Mreal.m() != m || Mreal.p() != m)
    throw std::invalid_argument("build_augmented: channel dimensions are inconsistent");
  const MatrixXd &A = plant.A(), &B = plant.B(), &C = plant.C();
  const MatrixXd &A0 = controller.A(), &B0 = controller.B(), &C0 = controller.C(), &D0 = controller.D();
  const int N = n + nc + nm;
  MatrixXd Aa = MatrixXd::Zero(N, N), Ba = MatrixXd::Zero(N, m), Br = MatrixXd::Zero(N, m), Ca = MatrixXd::Zero(m, N);
  Aa.block(0, 0, n, n) = A - B * D0 * C;
  Aa.block(0, n, n, nc) = B * C0;
  Aa.block(n, 0, nc, n) = -B0 * C;
  Aa.block(n, n, nc, nc) = A0;
  Aa.block(n + nc, n + nc, nm, nm) = Mreal.A();
  Ba.topRows(n) = B;
  Br.topRows(n) = B * D0;
  Br.middleRows(n, nc) = B0;
  Br.bottomRows(nm) = Mreal.B();
  Ca.leftCols(n) = -C;
  Ca.rightCols(nm) = Mreal.C();
  return {StateSpace(Aa, Ba, Ca, MatrixXd::Zero(m, m)), Br};
}

namespace {

std::vector<Complex> eigenvalues(const MatrixXd& A) {
  std::vector<Complex> out;
  if (A.rows() == 0) return out;
  Eigen::EigenSolver<MatrixXd> es(A, false);
  for (int i = 0; i < es.eigenvalues().size(); ++i) out.push_back(es.eigenvalues()(i));
  return out;
}

}  // namespace

SlidingPolesReport sliding_poles_check(const StateSpace& plant, const StateSpace& controller, const StateSpace& Mreal,
                                       double rel_tol) {
  const AugmentedSystem aug = build_augmented(plant, controller, Mreal);
  SlidingPolesReport rep;
  const ZerosResult za = invariant_zeros(aug.sys);
  const ZerosResult zp = invariant_zeros(plant);
  rep.zeros_augmented = za.zeros;
  rep.plant_zeros = zp.zeros;
  rep.controller_poles = eigenvalues(controller.A());
  rep.model_poles = eigenvalues(Mreal.A());
  rep.degenerate = za.degenerate || zp.degenerate;

  std::vector<Complex> expected = rep.plant_zeros;
  expected.insert(expected.end(), rep.controller_poles.begin(), rep.controller_poles.end());
  expected.insert(expected.end(), rep.model_poles.begin(), rep.model_poles.end());
  std::vector<bool> used(rep.zeros_augmented.size(), false);
  for (const Complex& z : expected) {
    int best = -1;
    double bd = 0.0;
    for (std::size_t i = 0; i < rep.zeros_augmented.size(); ++i) {
      if (used[i]) continue;
      const double dd = std::abs(rep.zeros_augmented[i] - z);
      if (best < 0 || dd < bd) {
        best = static_cast<int>(i);
        bd = dd;
      }
    }
    if (best >= 0 && bd <= rel_tol * (1.0 + std::abs(z)))
      used[best] = true;
    else
      rep.unmatched_expected.push_back(z);
  }
  for (std::size_t i = 0; i < used.size(); ++i)
    if (!used[i]) rep.unmatched_augmented.push_back(rep.zeros_augmented[i]);
  rep.matched = !rep.degenerate && rep.unmatched_expected.empty() && rep.unmatched_augmented.empty();
  return rep;
}

StateSpace ideal_controller(const StateSpace& plant, const StateSpace& Mreal) {
  const int m = plant.m(), n = plant.n(), nm = Mreal.n();
  if (plant.p() != m || Mreal.m() != m || Mreal.p() != m)
    throw std::invalid_argument("ideal_controller: channel dimensions are inconsistent");
  if (Mreal.D().norm() != 0.0) throw std::invalid_argument("ideal_controller: reference model must be strictly proper");
  const MatrixXd &A = plant.A(), &B = plant.B(), &C = plant.C();
  const MatrixXd CB = C * B;
  Eigen::FullPivLU<MatrixXd> lu(CB);
  if (!lu.isInvertible()) throw std::invalid_argument("ideal_controller: CB is singular");
  const MatrixXd G = lu.inverse();
  const MatrixXd Ag = Mreal.A() + Mreal.B() * Mreal.C();
  const MatrixXd &Bg = Mreal.B(), &Cg = Mreal.C();
  MatrixXd Ar = MatrixXd::Zero(nm + n, nm + n), Bri(nm + n, m), Cr(m, nm + n);
  Ar.topLeftCorner(nm, nm) = Ag;
  Ar.bottomLeftCorner(n, nm) = B * G * Cg * Ag;
  Ar.bottomRightCorner(n, n) = A - B * G * C * A;
  Bri.topRows(nm) = Bg;
  Bri.bottomRows(n) = B * G * Cg * Bg;
  Cr.leftCols(nm) = G * Cg * Ag;
  Cr.rightCols(n) = -G * C * A;
  return StateSpace(Ar, Bri, Cr, G * Cg * Bg);
}

}  // namespace ddismc
