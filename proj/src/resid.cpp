#include "ddismc/resid.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include "ddismc/errors.hpp"

namespace ddismc {

HankelMatrix hankel(const SampledSignal& x, int depth) {
  const int T = x.T(), m = x.channels();
  if (depth < 1 || depth > T)
    throw std::invalid_argument("hankel: depth " + std::to_string(depth) + " outside [1, " + std::to_string(T) + "]");
  HankelMatrix H;
  H.depth = depth;
  H.source = x;
  const int cols = T - depth + 1;
  H.matrix.resize(depth * m, cols);
  for (int j = 0; j < cols; ++j)
    for (int r = 0; r < depth; ++r) H.matrix.block(r * m, j, m, 1) = x.values().row(j + r).transpose();
  return H;
}

SampledSignal ideal_error(const RationalMatrix& M, const SampledSignal& r, int substeps) {
  if (M.rows() != M.cols()) throw std::invalid_argument("ideal_error: M must be square");
  if (r.channels() != M.cols()) throw std::invalid_argument("ideal_error: r channel count does not match M");
  if (substeps < 1) throw std::invalid_argument("ideal_error: substeps must be >= 1");
  const StateSpace Ms = realize(M);
  const double tau = r.tau();
  const int T = r.T();
  auto rt = [&r, tau, T](double t) -> VectorXd {
    const double x = std::clamp(t / tau, 0.0, static_cast<double>(T - 1));
    const int k = std::min(static_cast<int>(std::floor(x)), std::max(T - 2, 0));
    if (T == 1) return r.row(0);
    const double a = x - k;
    return ((1.0 - a) * r.values().row(k) + a * r.values().row(k + 1)).transpose();
  };
  const double dt = tau / substeps;
  // midpoint of each held substep
  FeedbackLaw law = [&rt, dt](double t, const VectorXd&) { return rt(t + 0.5 * dt); };
  auto sim = simulate(Ms, law, VectorXd::Zero(Ms.n()), (T - 1) * tau, dt);
  MatrixXd e(T, r.channels());
  for (int k = 0; k < T; ++k) {
    const VectorXd y = Ms.C() * sim.x.row(k * substeps) + Ms.D() * r.row(k);
    e.row(k) = (r.row(k) - y).transpose();
  }
  return SampledSignal(r.t0(), tau, e);
}

SampledSignal virtual_d0(const ControllerClass& cls, const ControllerParameters& theta,
                         const std::vector<SampledSignal>& phi, const SampledSignal& u) {
  const SampledSignal uh = apply_parameters(cls, theta, phi);
  if (uh.T() != u.T() || uh.channels() != u.channels())
    throw std::invalid_argument("virtual_d0: regressors and u are not aligned");
  return SampledSignal(u.t0(), u.tau(), uh.values() - u.values());
}

SampledSignal virtual_d0(const ControllerClass& cls, const SampledSignal& u, const ControllerParameters& theta,
                         const SampledSignal& e_v, const FilterOptions& opt) {
  return virtual_d0(cls, theta, regressors(cls, e_v, opt), u);
}

double default_gamma(const HankelMatrix& Ev) {
  return 1e-6 * Ev.matrix.squaredNorm() / static_cast<double>(Ev.matrix.cols());
}

namespace {

int numeric_rank(const MatrixXd& E) {
  if (E.size() == 0) return 0;
  // singular values from the smaller Gram matrix
  const MatrixXd G = E.rows() <= E.cols() ? MatrixXd(E * E.transpose()) : MatrixXd(E.transpose() * E);
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(G, Eigen::EigenvaluesOnly);
  const VectorXd ev = es.eigenvalues();
  const double top = ev.maxCoeff();
  if (!(top > 0.0)) return 0;
  const double tol = std::max(E.rows(), E.cols()) * std::numeric_limits<double>::epsilon() * std::sqrt(top);
  int r = 0;
  for (int i = 0; i < ev.size(); ++i)
    if (ev(i) > 0.0 && std::sqrt(ev(i)) > tol) ++r;
  return r;
}

// Factorizes the ridge normal equations of E g = e once for many right-hand sides.
class RidgeSolver {
 public:
  RidgeSolver(const MatrixXd& E, double gamma, int rank) : E_(E), gamma_(gamma) {
    if (gamma == 0.0) {
      if (rank < E.cols())
        throw NumericalFailure("estimate_g: normal matrix is singular, Hankel rank " + std::to_string(rank) +
                               " < " + std::to_string(E.cols()) + " columns (insufficient excitation)");
      qr_.compute(E);
      return;
    }
    wide_ = E.rows() < E.cols();
    MatrixXd S = wide_ ? MatrixXd(E * E.transpose()) : MatrixXd(E.transpose() * E);
    S.diagonal().array() += gamma;
    llt_.compute(S);
    if (llt_.info() != Eigen::Success) throw NumericalFailure("estimate_g: ridge system is not positive definite");
  }

  VectorXd solve(const VectorXd& e) const {
    if (gamma_ == 0.0) return qr_.solve(e);
    if (wide_) return E_.transpose() * llt_.solve(e);
    return llt_.solve(E_.transpose() * e);
  }

 private:
  const MatrixXd& E_;
  double gamma_;
  bool wide_ = false;
  Eigen::ColPivHouseholderQR<MatrixXd> qr_;
  Eigen::LLT<MatrixXd> llt_;
};

}  // namespace

GEstimate estimate_g(const HankelMatrix& Ev, const VectorXd& e_o_window, double gamma) {
  if (!(gamma >= 0.0)) throw std::invalid_argument("estimate_g: gamma must be >= 0");
  if (e_o_window.size() != Ev.matrix.rows())
    throw std::invalid_argument("estimate_g: window length does not match the Hankel depth");
  GEstimate out;
  out.rank = numeric_rank(Ev.matrix);
  out.gamma = gamma;
  out.g = RidgeSolver(Ev.matrix, gamma, out.rank).solve(e_o_window);
  return out;
}

double dominant_time_constant(const RationalMatrix& M) {
  double tc = 0.0;
  for (int i = 0; i < M.rows(); ++i)
    for (int j = 0; j < M.cols(); ++j) {
      if (M.is_zero(i, j) || poly::degree(M(i, j).den) < 1) continue;
      for (const Complex& p : poly::roots(M(i, j).den))
        if (p.real() < 0.0) tc = std::max(tc, -1.0 / p.real());
    }
  if (!(tc > 0.0)) throw std::invalid_argument("dominant_time_constant: model has no stable pole");
  return tc;
}

int default_window(const RationalMatrix& M, double tau) {
  return std::max(2, static_cast<int>(std::lround(5.0 * dominant_time_constant(M) / tau)));
}

VectorXd stack_window(const SampledSignal& x, int start, int depth) {
  const int m = x.channels();
  if (start < 0 || start + depth > x.T()) throw std::invalid_argument("stack_window: window outside the signal");
  VectorXd v(depth * m);
  for (int r = 0; r < depth; ++r) v.segment(r * m, m) = x.values().row(start + r).transpose();
  return v;
}

D0Estimate estimate_d0_bound(const HankelMatrix& Ev, const HankelMatrix& D0v, const SampledSignal& e_o,
                             const ResidOptions& opt) {
  if (Ev.depth != D0v.depth || Ev.matrix.cols() != D0v.matrix.cols())
    throw std::invalid_argument("estimate_d0_bound: Hankel matrices differ in depth or length");
  const int depth = Ev.depth;
  const int m = e_o.channels();
  if (Ev.source.channels() != m) throw std::invalid_argument("estimate_d0_bound: e_o channel count mismatch");
  if (std::abs(Ev.source.tau() - e_o.tau()) > 1e-9 * e_o.tau())
    throw std::invalid_argument("estimate_d0_bound: e_o and the record use different sampling steps");
  if (e_o.T() < depth) throw std::invalid_argument("estimate_d0_bound: e_o shorter than the window");
  const int stride = opt.stride > 0 ? opt.stride : std::max(1, depth / 2);

  D0Estimate out;
  out.window = depth;
  out.gamma = opt.gamma < 0.0 ? default_gamma(Ev) : opt.gamma;
  out.rank = numeric_rank(Ev.matrix);
  const int p = D0v.source.channels();
  MatrixXd dh = MatrixXd::Zero(e_o.T(), p);
  for (int s = 0; s + depth <= e_o.T(); s += stride) out.window_starts.push_back(s);
  if (out.window_starts.back() + depth < e_o.T()) out.window_starts.push_back(e_o.T() - depth);
  const RidgeSolver solver(Ev.matrix, out.gamma, out.rank);
  for (int s : out.window_starts) {
    const VectorXd g = solver.solve(stack_window(e_o, s, depth));
    const VectorXd d = D0v.matrix * g;
    double sup = 0.0;
    for (int r = 0; r < depth; ++r) {
      dh.row(s + r) = d.segment(r * p, p).transpose();
      sup = std::max(sup, d.segment(r * p, p).norm());
    }
    out.window_sup.push_back(sup);
    out.d0_bar = std::max(out.d0_bar, sup);
  }
  out.d0_hat = SampledSignal(e_o.t0(), e_o.tau(), dh);
  return out;
}

}  // namespace ddismc
