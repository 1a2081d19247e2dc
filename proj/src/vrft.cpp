#include "ddismc/vrft.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "ddismc/errors.hpp"

namespace ddismc {

ControllerClass::ControllerClass(Poly chi, Eigen::MatrixXi degree_mask, ThetaLayout layout)
    : chi_(poly::trim(chi)), mask_(std::move(degree_mask)), layout_(layout) {
  if (chi_.empty()) throw std::invalid_argument("ControllerClass: chi must have a nonzero leading coefficient");
  if (mask_.rows() != mask_.cols() || mask_.rows() == 0)
    throw std::invalid_argument("ControllerClass: degree mask must be square and nonempty");
  const int nR = poly::degree(chi_);
  for (int i = 0; i < mask_.rows(); ++i)
    for (int j = 0; j < mask_.cols(); ++j) {
      if (mask_(i, j) < -1) throw std::invalid_argument("ControllerClass: mask entries must be >= -1");
      if (mask_(i, j) > nR)
        throw std::invalid_argument("ControllerClass: numerator degree exceeds deg chi in entry (" +
                                    std::to_string(i) + "," + std::to_string(j) + ")");
    }
  const int m = this->m();
  const int qmax = max_degree();
  if (layout_ == ThetaLayout::Stacked) {
    for (int q = 0; q <= qmax; ++q)
      for (int j = 0; j < m; ++j)
        for (int i = 0; i < m; ++i)
          if (q <= mask_(i, j)) support_.push_back({q, i, j});
  } else {
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < m; ++j)
        for (int q = mask_(i, j); q >= 0; --q) support_.push_back({q, i, j});
  }
}

ControllerClass ControllerClass::pi(int m, ThetaLayout layout) {
  if (m <= 0) throw std::invalid_argument("ControllerClass::pi: m must be positive");
  return ControllerClass({0.0, 1.0}, Eigen::MatrixXi::Ones(m, m), layout);
}

int ControllerClass::max_degree() const { return mask_.size() ? std::max(mask_.maxCoeff(), 0) : 0; }

ControllerParameters make_parameters(const ControllerClass& cls, const VectorXd& theta) {
  if (theta.size() != cls.num_params())
    throw std::invalid_argument("theta has " + std::to_string(theta.size()) + " entries, class expects " +
                                std::to_string(cls.num_params()));
  ControllerParameters p;
  p.theta = theta;
  p.pi_matrices.assign(cls.max_degree() + 1, MatrixXd::Zero(cls.m(), cls.m()));
  const auto& sup = cls.support();
  for (std::size_t k = 0; k < sup.size(); ++k) p.pi_matrices[sup[k].q](sup[k].i, sup[k].j) = theta(k);
  return p;
}

namespace {

double poly_root_scale(const Poly& p) {
  double s = 0.0;
  if (poly::degree(p) >= 1)
    for (const auto& r : poly::roots(p)) s = std::max(s, std::abs(r));
  return s;
}

// s^q / chi with common powers of s cancelled.
RationalEntry regressor_entry(const Poly& chi, int q) {
  int k = 0;
  while (k < static_cast<int>(chi.size()) - 1 && chi[k] == 0.0 && k < q) ++k;
  Poly num(q - k + 1, 0.0);
  num[q - k] = 1.0;
  return {num, Poly(chi.begin() + k, chi.end())};
}

struct Window {
  int k0 = 0;
  int k1 = 0;
  VectorXd w;
};

Window trapezoid_window(int T, double tau, double trim) {
  if (!(trim >= 0.0 && trim < 0.5)) throw std::invalid_argument("trim fraction must lie in [0, 0.5)");
  Window win;
  const int cut = static_cast<int>(std::floor(trim * T));
  win.k0 = cut;
  win.k1 = T - 1 - cut;
  const int len = win.k1 - win.k0 + 1;
  if (len < 2) throw std::invalid_argument("record too short after trimming");
  win.w = VectorXd::Constant(len, tau);
  win.w(0) *= 0.5;
  win.w(len - 1) *= 0.5;
  return win;
}

void check_aligned(const std::vector<SampledSignal>& phi, const SampledSignal& u, int m) {
  if (phi.empty()) throw std::invalid_argument("empty regressor list");
  if (u.channels() != m) throw std::invalid_argument("u channel count does not match the controller class");
  for (const auto& p : phi) {
    if (p.T() != u.T() || p.channels() != m) throw std::invalid_argument("regressors and u are not aligned");
    if (std::abs(p.tau() - u.tau()) > 1e-12 * u.tau()) throw std::invalid_argument("regressors and u differ in tau");
  }
}

// Stack of regressor columns, column index q*m + j.
MatrixXd stack_columns(const std::vector<SampledSignal>& phi, const Window& win) {
  const int m = phi[0].channels();
  const int len = win.k1 - win.k0 + 1;
  MatrixXd P(len, static_cast<int>(phi.size()) * m);
  for (std::size_t q = 0; q < phi.size(); ++q)
    P.middleCols(q * m, m) = phi[q].values().middleRows(win.k0, len);
  return P;
}

std::string describe(const ControllerClass& cls, const VectorXd& v) {
  std::ostringstream os;
  const auto& sup = cls.support();
  bool first = true;
  for (std::size_t k = 0; k < sup.size(); ++k)
    if (std::abs(v(k)) > 0.2) {
      os << (first ? "" : ", ") << "Pi_" << sup[k].q << "(" << sup[k].i << "," << sup[k].j << ")";
      first = false;
    }
  return os.str();
}

}  // namespace

VirtualSignals virtual_signals(const RationalMatrix& M, const SampledSignal& y, const FilterOptions& opt) {
  if (M.rows() != M.cols() || M.rows() == 0) throw std::invalid_argument("virtual_signals: M must be square");
  if (y.channels() != M.rows()) throw std::invalid_argument("virtual_signals: y channel count does not match M");
  if (!y.values().allFinite()) throw std::invalid_argument("virtual_signals: y has non-finite samples");
  const int m = M.rows();

  double scale = 1.0;
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < m; ++j) {
      scale = std::max(scale, poly_root_scale(M(i, j).num));
      scale = std::max(scale, poly_root_scale(M(i, j).den));
    }
  auto relative_det = [&](Complex s) {
    const Eigen::MatrixXcd Ms = M.eval(s);
    double bound = 1.0;
    for (int i = 0; i < m; ++i) bound *= Ms.row(i).norm();
    return bound > 0.0 ? std::abs(Ms.determinant()) / bound : 0.0;
  };
  const Complex probes[] = {{0.37, 0.91}, {1.3, 0.2}, {-0.4, 2.1}, {2.7, -1.6}};
  bool singular = true;
  for (Complex s : probes)
    if (relative_det(s * scale) > 1e-10) singular = false;
  if (singular) throw std::invalid_argument("virtual_signals: reference model is singular");

  FrequencyOperator op;
  op.rows = op.cols = m;
  op.eval = [M](Complex s) -> Eigen::MatrixXcd { return M.eval(s).partialPivLu().inverse(); };
  const double w1 = 1e3 * scale, w2 = 1e4 * scale;
  const double g1 = op.eval(Complex(0.0, w1)).norm(), g2 = op.eval(Complex(0.0, w2)).norm();
  op.excess = std::max(0, static_cast<int>(std::lround(std::log10(g2 / g1))));
  op.integrator = relative_det(Complex(0.0, 0.0)) < 1e-12;

  VirtualSignals out;
  out.r_v = offline_filter(op, y, opt);
  out.e_v = SampledSignal(y.t0(), y.tau(), out.r_v.values() - y.values());
  return out;
}

std::vector<SampledSignal> regressors(const ControllerClass& cls, const SampledSignal& e_v, const FilterOptions& opt) {
  if (e_v.channels() != cls.m()) throw std::invalid_argument("regressors: e_v channel count does not match class");
  std::vector<SampledSignal> out;
  for (int q = 0; q <= cls.max_degree(); ++q) {
    const RationalEntry e = regressor_entry(cls.chi(), q);
    if (poly::degree(e.num) - poly::degree(e.den) > opt.max_excess)
      throw std::invalid_argument("regressors: s^" + std::to_string(q) + "/chi exceeds the allowed excess");
    if (poly::degree(e.num) == 0 && poly::degree(e.den) == 0) {
      out.emplace_back(e_v.t0(), e_v.tau(), e_v.values() * (e.num[0] / e.den[0]));
      continue;
    }
    out.push_back(offline_filter(RationalMatrix::diagonal(std::vector<RationalEntry>(cls.m(), e)), e_v, opt));
  }
  return out;
}

VrftFit solve_theta(const ControllerClass& cls, const std::vector<SampledSignal>& phi, const SampledSignal& u,
                    const VrftOptions& opt) {
  if (!(opt.ridge >= 0.0)) throw std::invalid_argument("solve_theta: ridge must be nonnegative");
  const int m = cls.m();
  check_aligned(phi, u, m);
  if (static_cast<int>(phi.size()) != cls.max_degree() + 1)
    throw std::invalid_argument("solve_theta: regressor count does not match the class");
  const Window win = trapezoid_window(u.T(), u.tau(), opt.trim);
  const int len = win.k1 - win.k0 + 1;
  const MatrixXd P = stack_columns(phi, win);
  const MatrixXd U = u.values().middleRows(win.k0, len);
  const MatrixXd Gf = P.transpose() * win.w.asDiagonal() * P;
  const MatrixXd bf = P.transpose() * win.w.asDiagonal() * U;

  const auto& sup = cls.support();
  const int n = cls.num_params();
  MatrixXd G = MatrixXd::Zero(n, n);
  VectorXd b(n);
  for (int a = 0; a < n; ++a) {
    b(a) = bf(sup[a].q * m + sup[a].j, sup[a].i);
    for (int c = 0; c < n; ++c)
      if (sup[a].i == sup[c].i) G(a, c) = Gf(sup[a].q * m + sup[a].j, sup[c].q * m + sup[c].j);
  }
  G += opt.ridge * MatrixXd::Identity(n, n);

  Eigen::SelfAdjointEigenSolver<MatrixXd> es(G);
  const VectorXd ev = es.eigenvalues();
  const double lmax = std::max(ev(n - 1), 0.0);
  if (!(lmax > 0.0) || ev(0) <= 1e-13 * lmax) {
    std::ostringstream os;
    os << "solve_theta: insufficient excitation, Gram matrix is rank deficient along";
    for (int k = 0; k < n && ev(k) <= 1e-13 * lmax; ++k) os << " [" << describe(cls, es.eigenvectors().col(k)) << "]";
    if (!(lmax > 0.0)) os << " every direction";
    throw NumericalFailure(os.str());
  }
  VrftFit fit;
  fit.params = make_parameters(cls, G.llt().solve(b));
  fit.gram_condition = ev(n - 1) / ev(0);
  fit.ridge = opt.ridge;
  fit.cost = cost_jvr(cls, fit.params, phi, u, opt);
  return fit;
}

ControllerParameters solve_theta(const ControllerClass& cls, const SampledSignal& e_v, const SampledSignal& u,
                                 double ridge, const VrftOptions& opt) {
  VrftOptions o = opt;
  o.ridge = ridge;
  return solve_theta(cls, regressors(cls, e_v, opt.filter), u, o).params;
}

SampledSignal apply_parameters(const ControllerClass& cls, const ControllerParameters& theta,
                               const std::vector<SampledSignal>& phi) {
  if (theta.theta.size() != cls.num_params()) throw std::invalid_argument("theta does not match the class");
  if (phi.empty()) throw std::invalid_argument("empty regressor list");
  const auto& sup = cls.support();
  MatrixXd out = MatrixXd::Zero(phi[0].T(), cls.m());
  for (std::size_t k = 0; k < sup.size(); ++k)
    out.col(sup[k].i) += theta.theta(k) * phi[sup[k].q].values().col(sup[k].j);
  return SampledSignal(phi[0].t0(), phi[0].tau(), out);
}

double cost_jvr(const ControllerClass& cls, const ControllerParameters& theta, const std::vector<SampledSignal>& phi,
                const SampledSignal& u, const VrftOptions& opt) {
  check_aligned(phi, u, cls.m());
  const Window win = trapezoid_window(u.T(), u.tau(), opt.trim);
  const int len = win.k1 - win.k0 + 1;
  const MatrixXd R = u.values().middleRows(win.k0, len) -
                     apply_parameters(cls, theta, phi).values().middleRows(win.k0, len);
  double J = 0.0;
  for (int k = 0; k < len; ++k) J += win.w(k) * R.row(k).squaredNorm();
  return J;
}

double cost_jvr(const ControllerClass& cls, const ControllerParameters& theta, const SampledSignal& e_v,
                const SampledSignal& u, const VrftOptions& opt) {
  return cost_jvr(cls, theta, regressors(cls, e_v, opt.filter), u, opt);
}

std::pair<RationalMatrix, StateSpace> theta_to_controller(const ControllerClass& cls, const VectorXd& theta) {
  const ControllerParameters p = make_parameters(cls, theta);
  const int m = cls.m();
  RationalMatrix R(m, m);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < m; ++j) {
      Poly num(p.pi_matrices.size(), 0.0);
      for (std::size_t q = 0; q < p.pi_matrices.size(); ++q) num[q] = p.pi_matrices[q](i, j);
      if (poly::degree(num) > poly::degree(cls.chi()))
        throw std::invalid_argument("theta_to_controller: improper entry");
      R.set(i, j, num, cls.chi());
    }
  return {R, realize(R)};
}

VectorXd controller_to_theta(const ControllerClass& cls, const RationalMatrix& R) {
  const int m = cls.m();
  if (R.rows() != m || R.cols() != m) throw std::invalid_argument("controller_to_theta: size mismatch");
  const Poly& chi = cls.chi();
  const auto& sup = cls.support();
  VectorXd theta = VectorXd::Zero(cls.num_params());
  std::vector<Poly> nums(m * m);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < m; ++j) {
      const auto& e = R(i, j);
      if (e.num.empty()) continue;
      // den must be a scalar multiple of chi
      if (e.den.size() != chi.size())
        throw std::invalid_argument("controller_to_theta: denominator differs from chi");
      const double c = e.den.back() / chi.back();
      for (std::size_t k = 0; k < chi.size(); ++k)
        if (std::abs(e.den[k] - c * chi[k]) > 1e-12 * std::abs(e.den[k]) + 1e-300)
          throw std::invalid_argument("controller_to_theta: denominator differs from chi");
      nums[i * m + j] = poly::scale(e.num, 1.0 / c);
      const int deg = poly::degree(nums[i * m + j]);
      if (deg > cls.degree_mask()(i, j)) throw std::invalid_argument("controller_to_theta: entry violates the mask");
    }
  for (std::size_t k = 0; k < sup.size(); ++k) {
    const Poly& n = nums[sup[k].i * m + sup[k].j];
    if (sup[k].q < static_cast<int>(n.size())) theta(k) = n[sup[k].q];
  }
  return theta;
}

SampledSignal remove_operating_point(const SampledSignal& x, const VectorXd& op) {
  if (op.size() != x.channels()) throw std::invalid_argument("remove_operating_point: size mismatch");
  return SampledSignal(x.t0(), x.tau(), x.values().rowwise() - op.transpose());
}

VectorXd signal_mean(const SampledSignal& x) {
  if (x.T() == 0) throw std::invalid_argument("signal_mean: empty signal");
  return x.values().colwise().mean().transpose();
}

}  // namespace ddismc
