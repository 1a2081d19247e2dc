#include "ddismc/linsys.hpp"

#include <algorithm>
#include <charconv>
#include <climits>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>

#include <unsupported/Eigen/FFT>

namespace ddismc {

namespace poly {

Poly trim(const Poly& p) {
  Poly r = p;
  while (!r.empty() && r.back() == 0.0) r.pop_back();
  return r;
}

int degree(const Poly& p) { return static_cast<int>(trim(p).size()) - 1; }

Poly add(const Poly& a, const Poly& b) {
  Poly r(std::max(a.size(), b.size()), 0.0);
  for (size_t i = 0; i < a.size(); ++i) r[i] += a[i];
  for (size_t i = 0; i < b.size(); ++i) r[i] += b[i];
  return trim(r);
}

Poly scale(const Poly& a, double c) {
  Poly r = a;
  for (double& v : r) v *= c;
  return trim(r);
}

Poly mul(const Poly& a, const Poly& b) {
  if (a.empty() || b.empty()) return {};
  Poly r(a.size() + b.size() - 1, 0.0);
  for (size_t i = 0; i < a.size(); ++i)
    for (size_t j = 0; j < b.size(); ++j) r[i + j] += a[i] * b[j];
  return trim(r);
}

Poly pow(const Poly& a, int k) {
  Poly r{1.0};
  for (int i = 0; i < k; ++i) r = mul(r, a);
  return r;
}

Complex eval(const Poly& p, Complex s) {
  Complex acc = 0.0;
  for (auto it = p.rbegin(); it != p.rend(); ++it) acc = acc * s + *it;
  return acc;
}

std::vector<Complex> roots(const Poly& p) {
  Poly q = trim(p);
  const int n = static_cast<int>(q.size()) - 1;
  if (n < 1) return {};
  std::vector<Complex> out;
  int lead_zeros = 0;
  while (lead_zeros < n && q[lead_zeros] == 0.0) ++lead_zeros;
  for (int i = 0; i < lead_zeros; ++i) out.emplace_back(0.0, 0.0);
  const int k = n - lead_zeros;
  if (k > 0) {
    MatrixXd comp = MatrixXd::Zero(k, k);
    for (int i = 1; i < k; ++i) comp(i, i - 1) = 1.0;
    for (int i = 0; i < k; ++i) comp(i, k - 1) = -q[lead_zeros + i] / q[n];
    Eigen::EigenSolver<MatrixXd> es(comp, false);
    for (int i = 0; i < k; ++i) out.push_back(es.eigenvalues()(i));
  }
  return out;
}

void divmod(const Poly& a, const Poly& b, Poly* q, Poly* r) {
  Poly bb = trim(b);
  if (bb.empty()) throw std::invalid_argument("poly::divmod: division by zero polynomial");
  Poly rem = trim(a);
  const int db = static_cast<int>(bb.size()) - 1;
  Poly quo;
  if (static_cast<int>(rem.size()) - 1 >= db) {
    quo.assign(rem.size() - bb.size() + 1, 0.0);
    for (int k = static_cast<int>(rem.size()) - 1; k >= db; --k) {
      const double c = rem[k] / bb[db];
      quo[k - db] = c;
      for (int j = 0; j <= db; ++j) rem[k - db + j] -= c * bb[j];
      rem[k] = 0.0;
    }
  }
  if (q) *q = trim(quo);
  if (r) *r = trim(rem);
}

}  // namespace poly

StateSpace::StateSpace(MatrixXd A, MatrixXd B, MatrixXd C, MatrixXd D)
    : A_(std::move(A)), B_(std::move(B)), C_(std::move(C)), D_(std::move(D)) {
  if (A_.rows() != A_.cols()) throw std::invalid_argument("StateSpace: A must be square");
  if (B_.rows() != A_.rows()) throw std::invalid_argument("StateSpace: B row count must equal n");
  if (C_.cols() != A_.rows()) throw std::invalid_argument("StateSpace: C column count must equal n");
  if (D_.rows() != C_.rows() || D_.cols() != B_.cols())
    throw std::invalid_argument("StateSpace: D must be p x m");
  if (!A_.allFinite() || !B_.allFinite() || !C_.allFinite() || !D_.allFinite())
    throw std::invalid_argument("StateSpace: non-finite entry");
}

StateSpace StateSpace::gain(const MatrixXd& D) {
  return StateSpace(MatrixXd(0, 0), MatrixXd(0, D.cols()), MatrixXd(D.rows(), 0), D);
}

Eigen::MatrixXcd StateSpace::freq_response(double omega) const {
  const Complex s(0.0, omega);
  Eigen::MatrixXcd G = D_.cast<Complex>();
  if (n() > 0) {
    Eigen::MatrixXcd M = s * Eigen::MatrixXcd::Identity(n(), n()) - A_.cast<Complex>();
    G += C_.cast<Complex>() * M.partialPivLu().solve(B_.cast<Complex>());
  }
  return G;
}

RationalMatrix::RationalMatrix(int rows, int cols) : rows_(rows), cols_(cols), e_(rows * cols) {
  if (rows < 0 || cols < 0) throw std::invalid_argument("RationalMatrix: negative size");
}

RationalMatrix RationalMatrix::identity(int m) {
  RationalMatrix r(m, m);
  for (int i = 0; i < m; ++i) r.set(i, i, {1.0}, {1.0});
  return r;
}

RationalMatrix RationalMatrix::diagonal(const std::vector<RationalEntry>& d) {
  const int m = static_cast<int>(d.size());
  RationalMatrix r(m, m);
  for (int i = 0; i < m; ++i) r.set(i, i, d[i].num, d[i].den);
  return r;
}

RationalMatrix RationalMatrix::scalar(const Poly& num, const Poly& den) {
  RationalMatrix r(1, 1);
  r.set(0, 0, num, den);
  return r;
}

const RationalEntry& RationalMatrix::operator()(int i, int j) const {
  if (i < 0 || i >= rows_ || j < 0 || j >= cols_)
    throw std::out_of_range("RationalMatrix: index out of range");
  return e_[i * cols_ + j];
}

void RationalMatrix::set(int i, int j, Poly num, Poly den) {
  if (i < 0 || i >= rows_ || j < 0 || j >= cols_)
    throw std::out_of_range("RationalMatrix: index out of range");
  den = poly::trim(den);
  if (den.empty()) throw std::invalid_argument("RationalMatrix: zero denominator");
  for (double v : num)
    if (!std::isfinite(v)) throw std::invalid_argument("RationalMatrix: non-finite coefficient");
  for (double v : den)
    if (!std::isfinite(v)) throw std::invalid_argument("RationalMatrix: non-finite coefficient");
  e_[i * cols_ + j] = RationalEntry{poly::trim(num), den};
}

bool RationalMatrix::is_zero(int i, int j) const { return (*this)(i, j).num.empty(); }

int RationalMatrix::excess(int i, int j) const {
  const auto& e = (*this)(i, j);
  if (e.num.empty()) return INT_MIN;
  return poly::degree(e.num) - poly::degree(e.den);
}

int RationalMatrix::max_excess() const {
  int ex = INT_MIN;
  for (int i = 0; i < rows_; ++i)
    for (int j = 0; j < cols_; ++j) ex = std::max(ex, excess(i, j));
  return ex;
}

Complex RationalMatrix::eval(int i, int j, Complex s) const {
  const auto& e = (*this)(i, j);
  if (e.num.empty()) return 0.0;
  return poly::eval(e.num, s) / poly::eval(e.den, s);
}

Eigen::MatrixXcd RationalMatrix::eval(Complex s) const {
  Eigen::MatrixXcd G(rows_, cols_);
  for (int i = 0; i < rows_; ++i)
    for (int j = 0; j < cols_; ++j) G(i, j) = eval(i, j, s);
  return G;
}

bool RationalMatrix::has_origin_pole() const {
  for (const auto& e : e_)
    if (!e.num.empty() && e.den[0] == 0.0) return true;
  return false;
}

std::vector<double> RationalMatrix::imag_pole_freqs(double tol) const {
  std::vector<double> out;
  for (const auto& e : e_) {
    if (e.num.empty()) continue;
    for (const Complex& z : poly::roots(e.den))
      if (std::abs(z.real()) <= tol * (1.0 + std::abs(z)) && std::abs(z.imag()) > tol)
        out.push_back(std::abs(z.imag()));
  }
  return out;
}

SampledSignal::SampledSignal(double t0, double tau, MatrixXd values)
    : t0_(t0), tau_(tau), v_(std::move(values)) {
  if (!(tau_ > 0.0) || !std::isfinite(tau_)) throw std::invalid_argument("SampledSignal: tau must be > 0");
  if (v_.rows() < 1) throw std::invalid_argument("SampledSignal: need at least one sample");
  if (!v_.allFinite()) throw std::invalid_argument("SampledSignal: non-finite value");
}

SampledSignal SampledSignal::zeros(double t0, double tau, int T, int m) {
  return SampledSignal(t0, tau, MatrixXd::Zero(T, m));
}

VectorXd SampledSignal::hold(double t) const {
  const double idx = std::floor((t - t0_) / tau_ + 1e-9);
  const int k = static_cast<int>(std::clamp(idx, 0.0, static_cast<double>(T() - 1)));
  return row(k);
}

SampledSignal SampledSignal::decimate(int k) const {
  if (k < 1) throw std::invalid_argument("SampledSignal::decimate: factor must be >= 1");
  const int Tn = (T() - 1) / k + 1;
  MatrixXd v(Tn, channels());
  for (int i = 0; i < Tn; ++i) v.row(i) = v_.row(i * k);
  return SampledSignal(t0_, tau_ * k, v);
}

SampledSignal SampledSignal::channel(int j) const {
  return SampledSignal(t0_, tau_, v_.col(j));
}

std::string format_double(double x) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), x);
  return std::string(buf, res.ptr);
}

void SampledSignal::write_csv(std::ostream& os) const {
  os << "t";
  for (int j = 0; j < channels(); ++j) os << ",ch" << j;
  os << "\n";
  for (int k = 0; k < T(); ++k) {
    os << format_double(time(k));
    for (int j = 0; j < channels(); ++j) os << ',' << format_double(v_(k, j));
    os << "\n";
  }
}

void SampledSignal::write_csv(const std::string& path) const {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("SampledSignal::write_csv: cannot open " + path);
  write_csv(f);
}

namespace {

double parse_double(const std::string& s) {
  double v = 0.0;
  const char* b = s.data();
  const char* e = s.data() + s.size();
  while (b < e && *b == ' ') ++b;
  auto res = std::from_chars(b, e, v);
  if (res.ec != std::errc()) throw std::runtime_error("csv: bad number '" + s + "'");
  return v;
}

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  return out;
}

}  // namespace

SampledSignal SampledSignal::read_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw std::runtime_error("csv: empty input");
  auto header = split(line);
  if (header.empty() || header[0] != "t") throw std::runtime_error("csv: header must start with t");
  const int m = static_cast<int>(header.size()) - 1;
  std::vector<double> ts;
  std::vector<double> vals;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    auto cells = split(line);
    if (static_cast<int>(cells.size()) != m + 1) throw std::runtime_error("csv: ragged row");
    ts.push_back(parse_double(cells[0]));
    for (int j = 0; j < m; ++j) vals.push_back(parse_double(cells[j + 1]));
  }
  if (ts.empty()) throw std::runtime_error("csv: no samples");
  const int T = static_cast<int>(ts.size());
  MatrixXd v(T, m);
  for (int k = 0; k < T; ++k)
    for (int j = 0; j < m; ++j) v(k, j) = vals[k * m + j];
  const double tau = T > 1 ? (ts.back() - ts.front()) / (T - 1) : 1.0;
  return SampledSignal(ts.front(), tau, v);
}

SampledSignal SampledSignal::read_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("SampledSignal::read_csv: cannot open " + path);
  return read_csv(f);
}

SimResult simulate(const StateSpace& sys, const ControlSource& input, const VectorXd& x0,
                   double horizon, double dt) {
  if (!(dt > 0.0)) throw std::invalid_argument("simulate: dt must be > 0");
  if (x0.size() != sys.n()) throw std::invalid_argument("simulate: x0 dimension mismatch");
  if (const auto* s = std::get_if<SampledSignal>(&input))
    if (s->channels() != sys.m()) throw std::invalid_argument("simulate: input channel mismatch");
  const int N = static_cast<int>(std::llround(horizon / dt));
  MatrixXd X(N + 1, sys.n());
  MatrixXd Y(N + 1, sys.p());
  VectorXd x = x0;
  auto control = [&](double t, const VectorXd& xs) -> VectorXd {
    if (const auto* s = std::get_if<SampledSignal>(&input)) return s->hold(t);
    VectorXd u = std::get<FeedbackLaw>(input)(t, xs);
    if (u.size() != sys.m()) throw std::invalid_argument("simulate: feedback returned wrong size");
    return u;
  };
  const MatrixXd& A = sys.A();
  const MatrixXd& B = sys.B();
  for (int k = 0; k <= N; ++k) {
    const double t = k * dt;
    const VectorXd u = control(t, x);
    X.row(k) = x.transpose();
    Y.row(k) = (sys.C() * x + sys.D() * u).transpose();
    if (k == N) break;
    const VectorXd bu = B * u;
    const VectorXd k1 = A * x + bu;
    const VectorXd k2 = A * (x + 0.5 * dt * k1) + bu;
    const VectorXd k3 = A * (x + 0.5 * dt * k2) + bu;
    const VectorXd k4 = A * (x + dt * k3) + bu;
    x += dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    if (!x.allFinite())
      throw std::runtime_error("simulate: state diverged at t=" + format_double(t + dt));
  }
  return {SampledSignal(0.0, dt, X), SampledSignal(0.0, dt, Y)};
}

namespace {

// Orthonormal basis of the smallest A-invariant subspace containing range(B).
MatrixXd krylov_basis(const MatrixXd& A, const MatrixXd& B, double tol) {
  const int n = static_cast<int>(A.rows());
  const double scale = std::max({1.0, A.norm(), B.norm()});
  MatrixXd V(n, 0);
  MatrixXd W = B;
  while (V.cols() < n && W.cols() > 0) {
    if (V.cols() > 0) {
      W -= V * (V.transpose() * W);
      W -= V * (V.transpose() * W);
    }
    Eigen::JacobiSVD<MatrixXd> svd(W, Eigen::ComputeThinU);
    int r = 0;
    for (int i = 0; i < svd.singularValues().size(); ++i)
      if (svd.singularValues()(i) > tol * scale) ++r;
    if (r == 0) break;
    r = std::min<int>(r, n - static_cast<int>(V.cols()));
    MatrixXd Vn = svd.matrixU().leftCols(r);
    MatrixXd V2(n, V.cols() + r);
    V2 << V, Vn;
    V = V2;
    W = A * Vn;
  }
  return V;
}

}  // namespace

StateSpace minimal(const StateSpace& sys, double rank_tol) {
  if (sys.n() == 0) return sys;
  MatrixXd V = krylov_basis(sys.A(), sys.B(), rank_tol);
  MatrixXd A1 = V.transpose() * sys.A() * V;
  MatrixXd B1 = V.transpose() * sys.B();
  MatrixXd C1 = sys.C() * V;
  if (A1.rows() == 0) return StateSpace::gain(sys.D());
  MatrixXd U = krylov_basis(A1.transpose(), C1.transpose(), rank_tol);
  if (U.cols() == 0) return StateSpace::gain(sys.D());
  return StateSpace(U.transpose() * A1 * U, U.transpose() * B1, C1 * U, sys.D());
}

StateSpace realize(const RationalMatrix& tf, double rank_tol) {
  const int p = tf.rows();
  const int m = tf.cols();
  for (int i = 0; i < p; ++i)
    for (int j = 0; j < m; ++j)
      if (!tf.is_zero(i, j) && tf.excess(i, j) > 0)
        throw std::invalid_argument("realize: improper entry (" + std::to_string(i) + "," +
                                    std::to_string(j) + ")");
  MatrixXd D = MatrixXd::Zero(p, m);
  std::vector<MatrixXd> As, Bs, Cs;
  int ntot = 0;
  for (int j = 0; j < m; ++j) {
    // Distinct monic denominators of column j.
    std::vector<Poly> factors;
    std::vector<int> factor_of(p, -1);
    for (int i = 0; i < p; ++i) {
      if (tf.is_zero(i, j)) continue;
      const Poly& den = tf(i, j).den;
      Poly monic = poly::scale(den, 1.0 / den.back());
      int found = -1;
      for (size_t f = 0; f < factors.size(); ++f) {
        if (factors[f].size() != monic.size()) continue;
        bool same = true;
        for (size_t c = 0; c < monic.size(); ++c)
          if (std::abs(factors[f][c] - monic[c]) > 1e-14 * (1.0 + std::abs(monic[c]))) same = false;
        if (same) found = static_cast<int>(f);
      }
      if (found < 0) {
        factors.push_back(monic);
        found = static_cast<int>(factors.size()) - 1;
      }
      factor_of[i] = found;
    }
    Poly dj{1.0};
    for (const auto& f : factors) dj = poly::mul(dj, f);
    const int nj = poly::degree(dj);
    MatrixXd Cj = MatrixXd::Zero(p, nj);
    for (int i = 0; i < p; ++i) {
      if (factor_of[i] < 0) continue;
      const RationalEntry& e = tf(i, j);
      Poly num = poly::scale(e.num, 1.0 / e.den.back());
      for (size_t f = 0; f < factors.size(); ++f)
        if (static_cast<int>(f) != factor_of[i]) num = poly::mul(num, factors[f]);
      Poly q, r;
      poly::divmod(num, dj, &q, &r);
      D(i, j) = q.empty() ? 0.0 : q[0];
      for (size_t c = 0; c < r.size(); ++c) Cj(i, c) = r[c];
    }
    if (nj == 0) continue;
    MatrixXd Aj = MatrixXd::Zero(nj, nj);
    for (int k = 0; k + 1 < nj; ++k) Aj(k, k + 1) = 1.0;
    for (int k = 0; k < nj; ++k) Aj(nj - 1, k) = -dj[k];
    MatrixXd Bj = MatrixXd::Zero(nj, m);
    Bj(nj - 1, j) = 1.0;
    As.push_back(Aj);
    Bs.push_back(Bj);
    Cs.push_back(Cj);
    ntot += nj;
  }
  MatrixXd A = MatrixXd::Zero(ntot, ntot);
  MatrixXd B(ntot, m);
  MatrixXd C(p, ntot);
  int off = 0;
  for (size_t b = 0; b < As.size(); ++b) {
    const int nj = static_cast<int>(As[b].rows());
    A.block(off, off, nj, nj) = As[b];
    B.middleRows(off, nj) = Bs[b];
    C.middleCols(off, nj) = Cs[b];
    off += nj;
  }
  return minimal(StateSpace(A, B, C, D), rank_tol);
}

namespace {

Eigen::MatrixXcd rosenbrock(const StateSpace& sys, Complex z) {
  const int n = sys.n();
  const int m = sys.m();
  const int p = sys.p();
  Eigen::MatrixXcd Q(n + p, n + m);
  Q.topLeftCorner(n, n) = z * Eigen::MatrixXcd::Identity(n, n) - sys.A().cast<Complex>();
  Q.topRightCorner(n, m) = -sys.B().cast<Complex>();
  Q.bottomLeftCorner(p, n) = sys.C().cast<Complex>();
  Q.bottomRightCorner(p, m) = sys.D().cast<Complex>();
  return Q;
}

bool pencil_degenerate(const StateSpace& sys) {
  const Complex probes[] = {{0.3719, 1.1173}, {-1.7341, 0.2913}, {2.4417, -3.0671}};
  for (const Complex& z : probes) {
    Eigen::JacobiSVD<Eigen::MatrixXcd> svd(rosenbrock(sys, z));
    const auto& sv = svd.singularValues();
    if (sv.size() == 0) return true;
    if (sv(sv.size() - 1) > 1e-10 * std::max(1.0, sv(0))) return false;
  }
  return true;
}

}  // namespace

ZerosResult invariant_zeros(const StateSpace& sys, double inf_threshold) {
  if (sys.p() != sys.m()) throw std::invalid_argument("invariant_zeros: system must be square (p = m)");
  ZerosResult res;
  res.degenerate = pencil_degenerate(sys);
  if (res.degenerate || sys.n() == 0) return res;
  const int n = sys.n();
  const int m = sys.m();
  MatrixXd Abig(n + m, n + m), Ebig = MatrixXd::Zero(n + m, n + m);
  Abig << sys.A(), sys.B(), -sys.C(), -sys.D();
  Ebig.topLeftCorner(n, n).setIdentity();
  Eigen::GeneralizedEigenSolver<MatrixXd> ges(Abig, Ebig, false);
  if (ges.info() != Eigen::Success) throw std::runtime_error("invariant_zeros: QZ failed");
  const auto& al = ges.alphas();
  const auto& be = ges.betas();
  const double scale = std::max(1.0, Abig.norm());
  for (int i = 0; i < al.size(); ++i) {
    if (std::abs(be(i)) <= 1e-14 * scale) continue;
    const Complex z = al(i) / be(i);
    if (!std::isfinite(z.real()) || !std::isfinite(z.imag()) || std::abs(z) > inf_threshold) continue;
    res.zeros.push_back(z);
  }
  std::sort(res.zeros.begin(), res.zeros.end(), [](const Complex& a, const Complex& b) {
    if (a.real() != b.real()) return a.real() < b.real();
    return a.imag() < b.imag();
  });
  return res;
}

std::vector<FreqPoint> freq_response(const RationalMatrix& tf, const std::vector<double>& omegas) {
  std::vector<FreqPoint> out;
  out.reserve(omegas.size());
  for (double w : omegas) {
    FreqPoint fp;
    fp.omega = w;
    fp.value = Eigen::MatrixXcd::Zero(tf.rows(), tf.cols());
    const Complex s(0.0, w);
    for (int i = 0; i < tf.rows(); ++i)
      for (int j = 0; j < tf.cols(); ++j) {
        if (tf.is_zero(i, j)) continue;
        const auto& e = tf(i, j);
        const Complex d = poly::eval(e.den, s);
        double dscale = 0.0;
        for (size_t k = 0; k < e.den.size(); ++k) dscale += std::abs(e.den[k]) * std::pow(std::abs(w), k);
        if (std::abs(d) <= 1e-14 * dscale) {
          fp.at_pole = true;
          fp.value(i, j) = Complex(std::nan(""), std::nan(""));
        } else {
          fp.value(i, j) = poly::eval(e.num, s) / d;
        }
      }
    out.push_back(fp);
  }
  return out;
}

FrequencyOperator to_frequency_operator(const RationalMatrix& op) {
  FrequencyOperator f;
  f.rows = op.rows();
  f.cols = op.cols();
  f.eval = [op](Complex s) { return op.eval(s); };
  f.excess = std::max(0, op.max_excess());
  f.integrator = op.has_origin_pole();
  f.imag_pole_freqs = op.imag_pole_freqs();
  return f;
}

SampledSignal offline_filter(const RationalMatrix& op, const SampledSignal& x,
                             const FilterOptions& opt, FilterReport* report) {
  if (op.max_excess() > opt.max_excess)
    throw std::invalid_argument("offline_filter: improperness excess " + std::to_string(op.max_excess()) +
                                " exceeds the configured maximum " + std::to_string(opt.max_excess));
  return offline_filter(to_frequency_operator(op), x, opt, report);
}

SampledSignal offline_filter(const FrequencyOperator& op, const SampledSignal& x,
                             const FilterOptions& opt, FilterReport* report) {
  if (op.cols != x.channels())
    throw std::invalid_argument("offline_filter: operator has " + std::to_string(op.cols) +
                                " inputs, signal has " + std::to_string(x.channels()) + " channels");
  if (op.excess > opt.max_excess)
    throw std::invalid_argument("offline_filter: improperness excess exceeds the configured maximum");
  const int T = x.T();
  const double tau = x.tau();
  int L = 1;
  while (L < 2 * T) L <<= 1;

  auto bin_omega = [&](int k, double shift) {
    const int ks = k < L / 2 ? k : k - L;
    return 2.0 * M_PI * (ks + shift) / (L * tau);
  };
  bool shift_needed = op.integrator;
  if (!shift_needed) {
    const double dw = 2.0 * M_PI / (L * tau);
    for (double wp : op.imag_pole_freqs) {
      const double k = wp / dw;
      if (std::abs(k - std::round(k)) < 1e-9 * (1.0 + k)) shift_needed = true;
    }
  }
  const double shift = shift_needed ? 0.5 : 0.0;
  if (report) {
    report->bin_shifted = shift_needed;
    report->fft_length = L;
  }

  const bool bridge = op.excess > 0 && opt.bridge && T > 1;
  std::vector<double> window(T, 1.0);
  if (op.excess > 0 && opt.taper > 0.0 && !bridge) {
    const int nt = static_cast<int>(opt.taper / 2.0 * T);
    for (int k = 0; k < nt; ++k) {
      const double w = 0.5 * (1.0 - std::cos(M_PI * k / nt));
      window[k] = w;
      window[T - 1 - k] = w;
    }
  }

  Eigen::FFT<double> fft;
  std::vector<Complex> mod(L);
  for (int k = 0; k < L; ++k) mod[k] = std::polar(1.0, -M_PI * shift * k / L * 2.0);
  std::vector<std::vector<Complex>> X(op.cols);
  for (int j = 0; j < op.cols; ++j) {
    std::vector<Complex> buf(L, 0.0);
    for (int k = 0; k < T; ++k) buf[k] = x.values()(k, j) * window[k];
    if (bridge) {
      const double a = x.values()(T - 1, j), b = x.values()(0, j);
      const int nb = L - T + 1;
      for (int k = T; k < L; ++k) {
        const double s = static_cast<double>(k - T + 1) / nb;
        buf[k] = a + (b - a) * 0.5 * (1.0 - std::cos(M_PI * s));
      }
    }
    if (shift_needed)
      for (int k = 0; k < L; ++k) buf[k] *= mod[k];
    fft.fwd(X[j], buf);
  }
  const double wc = opt.guard_fraction * M_PI / tau;
  std::vector<std::vector<Complex>> Y(op.rows, std::vector<Complex>(L, 0.0));
  for (int k = 0; k < L; ++k) {
    const double w = bin_omega(k, shift);
    Eigen::MatrixXcd H = op.eval(Complex(0.0, w));
    double g = 1.0;
    if (op.excess > 0 && std::abs(w) > wc) g = std::pow(wc / std::abs(w), op.excess);
    for (int i = 0; i < op.rows; ++i) {
      Complex acc = 0.0;
      for (int j = 0; j < op.cols; ++j) acc += H(i, j) * X[j][k];
      Y[i][k] = g * acc;
    }
  }
  MatrixXd out(T, op.rows);
  for (int i = 0; i < op.rows; ++i) {
    std::vector<Complex> y;
    fft.inv(y, Y[i]);
    for (int k = 0; k < T; ++k) {
      Complex v = y[k];
      if (shift_needed) v *= std::conj(mod[k]);
      out(k, i) = v.real();
    }
    if (op.integrator) {
      const double y0 = out(0, i);
      out.col(i).array() -= y0;
    }
  }
  return SampledSignal(x.t0(), tau, out);
}

SampledSignal prbs(int channels, double horizon, double tau, const std::vector<double>& amplitude,
                   double bit_period, std::uint64_t seed) {
  if (channels < 1) throw std::invalid_argument("prbs: channels must be >= 1");
  if (!(tau > 0.0)) throw std::invalid_argument("prbs: tau must be > 0");
  if (!(horizon >= 0.0)) throw std::invalid_argument("prbs: horizon must be >= 0");
  if (bit_period < tau) throw std::invalid_argument("prbs: bit_period must be >= tau");
  if (amplitude.size() != 1 && static_cast<int>(amplitude.size()) != channels)
    throw std::invalid_argument("prbs: amplitude must have one entry or one per channel");
  const int T = static_cast<int>(std::llround(horizon / tau)) + 1;
  MatrixXd v(T, channels);
  for (int c = 0; c < channels; ++c) {
    std::seed_seq sq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                     static_cast<std::uint32_t>(c), 0x5eedu};
    std::mt19937_64 rng(sq);
    const double a = amplitude.size() == 1 ? amplitude[0] : amplitude[c];
    long bit_index = -1;
    double level = 0.0;
    for (int k = 0; k < T; ++k) {
      const long b = static_cast<long>(std::floor(k * tau / bit_period + 1e-9));
      while (bit_index < b) {
        level = (rng() >> 63) ? a : -a;
        ++bit_index;
      }
      v(k, c) = level;
    }
  }
  return SampledSignal(0.0, tau, v);
}

}  // namespace ddismc
