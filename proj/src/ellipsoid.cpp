#include "ddismc/ellipsoid.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "ddismc/errors.hpp"

namespace ddismc {

namespace {

MatrixXd sym(const MatrixXd& M) { return 0.5 * (M + M.transpose()); }

double max_eig(const MatrixXd& M) {
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(sym(M), Eigen::EigenvaluesOnly);
  return es.eigenvalues()(es.eigenvalues().size() - 1);
}

double min_eig(const MatrixXd& M) {
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(sym(M), Eigen::EigenvaluesOnly);
  return es.eigenvalues()(0);
}

}  // namespace

VectorXd initial_derivative(const SampledSignal& y) {
  if (y.T() < 5) throw std::invalid_argument("initial_derivative: need at least 5 samples");
  const MatrixXd& v = y.values();
  VectorXd d = (-25.0 * v.row(0) + 48.0 * v.row(1) - 36.0 * v.row(2) + 16.0 * v.row(3) - 3.0 * v.row(4))
                   .transpose() /
               (12.0 * y.tau());
  if (!d.allFinite()) throw std::runtime_error("initial_derivative: non-finite estimate");
  return d;
}

std::vector<InitialTuple> collect_initial_tuples(const StateSpace& plant, int N,
                                                 const InputSampler& input_sampler,
                                                 const DisturbanceSampler& disturbance_sampler,
                                                 double dt, std::uint64_t seed) {
  if (N < 1) throw std::invalid_argument("collect_initial_tuples: N must be >= 1");
  std::vector<InitialTuple> out;
  out.reserve(N);
  std::mt19937_64 rng(seed);
  for (int i = 0; i < N; ++i) {
    const VectorXd u = input_sampler(rng);
    if (u.size() != plant.m()) throw std::invalid_argument("collect_initial_tuples: input sampler size");
    const auto d = disturbance_sampler(rng);
    FeedbackLaw law = [&](double t, const VectorXd&) -> VectorXd { return u + d(t); };
    auto sim = simulate(plant, law, VectorXd::Zero(plant.n()), 4.0 * dt, dt);
    out.push_back({u, initial_derivative(sim.y)});
  }
  return out;
}

std::vector<InitialTuple> collect_initial_tuples(const std::vector<SampledSignal>& u_records,
                                                 const std::vector<SampledSignal>& y_records) {
  if (u_records.size() != y_records.size() || u_records.empty())
    throw std::invalid_argument("collect_initial_tuples: need matching, non-empty record lists");
  std::vector<InitialTuple> out;
  for (size_t i = 0; i < u_records.size(); ++i)
    out.push_back({u_records[i].row(0), initial_derivative(y_records[i])});
  return out;
}

void write_tuples_csv(const std::vector<InitialTuple>& tuples, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("write_tuples_csv: cannot open " + path);
  if (tuples.empty()) return;
  const int m = static_cast<int>(tuples[0].u0.size());
  for (int j = 0; j < m; ++j) f << (j ? "," : "") << "u" << j;
  for (int j = 0; j < m; ++j) f << ",ydot" << j;
  f << "\n";
  for (const auto& t : tuples) {
    for (int j = 0; j < m; ++j) f << (j ? "," : "") << format_double(t.u0(j));
    for (int j = 0; j < m; ++j) f << "," << format_double(t.ydot0(j));
    f << "\n";
  }
}

std::vector<InitialTuple> read_tuples_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("read_tuples_csv: cannot open " + path);
  std::string line;
  std::getline(f, line);
  std::vector<InitialTuple> out;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::vector<double> v;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) v.push_back(std::stod(cell));
    if (v.size() % 2) throw std::runtime_error("read_tuples_csv: odd column count");
    const int m = static_cast<int>(v.size() / 2);
    InitialTuple t{VectorXd(m), VectorXd(m)};
    for (int j = 0; j < m; ++j) {
      t.u0(j) = v[j];
      t.ydot0(j) = v[m + j];
    }
    out.push_back(t);
  }
  return out;
}

std::vector<MatrixEllipsoid> build_ellipsoids(const std::vector<InitialTuple>& tuples, double d_bar) {
  if (!(d_bar > 0.0)) throw std::invalid_argument("build_ellipsoids: d_bar must be > 0");
  std::vector<MatrixEllipsoid> out;
  out.reserve(tuples.size());
  for (const auto& t : tuples) {
    const int m = static_cast<int>(t.u0.size());
    if (t.ydot0.size() != m) throw std::invalid_argument("build_ellipsoids: tuple size mismatch");
    out.push_back({t.ydot0 * t.ydot0.transpose(), -t.ydot0 * t.u0.transpose(),
                   t.u0 * t.u0.transpose() - d_bar * d_bar * MatrixXd::Identity(m, m)});
  }
  return out;
}

double qmi_value(const MatrixEllipsoid& e, const MatrixXd& Z) {
  return max_eig(Z.transpose() * e.Amat * Z + Z.transpose() * e.Bmat + e.Bmat.transpose() * Z + e.Cmat);
}

double qmi_value(const OverApprox& oa, const MatrixXd& Z) {
  return max_eig(Z.transpose() * oa.Abar * Z + Z.transpose() * oa.Bbar + oa.Bbar.transpose() * Z + oa.Cbar);
}

OverApprox overapproximate(const std::vector<MatrixEllipsoid>& ellipsoids, const sdp::Options& opt) {
  if (ellipsoids.empty()) throw std::invalid_argument("overapproximate: need at least one ellipsoid");
  const int m = static_cast<int>(ellipsoids[0].Amat.rows());
  const int N = static_cast<int>(ellipsoids.size());

  // Work in coordinates Z = s T Zn where the mean output-derivative Gram is the identity.
  MatrixXd G = MatrixXd::Zero(m, m);
  for (const auto& e : ellipsoids) {
    if (e.Amat.rows() != m || e.Bmat.rows() != m || e.Cmat.rows() != m)
      throw std::invalid_argument("overapproximate: mixed ellipsoid sizes");
    G += e.Amat;
  }
  G /= N;
  Eigen::SelfAdjointEigenSolver<MatrixXd> ges(sym(G));
  const VectorXd gl = ges.eigenvalues();
  if (!(gl(m - 1) > 0.0) || gl(0) <= 1e-12 * gl(m - 1))
    throw InfeasibleDesign("overapproximate: output derivatives do not span the output space, the set is "
                           "unbounded; collect tuples with richer excitation");
  const MatrixXd T = ges.eigenvectors() * gl.cwiseSqrt().cwiseInverse().asDiagonal() * ges.eigenvectors().transpose();
  const MatrixXd Tinv = ges.eigenvectors() * gl.cwiseSqrt().asDiagonal() * ges.eigenvectors().transpose();
  double b_max = 0.0, c_max = 0.0;
  for (const auto& e : ellipsoids) {
    b_max = std::max(b_max, (T.transpose() * e.Bmat).norm());
    c_max = std::max(c_max, e.Cmat.norm());
  }
  const double su = b_max > 0.0 ? b_max : std::sqrt(c_max);

  const int na = sdp::svec_size(m);
  const int nb = m * m;
  const int nv = na + nb + N;
  sdp::Problem prob;
  prob.num_vars = nv;
  prob.c = VectorXd::Zero(nv);

  sdp::LmiBlock main;
  main.name = "s-procedure";
  main.F0 = MatrixXd::Zero(3 * m, 3 * m);
  main.F0.topLeftCorner(m, m).setIdentity();
  for (int k = 0; k < na; ++k) {
    const MatrixXd E = sdp::svec_basis(m, k);
    MatrixXd F = MatrixXd::Zero(3 * m, 3 * m);
    F.block(m, m, m, m) = -E;
    F.block(2 * m, 2 * m, m, m) = E;
    main.add(k, F);
  }
  for (int j = 0; j < m; ++j)
    for (int i = 0; i < m; ++i) {
      MatrixXd e = MatrixXd::Zero(m, m);
      e(i, j) = 1.0;
      MatrixXd F = MatrixXd::Zero(3 * m, 3 * m);
      F.block(0, m, m, m) = -e.transpose();
      F.block(m, 0, m, m) = -e;
      F.block(0, 2 * m, m, m) = -e.transpose();
      F.block(2 * m, 0, m, m) = -e;
      main.add(na + j * m + i, F);
    }
  for (int t = 0; t < N; ++t) {
    const auto& e = ellipsoids[t];
    MatrixXd F = MatrixXd::Zero(3 * m, 3 * m);
    const MatrixXd Bn = T.transpose() * e.Bmat / su;
    F.block(0, 0, m, m) = e.Cmat / (su * su);
    F.block(0, m, m, m) = Bn.transpose();
    F.block(m, 0, m, m) = Bn;
    F.block(m, m, m, m) = T.transpose() * e.Amat * T;
    main.add(na + nb + t, F);
  }
  prob.blocks.push_back(main);

  sdp::LmiBlock logdet;
  logdet.name = "logdet";
  logdet.logdet_weight = 1.0;
  logdet.F0 = MatrixXd::Zero(m, m);
  for (int k = 0; k < na; ++k) logdet.add(k, sdp::svec_basis(m, k));
  prob.blocks.push_back(logdet);

  for (int t = 0; t < N; ++t) {
    sdp::LmiBlock b;
    b.name = "tau" + std::to_string(t);
    b.F0 = MatrixXd::Zero(1, 1);
    b.add(na + nb + t, MatrixXd::Ones(1, 1));
    prob.blocks.push_back(b);
  }

  const sdp::Result r = sdp::solve(prob, opt);
  OverApprox oa;
  oa.status = r.status;
  oa.primal_residual = r.primal_residual;
  oa.dual_residual = r.dual_residual;
  oa.iterations = r.iterations;
  if (!sdp::usable(r.status))
    throw InfeasibleDesign("overapproximate: solver status " + sdp::to_string(r.status) +
                           "; the data may not bound the set, collect more tuples or larger excitation");
  MatrixXd An = MatrixXd::Zero(m, m);
  for (int k = 0; k < na; ++k) An += r.x(k) * sdp::svec_basis(m, k);
  MatrixXd Bn(m, m);
  for (int j = 0; j < m; ++j)
    for (int i = 0; i < m; ++i) Bn(i, j) = r.x(na + j * m + i);
  for (int t = 0; t < N; ++t) oa.tau_multipliers.push_back(r.x(na + nb + t));

  oa.Abar = sym(Tinv.transpose() * An * Tinv) / (su * su);
  Eigen::LLT<MatrixXd> llt(oa.Abar);
  if (llt.info() != Eigen::Success) throw NumericalFailure("overapproximate: Abar is not positive definite");
  oa.zeta_bar = su * T * (-An.llt().solve(Bn));
  oa.Bbar = -oa.Abar * oa.zeta_bar;
  oa.Cbar = oa.Bbar.transpose() * llt.solve(oa.Bbar) - MatrixXd::Identity(m, m);
  oa.log_det = 2.0 * MatrixXd(llt.matrixL()).diagonal().array().log().sum();
  return oa;
}

MatrixXd cb_estimate(const OverApprox& oa) {
  Eigen::FullPivLU<MatrixXd> lu(oa.zeta_bar.transpose());
  if (!lu.isInvertible()) throw NumericalFailure("cb_estimate: zeta_bar is singular");
  return lu.inverse();
}

KDesign solve_K(const OverApprox& oa, const sdp::Options& opt) {
  const int m = static_cast<int>(oa.zeta_bar.rows());
  const double s = oa.zeta_bar.norm();
  if (!(s > 0.0)) throw std::invalid_argument("solve_K: zero centroid");
  const MatrixXd zeta = oa.zeta_bar / s;
  Eigen::LLT<MatrixXd> llt(oa.Abar);
  if (llt.info() != Eigen::Success) throw std::invalid_argument("solve_K: Abar not positive definite");
  const MatrixXd Ainv = sym(llt.solve(MatrixXd::Identity(m, m))) / (s * s);

  const int nw = m * m;
  const int il = nw, it = nw + 1;
  sdp::Problem prob;
  prob.num_vars = nw + 2;
  prob.c = VectorXd::Zero(prob.num_vars);
  prob.c(it) = -1.0;

  sdp::LmiBlock main;
  main.name = "robust-gain";
  main.F0 = MatrixXd::Zero(2 * m, 2 * m);
  for (int j = 0; j < m; ++j)
    for (int i = 0; i < m; ++i) {
      MatrixXd e = MatrixXd::Zero(m, m);
      e(i, j) = 1.0;
      MatrixXd F = MatrixXd::Zero(2 * m, 2 * m);
      F.topLeftCorner(m, m) = e * zeta.transpose() + zeta * e.transpose();
      F.topRightCorner(m, m) = -e;
      F.bottomLeftCorner(m, m) = -e.transpose();
      main.add(j * m + i, F);
    }
  {
    MatrixXd F = MatrixXd::Zero(2 * m, 2 * m);
    F.topLeftCorner(m, m) = -Ainv;
    F.bottomRightCorner(m, m).setIdentity();
    main.add(il, F);
    main.add(it, -MatrixXd::Identity(2 * m, 2 * m));
  }
  prob.blocks.push_back(main);
  sdp::LmiBlock lam_hi;
  lam_hi.name = "lambda<=1";
  lam_hi.F0 = MatrixXd::Ones(1, 1);
  lam_hi.add(il, -MatrixXd::Ones(1, 1));
  prob.blocks.push_back(lam_hi);
  sdp::LmiBlock lam_lo;
  lam_lo.name = "lambda>=0";
  lam_lo.F0 = MatrixXd::Zero(1, 1);
  lam_lo.add(il, MatrixXd::Ones(1, 1));
  prob.blocks.push_back(lam_lo);

  const sdp::Result r = sdp::solve(prob, opt);
  KDesign out;
  out.status = r.status;
  out.W = MatrixXd(m, m);
  for (int j = 0; j < m; ++j)
    for (int i = 0; i < m; ++i) out.W(i, j) = r.x(j * m + i);
  out.lambda = r.x(il);
  out.margin = r.x(it);
  const double strict = 1e-9 * std::max(1.0, out.W.norm());
  out.feasible = sdp::usable(r.status) && out.margin > strict;
  if (!out.feasible) {
    out.limiting = sdp::usable(r.status)
                       ? "gain LMI margin " + format_double(out.margin) +
                             " is not positive: the uncertainty set is too large for a single K"
                       : "solver status " + sdp::to_string(r.status);
    return out;
  }
  Eigen::FullPivLU<MatrixXd> lu(out.W);
  if (!lu.isInvertible()) {
    out.feasible = false;
    out.limiting = "W is singular";
    return out;
  }
  out.K = lu.inverse();
  return out;
}

double rho_lower_bound(const MatrixXd& CBbar, const MatrixXd& K, double d_bar, double d0_bar) {
  const double lmin = min_eig(CBbar * K);
  if (!(lmin > 0.0))
    throw std::invalid_argument("rho_lower_bound: sym(CB K) is not positive definite, bound undefined");
  return std::sqrt(max_eig(CBbar.transpose() * CBbar)) / lmin * (d_bar + d0_bar);
}

double rho_lower_bound(const OverApprox& oa, const MatrixXd& K, double d_bar, double d0_bar) {
  return rho_lower_bound(cb_estimate(oa), K, d_bar, d0_bar);
}

PdCheck verify_pd(const MatrixXd& CB, const MatrixXd& K) {
  PdCheck c;
  c.min_eig_sym = min_eig(CB * K);
  c.pd = c.min_eig_sym > 0.0;
  return c;
}

}  // namespace ddismc
