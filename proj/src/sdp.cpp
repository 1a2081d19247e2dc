#include "ddismc/sdp.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <optional>
#include <stdexcept>

namespace ddismc::sdp {

MatrixXd LmiBlock::eval(const VectorXd& x) const {
  MatrixXd F = F0;
  for (const auto& [i, Fi] : terms) F += x(i) * Fi;
  return F;
}

std::string to_string(Status s) {
  switch (s) {
    case Status::Optimal: return "optimal";
    case Status::NearOptimal: return "near_optimal";
    case Status::Infeasible: return "infeasible";
    case Status::MaxIterations: return "max_iterations";
    case Status::NumericalFailure: return "numerical_failure";
  }
  return "unknown";
}

int svec_size(int m) { return m * (m + 1) / 2; }

MatrixXd svec_basis(int m, int k) {
  MatrixXd E = MatrixXd::Zero(m, m);
  int idx = 0;
  for (int j = 0; j < m; ++j)
    for (int i = j; i < m; ++i, ++idx)
      if (idx == k) {
        E(i, j) = 1.0;
        E(j, i) = 1.0;
        return E;
      }
  throw std::out_of_range("svec_basis: index out of range");
}

namespace {

MatrixXd sym(const MatrixXd& M) { return 0.5 * (M + M.transpose()); }

struct Scaling {
  MatrixXd W;
  MatrixXd Winv;
};

// W such that W Z W = S.
Scaling nt_scaling(const MatrixXd& S, const MatrixXd& Z) {
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(S);
  const VectorXd ev = es.eigenvalues().cwiseMax(1e-300);
  const MatrixXd Sh = es.eigenvectors() * ev.cwiseSqrt().asDiagonal() * es.eigenvectors().transpose();
  const MatrixXd Shi =
      es.eigenvectors() * ev.cwiseSqrt().cwiseInverse().asDiagonal() * es.eigenvectors().transpose();
  Eigen::SelfAdjointEigenSolver<MatrixXd> em(sym(Sh * Z * Sh));
  const VectorXd mv = em.eigenvalues().cwiseMax(1e-300);
  const MatrixXd Mmh =
      em.eigenvectors() * mv.cwiseSqrt().cwiseInverse().asDiagonal() * em.eigenvectors().transpose();
  const MatrixXd Mh = em.eigenvectors() * mv.cwiseSqrt().asDiagonal() * em.eigenvectors().transpose();
  return {sym(Sh * Mmh * Sh), sym(Shi * Mh * Shi)};
}

// Largest alpha in (0, inf] keeping X + alpha dX positive definite.
double max_step(const MatrixXd& X, const MatrixXd& dX) {
  Eigen::LLT<MatrixXd> llt(X);
  if (llt.info() != Eigen::Success) return 0.0;
  const MatrixXd Li = llt.matrixL().solve(MatrixXd::Identity(X.rows(), X.cols()));
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(sym(Li * dX * Li.transpose()), Eigen::EigenvaluesOnly);
  const double lmin = es.eigenvalues()(0);
  if (lmin >= 0.0) return std::numeric_limits<double>::infinity();
  return -1.0 / lmin;
}

MatrixXd spd_inverse(const MatrixXd& S) {
  Eigen::LLT<MatrixXd> llt(S);
  return sym(llt.solve(MatrixXd::Identity(S.rows(), S.cols())));
}

}  // namespace

Result solve(const Problem& prob, const Options& opt) {
  const int n = prob.num_vars;
  const int J = static_cast<int>(prob.blocks.size());
  if (prob.c.size() != n) throw std::invalid_argument("sdp::solve: objective size mismatch");
  for (const auto& b : prob.blocks) {
    if (b.F0.rows() != b.F0.cols()) throw std::invalid_argument("sdp::solve: non-square block");
    for (const auto& [i, Fi] : b.terms)
      if (i < 0 || i >= n || Fi.rows() != b.F0.rows() || Fi.cols() != b.F0.cols())
        throw std::invalid_argument("sdp::solve: malformed term in block " + b.name);
  }

  VectorXd x = VectorXd::Zero(n);
  std::vector<MatrixXd> S(J), Z(J);
  double f0scale = 1.0;
  for (const auto& b : prob.blocks) f0scale = std::max(f0scale, b.F0.cwiseAbs().maxCoeff());
  int ineq_dim = 0;
  for (int j = 0; j < J; ++j) {
    const int k = static_cast<int>(prob.blocks[j].F0.rows());
    S[j] = 10.0 * f0scale * MatrixXd::Identity(k, k);
    const double w = prob.blocks[j].logdet_weight;
    Z[j] = (w > 0.0 ? w / (10.0 * f0scale) : 10.0) * MatrixXd::Identity(k, k);
    if (w <= 0.0) ineq_dim += k;
  }
  const double cnorm = 1.0 + prob.c.norm();

  double dual_scale = cnorm;
  auto residuals = [&](std::vector<MatrixXd>& Rp, VectorXd& Rd) {
    Rp.resize(J);
    Rd = prob.c;
    VectorXd mag = prob.c.cwiseAbs();
    for (int j = 0; j < J; ++j) {
      Rp[j] = prob.blocks[j].eval(x) - S[j];
      for (const auto& [i, Fi] : prob.blocks[j].terms) {
        const double v = (Fi.cwiseProduct(Z[j])).sum();
        Rd(i) -= v;
        mag(i) += std::abs(v);
      }
    }
    // relative to the size of the terms that should cancel
    dual_scale = std::max(cnorm, 1.0 + (n ? mag.maxCoeff() : 0.0));
  };
  auto complementarity = [&](const std::vector<MatrixXd>& Sv, const std::vector<MatrixXd>& Zv) {
    if (ineq_dim == 0) return 0.0;
    double s = 0.0;
    for (int j = 0; j < J; ++j)
      if (prob.blocks[j].logdet_weight <= 0.0) s += (Sv[j].cwiseProduct(Zv[j])).sum();
    return s / ineq_dim;
  };

  Result res;
  struct Snapshot {
    VectorXd x;
    std::vector<MatrixXd> S, Z;
    int it;
    double mu, rp, rd;
  };
  std::optional<Snapshot> best;
  double best_merit = std::numeric_limits<double>::infinity();
  std::vector<MatrixXd> Rp;
  VectorXd Rd;
  double rp0 = 1.0, rd0 = 1.0, mu0 = 0.0;
  for (int it = 0; it < opt.max_iter; ++it) {
    residuals(Rp, Rd);
    double rp = 0.0;
    for (const auto& R : Rp) rp = std::max(rp, R.cwiseAbs().maxCoeff());
    const double rd = Rd.cwiseAbs().maxCoeff();
    const double mu = complementarity(S, Z);
    if (it == 0) {
      rp0 = std::max(rp, 1e-300);
      rd0 = std::max(rd, 1e-300);
      mu0 = mu;
    }
    double ld_gap = 0.0;
    for (int j = 0; j < J; ++j) {
      const double w = prob.blocks[j].logdet_weight;
      if (w > 0.0) {
        const MatrixXd P = S[j] * Z[j] - w * MatrixXd::Identity(S[j].rows(), S[j].cols());
        ld_gap = std::max(ld_gap, P.cwiseAbs().maxCoeff() / w);
      }
    }
    if (opt.verbose)
      std::fprintf(stderr, "it %3d  rp %.3e  rd %.3e  mu %.3e  ld %.3e  obj %.6e\n", it, rp / f0scale,
                   rd / dual_scale, mu, ld_gap, prob.c.dot(x));
    res.iterations = it;
    res.mu = mu;
    res.primal_residual = rp / f0scale;
    res.dual_residual = rd / dual_scale;
    if (res.primal_residual <= opt.tol && res.dual_residual <= opt.tol && mu <= opt.tol &&
        ld_gap <= std::sqrt(opt.tol)) {
      res.status = Status::Optimal;
      break;
    }
    {
      const double loose = opt.tol * opt.near_factor;
      const double merit = std::max({res.primal_residual, res.dual_residual, mu});
      if (merit <= loose && ld_gap <= std::sqrt(loose) && merit < best_merit) {
        best_merit = merit;
        best = {x, S, Z, it, mu, res.primal_residual, res.dual_residual};
      }
    }
    double znorm = 0.0;
    for (const auto& Zj : Z) znorm = std::max(znorm, Zj.cwiseAbs().maxCoeff());
    if (x.cwiseAbs().maxCoeff() > opt.divergence_limit || znorm > opt.divergence_limit) {
      res.status = Status::Infeasible;
      int worst = 0;
      double wz = -1.0;
      for (int j = 0; j < J; ++j)
        if (Z[j].norm() > wz) {
          wz = Z[j].norm();
          worst = j;
        }
      res.limiting_block = worst;
      break;
    }

    std::vector<Scaling> sc(J);
    std::vector<MatrixXd> Sinv(J);
    MatrixXd H = MatrixXd::Zero(n, n);
    for (int j = 0; j < J; ++j) {
      sc[j] = nt_scaling(S[j], Z[j]);
      Sinv[j] = spd_inverse(S[j]);
      const auto& terms = prob.blocks[j].terms;
      std::vector<MatrixXd> G(terms.size());
      for (size_t a = 0; a < terms.size(); ++a) G[a] = sc[j].Winv * terms[a].second * sc[j].Winv;
      for (size_t a = 0; a < terms.size(); ++a)
        for (size_t b = a; b < terms.size(); ++b) {
          const double v = (terms[a].second.cwiseProduct(G[b])).sum();
          H(terms[a].first, terms[b].first) += v;
          if (a != b) H(terms[b].first, terms[a].first) += v;
        }
    }
    const double hs = std::max(1.0, H.diagonal().cwiseAbs().maxCoeff());
    Eigen::LDLT<MatrixXd> ldlt(H + 1e-14 * hs * MatrixXd::Identity(n, n));
    if (ldlt.info() != Eigen::Success) {
      res.status = Status::NumericalFailure;
      break;
    }

    auto direction = [&](double target, VectorXd& dx, std::vector<MatrixXd>& dS,
                         std::vector<MatrixXd>& dZ) {
      VectorXd rhs = -prob.c;
      std::vector<MatrixXd> T(J);
      for (int j = 0; j < J; ++j) {
        const double w = prob.blocks[j].logdet_weight;
        const double tj = w > 0.0 ? w : target;
        T[j] = tj * Sinv[j] - sc[j].Winv * Rp[j] * sc[j].Winv;
        for (const auto& [i, Fi] : prob.blocks[j].terms) rhs(i) += (Fi.cwiseProduct(T[j])).sum();
      }
      dx = ldlt.solve(rhs);
      dx += ldlt.solve(rhs - H * dx);
      dS.resize(J);
      dZ.resize(J);
      for (int j = 0; j < J; ++j) {
        MatrixXd d = Rp[j];
        for (const auto& [i, Fi] : prob.blocks[j].terms) d += dx(i) * Fi;
        dS[j] = sym(d);
        const double w = prob.blocks[j].logdet_weight;
        const double tj = w > 0.0 ? w : target;
        dZ[j] = sym(tj * Sinv[j] - Z[j] - sc[j].Winv * dS[j] * sc[j].Winv);
      }
    };
    auto steps = [&](const std::vector<MatrixXd>& dS, const std::vector<MatrixXd>& dZ, double& ap,
                     double& ad) {
      ap = 1.0 / opt.step_fraction;
      ad = 1.0 / opt.step_fraction;
      for (int j = 0; j < J; ++j) {
        ap = std::min(ap, max_step(S[j], dS[j]));
        ad = std::min(ad, max_step(Z[j], dZ[j]));
      }
      ap = std::min(1.0, opt.step_fraction * ap);
      ad = std::min(1.0, opt.step_fraction * ad);
    };

    VectorXd dx;
    std::vector<MatrixXd> dS, dZ;
    double ap = 0.0, ad = 0.0;
    double sigma = 0.0;
    if (ineq_dim > 0) {
      direction(0.0, dx, dS, dZ);
      steps(dS, dZ, ap, ad);
      std::vector<MatrixXd> Sa(J), Za(J);
      for (int j = 0; j < J; ++j) {
        Sa[j] = S[j] + ap * dS[j];
        Za[j] = Z[j] + ad * dZ[j];
      }
      const double mua = complementarity(Sa, Za);
      sigma = mu > 0.0 ? std::clamp(std::pow(mua / mu, 3.0), 0.0, 1.0) : 0.0;
      sigma = std::max(sigma, 1e-3);
      // Keep complementarity from outrunning the infeasibility.
      const double infeas = std::max(rp / rp0, rd / rd0);
      if (mu0 > 0.0 && mu / mu0 < infeas) sigma = std::max(sigma, 0.5);
    }
    direction(sigma * mu, dx, dS, dZ);
    steps(dS, dZ, ap, ad);
    if (!(ap > 0.0) || !(ad > 0.0) || !dx.allFinite()) {
      res.status = Status::NumericalFailure;
      break;
    }
    if (rp > opt.tol * f0scale) {
      ap = std::min(ap, ad);
      ad = ap;
    }
    if (opt.verbose) std::fprintf(stderr, "    sigma %.3e  ap %.3e  ad %.3e\n", sigma, ap, ad);
    x += ap * dx;
    for (int j = 0; j < J; ++j) {
      S[j] = sym(S[j] + ap * dS[j]);
      Z[j] = sym(Z[j] + ad * dZ[j]);
    }
    res.status = Status::MaxIterations;
  }
  if ((res.status == Status::NumericalFailure || res.status == Status::MaxIterations) && best) {
    x = best->x;
    S = best->S;
    Z = best->Z;
    res.status = Status::NearOptimal;
    res.iterations = best->it;
    res.mu = best->mu;
    res.primal_residual = best->rp;
    res.dual_residual = best->rd;
  }
  res.x = x;
  res.Z = Z;
  double obj = prob.c.dot(x);
  for (const auto& b : prob.blocks)
    if (b.logdet_weight > 0.0) {
      Eigen::LLT<MatrixXd> llt(b.eval(x));
      if (llt.info() == Eigen::Success)
        obj -= b.logdet_weight * 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
      else
        obj = std::numeric_limits<double>::infinity();
    }
  res.objective = obj;
  return res;
}

}  // namespace ddismc::sdp
