#pragma once

#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace ddismc::sdp {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// Affine matrix function F(x) = F0 + sum_i x_i F_i, constrained to F(x) >= 0.
// A positive logdet_weight w adds -w log det F(x) to the objective.
struct LmiBlock {
  MatrixXd F0;
  std::vector<std::pair<int, MatrixXd>> terms;
  double logdet_weight = 0.0;
  std::string name;

  void add(int var, const MatrixXd& Fi) { terms.emplace_back(var, Fi); }
  MatrixXd eval(const VectorXd& x) const;
};

// minimize c'x - sum_j w_j log det F_j(x)  subject to  F_j(x) >= 0.
struct Problem {
  int num_vars = 0;
  VectorXd c;
  std::vector<LmiBlock> blocks;
};

struct Options {
  double tol = 1e-8;
  int max_iter = 200;
  double step_fraction = 0.95;
  double divergence_limit = 1e12;
  // Stalled runs fall back to the best iterate within this multiple of tol.
  double near_factor = 1e3;
  bool verbose = false;
};

// NearOptimal: progress stalled, the returned iterate meets tol * near_factor.
enum class Status { Optimal, NearOptimal, Infeasible, MaxIterations, NumericalFailure };

inline bool usable(Status s) { return s == Status::Optimal || s == Status::NearOptimal; }

std::string to_string(Status s);

struct Result {
  Status status = Status::NumericalFailure;
  VectorXd x;
  std::vector<MatrixXd> Z;  // dual multipliers, one per block
  double objective = 0.0;
  double mu = 0.0;
  double primal_residual = 0.0;
  double dual_residual = 0.0;
  int iterations = 0;
  int limiting_block = -1;
};

// Infeasible-start primal-dual path following with Nesterov-Todd scaling and a
// Mehrotra-type centering rule.
Result solve(const Problem& prob, const Options& opt = {});

// Symmetric basis helpers for m x m symmetric matrix variables.
int svec_size(int m);
MatrixXd svec_basis(int m, int k);  // k-th unit symmetric matrix

}  // namespace ddismc::sdp
