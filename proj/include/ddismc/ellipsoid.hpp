#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include "ddismc/linsys.hpp"
#include "ddismc/sdp.hpp"

namespace ddismc {

struct InitialTuple {
  VectorXd u0;
  VectorXd ydot0;
};

struct MatrixEllipsoid {
  MatrixXd Amat;
  MatrixXd Bmat;
  MatrixXd Cmat;
};

struct OverApprox {
  MatrixXd Abar;
  MatrixXd Bbar;
  MatrixXd Cbar;
  MatrixXd zeta_bar;
  std::vector<double> tau_multipliers;
  sdp::Status status = sdp::Status::NumericalFailure;
  double primal_residual = 0.0;
  double dual_residual = 0.0;
  int iterations = 0;
  double log_det = 0.0;
};

using InputSampler = std::function<VectorXd(std::mt19937_64&)>;
// Returns the disturbance acting during one experiment as a function of time.
using DisturbanceSampler = std::function<std::function<VectorXd(double)>(std::mt19937_64&)>;

// One-sided fourth-order derivative at the first sample of y.
VectorXd initial_derivative(const SampledSignal& y);

std::vector<InitialTuple> collect_initial_tuples(const StateSpace& plant, int N,
                                                 const InputSampler& input_sampler,
                                                 const DisturbanceSampler& disturbance_sampler,
                                                 double dt, std::uint64_t seed);

// Dataset form: one SampledSignal pair per experiment, u held constant.
std::vector<InitialTuple> collect_initial_tuples(const std::vector<SampledSignal>& u_records,
                                                 const std::vector<SampledSignal>& y_records);

void write_tuples_csv(const std::vector<InitialTuple>& tuples, const std::string& path);
std::vector<InitialTuple> read_tuples_csv(const std::string& path);

std::vector<MatrixEllipsoid> build_ellipsoids(const std::vector<InitialTuple>& tuples, double d_bar);

// Largest eigenvalue of Z'AZ + Z'B + B'Z + C; membership when <= 0.
double qmi_value(const MatrixEllipsoid& e, const MatrixXd& Z);
double qmi_value(const OverApprox& oa, const MatrixXd& Z);

OverApprox overapproximate(const std::vector<MatrixEllipsoid>& ellipsoids, const sdp::Options& opt = {});

struct KDesign {
  MatrixXd W;
  MatrixXd K;
  double lambda = 0.0;
  double margin = 0.0;
  bool feasible = false;
  sdp::Status status = sdp::Status::NumericalFailure;
  std::string limiting;
};

KDesign solve_K(const OverApprox& oa, const sdp::Options& opt = {});

// Estimate of CB from the centroid, (zeta_bar')^{-1}.
MatrixXd cb_estimate(const OverApprox& oa);

double rho_lower_bound(const OverApprox& oa, const MatrixXd& K, double d_bar, double d0_bar);
double rho_lower_bound(const MatrixXd& CBbar, const MatrixXd& K, double d_bar, double d0_bar);

struct PdCheck {
  double min_eig_sym = 0.0;
  bool pd = false;
};

PdCheck verify_pd(const MatrixXd& CB, const MatrixXd& K);

}  // namespace ddismc
