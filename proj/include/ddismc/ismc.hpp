#pragma once

#include <functional>
#include <optional>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "ddismc/linsys.hpp"

namespace ddismc {

struct IsmcConfig {
  double rho = 1.0;
  MatrixXd K;
  double boundary_layer = 0.0;
  double eq_filter_tau = 0.0;  // 0 selects 100 dt

  void validate() const;
};

// Layer radius that keeps the discrete loop inside the layer stable for step dt.
double default_boundary_layer(double rho, const MatrixXd& K, const MatrixXd& CB_estimate, double dt,
                              double kappa = 2.0);

VectorXd unit_vector_control(const VectorXd& sigma, const IsmcConfig& cfg);

using TimeFunction = std::function<VectorXd(double)>;

struct Reference {
  TimeFunction r;
  TimeFunction rdot;
};

// Linear interpolation of r, central differences for its derivative.
Reference reference_from_signal(const SampledSignal& r);

using DisturbanceSource = std::variant<SampledSignal, TimeFunction>;

// Sampled update of the transient function between grid points.
//  Increment:  zeta += dt (Cm Am xm + Cm Bm r) - (r_next - r), exact for steps in r.
//  Derivative: zeta += dt (Cm Am xm + Cm Bm r - rdot).
enum class ZetaScheme { Increment, Derivative };

struct ClosedLoopOptions {
  bool smc_enabled = true;
  ZetaScheme zeta_scheme = ZetaScheme::Increment;
  double dt = 0.01;
  double horizon = 10.0;
  VectorXd x0;  // plant deviation state, zero when empty
  // Ideal controller run in parallel on the same error; gives d0_true = u0_hat - u0.
  std::optional<StateSpace> ideal;
};

struct ClosedLoopTrace {
  SampledSignal r, y, y_o, e, sigma, zeta, u0, u1, u, d, d0_true, x_a;
  SampledSignal identity_residual;  // sigma - (y_o - y)
};

ClosedLoopTrace closed_loop_simulate(const StateSpace& plant, const DisturbanceSource& disturbance,
                                     const StateSpace& controller, const StateSpace& Mreal, const Reference& ref,
                                     const IsmcConfig& cfg, const ClosedLoopOptions& opt);

SampledSignal equivalent_control(const SampledSignal& u1, double tau_eq);

struct AugmentedSystem {
  StateSpace sys;  // (A_a, B_a, C_a, 0)
  MatrixXd Br;
};

AugmentedSystem build_augmented(const StateSpace& plant, const StateSpace& controller, const StateSpace& Mreal);

struct SlidingPolesReport {
  std::vector<Complex> zeros_augmented;
  std::vector<Complex> plant_zeros;
  std::vector<Complex> controller_poles;
  std::vector<Complex> model_poles;
  std::vector<Complex> unmatched_expected;
  std::vector<Complex> unmatched_augmented;
  bool degenerate = false;
  bool matched = false;
};

SlidingPolesReport sliding_poles_check(const StateSpace& plant, const StateSpace& controller, const StateSpace& Mreal,
                                       double rel_tol = 1e-6);

// Model-based controller with (I - M)^{-1} M = P R0 for a plant with invertible CB
// and a strictly proper reference model.
StateSpace ideal_controller(const StateSpace& plant, const StateSpace& Mreal);

}  // namespace ddismc
