#pragma once

#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "ddismc/linsys.hpp"

namespace ddismc {

// Order of the coefficients in theta.
//  Stacked:   [vec(Pi_0)' ... vec(Pi_q)']', vec column-major.
//  Entrywise: entries row-major, each entry's numerator listed from the highest power down.
enum class ThetaLayout { Stacked, Entrywise };

struct Coefficient {
  int q;
  int i;
  int j;
};

class ControllerClass {
 public:
  ControllerClass() = default;
  // degree_mask(i,j) is the largest power of s in entry (i,j); -1 marks a structural zero.
  ControllerClass(Poly chi, Eigen::MatrixXi degree_mask, ThetaLayout layout = ThetaLayout::Stacked);

  // chi = s, every entry of degree one: (theta_a s + theta_b)/s.
  static ControllerClass pi(int m, ThetaLayout layout = ThetaLayout::Entrywise);

  const Poly& chi() const { return chi_; }
  const Eigen::MatrixXi& degree_mask() const { return mask_; }
  ThetaLayout layout() const { return layout_; }
  int m() const { return static_cast<int>(mask_.rows()); }
  int max_degree() const;
  int num_params() const { return static_cast<int>(support_.size()); }
  const std::vector<Coefficient>& support() const { return support_; }

 private:
  Poly chi_;
  Eigen::MatrixXi mask_;
  ThetaLayout layout_ = ThetaLayout::Stacked;
  std::vector<Coefficient> support_;
};

struct ControllerParameters {
  VectorXd theta;
  std::vector<MatrixXd> pi_matrices;
};

ControllerParameters make_parameters(const ControllerClass& cls, const VectorXd& theta);

// Filter settings used for virtual signals and regressors.
inline FilterOptions vrft_filter_options() {
  FilterOptions f;
  f.bridge = true;
  return f;
}

struct VirtualSignals {
  SampledSignal r_v;
  SampledSignal e_v;
};

VirtualSignals virtual_signals(const RationalMatrix& M, const SampledSignal& y,
                               const FilterOptions& opt = vrft_filter_options());

std::vector<SampledSignal> regressors(const ControllerClass& cls, const SampledSignal& e_v,
                                      const FilterOptions& opt = vrft_filter_options());

struct VrftOptions {
  double ridge = 0.0;
  double trim = 0.05;
  FilterOptions filter = vrft_filter_options();
};

struct VrftFit {
  ControllerParameters params;
  double cost = 0.0;
  double gram_condition = 0.0;
  double ridge = 0.0;
};

ControllerParameters solve_theta(const ControllerClass& cls, const SampledSignal& e_v, const SampledSignal& u,
                                 double ridge, const VrftOptions& opt = {});
// Same solve from precomputed regressors, with diagnostics.
VrftFit solve_theta(const ControllerClass& cls, const std::vector<SampledSignal>& phi, const SampledSignal& u,
                    const VrftOptions& opt);

double cost_jvr(const ControllerClass& cls, const ControllerParameters& theta, const SampledSignal& e_v,
                const SampledSignal& u, const VrftOptions& opt = {});
double cost_jvr(const ControllerClass& cls, const ControllerParameters& theta,
                const std::vector<SampledSignal>& phi, const SampledSignal& u, const VrftOptions& opt);

// Phi_v(t) theta on the full grid.
SampledSignal apply_parameters(const ControllerClass& cls, const ControllerParameters& theta,
                               const std::vector<SampledSignal>& phi);

std::pair<RationalMatrix, StateSpace> theta_to_controller(const ControllerClass& cls, const VectorXd& theta);
VectorXd controller_to_theta(const ControllerClass& cls, const RationalMatrix& R);

// Subtract a constant operating point from every sample.
SampledSignal remove_operating_point(const SampledSignal& x, const VectorXd& op);
VectorXd signal_mean(const SampledSignal& x);

}  // namespace ddismc
