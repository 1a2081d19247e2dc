#pragma once

#include <vector>

#include <Eigen/Dense>

#include "ddismc/linsys.hpp"
#include "ddismc/vrft.hpp"

namespace ddismc {

struct HankelMatrix {
  int depth = 0;
  SampledSignal source;
  MatrixXd matrix;  // (depth*m) x (T-depth+1)
};

HankelMatrix hankel(const SampledSignal& x, int depth);

// e_o = (I - M) r from rest; r is interpolated linearly and held at the midpoint of each substep.
SampledSignal ideal_error(const RationalMatrix& M, const SampledSignal& r, int substeps = 10);

SampledSignal virtual_d0(const ControllerClass& cls, const ControllerParameters& theta,
                         const std::vector<SampledSignal>& phi, const SampledSignal& u);
SampledSignal virtual_d0(const ControllerClass& cls, const SampledSignal& u, const ControllerParameters& theta,
                         const SampledSignal& e_v, const FilterOptions& opt = vrft_filter_options());

struct GEstimate {
  VectorXd g;
  int rank = 0;
  double gamma = 0.0;
};

double default_gamma(const HankelMatrix& Ev);

// Ridge solution of Ev g = e_o.
GEstimate estimate_g(const HankelMatrix& Ev, const VectorXd& e_o_window, double gamma);

// Time constant of the slowest pole in the model.
double dominant_time_constant(const RationalMatrix& M);
int default_window(const RationalMatrix& M, double tau);

// The window length is the Hankel depth.
struct ResidOptions {
  int stride = 0;       // samples; 0 selects half the window
  double gamma = -1.0;  // negative selects default_gamma
};

struct D0Estimate {
  SampledSignal d0_hat;  // per sample, from the last window covering it
  double d0_bar = 0.0;
  std::vector<int> window_starts;
  std::vector<double> window_sup;
  int window = 0;
  int rank = 0;
  double gamma = 0.0;
};

// Stack one trajectory window into a depth*m vector.
VectorXd stack_window(const SampledSignal& x, int start, int depth);

D0Estimate estimate_d0_bound(const HankelMatrix& Ev, const HankelMatrix& D0v, const SampledSignal& e_o,
                             const ResidOptions& opt);

}  // namespace ddismc
