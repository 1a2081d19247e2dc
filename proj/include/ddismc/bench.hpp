#pragma once

#include <cstdint>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ddismc/ellipsoid.hpp"
#include "ddismc/ismc.hpp"
#include "ddismc/linsys.hpp"
#include "ddismc/resid.hpp"
#include "ddismc/vrft.hpp"

namespace ddismc {

// Malformed or inconsistent configuration.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct TankParameters {
  double k1 = 0.008;
  double k2 = 0.0035;
  double A1 = 0.16;
  double A2 = 0.09;
  double A3 = 2.25;
};

struct OperatingPoint {
  double h1 = 0.25;
  double h2 = 0.3;
  double q1 = 0.002;
  double q2 = -0.00095;
};

struct DisturbanceSpec {
  double amplitude = 0.0002;
  double freq_lo = 0.005;  // Hz
  double freq_hi = 0.05;
  double phase_lo = 0.0;
  double phase_hi = 6.283185307179586;
};

// r1 = base + step_size step(t - step_time) + sin_amp sin(2 pi sin_freq (t - sin_start)) step(t - sin_start)
// r2 = base + sin_amp sin(2 pi sin_freq t)
struct ReferenceSpec {
  double r1_base = 0.25;
  double r1_step = -0.015;
  double r1_step_time = 5.0;
  double r1_sin_amp = 0.01;
  double r1_sin_freq = 0.1;
  double r1_sin_start = 20.0;
  double r2_base = 0.3;
  double r2_sin_amp = 0.02;
  double r2_sin_freq = 0.05;
};

struct RunSpec {
  double dt = 1e-3;
  double horizon = 100.0;
};

struct CollectSpec {
  double record = 2000.0;
  double bit_period = 10.0;
  double amplitude = 0.0005;
  double dt = 0.01;  // integration step of the open-loop experiment
  double tau = 0.1;  // sampling step of the stored record, used for the residual estimate
};

struct VrftSpec {
  double model_time_constant = 2.0;  // M = diag 1/(1 + T s)^order
  int model_order = 2;
  std::string controller = "pi";
  double tau = 0.5;  // the record is decimated to this step before tuning
  double ridge = 0.0;
  double trim = 0.05;
};

struct IsmcSpec {
  double boundary_layer = 0.0;  // 0 selects kappa dt rho |CB K|
  double kappa = 2.0;
  double tau_eq = 0.0;          // 0 selects 100 dt
  double rho_factor = 1.5;
  double rho = 0.0;             // 0 selects rho_factor times the lower bound
};

struct EllipsoidSpec {
  int N = 100;
  double input_range = 0.001;
  double dt = 1e-3;
};

struct ResidSpec {
  double gamma = -1.0;  // negative selects the default ridge
  int window = 0;       // samples; 0 selects five dominant time constants
  int stride = 0;
};

struct BenchmarkConfig {
  TankParameters plant;
  OperatingPoint operating;
  DisturbanceSpec disturbance;
  ReferenceSpec reference;
  double d_bar = 0.000283;
  RunSpec run;
  CollectSpec collect;
  VrftSpec vrft;
  IsmcSpec ismc;
  EllipsoidSpec ellipsoid;
  ResidSpec resid;
  std::uint64_t seed = 1;

  void validate() const;
};

std::string config_to_json(const BenchmarkConfig& cfg);
BenchmarkConfig config_from_json(const std::string& text);
BenchmarkConfig load_config(const std::string& path);
void save_config(const BenchmarkConfig& cfg, const std::string& path);

// Independent seed for one named stage.
std::uint64_t stage_seed(std::uint64_t seed, const std::string& stage);

// Linearized tank in deviation coordinates; states (h1, h2, h3), inputs (q1, q2).
StateSpace build_tank_plant(const BenchmarkConfig& cfg);
// Inflows holding the levels h1, h2 at rest.
Eigen::Vector2d tank_equilibrium_inflow(const TankParameters& p, double h1, double h2);

RationalMatrix reference_model(const BenchmarkConfig& cfg);
ControllerClass controller_class(const BenchmarkConfig& cfg);

// Absolute levels with analytic derivative.
Reference tank_reference(const ReferenceSpec& spec);
// Same reference shifted by the operating point.
Reference deviation_reference(const BenchmarkConfig& cfg);
SampledSignal sample_reference(const Reference& ref, double tau, double horizon);

struct SinusoidDisturbance {
  double amplitude = 0.0;
  Eigen::Vector2d freq = Eigen::Vector2d::Zero();   // Hz
  Eigen::Vector2d phase = Eigen::Vector2d::Zero();

  VectorXd operator()(double t) const;
};

SinusoidDisturbance sample_disturbance(const DisturbanceSpec& spec, std::mt19937_64& rng);

struct TraceMetrics {
  double sup_error = 0.0;    // sup |y - y_o|
  double rms_error = 0.0;
  double sup_sigma = 0.0;
  double eq_gap_rms = 0.0;   // filtered u1 against -(d + d0), after three filter constants
  double switch_rate = 0.0;  // sign changes of u1 per second and channel
  double identity_sup = 0.0;
};

TraceMetrics metrics(const ClosedLoopTrace& trace, double tau_eq);

struct CollectArtifacts {
  SampledSignal u;  // deviation inflows at the record step
  SampledSignal y;  // deviation levels
  SinusoidDisturbance disturbance;
  std::uint64_t seed = 0;
};

struct VrftArtifacts {
  VectorXd theta;
  double cost = 0.0;
  double gram_condition = 0.0;
};

struct ResidArtifacts {
  double d0_bar = 0.0;
  int window = 0;
  int stride = 0;
  double gamma = 0.0;
  int rank = 0;
  SampledSignal e_o;
  SampledSignal d0_hat;
};

struct KdesignArtifacts {
  MatrixXd K;
  MatrixXd CBbar;
  MatrixXd zeta_bar;
  MatrixXd Abar;
  double lambda = 0.0;
  double margin = 0.0;
  double rho0 = 0.0;
  double rho = 0.0;
  std::vector<InitialTuple> tuples;
};

struct Scenario {
  std::string name;  // "<ideal|vrft>_<smc|nosmc>"
  bool ideal = false;
  bool smc = true;
  double boundary_layer = 0.0;
  ClosedLoopTrace trace;
  TraceMetrics metrics;
};

struct SimulateArtifacts {
  SinusoidDisturbance disturbance;
  double tau_eq = 0.0;
  std::vector<Scenario> scenarios;
};

struct ArtifactBundle {
  std::optional<CollectArtifacts> collect;
  std::optional<VrftArtifacts> vrft;
  std::optional<ResidArtifacts> resid;
  std::optional<KdesignArtifacts> kdesign;
  std::optional<SimulateArtifacts> simulate;
};

inline const std::vector<std::string>& pipeline_stages() {
  static const std::vector<std::string> s{"collect", "vrft", "resid", "kdesign", "simulate"};
  return s;
}

struct PipelineOptions {
  std::set<std::string> stages;  // empty runs every stage
  std::string out_dir;           // empty keeps everything in memory
  bool smc_on = true;
  bool smc_off = true;
  bool ideal_scenarios = true;
};

// Stages missing from the run are loaded from out_dir when a later stage needs them.
// Failures are rethrown with the stage name; artifacts written so far stay on disk.
ArtifactBundle run_pipeline(const BenchmarkConfig& cfg, const PipelineOptions& opt);

// Every artifact set present in dir; absent stages stay empty.
ArtifactBundle load_artifacts(const std::string& dir);

// Single stages, for callers that hold the inputs in memory.
CollectArtifacts stage_collect(const BenchmarkConfig& cfg);
VrftArtifacts stage_vrft(const BenchmarkConfig& cfg, const CollectArtifacts& data);
ResidArtifacts stage_resid(const BenchmarkConfig& cfg, const CollectArtifacts& data, const VrftArtifacts& vr);
KdesignArtifacts stage_kdesign(const BenchmarkConfig& cfg, double d0_bar);

struct ScenarioRequest {
  bool ideal = false;
  bool smc = true;
  std::optional<double> rho;  // overrides the designed gain
  std::optional<double> dt;   // overrides the run step
};

Scenario run_scenario(const BenchmarkConfig& cfg, const StateSpace& controller, const KdesignArtifacts& kd,
                      const DisturbanceSource& disturbance, const ScenarioRequest& req);

SimulateArtifacts stage_simulate(const BenchmarkConfig& cfg, const VrftArtifacts* vr, const KdesignArtifacts& kd,
                                 const PipelineOptions& opt);

// Plant, controller and model poles against the zeros of the augmented system.
SlidingPolesReport tank_zeros_check(const BenchmarkConfig& cfg, const VectorXd& theta);

}  // namespace ddismc
