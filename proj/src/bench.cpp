#include "ddismc/bench.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <future>
#include <numbers>
#include <sstream>

#include <json.hpp>

#include "ddismc/errors.hpp"

namespace ddismc {

using nlohmann::json;

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(TankParameters, k1, k2, A1, A2, A3)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(OperatingPoint, h1, h2, q1, q2)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(DisturbanceSpec, amplitude, freq_lo, freq_hi, phase_lo, phase_hi)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(ReferenceSpec, r1_base, r1_step, r1_step_time, r1_sin_amp, r1_sin_freq,
                                                r1_sin_start, r2_base, r2_sin_amp, r2_sin_freq)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(RunSpec, dt, horizon)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(CollectSpec, record, bit_period, amplitude, dt, tau)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(VrftSpec, model_time_constant, model_order, controller, tau, ridge,
                                                trim)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(IsmcSpec, boundary_layer, kappa, tau_eq, rho_factor, rho)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(EllipsoidSpec, N, input_range, dt)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(ResidSpec, gamma, window, stride)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(BenchmarkConfig, plant, operating, disturbance, reference, d_bar, run,
                                                collect, vrft, ismc, ellipsoid, resid, seed)

namespace {

void require(bool ok, const std::string& what) {
  if (!ok) throw ConfigError("config: " + what);
}

bool is_multiple(double a, double b) {
  const double r = a / b;
  return std::abs(r - std::round(r)) <= 1e-9 * std::max(1.0, r);
}

// Keys in `doc` that the schema in `ref` does not know.
void check_keys(const json& doc, const json& ref, const std::string& path) {
  if (!doc.is_object()) return;
  for (auto it = doc.begin(); it != doc.end(); ++it) {
    if (!ref.contains(it.key())) throw ConfigError("config: unknown key '" + path + it.key() + "'");
    check_keys(it.value(), ref.at(it.key()), path + it.key() + ".");
  }
}

json matrix_json(const MatrixXd& M) {
  json a = json::array();
  for (int i = 0; i < M.rows(); ++i) {
    json row = json::array();
    for (int j = 0; j < M.cols(); ++j) row.push_back(M(i, j));
    a.push_back(row);
  }
  return a;
}

MatrixXd json_matrix(const json& a) {
  const int r = static_cast<int>(a.size());
  const int c = r ? static_cast<int>(a.at(0).size()) : 0;
  MatrixXd M(r, c);
  for (int i = 0; i < r; ++i) {
    if (static_cast<int>(a.at(i).size()) != c) throw std::runtime_error("artifact: ragged matrix");
    for (int j = 0; j < c; ++j) M(i, j) = a.at(i).at(j).get<double>();
  }
  return M;
}

json vector_json(const VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

VectorXd json_vector(const json& a) {
  const auto v = a.get<std::vector<double>>();
  return Eigen::Map<const VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

json disturbance_json(const SinusoidDisturbance& d) {
  return {{"amplitude", d.amplitude}, {"freq_hz", vector_json(d.freq)}, {"phase", vector_json(d.phase)}};
}

SinusoidDisturbance json_disturbance(const json& j) {
  SinusoidDisturbance d;
  d.amplitude = j.at("amplitude").get<double>();
  d.freq = json_vector(j.at("freq_hz"));
  d.phase = json_vector(j.at("phase"));
  return d;
}

std::string path_in(const std::string& dir, const std::string& name) {
  return (std::filesystem::path(dir) / name).string();
}

void write_json(const json& j, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot open " + path);
  f << j.dump(2) << "\n";
}

json read_json(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open " + path);
  return json::parse(f);
}

SampledSignal rows(const SampledSignal& x, int begin, int end) {
  return SampledSignal(x.time(begin), x.tau(), x.values().middleRows(begin, end - begin));
}

double sup_rows(const MatrixXd& v) {
  double s = 0.0;
  for (int k = 0; k < v.rows(); ++k) s = std::max(s, v.row(k).norm());
  return s;
}

void write_trace_csv(const ClosedLoopTrace& tr, const std::string& path) {
  std::vector<std::pair<std::string, const SampledSignal*>> cols{
      {"r", &tr.r},   {"y", &tr.y},   {"y_o", &tr.y_o}, {"e", &tr.e}, {"sigma", &tr.sigma},
      {"zeta", &tr.zeta}, {"u0", &tr.u0}, {"u1", &tr.u1}, {"u", &tr.u}, {"d", &tr.d}};
  if (tr.d0_true.T() == tr.y.T()) cols.push_back({"d0", &tr.d0_true});
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot open " + path);
  f << "t";
  for (const auto& [name, s] : cols)
    for (int j = 0; j < s->channels(); ++j) f << ',' << name << j + 1;
  f << "\n";
  for (int k = 0; k < tr.y.T(); ++k) {
    f << format_double(tr.y.time(k));
    for (const auto& c : cols)
      for (int j = 0; j < c.second->channels(); ++j) f << ',' << format_double(c.second->values()(k, j));
    f << "\n";
  }
}

template <class F>
auto guarded(const std::string& stage, F&& f) {
  const std::string p = "stage " + stage + ": ";
  try {
    return f();
  } catch (const InfeasibleDesign& e) {
    throw InfeasibleDesign(p + e.what());
  } catch (const NumericalFailure& e) {
    throw NumericalFailure(p + e.what());
  } catch (const ConfigError& e) {
    throw ConfigError(p + e.what());
  } catch (const json::exception& e) {
    throw ConfigError(p + e.what());
  } catch (const std::invalid_argument& e) {
    throw std::invalid_argument(p + e.what());
  } catch (const std::exception& e) {
    throw std::runtime_error(p + e.what());
  }
}

}  // namespace

void BenchmarkConfig::validate() const {
  require(plant.k1 > 0 && plant.k2 > 0 && plant.A1 > 0 && plant.A2 > 0 && plant.A3 > 0,
          "plant parameters must be > 0");
  require(disturbance.amplitude >= 0, "disturbance.amplitude must be >= 0");
  require(disturbance.freq_lo > 0 && disturbance.freq_lo <= disturbance.freq_hi, "disturbance frequency range");
  require(disturbance.phase_lo <= disturbance.phase_hi, "disturbance phase range");
  require(d_bar > 0, "d_bar must be > 0");
  require(run.dt > 0 && run.horizon > 0, "run.dt and run.horizon must be > 0");
  require(collect.record > 0 && collect.amplitude > 0, "collect.record and collect.amplitude must be > 0");
  require(collect.dt > 0 && collect.tau >= collect.dt && is_multiple(collect.tau, collect.dt),
          "collect.tau must be a positive multiple of collect.dt");
  require(collect.bit_period >= collect.tau, "collect.bit_period must be >= collect.tau");
  require(run.horizon >= collect.tau, "run.horizon shorter than one record step");
  require(vrft.model_time_constant > 0 && vrft.model_order >= 1, "vrft model");
  require(vrft.tau >= collect.tau && is_multiple(vrft.tau, collect.tau), "vrft.tau must be a multiple of collect.tau");
  require(vrft.controller == "pi", "vrft.controller must be \"pi\"");
  require(vrft.ridge >= 0 && vrft.trim >= 0 && vrft.trim < 0.5, "vrft.ridge >= 0 and 0 <= vrft.trim < 0.5");
  require(ismc.boundary_layer >= 0 && ismc.kappa > 0 && ismc.tau_eq >= 0, "ismc layer and filter settings");
  require(ismc.rho_factor > 0 && ismc.rho >= 0, "ismc gain settings");
  require(ellipsoid.N >= 1 && ellipsoid.input_range > 0 && ellipsoid.dt > 0, "ellipsoid settings");
  require(resid.window >= 0 && resid.stride >= 0, "resid.window and resid.stride must be >= 0");
}

std::string config_to_json(const BenchmarkConfig& cfg) { return json(cfg).dump(2); }

BenchmarkConfig config_from_json(const std::string& text) {
  BenchmarkConfig cfg;
  try {
    const json doc = json::parse(text);
    if (!doc.is_object()) throw ConfigError("config: document must be an object");
    check_keys(doc, json(BenchmarkConfig{}), "");
    cfg = doc.get<BenchmarkConfig>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

BenchmarkConfig load_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("config: cannot open " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return config_from_json(ss.str());
}

void save_config(const BenchmarkConfig& cfg, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("save_config: cannot open " + path);
  f << config_to_json(cfg) << "\n";
}

std::uint64_t stage_seed(std::uint64_t seed, const std::string& stage) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : stage) h = (h ^ c) * 1099511628211ull;
  std::uint64_t z = seed ^ h;
  z += 0x9e3779b97f4a7c15ull;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

StateSpace build_tank_plant(const BenchmarkConfig& cfg) {
  const auto& p = cfg.plant;
  if (!(p.k1 > 0 && p.k2 > 0 && p.A1 > 0 && p.A2 > 0 && p.A3 > 0))
    throw ConfigError("build_tank_plant: parameters must be > 0");
  MatrixXd A(3, 3), B(3, 2), C = MatrixXd::Zero(2, 3);
  A << -p.k1 / p.A1, p.k2 / p.A1, 0.0,
       0.0, -p.k2 / p.A2, 0.0,
       p.k1 / p.A3, 0.0, 0.0;
  B << 0.0, -1.0 / p.A1,
       1.0 / p.A2, 1.0 / p.A2,
       -1.0 / p.A3, 0.0;
  C(0, 0) = 1.0;
  C(1, 1) = 1.0;
  return StateSpace(A, B, C, MatrixXd::Zero(2, 2));
}

Eigen::Vector2d tank_equilibrium_inflow(const TankParameters& p, double h1, double h2) {
  // h3 at rest needs q1 = k1 h1; tank 1 at rest then fixes q2
  return {p.k1 * h1, -p.k1 * h1 + p.k2 * h2};
}

RationalMatrix reference_model(const BenchmarkConfig& cfg) {
  const Poly den = poly::pow({1.0, cfg.vrft.model_time_constant}, cfg.vrft.model_order);
  return RationalMatrix::diagonal({{{1.0}, den}, {{1.0}, den}});
}

ControllerClass controller_class(const BenchmarkConfig& cfg) {
  if (cfg.vrft.controller != "pi") throw ConfigError("controller_class: unknown class " + cfg.vrft.controller);
  return ControllerClass::pi(2, ThetaLayout::Entrywise);
}

Reference tank_reference(const ReferenceSpec& s) {
  const double w1 = 2.0 * std::numbers::pi * s.r1_sin_freq, w2 = 2.0 * std::numbers::pi * s.r2_sin_freq;
  Reference ref;
  ref.r = [s, w1, w2](double t) {
    VectorXd r(2);
    r(0) = s.r1_base + (t >= s.r1_step_time ? s.r1_step : 0.0) +
           (t >= s.r1_sin_start ? s.r1_sin_amp * std::sin(w1 * (t - s.r1_sin_start)) : 0.0);
    r(1) = s.r2_base + s.r2_sin_amp * std::sin(w2 * t);
    return r;
  };
  ref.rdot = [s, w1, w2](double t) {
    VectorXd r(2);
    r(0) = t >= s.r1_sin_start ? s.r1_sin_amp * w1 * std::cos(w1 * (t - s.r1_sin_start)) : 0.0;
    r(1) = s.r2_sin_amp * w2 * std::cos(w2 * t);
    return r;
  };
  return ref;
}

Reference deviation_reference(const BenchmarkConfig& cfg) {
  Reference abs = tank_reference(cfg.reference);
  const VectorXd h = Eigen::Vector2d(cfg.operating.h1, cfg.operating.h2);
  return {[abs, h](double t) -> VectorXd { return abs.r(t) - h; }, abs.rdot};
}

SampledSignal sample_reference(const Reference& ref, double tau, double horizon) {
  if (!(tau > 0.0) || !(horizon >= 0.0)) throw std::invalid_argument("sample_reference: bad grid");
  const int T = static_cast<int>(std::llround(horizon / tau)) + 1;
  const VectorXd r0 = ref.r(0.0);
  MatrixXd v(T, r0.size());
  for (int k = 0; k < T; ++k) v.row(k) = ref.r(k * tau).transpose();
  return SampledSignal(0.0, tau, v);
}

VectorXd SinusoidDisturbance::operator()(double t) const {
  VectorXd d(2);
  for (int i = 0; i < 2; ++i) d(i) = amplitude * std::sin(2.0 * std::numbers::pi * freq(i) * t - phase(i));
  return d;
}

SinusoidDisturbance sample_disturbance(const DisturbanceSpec& spec, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> F(spec.freq_lo, spec.freq_hi), P(spec.phase_lo, spec.phase_hi);
  SinusoidDisturbance d;
  d.amplitude = spec.amplitude;
  for (int i = 0; i < 2; ++i) {
    d.freq(i) = F(rng);
    d.phase(i) = P(rng);
  }
  return d;
}

TraceMetrics metrics(const ClosedLoopTrace& tr, double tau_eq) {
  const int T = tr.y.T();
  if (T == 0 || tr.y_o.T() != T || tr.sigma.T() != T || tr.u1.T() != T)
    throw std::invalid_argument("metrics: empty or incomplete trace");
  TraceMetrics out;
  const MatrixXd err = tr.y.values() - tr.y_o.values();
  out.sup_error = sup_rows(err);
  out.rms_error = std::sqrt(err.rowwise().squaredNorm().mean());
  out.sup_sigma = sup_rows(tr.sigma.values());
  if (tr.identity_residual.T() == T) out.identity_sup = sup_rows(tr.identity_residual.values());

  const double tau = tr.u1.tau();
  const int start = static_cast<int>(std::ceil(3.0 * tau_eq / tau));
  if (tau_eq >= 5.0 * tau && start < T && tr.d.T() == T) {
    const SampledSignal ueq = equivalent_control(tr.u1, tau_eq);
    MatrixXd target = -tr.d.values();
    if (tr.d0_true.T() == T) target -= tr.d0_true.values();
    out.eq_gap_rms = std::sqrt((ueq.values() - target).bottomRows(T - start).rowwise().squaredNorm().mean());
  }
  if (T > 1) {
    long flips = 0;
    const MatrixXd& u1 = tr.u1.values();
    for (int j = 0; j < u1.cols(); ++j)
      for (int k = 1; k < T; ++k)
        if (u1(k, j) * u1(k - 1, j) < 0.0) ++flips;
    out.switch_rate = static_cast<double>(flips) / (tr.u1.duration() * u1.cols());
  }
  return out;
}

CollectArtifacts stage_collect(const BenchmarkConfig& cfg) {
  const auto& c = cfg.collect;
  CollectArtifacts out;
  out.seed = stage_seed(cfg.seed, "collect");
  std::mt19937_64 rng(out.seed);
  out.disturbance = sample_disturbance(cfg.disturbance, rng);
  const auto u = prbs(2, c.record, c.tau, {c.amplitude}, c.bit_period, rng());
  const StateSpace plant = build_tank_plant(cfg);
  const SinusoidDisturbance d = out.disturbance;
  FeedbackLaw law = [&u, d](double t, const VectorXd&) -> VectorXd { return u.hold(t) + d(t); };
  const auto sim = simulate(plant, law, VectorXd::Zero(plant.n()), c.record, c.dt);
  const SampledSignal y = sim.y.decimate(static_cast<int>(std::lround(c.tau / c.dt)));
  const int T = std::min(u.T(), y.T());
  out.u = rows(u, 0, T);
  out.y = rows(y, 0, T);
  return out;
}

VrftArtifacts stage_vrft(const BenchmarkConfig& cfg, const CollectArtifacts& data) {
  const ControllerClass cls = controller_class(cfg);
  const int k = static_cast<int>(std::lround(cfg.vrft.tau / data.y.tau()));
  if (k < 1) throw std::invalid_argument("stage_vrft: record step is coarser than vrft.tau");
  const auto vs = virtual_signals(reference_model(cfg), data.y.decimate(k));
  VrftOptions o;
  o.ridge = cfg.vrft.ridge;
  o.trim = cfg.vrft.trim;
  const auto fit = solve_theta(cls, regressors(cls, vs.e_v), data.u.decimate(k), o);
  return {fit.params.theta, fit.cost, fit.gram_condition};
}

ResidArtifacts stage_resid(const BenchmarkConfig& cfg, const CollectArtifacts& data, const VrftArtifacts& vr) {
  const ControllerClass cls = controller_class(cfg);
  const RationalMatrix M = reference_model(cfg);
  const double tau = data.y.tau();
  const auto vs = virtual_signals(M, data.y);
  const SampledSignal d0v = virtual_d0(cls, data.u, make_parameters(cls, vr.theta), vs.e_v);
  // drop the record edges, where the offline filters are least accurate
  const int T = data.y.T();
  const int cut = static_cast<int>(std::floor(cfg.vrft.trim * T));
  ResidArtifacts out;
  out.window = cfg.resid.window > 0 ? cfg.resid.window : default_window(M, tau);
  if (T - 2 * cut < out.window) throw std::invalid_argument("stage_resid: record shorter than the window");
  const HankelMatrix Ev = hankel(rows(vs.e_v, cut, T - cut), out.window);
  const HankelMatrix Dv = hankel(rows(d0v, cut, T - cut), out.window);
  out.e_o = ideal_error(M, sample_reference(deviation_reference(cfg), tau, cfg.run.horizon));
  ResidOptions ro;
  ro.stride = cfg.resid.stride;
  ro.gamma = cfg.resid.gamma;
  const D0Estimate est = estimate_d0_bound(Ev, Dv, out.e_o, ro);
  out.d0_bar = est.d0_bar;
  out.stride = ro.stride > 0 ? ro.stride : std::max(1, out.window / 2);
  out.gamma = est.gamma;
  out.rank = est.rank;
  out.d0_hat = est.d0_hat;
  return out;
}

KdesignArtifacts stage_kdesign(const BenchmarkConfig& cfg, double d0_bar) {
  const StateSpace plant = build_tank_plant(cfg);
  const double range = cfg.ellipsoid.input_range;
  InputSampler ins = [range](std::mt19937_64& rng) {
    std::uniform_real_distribution<double> U(-range, range);
    VectorXd u(2);
    u(0) = U(rng);
    u(1) = U(rng);
    return u;
  };
  const DisturbanceSpec spec = cfg.disturbance;
  DisturbanceSampler dis = [spec](std::mt19937_64& rng) -> std::function<VectorXd(double)> {
    return sample_disturbance(spec, rng);
  };
  KdesignArtifacts out;
  out.tuples = collect_initial_tuples(plant, cfg.ellipsoid.N, ins, dis, cfg.ellipsoid.dt,
                                      stage_seed(cfg.seed, "kdesign"));
  const OverApprox oa = overapproximate(build_ellipsoids(out.tuples, cfg.d_bar));
  const KDesign kd = solve_K(oa);
  if (!kd.feasible) throw InfeasibleDesign("solve_K: no gain found (" + kd.limiting + ")");
  out.K = kd.K;
  out.lambda = kd.lambda;
  out.margin = kd.margin;
  out.CBbar = cb_estimate(oa);
  out.zeta_bar = oa.zeta_bar;
  out.Abar = oa.Abar;
  out.rho0 = rho_lower_bound(oa, kd.K, cfg.d_bar, d0_bar);
  out.rho = cfg.ismc.rho > 0 ? cfg.ismc.rho : cfg.ismc.rho_factor * out.rho0;
  return out;
}

Scenario run_scenario(const BenchmarkConfig& cfg, const StateSpace& controller, const KdesignArtifacts& kd,
                      const DisturbanceSource& disturbance, const ScenarioRequest& req) {
  const StateSpace plant = build_tank_plant(cfg);
  const StateSpace Mreal = realize(reference_model(cfg));
  const StateSpace ideal = ideal_controller(plant, Mreal);
  Scenario sc;
  sc.ideal = req.ideal;
  sc.smc = req.smc;
  sc.name = std::string(req.ideal ? "ideal" : "vrft") + (req.smc ? "_smc" : "_nosmc");
  ClosedLoopOptions opt;
  opt.smc_enabled = req.smc;
  opt.dt = req.dt ? *req.dt : cfg.run.dt;
  opt.horizon = cfg.run.horizon;
  opt.ideal = ideal;
  IsmcConfig ic;
  ic.rho = req.rho ? *req.rho : kd.rho;
  ic.K = kd.K;
  ic.boundary_layer = cfg.ismc.boundary_layer > 0 ? cfg.ismc.boundary_layer
                                                  : default_boundary_layer(ic.rho, kd.K, kd.CBbar, opt.dt,
                                                                           cfg.ismc.kappa);
  const double tau_eq = cfg.ismc.tau_eq > 0 ? cfg.ismc.tau_eq : 100.0 * opt.dt;
  ic.eq_filter_tau = tau_eq;
  sc.boundary_layer = ic.boundary_layer;
  sc.trace = closed_loop_simulate(plant, disturbance, req.ideal ? ideal : controller, Mreal,
                                  deviation_reference(cfg), ic, opt);
  sc.metrics = metrics(sc.trace, tau_eq);
  return sc;
}

SimulateArtifacts stage_simulate(const BenchmarkConfig& cfg, const VrftArtifacts* vr, const KdesignArtifacts& kd,
                                 const PipelineOptions& opt) {
  SimulateArtifacts out;
  std::mt19937_64 rng(stage_seed(cfg.seed, "simulate"));
  out.disturbance = sample_disturbance(cfg.disturbance, rng);
  out.tau_eq = cfg.ismc.tau_eq > 0 ? cfg.ismc.tau_eq : 100.0 * cfg.run.dt;
  StateSpace controller;
  if (vr) controller = theta_to_controller(controller_class(cfg), vr->theta).second;
  std::vector<ScenarioRequest> reqs;
  for (bool ideal : {true, false}) {
    if (ideal && !opt.ideal_scenarios) continue;
    if (!ideal && !vr) continue;
    for (bool smc : {true, false})
      if ((smc && opt.smc_on) || (!smc && opt.smc_off)) reqs.push_back({ideal, smc, std::nullopt, std::nullopt});
  }
  const TimeFunction d = out.disturbance;
  std::vector<std::future<Scenario>> runs;
  for (const auto& r : reqs)
    runs.push_back(std::async(std::launch::async, [&, r] { return run_scenario(cfg, controller, kd, d, r); }));
  for (auto& f : runs) out.scenarios.push_back(f.get());
  return out;
}

SlidingPolesReport tank_zeros_check(const BenchmarkConfig& cfg, const VectorXd& theta) {
  const StateSpace plant = build_tank_plant(cfg);
  const StateSpace controller = theta_to_controller(controller_class(cfg), theta).second;
  return sliding_poles_check(plant, controller, realize(reference_model(cfg)));
}

namespace {

void save_collect(const CollectArtifacts& a, const BenchmarkConfig& cfg, const std::string& dir) {
  a.u.write_csv(path_in(dir, "collect_u.csv"));
  a.y.write_csv(path_in(dir, "collect_y.csv"));
  write_json({{"seed", a.seed},
              {"disturbance", disturbance_json(a.disturbance)},
              {"record", cfg.collect.record},
              {"bit_period", cfg.collect.bit_period},
              {"amplitude", cfg.collect.amplitude},
              {"dt", cfg.collect.dt},
              {"tau", cfg.collect.tau}},
             path_in(dir, "collect.json"));
}

CollectArtifacts load_collect(const std::string& dir) {
  CollectArtifacts a;
  const json j = read_json(path_in(dir, "collect.json"));
  a.seed = j.at("seed").get<std::uint64_t>();
  a.disturbance = json_disturbance(j.at("disturbance"));
  a.u = SampledSignal::read_csv(path_in(dir, "collect_u.csv"));
  a.y = SampledSignal::read_csv(path_in(dir, "collect_y.csv"));
  return a;
}

void save_vrft(const VrftArtifacts& a, const BenchmarkConfig& cfg, const std::string& dir) {
  const auto R = theta_to_controller(controller_class(cfg), a.theta).first;
  json entries = json::array();
  for (int i = 0; i < R.rows(); ++i)
    for (int j = 0; j < R.cols(); ++j) entries.push_back({{"row", i}, {"col", j}, {"num", R(i, j).num}, {"den", R(i, j).den}});
  write_json({{"theta", vector_json(a.theta)},
              {"layout", "entrywise"},
              {"cost", a.cost},
              {"gram_condition", a.gram_condition},
              {"controller", entries},
              {"tau", cfg.vrft.tau},
              {"record", cfg.collect.record},
              {"bit_period", cfg.collect.bit_period}},
             path_in(dir, "vrft.json"));
}

VrftArtifacts load_vrft(const std::string& dir) {
  const json j = read_json(path_in(dir, "vrft.json"));
  return {json_vector(j.at("theta")), j.at("cost").get<double>(), j.at("gram_condition").get<double>()};
}

void save_resid(const ResidArtifacts& a, const std::string& dir) {
  a.e_o.write_csv(path_in(dir, "resid_e_o.csv"));
  a.d0_hat.write_csv(path_in(dir, "resid_d0_hat.csv"));
  write_json({{"d0_bar", a.d0_bar}, {"window", a.window}, {"stride", a.stride}, {"gamma", a.gamma}, {"rank", a.rank}},
             path_in(dir, "resid.json"));
}

ResidArtifacts load_resid(const std::string& dir) {
  const json j = read_json(path_in(dir, "resid.json"));
  ResidArtifacts a;
  a.d0_bar = j.at("d0_bar").get<double>();
  a.window = j.at("window").get<int>();
  a.stride = j.at("stride").get<int>();
  a.gamma = j.at("gamma").get<double>();
  a.rank = j.at("rank").get<int>();
  a.e_o = SampledSignal::read_csv(path_in(dir, "resid_e_o.csv"));
  a.d0_hat = SampledSignal::read_csv(path_in(dir, "resid_d0_hat.csv"));
  return a;
}

void save_kdesign(const KdesignArtifacts& a, const std::string& dir) {
  write_tuples_csv(a.tuples, path_in(dir, "kdesign_tuples.csv"));
  write_json({{"K", matrix_json(a.K)},
              {"CBbar", matrix_json(a.CBbar)},
              {"zeta_bar", matrix_json(a.zeta_bar)},
              {"Abar", matrix_json(a.Abar)},
              {"lambda", a.lambda},
              {"margin", a.margin},
              {"rho0", a.rho0},
              {"rho", a.rho}},
             path_in(dir, "kdesign.json"));
}

KdesignArtifacts load_kdesign(const std::string& dir) {
  const json j = read_json(path_in(dir, "kdesign.json"));
  KdesignArtifacts a;
  a.K = json_matrix(j.at("K"));
  a.CBbar = json_matrix(j.at("CBbar"));
  a.zeta_bar = json_matrix(j.at("zeta_bar"));
  a.Abar = json_matrix(j.at("Abar"));
  a.lambda = j.at("lambda").get<double>();
  a.margin = j.at("margin").get<double>();
  a.rho0 = j.at("rho0").get<double>();
  a.rho = j.at("rho").get<double>();
  a.tuples = read_tuples_csv(path_in(dir, "kdesign_tuples.csv"));
  return a;
}

json metrics_json(const TraceMetrics& m) {
  return {{"sup_error", m.sup_error},     {"rms_error", m.rms_error},     {"sup_sigma", m.sup_sigma},
          {"eq_gap_rms", m.eq_gap_rms},   {"switch_rate", m.switch_rate}, {"identity_sup", m.identity_sup}};
}

void save_simulate(const SimulateArtifacts& a, const std::string& dir) {
  json sc = json::array();
  for (const auto& s : a.scenarios) {
    write_trace_csv(s.trace, path_in(dir, "trace_" + s.name + ".csv"));
    sc.push_back({{"name", s.name}, {"boundary_layer", s.boundary_layer}, {"metrics", metrics_json(s.metrics)}});
  }
  write_json({{"disturbance", disturbance_json(a.disturbance)}, {"tau_eq", a.tau_eq}, {"scenarios", sc}},
             path_in(dir, "metrics.json"));
}

template <class T, class L>
const T& need(std::optional<T>& slot, const std::string& stage, const std::string& dir, L load) {
  if (!slot) {
    if (dir.empty()) throw ConfigError("artifacts of stage " + stage + " are not available; run it first");
    try {
      slot = load(dir);
    } catch (const std::exception& e) {
      throw ConfigError("artifacts of stage " + stage + " could not be loaded from " + dir + ": " + e.what());
    }
  }
  return *slot;
}

}  // namespace

ArtifactBundle run_pipeline(const BenchmarkConfig& cfg, const PipelineOptions& opt) {
  cfg.validate();
  for (const auto& s : opt.stages)
    if (std::find(pipeline_stages().begin(), pipeline_stages().end(), s) == pipeline_stages().end())
      throw ConfigError("unknown stage '" + s + "'");
  auto runs = [&](const std::string& s) { return opt.stages.empty() || opt.stages.count(s) > 0; };
  const bool persist = !opt.out_dir.empty();
  if (persist) {
    std::filesystem::create_directories(opt.out_dir);
    save_config(cfg, path_in(opt.out_dir, "config.json"));
  }
  ArtifactBundle b;
  const std::string& dir = opt.out_dir;
  if (runs("collect")) {
    b.collect = guarded("collect", [&] { return stage_collect(cfg); });
    if (persist) save_collect(*b.collect, cfg, dir);
  }
  if (runs("vrft")) {
    const auto& data = need(b.collect, "collect", dir, load_collect);
    b.vrft = guarded("vrft", [&] { return stage_vrft(cfg, data); });
    if (persist) save_vrft(*b.vrft, cfg, dir);
  }
  if (runs("resid")) {
    const auto& data = need(b.collect, "collect", dir, load_collect);
    const auto& vr = need(b.vrft, "vrft", dir, load_vrft);
    b.resid = guarded("resid", [&] { return stage_resid(cfg, data, vr); });
    if (persist) save_resid(*b.resid, dir);
  }
  if (runs("kdesign")) {
    const auto& rs = need(b.resid, "resid", dir, load_resid);
    b.kdesign = guarded("kdesign", [&] { return stage_kdesign(cfg, rs.d0_bar); });
    if (persist) save_kdesign(*b.kdesign, dir);
  }
  if (runs("simulate")) {
    const auto& kd = need(b.kdesign, "kdesign", dir, load_kdesign);
    const auto& vr = need(b.vrft, "vrft", dir, load_vrft);
    b.simulate = guarded("simulate", [&] { return stage_simulate(cfg, &vr, kd, opt); });
    if (persist) save_simulate(*b.simulate, dir);
  }
  return b;
}

ArtifactBundle load_artifacts(const std::string& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw ConfigError("no artifact directory " + dir);
  auto has = [&](const char* f) { return fs::exists(path_in(dir, f)); };
  ArtifactBundle b;
  try {
    if (has("collect.json")) b.collect = load_collect(dir);
    if (has("vrft.json")) b.vrft = load_vrft(dir);
    if (has("resid.json")) b.resid = load_resid(dir);
    if (has("kdesign.json")) b.kdesign = load_kdesign(dir);
  } catch (const std::exception& e) {
    throw ConfigError("artifacts in " + dir + " could not be loaded: " + e.what());
  }
  return b;
}

}  // namespace ddismc
