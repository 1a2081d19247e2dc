#include <cstdio>
#include <iostream>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "ddismc/bench.hpp"
#include "ddismc/errors.hpp"

using namespace ddismc;

namespace {

struct Args {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out = "out";
  std::string stages;
  std::optional<double> dt;
  bool no_smc = false;
};

std::set<std::string> split_stages(const std::string& list) {
  std::set<std::string> out;
  std::stringstream ss(list);
  std::string s;
  while (std::getline(ss, s, ','))
    if (!s.empty()) out.insert(s);
  return out;
}

BenchmarkConfig make_config(const Args& a) {
  BenchmarkConfig cfg = a.config.empty() ? BenchmarkConfig{} : load_config(a.config);
  if (a.seed) cfg.seed = *a.seed;
  if (a.dt) cfg.run.dt = *a.dt;
  cfg.validate();
  return cfg;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

std::string fmt(const MatrixXd& M) {
  std::string s = "[";
  for (int i = 0; i < M.rows(); ++i) {
    s += i ? "; " : "";
    for (int j = 0; j < M.cols(); ++j) s += (j ? " " : "") + fmt(M(i, j));
  }
  return s + "]";
}

void report(const ArtifactBundle& b) {
  if (b.vrft) {
    std::cout << "vrft: theta =";
    for (int i = 0; i < b.vrft->theta.size(); ++i) std::cout << " " << fmt(b.vrft->theta(i));
    std::cout << "  cost " << fmt(b.vrft->cost) << "\n";
  }
  if (b.resid) std::cout << "resid: d0_bar " << fmt(b.resid->d0_bar) << "\n";
  if (b.kdesign)
    std::cout << "kdesign: K " << fmt(b.kdesign->K) << "  rho0 " << fmt(b.kdesign->rho0) << "  rho "
              << fmt(b.kdesign->rho) << "\n";
  if (b.simulate)
    for (const auto& s : b.simulate->scenarios)
      std::cout << "simulate " << s.name << ": sup|y-y_o| " << fmt(s.metrics.sup_error) << "  sup|sigma| "
                << fmt(s.metrics.sup_sigma) << "  eq_gap_rms " << fmt(s.metrics.eq_gap_rms) << "  switch_rate "
                << fmt(s.metrics.switch_rate) << "\n";
}

int run_stages(const Args& a, std::set<std::string> stages) {
  const BenchmarkConfig cfg = make_config(a);
  PipelineOptions opt;
  opt.stages = std::move(stages);
  opt.out_dir = a.out;
  opt.smc_on = !a.no_smc;
  report(run_pipeline(cfg, opt));
  std::cout << "artifacts in " << a.out << "\n";
  return 0;
}

int zeros_check(const Args& a) {
  const BenchmarkConfig cfg = make_config(a);
  const ArtifactBundle b = load_artifacts(a.out);
  if (!b.vrft) throw ConfigError("zeros-check: no vrft artifacts in " + a.out + "; run the vrft stage first");
  const SlidingPolesReport r = tank_zeros_check(cfg, b.vrft->theta);
  auto list = [](const char* name, const std::vector<Complex>& v) {
    std::cout << name << ":";
    for (const auto& z : v) std::cout << " " << fmt(z.real()) << (z.imag() >= 0 ? "+" : "") << fmt(z.imag()) << "i";
    std::cout << "\n";
  };
  list("augmented zeros", r.zeros_augmented);
  list("plant zeros", r.plant_zeros);
  list("controller poles", r.controller_poles);
  list("model poles", r.model_poles);
  if (!r.matched) {
    list("unmatched expected", r.unmatched_expected);
    list("unmatched augmented", r.unmatched_augmented);
  }
  std::cout << (r.degenerate ? "degenerate" : r.matched ? "matched" : "not matched") << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Data-driven integral sliding mode benchmark on the triple tank"};
  app.require_subcommand(1);
  Args a;
  auto common = [&](CLI::App* c, bool with_stages) {
    c->add_option("--config", a.config, "JSON configuration file")->check(CLI::ExistingFile);
    c->add_option("--seed", a.seed, "master seed");
    c->add_option("--out", a.out, "artifact directory")->capture_default_str();
    c->add_option("--dt", a.dt, "closed-loop integration step");
    c->add_flag("--no-smc", a.no_smc, "skip the runs with the discontinuous term");
    if (with_stages) c->add_option("--stages", a.stages, "comma separated subset of stages");
  };
  std::string chosen;
  for (const auto& s : pipeline_stages()) {
    auto* c = app.add_subcommand(s, "run the " + s + " stage, loading earlier artifacts from --out");
    common(c, false);
    c->callback([&, s] { chosen = s; });
  }
  auto* bench = app.add_subcommand("bench", "run the whole pipeline or the --stages subset");
  common(bench, true);
  bench->callback([&] { chosen = "bench"; });
  auto* zc = app.add_subcommand("zeros-check", "compare augmented zeros with plant zeros and poles");
  common(zc, false);
  zc->callback([&] { chosen = "zeros-check"; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (chosen == "zeros-check") return zeros_check(a);
    if (chosen == "bench") return run_stages(a, split_stages(a.stages));
    return run_stages(a, {chosen});
  } catch (const InfeasibleDesign& e) {
    std::cerr << "infeasible design: " << e.what() << "\n";
    return 4;
  } catch (const NumericalFailure& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 3;
  } catch (const std::invalid_argument& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
