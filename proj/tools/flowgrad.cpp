// flowgrad: run, forward and gradcheck subcommands.
//
// Exit codes: 0 success, 1 acceptance/gradient-check failure, 2 validation
// error, 3 numerical failure.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "flowgrad/config.hpp"
#include "flowgrad/errors.hpp"
#include "flowgrad/inverse.hpp"
#include "flowgrad/sparse_ops.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace flowgrad;

namespace {

constexpr int kOk = 0;
constexpr int kCheckFailed = 1;
constexpr int kInvalid = 2;
constexpr int kNumeric = 3;

std::string coefficient_name(inverse::Experiment e) {
  return e == inverse::Experiment::conjugate_heat ? "k" : "nu";
}

void write_field(const fs::path& path, const fem::StructuredGrid& grid,
                 const std::vector<double>& values) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  fem::write_csv(os, fem::NodalField(grid, values));
}

std::string sweep_dirname(double eps) {
  std::ostringstream os;
  os << "eps_" << eps;
  return os.str();
}

json report_json(const inverse::RunReport& r) {
  json j;
  j["experiment"] = inverse::to_string(r.config.experiment);
  j["variant"] = models::to_string(r.config.variant);
  j["model_seed"] = r.config.model_seed;
  j["observation_seed"] = r.config.observation_seed;
  j["noise_epsilon"] = r.config.noise_epsilon;
  j["initial_loss"] = r.initial_loss;
  j["final_loss"] = r.final_loss();
  j["loss_history"] = r.loss_history;
  j["newton_iters"] = r.newton_iters;
  j["steps"] = r.steps;
  j["stop_reason"] = r.stop_reason;
  j["relative_mse_percent"] = r.relative_mse_percent;
  if (!r.prediction_mse_percent.empty()) j["prediction_mse_percent"] = r.prediction_mse_percent;
  j["wall_clock_seconds"] = r.wall_clock_seconds;
  j["config_echo"] = r.config.echo();
  return j;
}

void write_run_outputs(const inverse::RunReport& r, const fs::path& dir) {
  fs::create_directories(dir);
  const fem::StructuredGrid grid(r.config.nx, r.config.ny);
  const std::string c = coefficient_name(r.config.experiment);
  std::vector<double> diff(r.coefficient_estimate.size());
  for (std::size_t i = 0; i < diff.size(); ++i)
    diff[i] = r.coefficient_estimate[i] - r.coefficient_reference[i];
  write_field(dir / (c + "_reference.csv"), grid, r.coefficient_reference);
  write_field(dir / (c + "_estimate.csv"), grid, r.coefficient_estimate);
  write_field(dir / (c + "_difference.csv"), grid, diff);
  if (r.prediction) {
    const auto& ref = r.reference;
    const auto& pred = *r.prediction;
    write_field(dir / "u_reference.csv", grid, ref.u);
    write_field(dir / "v_reference.csv", grid, ref.v);
    write_field(dir / "p_reference.csv", grid, ref.p);
    write_field(dir / "u_prediction.csv", grid, pred.u);
    write_field(dir / "v_prediction.csv", grid, pred.v);
    write_field(dir / "p_prediction.csv", grid, pred.p);
  }
  {
    std::ofstream os(dir / "theta.bin", std::ios::binary);
    models::write_checkpoint(os, r.model);
  }
  std::ofstream os(dir / "report.json");
  os << report_json(r).dump(2) << '\n';
}

inverse::ExperimentConfig load(const std::string& path, const std::string& out, bool verbose,
                               bool debug_gradcheck) {
  auto cfg = config::load_config(path);
  if (!out.empty()) cfg.output_dir = out;
  cfg.verbose = verbose;
  cfg.debug_gradcheck = debug_gradcheck;
  return cfg;
}

int cmd_run(const inverse::ExperimentConfig& cfg) {
  const fs::path root(cfg.output_dir);
  auto run_one = [&](inverse::ExperimentConfig c, const fs::path& dir) {
    if (cfg.verbose) std::cerr << "running " << dir.string() << '\n';
    const auto report = inverse::run_experiment(c);
    write_run_outputs(report, dir);
    std::cout << dir.string() << ": relative MSE " << report.relative_mse_percent
              << "%, final loss " << report.final_loss() << ", " << report.steps << " steps ("
              << report.stop_reason << ")\n";
    return report;
  };
  if (cfg.noise_sweep.empty()) {
    run_one(cfg, root);
    return kOk;
  }
  json summary = json::array();
  for (double eps : cfg.noise_sweep) {
    auto c = cfg;
    c.noise_epsilon = eps;
    const auto r = run_one(c, root / sweep_dirname(eps));
    summary.push_back({{"noise_epsilon", eps},
                       {"relative_mse_percent", r.relative_mse_percent},
                       {"final_loss", r.final_loss()}});
  }
  std::ofstream os(root / "sweep.json");
  os << summary.dump(2) << '\n';
  return kOk;
}

int cmd_forward(const inverse::ExperimentConfig& cfg, bool export_matrix) {
  inverse::InverseProblem problem(cfg);
  const fs::path dir(cfg.output_dir);
  fs::create_directories(dir);
  std::ofstream trace(dir / "solver_trace.jsonl");
  solver::NewtonConfig newton = cfg.newton;
  newton.trace = [&](int k, double r) {
    const json line{{"iteration", k}, {"residual", r}};
    trace << line.dump() << '\n';
    if (cfg.verbose) std::cerr << line.dump() << '\n';
  };
  if (export_matrix) {
    newton.jacobian_hook = [&](int k, const sparse::SparseMatrix& a) {
      std::ofstream os(dir / ("jacobian_" + std::to_string(k) + ".mtx"));
      sparse::write_matrix_market(os, a);
    };
  }
  const auto sol = problem.solve_forward(problem.reference_coefficient(), newton);
  const auto& grid = problem.grid();
  write_field(dir / (coefficient_name(cfg.experiment) + ".csv"), grid, sol.coefficient);
  write_field(dir / "u.csv", grid, sol.u);
  write_field(dir / "v.csv", grid, sol.v);
  write_field(dir / "p.csv", grid, sol.p);
  if (!sol.temperature.empty()) write_field(dir / "T.csv", grid, sol.temperature);
  if (!sol.w1.empty()) {
    write_field(dir / "w1.csv", grid, sol.w1);
    write_field(dir / "w2.csv", grid, sol.w2);
  }
  std::cout << "Newton iterations " << sol.newton_iterations << ", final residual "
            << (sol.residual_history.empty() ? 0.0 : sol.residual_history.back()) << '\n';
  return kOk;
}

int cmd_gradcheck(const inverse::ExperimentConfig& cfg, int samples) {
  if (samples <= 0) throw ContractError("--samples must be positive");
  inverse::InverseProblem problem(cfg);
  const auto& theta = problem.initial_model().params;
  const auto result = inverse::gradient_spot_check(problem, theta, std::size_t(samples),
                                                   cfg.model_seed + 1);
  for (std::size_t i = 0; i < result.ad_gradient.size(); ++i)
    std::cout << "ad " << result.ad_gradient[i] << "  fd " << result.fd_gradient[i] << '\n';
  std::cout << "max relative error " << result.max_relative_error << " (coordinate "
            << result.worst_index << ")\n";
  return result.max_relative_error < 1e-4 ? kOk : kCheckFailed;
}

#ifdef FLOWGRAD_CORRUPT_BACKWARD
void corrupt_solve_backward() {
  // Make sure the op is registered, then scale its input gradients.
  ad::Tape t;
  const auto a = t.constant(Tensor({1.0}));
  const auto b = t.constant(Tensor({1.0}));
  sparse::solve_differentiable(t, {sparse::SparseMatrix::identity(1).pattern_ptr(), a}, b);
  auto& reg = ad::OpRegistry::global();
  auto original = reg.get(reg.find("sparse_solve")).backward;
  reg.replace_backward("sparse_solve", [original](const Tensor& g, ad::InputValues in,
                                                  const Tensor& out, const std::any& ctx) {
    auto grads = original(g, in, out, ctx);
    for (auto& gi : grads)
      for (double& x : gi.values) x *= 1.5;
    return grads;
  });
}
#endif

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Differentiable finite-element Navier-Stokes inverse solver"};
  app.require_subcommand(1);
  std::string config_path, out_dir;
  bool verbose = false, debug_gradcheck = false, export_matrix = false;
  int samples = 5;

  auto* run = app.add_subcommand("run", "fit a coefficient field to synthetic observations");
  auto* forward = app.add_subcommand("forward", "forward solve with the reference field");
  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference check of the full chain");
  for (auto* sub : {run, forward, gradcheck}) {
    sub->add_option("--config", config_path, "INI configuration file")->required();
    sub->add_option("--out", out_dir, "output directory (overrides [output] dir)");
    sub->add_flag("--verbose", verbose, "print solver traces to stderr");
  }
  run->add_flag("--debug-gradcheck", debug_gradcheck,
                "spot-check every optimizer gradient against finite differences");
  forward->add_flag("--export-matrix", export_matrix,
                    "write each Newton Jacobian in MatrixMarket format");
  gradcheck->add_option("--samples", samples, "number of parameters to check");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kInvalid;
  }

#ifdef FLOWGRAD_CORRUPT_BACKWARD
  corrupt_solve_backward();
#endif

  try {
    const auto cfg = load(config_path, out_dir, verbose, debug_gradcheck);
    if (run->parsed()) return cmd_run(cfg);
    if (forward->parsed()) return cmd_forward(cfg, export_matrix);
    return cmd_gradcheck(cfg, samples);
  } catch (const ContractError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kInvalid;
  } catch (const NonConvergenceError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return kNumeric;
  } catch (const SingularMatrixError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return kNumeric;
  } catch (const NumericError& e) {
    std::cerr << "numerical failure in " << e.op() << ": " << e.what() << '\n';
    return kNumeric;
  } catch (const LineSearchError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return kNumeric;
  } catch (const DivergedParameterizationError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return kNumeric;
  } catch (const ad::PerturbationError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return kNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kCheckFailed;
  }
}
