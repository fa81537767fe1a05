#include <CLI11.hpp>

#include <cstdio>
#include <exception>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "driftflow/diagnostics.hpp"
#include "driftflow/io.hpp"
#include "driftflow/rng.hpp"
#include "driftflow/training.hpp"

namespace fs = std::filesystem;
using namespace driftflow;

namespace {

constexpr int kUsageError = 1;
constexpr int kRuntimeError = 2;

struct TrainArgs {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<long> steps;
  std::optional<long> checkpoint_every;
  std::string out;
  bool verbose = false;
};

struct EvalArgs {
  std::string checkpoint;
  std::string benchmark;
  long n = 2000;
  std::optional<std::uint64_t> seed;
  std::optional<long> step;
  std::string out;
};

struct ProbeArgs {
  std::string benchmark = "gmm8";
  std::uint64_t seed = 0;
  long n = 2000;
  double tau = 0.5;
  double h = 0.05;
  double delta = 0.01;
  double epsilon = 0.01;
  std::string out;
};

struct GridArgs {
  std::string checkpoint;
  std::string objectives = "rkl,fkl,chi2,lv";
  long n = 2000;
  double tau = 0.15;
  std::optional<std::uint64_t> seed;
  double alpha = 0.5;
  std::string out;
};

struct SampleArgs {
  std::string checkpoint;
  long n = 100;
  std::uint64_t seed = 0;
  std::string out;
};

std::string to_csv(const std::string& header, const std::vector<std::vector<double>>& rows) {
  std::ostringstream os;
  os << header << '\n';
  for (const auto& r : rows) {
    for (size_t k = 0; k < r.size(); ++k) os << (k ? "," : "") << format_double(r[k]);
    os << '\n';
  }
  return os.str();
}

nlohmann::json report_json(const MetricReport& r, const GmmSpec& spec) {
  return {{"mmd", r.mmd},
          {"w_transport", r.w_transport},
          {"w_exact", r.w_exact},
          {"coverage", r.coverage.fraction},
          {"covered_modes", r.coverage.covered_count},
          {"num_modes", spec.num_modes()},
          {"tvd", r.tvd},
          {"kl_mode", r.kl_mode}};
}

Matrix model_samples(const MlpParams& params, long n, std::uint64_t seed, std::uint64_t stream, long index) {
  CounterRng rng(derive_key(seed, stream, static_cast<std::uint64_t>(index)));
  return forward(params, standard_normal(rng, n, params.shape().latent_dim));
}

int run_train(const TrainArgs& a) {
  TrainConfig cfg = train_config_from_json(read_json(a.config));
  if (a.seed) cfg.seed = *a.seed;
  if (a.steps) cfg.steps = *a.steps;
  if (a.checkpoint_every) cfg.checkpoint_every = *a.checkpoint_every;
  cfg.validate();
  const TrainResult res = run_training(cfg, {fs::path(a.out), !a.verbose});
  const auto& last = res.rows.back();
  std::cout << kMetricsHeader << '\n' << to_csv("", {last.values()}).substr(1);
  return 0;
}

int run_eval(const EvalArgs& a) {
  const Checkpoint ck = checkpoint_from_json(read_json(a.checkpoint));
  const GmmSpec spec = build_benchmark(a.benchmark.empty() ? ck.config.benchmark : parse_benchmark(a.benchmark));
  if (spec.dim != ck.params.shape().out_dim) throw std::invalid_argument("benchmark dimension does not match checkpoint");
  const std::uint64_t seed = a.seed.value_or(ck.config.seed);
  const long step = a.step.value_or(ck.step);
  const MetricReport r = evaluate_model(ck.params, spec, a.n, seed, step);
  const std::string header = "step,mmd,w_transport,coverage,tvd,kl_mode";
  const std::string csv = to_csv(header, {{static_cast<double>(step), r.mmd, r.w_transport, r.coverage.fraction, r.tvd, r.kl_mode}});
  nlohmann::json j = report_json(r, spec);
  j["step"] = step;
  j["seed"] = seed;
  j["n"] = a.n;
  if (!a.out.empty()) {
    write_text_atomic(fs::path(a.out) / "eval.csv", csv);
    write_json(fs::path(a.out) / "eval.json", j);
  }
  std::cout << csv << j.dump(2) << '\n';
  return 0;
}

int run_probe(const ProbeArgs& a) {
  ProbeConfig cfg;
  cfg.target = build_benchmark(parse_benchmark(a.benchmark));
  cfg.n = a.n;
  cfg.tau = a.tau;
  cfg.h = a.h;
  cfg.thresholds = {a.delta, a.epsilon};
  cfg.seed = a.seed;
  const ProbeReport rep = frozen_probe(cfg);
  const fs::path out(a.out);
  const FieldSet f = probe_fields(cfg, probe_particles(cfg));
  write_scalar_field(out / "log_p.csv", f.grid, "log_p", f.log_p);
  write_scalar_field(out / "log_q.csv", f.grid, "log_q", f.log_q);
  write_scalar_field(out / "kappa.csv", f.grid, "kappa", f.kappa);
  Vector mask(f.grid.size());
  for (Eigen::Index i = 0; i < mask.size(); ++i) mask[i] = f.mask[i];
  write_scalar_field(out / "omega.csv", f.grid, "omega", mask);
  write_vector_field(out / "V.csv", f.grid, "V", f.V);
  const nlohmann::json summary = {{"G_V_probe", rep.G_V},
                                  {"G_V_probe_elasticity", rep.G_V_elasticity},
                                  {"omega_cells_before", rep.omega_before},
                                  {"omega_cells_after", rep.omega_after},
                                  {"omega_boundary_cells", rep.omega_boundary},
                                  {"U_before", rep.U_before},
                                  {"U_after", rep.U_after},
                                  {"degenerate", rep.degenerate},
                                  {"seed", a.seed}};
  write_json(out / "summary.json", summary);
  std::cout << summary.dump(2) << '\n';
  return 0;
}

std::vector<std::string> split(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, ',');)
    if (!item.empty()) out.push_back(item);
  return out;
}

int run_drift_grid(const GridArgs& a) {
  const Checkpoint ck = checkpoint_from_json(read_json(a.checkpoint));
  const GmmSpec spec = build_benchmark(ck.config.benchmark);
  const std::uint64_t seed = a.seed.value_or(ck.config.seed);
  const Matrix refs = model_samples(ck.params, a.n, seed, static_cast<std::uint64_t>(Stream::eval_latent), ck.step);
  KdeConfig kde = ck.config.kde;
  kde.tau = a.tau;
  kde.sinkhorn = false;
  // grid fields always use the exact gradient of log q_hat
  kde.laplace_unit_score = false;
  const fs::path out(a.out);

  FieldSet f = compute_fields(Grid2D{}, spec, refs, kde, Objective::rkl);
  write_scalar_field(out / "log_p.csv", f.grid, "log_p", f.log_p);
  write_scalar_field(out / "log_q.csv", f.grid, "log_q", f.log_q);
  write_scalar_field(out / "kappa.csv", f.grid, "kappa", f.kappa);
  write_vector_field(out / "beta.csv", f.grid, "beta", f.beta);

  nlohmann::json summary = {{"checkpoint_step", ck.step}, {"n", a.n}, {"tau", a.tau}, {"seed", seed}};
  for (const auto& name : split(a.objectives)) {
    const Objective obj = parse_objective(name);
    set_objective(f, obj, a.alpha);
    const Vector eta = field_elasticity(f);
    const RepairScore g = repair_score(f, eta, Region::full_grid);
    const std::string tag = to_string(obj) == "lv_gate" ? "lv" : name;
    write_scalar_field(out / ("w_" + tag + ".csv"), f.grid, "w", f.w);
    write_scalar_field(out / ("gap_" + tag + ".csv"), f.grid, "gap", f.kappa - eta);
    write_vector_field(out / ("V_" + tag + ".csv"), f.grid, "V", f.V);
    summary["G_" + tag] = g.elasticity_form;
    summary["G_" + tag + "_direct"] = g.direct_form;
  }
  write_json(out / "summary.json", summary);
  std::cout << summary.dump(2) << '\n';
  return 0;
}

int run_sample(const SampleArgs& a) {
  const Checkpoint ck = checkpoint_from_json(read_json(a.checkpoint));
  constexpr std::uint64_t kSampleStream = 7;
  const Matrix x = model_samples(ck.params, a.n, a.seed, kSampleStream, 0);
  std::string header;
  for (Eigen::Index k = 0; k < x.cols(); ++k) header += (k ? ",x" : "x") + std::to_string(k);
  std::vector<std::vector<double>> rows;
  for (Eigen::Index i = 0; i < x.rows(); ++i) rows.emplace_back(x.row(i).data(), x.row(i).data() + x.cols());
  const std::string csv = to_csv(header, rows);
  if (a.out.empty())
    std::cout << csv;
  else
    write_text_atomic(a.out, csv);
  return 0;
}

int run_bench_dump(const std::string& name, const std::string& out) {
  const nlohmann::json j = to_json(build_benchmark(parse_benchmark(name)));
  if (out.empty())
    std::cout << j.dump(2) << '\n';
  else
    write_json(out, j);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"driftflow: drift-field training and diagnostics for one-step samplers"};
  app.require_subcommand(1);
  app.set_version_flag("--version", library_version());

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "train a sampler from a JSON config");
  train->add_option("--config", ta.config, "config file")->required()->check(CLI::ExistingFile);
  train->add_option("--seed", ta.seed, "master seed (overrides config)");
  train->add_option("--steps", ta.steps, "training steps (overrides config)");
  train->add_option("--checkpoint-every", ta.checkpoint_every, "extra checkpoint interval");
  train->add_option("--out", ta.out, "run directory")->required();
  train->add_flag("--verbose", ta.verbose, "log eval rows to stderr");

  EvalArgs ea;
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint against exact samples");
  eval->add_option("--checkpoint", ea.checkpoint)->required()->check(CLI::ExistingFile);
  eval->add_option("--benchmark", ea.benchmark, "target (default: checkpoint's)");
  eval->add_option("--n", ea.n, "model and reference sample count")->check(CLI::PositiveNumber);
  eval->add_option("--seed", ea.seed, "eval seed (default: checkpoint's)");
  eval->add_option("--step", ea.step, "eval stream index (default: checkpoint step)");
  eval->add_option("--out", ea.out, "directory for eval.csv and eval.json");

  ProbeArgs pa;
  auto* probe = app.add_subcommand("probe", "frozen one-step regional-repair probe");
  probe->add_option("--benchmark", pa.benchmark);
  probe->add_option("--seed", pa.seed);
  probe->add_option("--n", pa.n)->check(CLI::PositiveNumber);
  probe->add_option("--tau", pa.tau)->check(CLI::PositiveNumber);
  probe->add_option("--step-size", pa.h, "Euler step h")->check(CLI::PositiveNumber);
  probe->add_option("--delta", pa.delta);
  probe->add_option("--epsilon", pa.epsilon);
  probe->add_option("--out", pa.out)->required();

  GridArgs ga;
  auto* grid = app.add_subcommand("drift-grid", "drift, compression and repair fields for a checkpoint");
  grid->add_option("--checkpoint", ga.checkpoint)->required()->check(CLI::ExistingFile);
  grid->add_option("--objectives", ga.objectives, "comma separated objectives");
  grid->add_option("--n", ga.n, "generator samples for the KDE")->check(CLI::PositiveNumber);
  grid->add_option("--tau", ga.tau, "KDE bandwidth")->check(CLI::PositiveNumber);
  grid->add_option("--seed", ga.seed);
  grid->add_option("--alpha", ga.alpha, "tsallis alpha");
  grid->add_option("--out", ga.out)->required();

  SampleArgs sa;
  auto* sample = app.add_subcommand("sample", "draw generator samples as CSV");
  sample->add_option("--checkpoint", sa.checkpoint)->required()->check(CLI::ExistingFile);
  sample->add_option("--n", sa.n)->check(CLI::PositiveNumber);
  sample->add_option("--seed", sa.seed);
  sample->add_option("--out", sa.out, "output file (default: stdout)");

  std::string bench_name, bench_out;
  auto* bench = app.add_subcommand("bench", "benchmark targets");
  bench->require_subcommand(1);
  auto* dump = bench->add_subcommand("dump", "write a benchmark fixture as JSON");
  dump->add_option("--name", bench_name)->required();
  dump->add_option("--out", bench_out, "output file (default: stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    app.exit(e, std::cerr, std::cerr);
    return kUsageError;
  }

  try {
    if (*train) return run_train(ta);
    if (*eval) return run_eval(ea);
    if (*probe) return run_probe(pa);
    if (*grid) return run_drift_grid(ga);
    if (*sample) return run_sample(sa);
    if (*dump) return run_bench_dump(bench_name, bench_out);
  } catch (const NonFiniteLossError& e) {
    std::cerr << "error: " << e.what() << " (batch dumped to failure_dump.json)\n";
    return kRuntimeError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRuntimeError;
  }
  return kUsageError;
}
