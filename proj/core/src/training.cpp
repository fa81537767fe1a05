#include "driftflow/training.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numbers>
#include <numeric>
#include <set>

#include "driftflow/io.hpp"
#include "driftflow/rng.hpp"

namespace driftflow {

namespace fs = std::filesystem;

ScheduleKind parse_schedule_kind(std::string_view name) {
  if (name == "constant" || name == "const") return ScheduleKind::constant;
  if (name == "linear") return ScheduleKind::linear;
  if (name == "cosine") return ScheduleKind::cosine;
  throw std::invalid_argument("unknown schedule kind '" + std::string(name) + "'");
}

std::string to_string(ScheduleKind k) {
  switch (k) {
    case ScheduleKind::constant: return "constant";
    case ScheduleKind::linear: return "linear";
    case ScheduleKind::cosine: return "cosine";
  }
  return "unknown";
}

void Schedule::validate() const {
  if (!(t_start >= 0.0 && t_stop <= 1.0 && t_start <= t_stop))
    throw std::invalid_argument("schedule window must satisfy 0 <= t_start <= t_stop <= 1");
  if (!std::isfinite(v0) || (kind != ScheduleKind::constant && !std::isfinite(v1)))
    throw std::invalid_argument("schedule endpoints must be finite");
}

double schedule_value(const Schedule& s, long t, long T) {
  if (s.kind == ScheduleKind::constant) return s.v0;
  const double frac = T > 0 ? static_cast<double>(t) / static_cast<double>(T) : 1.0;
  double u;
  if (s.t_stop > s.t_start)
    u = std::clamp((frac - s.t_start) / (s.t_stop - s.t_start), 0.0, 1.0);
  else
    u = frac >= s.t_stop ? 1.0 : 0.0;
  if (s.kind == ScheduleKind::linear) return s.v0 + (s.v1 - s.v0) * u;
  return s.v1 + (s.v0 - s.v1) * 0.5 * (1.0 + std::cos(std::numbers::pi * u));
}

void TrainConfig::validate() const {
  drift.validate();
  KdeConfig k = kde;
  k.tau = 1.0;  // the schedule supplies tau
  k.validate();
  tau_schedule.validate();
  attr_schedule.validate();
  if (batch < 2) throw std::invalid_argument("batch size must be at least 2");
  if (steps < 0) throw std::invalid_argument("steps must be >= 0");
  if (!(lr > 0.0)) throw std::invalid_argument("learning rate must be > 0");
  if (eval_n < 2) throw std::invalid_argument("eval_n must be at least 2");
  if (tau_schedule.v0 <= 0.0 || (tau_schedule.kind != ScheduleKind::constant && tau_schedule.v1 <= 0.0))
    throw std::invalid_argument("bandwidth schedule must stay positive");
  mlp_shape().validate();
}

MlpShape TrainConfig::mlp_shape() const {
  MlpShape s;
  const int dim = build_benchmark(benchmark).dim;
  s.latent_dim = latent_dim > 0 ? latent_dim : dim;
  s.out_dim = dim;
  s.embed_dim = hidden;
  s.hidden = hidden;
  s.layers = layers;
  return s;
}

namespace {

void put_schedule(nlohmann::json& j, const std::string& prefix, const Schedule& s) {
  j[prefix + "_schedule"] = to_string(s.kind);
  j[prefix + "_init"] = s.v0;
  j[prefix + "_final"] = s.v1;
  j[prefix + "_start"] = s.t_start;
  j[prefix + "_stop"] = s.t_stop;
}

}  // namespace

nlohmann::json to_json(const TrainConfig& c) {
  nlohmann::json j;
  j["benchmark"] = to_string(c.benchmark);
  j["objective"] = to_string(c.drift.objective);
  j["alpha"] = c.drift.alpha;
  j["drift_scale"] = c.drift.drift_scale;
  j["w_max"] = c.drift.w_max ? nlohmann::json(*c.drift.w_max) : nlohmann::json(nullptr);
  j["kernel"] = to_string(c.kde.kernel);
  j["sinkhorn"] = c.kde.sinkhorn;
  j["sinkhorn_iters"] = c.kde.sinkhorn_iters;
  j["ref_batch"] = c.kde.ref_batch ? nlohmann::json(*c.kde.ref_batch) : nlohmann::json(nullptr);
  j["self_exclusion"] = c.kde.self_exclusion;
  j["laplace_unit_score"] = c.kde.laplace_unit_score;
  put_schedule(j, "tau", c.tau_schedule);
  put_schedule(j, "attr", c.attr_schedule);
  j["batch"] = c.batch;
  j["steps"] = c.steps;
  j["lr"] = c.lr;
  j["seed"] = c.seed;
  j["eval_every"] = c.eval_every;
  j["eval_n"] = c.eval_n;
  j["latent_dim"] = c.latent_dim;
  j["hidden"] = c.hidden;
  j["layers"] = c.layers;
  j["checkpoint_every"] = c.checkpoint_every;
  return j;
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw std::invalid_argument("config must be a JSON object");
  static const std::set<std::string> known = {
      "benchmark",    "objective",     "alpha",      "attr_weight",    "drift_scale",
      "w_max",        "kernel",        "sinkhorn",   "sinkhorn_iters", "ref_batch",
      "self_exclusion", "laplace_unit_score", "tau",         "tau_schedule", "tau_init",     "tau_final",
      "tau_start",    "tau_stop",      "attr_schedule", "attr_init",   "attr_final",
      "attr_start",   "attr_stop",     "batch",      "steps",          "lr",
      "seed",         "eval_every",    "eval_n",     "latent_dim",     "hidden",
      "layers",       "checkpoint_every"};
  for (const auto& [key, _] : j.items())
    if (!known.count(key)) throw std::invalid_argument("unknown config key '" + key + "'");

  TrainConfig c;
  auto get = [&](const char* key, auto& dst) {
    if (j.contains(key)) dst = j.at(key).get<std::decay_t<decltype(dst)>>();
  };
  if (j.contains("benchmark")) c.benchmark = parse_benchmark(j["benchmark"].get<std::string>());
  if (j.contains("objective")) c.drift.objective = parse_objective(j["objective"].get<std::string>());
  get("alpha", c.drift.alpha);
  get("drift_scale", c.drift.drift_scale);
  if (j.contains("w_max")) {
    if (j["w_max"].is_null())
      c.drift.w_max.reset();
    else
      c.drift.w_max = j["w_max"].get<double>();
  }
  if (j.contains("kernel")) c.kde.kernel = parse_kernel(j["kernel"].get<std::string>());
  get("sinkhorn", c.kde.sinkhorn);
  get("sinkhorn_iters", c.kde.sinkhorn_iters);
  if (j.contains("ref_batch")) {
    if (j["ref_batch"].is_null())
      c.kde.ref_batch.reset();
    else
      c.kde.ref_batch = j["ref_batch"].get<Eigen::Index>();
  }
  get("self_exclusion", c.kde.self_exclusion);
  get("laplace_unit_score", c.kde.laplace_unit_score);

  auto read_schedule = [&](const std::string& prefix, Schedule& s) {
    if (j.contains(prefix + "_schedule")) s.kind = parse_schedule_kind(j[prefix + "_schedule"].get<std::string>());
    if (j.contains(prefix + "_init")) s.v0 = j[prefix + "_init"].get<double>();
    if (j.contains(prefix + "_final")) s.v1 = j[prefix + "_final"].get<double>();
    if (j.contains(prefix + "_start")) s.t_start = j[prefix + "_start"].get<double>();
    if (j.contains(prefix + "_stop")) s.t_stop = j[prefix + "_stop"].get<double>();
  };
  if (j.contains("tau")) c.tau_schedule = {ScheduleKind::constant, j["tau"].get<double>(), j["tau"].get<double>(), 0.0, 1.0};
  read_schedule("tau", c.tau_schedule);
  if (j.contains("attr_weight"))
    c.attr_schedule = {ScheduleKind::constant, j["attr_weight"].get<double>(), j["attr_weight"].get<double>(), 0.0, 1.0};
  read_schedule("attr", c.attr_schedule);

  get("batch", c.batch);
  get("steps", c.steps);
  get("lr", c.lr);
  get("seed", c.seed);
  get("eval_every", c.eval_every);
  get("eval_n", c.eval_n);
  get("latent_dim", c.latent_dim);
  get("hidden", c.hidden);
  get("layers", c.layers);
  get("checkpoint_every", c.checkpoint_every);
  c.validate();
  return c;
}

Matrix latent_batch(const TrainConfig& cfg, Stream stream, std::uint64_t index, Eigen::Index n) {
  CounterRng rng(derive_key(cfg.seed, static_cast<std::uint64_t>(stream), index));
  return standard_normal(rng, n, cfg.mlp_shape().latent_dim);
}

TrainState init_training(const TrainConfig& cfg) {
  cfg.validate();
  TrainState s;
  s.target = build_benchmark(cfg.benchmark);
  s.params = init_mlp(cfg.mlp_shape(), derive_key(cfg.seed, static_cast<std::uint64_t>(Stream::init)));
  s.adam = AdamState::for_params(s.params);
  return s;
}

namespace {

struct Pipeline {
  Matrix eps;
  MlpTape tape;
  Matrix x;
  KdeEval kde;
  DriftBatch drift;
  Vector energies;
  double tau = 0.0;
  double attr = 0.0;
};

// Reference subset without replacement (partial Fisher-Yates); exclude[i] is
// the subset position of particle i, or -1.
Matrix reference_subset(const TrainConfig& cfg, long iteration, const Matrix& x,
                        std::vector<Eigen::Index>& exclude) {
  const Eigen::Index n = x.rows();
  exclude.assign(n, -1);
  if (!cfg.kde.ref_batch || *cfg.kde.ref_batch >= n) {
    std::iota(exclude.begin(), exclude.end(), Eigen::Index{0});
    return x;
  }
  const Eigen::Index m = *cfg.kde.ref_batch;
  CounterRng rng(derive_key(cfg.seed, static_cast<std::uint64_t>(Stream::ref_batch), iteration));
  std::vector<Eigen::Index> perm(n);
  std::iota(perm.begin(), perm.end(), Eigen::Index{0});
  Matrix refs(m, x.cols());
  for (Eigen::Index k = 0; k < m; ++k) {
    const auto pick = k + static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(n - k)));
    std::swap(perm[k], perm[pick]);
    refs.row(k) = x.row(perm[k]);
    exclude[perm[k]] = k;
  }
  return refs;
}

Pipeline run_pipeline(const TrainState& s, const TrainConfig& cfg, long iteration) {
  Pipeline p;
  p.tau = schedule_value(cfg.tau_schedule, iteration, cfg.steps);
  p.attr = schedule_value(cfg.attr_schedule, iteration, cfg.steps);
  p.eps = latent_batch(cfg, Stream::latent, static_cast<std::uint64_t>(iteration), cfg.batch);
  p.x = forward(s.params, p.eps, p.tape);

  Vector log_p;
  Matrix score_p;
  log_density_and_score(s.target, p.x, log_p, score_p);
  p.energies = -log_p;

  std::vector<Eigen::Index> exclude;
  const Matrix refs = reference_subset(cfg, iteration, p.x, exclude);
  KdeConfig kcfg = cfg.kde;
  kcfg.tau = p.tau;
  p.kde = kde_evaluate(kcfg, refs, p.x, exclude);

  DriftConfig dcfg = cfg.drift;
  dcfg.attr_weight = p.attr;
  p.drift = assemble_drift(dcfg, p.energies, p.kde.log_q, score_p, p.kde.score);
  return p;
}

nlohmann::json failure_dump(const Pipeline& p, long iteration) {
  auto rows = [](const Matrix& m) {
    nlohmann::json a = nlohmann::json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i)
      a.push_back(std::vector<double>(m.row(i).data(), m.row(i).data() + m.cols()));
    return a;
  };
  return {{"iteration", iteration},
          {"tau", p.tau},
          {"attr", p.attr},
          {"x", rows(p.x)},
          {"V", rows(p.drift.V)},
          {"log_q", std::vector<double>(p.kde.log_q.data(), p.kde.log_q.data() + p.kde.log_q.size())},
          {"energies", std::vector<double>(p.energies.data(), p.energies.data() + p.energies.size())}};
}

StepLog make_log(const Pipeline& p, long step, const Matrix& V) {
  StepLog log;
  log.step = step;
  log.loss = V.rowwise().squaredNorm().mean();
  log.mean_drift_norm = V.rowwise().norm().mean();
  log.tau = p.tau;
  log.attr = p.attr;
  return log;
}

}  // namespace

StepLog train_step(TrainState& s, const TrainConfig& cfg, const DriftOverride& override_drift) {
  const long iteration = s.step;
  Pipeline p = run_pipeline(s, cfg, iteration);
  if (override_drift) {
    override_drift(p.x, p.drift.V);
    if (p.drift.V.rows() != p.x.rows() || p.drift.V.cols() != p.x.cols())
      throw std::invalid_argument("drift override changed the drift shape");
  }
  const Matrix& V = p.drift.V;
  const LossGrad lg = loss_and_grad(s.params, p.tape, V);
  if (!std::isfinite(lg.loss) || !lg.grad.allFinite())
    throw NonFiniteLossError("non-finite loss at iteration " + std::to_string(iteration), failure_dump(p, iteration));
  adam_step(s.params, s.adam, lg.grad, cfg.lr);
  ++s.step;
  StepLog log = make_log(p, s.step, V);
  log.loss = lg.loss;
  return log;
}

StepLog drift_probe(const TrainState& s, const TrainConfig& cfg) {
  Pipeline p = run_pipeline(s, cfg, s.step);
  return make_log(p, s.step, p.drift.V);
}

MetricReport evaluate_model(const MlpParams& params, const GmmSpec& target, Eigen::Index n,
                            std::uint64_t seed, long step) {
  CounterRng lat(derive_key(seed, static_cast<std::uint64_t>(Stream::eval_latent), static_cast<std::uint64_t>(step)));
  const Matrix eps = standard_normal(lat, n, params.shape().latent_dim);
  const Matrix model = forward(params, eps);
  const Matrix ref =
      sample_exact(target, n, derive_key(seed, static_cast<std::uint64_t>(Stream::eval_ref), static_cast<std::uint64_t>(step)));
  return evaluate_samples(target, model, ref);
}

std::vector<double> MetricsRow::values() const {
  return {static_cast<double>(log.step), log.loss, log.mean_drift_norm, log.tau, log.attr, report.mmd,
          report.w_transport, report.coverage.fraction, report.tvd, report.kl_mode};
}

nlohmann::json checkpoint_json(const TrainState& state, const TrainConfig& cfg) {
  return {{"format", "driftflow-checkpoint-v1"},
          {"step", state.step},
          {"config", to_json(cfg)},
          {"mlp", to_json(state.params)}};
}

Checkpoint checkpoint_from_json(const nlohmann::json& j) {
  Checkpoint c;
  c.config = train_config_from_json(j.at("config"));
  c.params = mlp_from_json(j.at("mlp"));
  c.step = j.at("step").get<long>();
  const auto expect = c.config.mlp_shape();
  const auto& got = c.params.shape();
  if (got.latent_dim != expect.latent_dim || got.out_dim != expect.out_dim || got.hidden != expect.hidden ||
      got.layers != expect.layers)
    throw std::invalid_argument("checkpoint parameters do not match its config");
  return c;
}

TrainResult run_training(const TrainConfig& cfg, const RunOptions& opts) {
  cfg.validate();
  RunManifest manifest;
  manifest.config = to_json(cfg);
  manifest.seed = cfg.seed;
  manifest.version = library_version();
  manifest.started_at = utc_timestamp();

  TrainResult res;
  res.state = init_training(cfg);
  const auto& out = opts.out_dir;
  if (out) {
    write_json(*out / "config.json", manifest.config);
    manifest.files.push_back("config.json");
  }

  auto eval_row = [&](const StepLog& log) {
    MetricsRow row{log, evaluate_model(res.state.params, res.state.target, cfg.eval_n, cfg.seed, log.step)};
    res.rows.push_back(row);
    if (!opts.quiet) {
      std::cerr << "step " << log.step << " loss " << log.loss << " |V| " << log.mean_drift_norm << " mmd "
                << row.report.mmd << " w " << row.report.w_transport << " cov " << row.report.coverage.covered_count
                << "/" << res.state.target.num_modes() << "\n";
    }
  };

  eval_row(drift_probe(res.state, cfg));
  try {
    for (long t = 0; t < cfg.steps; ++t) {
      const StepLog log = train_step(res.state, cfg);
      res.steps.push_back(log);
      const bool last = res.state.step == cfg.steps;
      if (last || (cfg.eval_every > 0 && res.state.step % cfg.eval_every == 0)) eval_row(log);
      if (out && cfg.checkpoint_every > 0 && res.state.step % cfg.checkpoint_every == 0 && !last) {
        const std::string name = "checkpoint_" + std::to_string(res.state.step) + ".json";
        write_json(*out / name, checkpoint_json(res.state, cfg));
        manifest.files.push_back(name);
      }
    }
  } catch (const NonFiniteLossError& e) {
    if (out) write_json(*out / "failure_dump.json", e.dump());
    throw;
  }

  if (out) {
    std::vector<std::vector<double>> rows;
    for (const auto& r : res.rows) {
      rows.push_back(r.values());
      for (double v : rows.back())
        if (std::isnan(v)) manifest.nan_flagged = true;
    }
    write_csv(*out / "metrics.csv", kMetricsHeader, rows);
    std::vector<std::vector<double>> steps;
    for (const auto& s : res.steps)
      steps.push_back({static_cast<double>(s.step), s.loss, s.mean_drift_norm, s.tau, s.attr});
    write_csv(*out / "steps.csv", "step,loss,mean_drift_norm,tau,attr", steps);
    write_json(*out / "checkpoint.json", checkpoint_json(res.state, cfg));
    manifest.files.insert(manifest.files.end(), {"metrics.csv", "steps.csv", "checkpoint.json", "manifest.json"});
    manifest.finished_at = utc_timestamp();
    write_json(*out / "manifest.json", manifest.to_json());
  }
  return res;
}

}  // namespace driftflow
