#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "driftflow/drift.hpp"
#include "driftflow/energy_targets.hpp"
#include "driftflow/kde.hpp"
#include "driftflow/metrics.hpp"
#include "driftflow/mlp.hpp"

namespace driftflow {

enum class ScheduleKind { constant, linear, cosine };

ScheduleKind parse_schedule_kind(std::string_view name);
std::string to_string(ScheduleKind k);

/// Anneal from v0 to v1 over the fraction window [t_start, t_stop] of training.
struct Schedule {
  ScheduleKind kind = ScheduleKind::constant;
  double v0 = 0.0;
  double v1 = 0.0;
  double t_start = 0.0;
  double t_stop = 1.0;

  void validate() const;
};

/// u = clamp((t/T - t_start) / (t_stop - t_start), 0, 1);
/// linear v0 + (v1 - v0) u, cosine v1 + (v0 - v1)(1 + cos(pi u)) / 2.
double schedule_value(const Schedule& s, long t, long T);

/// Independent RNG streams derived from the master seed.
enum class Stream : std::uint64_t { init = 1, latent = 2, ref_batch = 3, eval_latent = 4, eval_ref = 5 };

struct TrainConfig {
  Benchmark benchmark = Benchmark::gmm8;
  DriftConfig drift;  // attr_weight is replaced by attr_schedule each step
  KdeConfig kde;      // tau is replaced by tau_schedule each step
  Schedule tau_schedule{ScheduleKind::cosine, 0.5, 0.15, 0.0, 1.0};
  Schedule attr_schedule{ScheduleKind::constant, 0.1, 0.1, 0.0, 1.0};
  Eigen::Index batch = 1024;
  long steps = 3000;
  double lr = 2e-3;
  std::uint64_t seed = 0;
  long eval_every = 500;
  Eigen::Index eval_n = 2000;
  /// 0 means "same as the target dimension".
  int latent_dim = 0;
  int hidden = 128;
  int layers = 5;
  long checkpoint_every = 0;

  void validate() const;
  MlpShape mlp_shape() const;
};

nlohmann::json to_json(const TrainConfig& cfg);
/// Missing keys keep their defaults; unknown keys are rejected.
TrainConfig train_config_from_json(const nlohmann::json& j);

struct StepLog {
  long step = 0;  // number of parameter updates after this step
  double loss = 0.0;
  double mean_drift_norm = 0.0;
  double tau = 0.0;
  double attr = 0.0;
};

struct TrainState {
  GmmSpec target;
  MlpParams params;
  AdamState adam;
  long step = 0;
};

/// Raised when a step produces a non-finite loss; carries the offending batch.
class NonFiniteLossError : public std::runtime_error {
 public:
  NonFiniteLossError(const std::string& what, nlohmann::json dump)
      : std::runtime_error(what), dump_(std::move(dump)) {}
  const nlohmann::json& dump() const { return dump_; }

 private:
  nlohmann::json dump_;
};

/// Replaces the computed drift before the loss; used to inject oracle drifts.
using DriftOverride = std::function<void(const Matrix& x, Matrix& V)>;

TrainState init_training(const TrainConfig& cfg);

/// Draw latents, push forward, estimate (log q, score q), build the drift,
/// take one Adam step on the stop-gradient loss.
StepLog train_step(TrainState& state, const TrainConfig& cfg, const DriftOverride& override_drift = {});

/// The same pipeline at the current parameters without updating them.
StepLog drift_probe(const TrainState& state, const TrainConfig& cfg);

/// Latent draws for a given stream index.
Matrix latent_batch(const TrainConfig& cfg, Stream stream, std::uint64_t index, Eigen::Index n);

/// Metrics for the generator at `step`, against fresh exact reference draws.
MetricReport evaluate_model(const MlpParams& params, const GmmSpec& target, Eigen::Index n,
                            std::uint64_t seed, long step);

inline const char* kMetricsHeader =
    "step,loss,mean_drift_norm,tau,attr,mmd,w_transport,coverage,tvd,kl_mode";

struct MetricsRow {
  StepLog log;
  MetricReport report;

  std::vector<double> values() const;
};

struct TrainResult {
  TrainState state;
  std::vector<StepLog> steps;
  std::vector<MetricsRow> rows;
};

struct RunOptions {
  std::optional<std::filesystem::path> out_dir;  // nothing written when empty
  bool quiet = true;
};

/// Run all steps with periodic evaluation. With an output directory this
/// writes config.json, metrics.csv, steps.csv, checkpoint.json (plus
/// checkpoint_<step>.json every checkpoint_every steps) and manifest.json.
TrainResult run_training(const TrainConfig& cfg, const RunOptions& opts = {});

/// Checkpoint = generator parameters plus the run config and step.
nlohmann::json checkpoint_json(const TrainState& state, const TrainConfig& cfg);
struct Checkpoint {
  TrainConfig config;
  MlpParams params;
  long step = 0;
};
Checkpoint checkpoint_from_json(const nlohmann::json& j);

}  // namespace driftflow
