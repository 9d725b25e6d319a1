#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "relay/diffusion.hpp"
#include "relay/evaluation.hpp"
#include "relay/model.hpp"
#include "relay/rng.hpp"
#include "relay/sudoku.hpp"

namespace relay {

enum class Objective { MLM, Rollout, RelaySG, Relay };

/// "mlm", "rollout", "relay_sg", "relay".
std::string_view to_string(Objective o);
Objective objective_from_string(std::string_view s);

struct TrainConfig {
  int K = 2;
  int batch_size = 512;
  int micro_batch = 0;  // 0: whole batch in one pass
  double lr = 5e-4;
  double weight_decay = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  int warmup_steps = 2000;
  double grad_clip = 0.5;
  double threshold_mean = 0.15;
  double threshold_std = 0.1;
  bool tau_per_window = false;
  double mlm_t_floor = 1e-3;
  std::int64_t total_steps = 0;
  int log_every = 100;
  int val_every = 5000;
  int val_n = 2000;
  std::vector<double> val_taus{std::begin(kSweepTaus), std::end(kSweepTaus)};
  std::string val_data;
  int checkpoint_every = 0;  // 0: same as val_every
  std::uint64_t seed = 0;
  Objective objective = Objective::Relay;

  /// Throws ConfigError on K < 1, non-positive rates or sizes.
  void validate() const;

  bool operator==(const TrainConfig&) const = default;
};

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
};

/// Flat `key = value` text; `#` starts a comment. Keys are ModelConfig and
/// TrainConfig field names. Unknown keys, duplicates and bad values throw
/// ConfigError. Unset keys keep the values already in `base`.
RunConfig parse_config(std::string_view text, RunConfig base = {});
RunConfig load_config(const std::string& path, RunConfig base = {});
/// Applies one `key`/`value` pair; the same rules as parse_config.
void set_config_value(RunConfig& cfg, std::string_view key, std::string_view value);

nlohmann::json train_config_to_json(const TrainConfig& t);
TrainConfig train_config_from_json(const nlohmann::json& j);

/// Gaussian draw clamped to [0.01, 0.99].
double sample_threshold(Rng& rng, const TrainConfig& cfg);

template <typename T>
struct EpisodeState {
  int record = -1;  // source record index, -1 for synthetic sequences
  std::vector<int> x0;
  MaskedSequence seq;
  Matrix<T> h;  // seq_len x d_model, zero at episode start; empty without relay
  bool finished = false;
};

/// Fresh episode: everything but the clues masked, h = 0.
template <typename T>
EpisodeState<T> start_episode(std::span<const int> x0, std::span<const std::uint8_t> clue,
                              const ModelConfig& cfg, int record = -1);
template <typename T>
EpisodeState<T> start_episode(const sudoku::PuzzleRecord& r, const ModelConfig& cfg,
                              int record = -1);

struct StepTrace {
  std::vector<int> masked;
  double tau = 0.0;
  std::vector<int> selected;
  double loss = 0.0;
  std::vector<CommittedToken> committed;
};

struct RolloutTrace {
  std::vector<StepTrace> steps;
  double window_loss = 0.0;
};

/// Pre-drawn selections, `[episode][step]`, used instead of the policy so the
/// window loss becomes a deterministic function of the parameters.
using RolloutPlan = std::vector<std::vector<std::vector<int>>>;

struct RolloutControl {
  const TrainConfig* train = nullptr;  // threshold parameters
  Rng* tau_rng = nullptr;
  Rng* dropout_rng = nullptr;  // null: dropout off
  const RolloutPlan* plan = nullptr;
  /// `grads` receives grad_scale times the gradient of the summed
  /// per-episode window losses.
  double grad_scale = 1.0;
  /// When set, receives the ReLU sign-pattern hash of every forward.
  std::uint64_t* relu_signature = nullptr;
};

struct WindowResult {
  double loss = 0.0;  // mean over episodes of the summed step losses
  std::vector<RolloutTrace> traces;
};

/// K teacher-forced rollout steps on every episode, advancing their state in
/// place. The relay input is null for Rollout, the carried h with its gradient
/// severed for RelaySG and the live h for Relay; gradient never crosses the
/// window start.
template <typename T>
WindowResult rollout_window(const ModelParams<T>& p, std::span<EpisodeState<T>> episodes,
                            Objective objective, int K, const RolloutControl& ctl,
                            ModelParams<T>* grads);

/// Planned selections recorded from `traces`.
RolloutPlan plan_from_traces(std::span<const RolloutTrace> traces);

struct MlmBatch {
  std::vector<std::vector<int>> x0;
  std::vector<MaskedSequence> inputs;
  std::vector<double> t;
};

/// Draws t ~ U(floor, 1) per sequence and masks non-clue positions uniformly.
MlmBatch sample_mlm_batch(std::span<const std::vector<int>> x0,
                          std::span<const std::vector<std::uint8_t>> clue, double t_floor,
                          Rng& rng);

/// Mean masked-diffusion loss of a prepared batch, one pass with no relay.
/// `grads` receives grad_scale times the gradient of the summed losses.
template <typename T>
double mlm_loss(const ModelParams<T>& p, const MlmBatch& batch, Rng* dropout_rng,
                ModelParams<T>* grads, double grad_scale = 1.0,
                std::uint64_t* relu_signature = nullptr);

template <typename T>
double global_norm(const ModelParams<T>& g);
/// Rescales `g` to norm `max_norm` when above it; returns the norm before.
template <typename T>
double clip_global_norm(ModelParams<T>& g, double max_norm);

struct AdamState {
  ModelParams<float> m;
  ModelParams<float> v;
  std::int64_t t = 0;
};

AdamState make_adam(const ModelParams<float>& p);
double learning_rate(const TrainConfig& cfg, std::int64_t step);
/// Decoupled weight decay on every parameter array.
void adamw_update(ModelParams<float>& p, const ModelParams<float>& g, AdamState& s,
                  const TrainConfig& cfg, double lr);

struct StepMetrics {
  std::int64_t step = 0;
  double loss = 0.0;
  double lr = 0.0;
  double grad_norm = 0.0;  // before clipping
  int episodes_finished = 0;
};

/// Training loop state: parameters, optimizer, episode pool and the three
/// random streams (data, thresholds, dropout). Bit-exact across save/load.
class Trainer {
 public:
  Trainer(const ModelConfig& model, const TrainConfig& train,
          const std::vector<sudoku::PuzzleRecord>* data);

  StepMetrics step();

  std::int64_t steps_done() const { return step_; }
  const ModelParams<float>& params() const { return params_; }
  ModelParams<float>& params() { return params_; }
  const AdamState& optimizer() const { return adam_; }
  const TrainConfig& train_config() const { return train_; }
  const std::vector<EpisodeState<float>>& pool() const { return pool_; }
  /// Unmask decisions of the last step, one trace per episode.
  const std::vector<RolloutTrace>& last_traces() const { return last_traces_; }
  /// Extends or shortens the run; the only setting a resumed run may change.
  void set_total_steps(std::int64_t n) { train_.total_steps = n; }

  void save(const std::string& path) const;
  /// Restores a Trainer written by save(); `data` must be the same dataset.
  static Trainer load(const std::string& path, const std::vector<sudoku::PuzzleRecord>* data);

 private:
  void reseed_finished();
  [[noreturn]] void numeric_failure(double loss, std::span<const int> members) const;

  ModelConfig model_;
  TrainConfig train_;
  const std::vector<sudoku::PuzzleRecord>* data_;
  ModelParams<float> params_;
  AdamState adam_;
  std::vector<EpisodeState<float>> pool_;
  Rng data_rng_, tau_rng_, dropout_rng_;
  std::int64_t step_ = 0;
  std::vector<RolloutTrace> last_traces_;
};

inline constexpr const char* kMetricsHeader =
    "step,objective,loss,lr,grad_norm,episodes_finished,val_exact_match@0.15,val_mean_nfe@0.15";

struct TrainingPaths {
  std::string data;
  std::string out_dir;
  bool resume = false;
};

/// Runs `train.total_steps` steps, logging to `out_dir/metrics.csv`, writing
/// `out_dir/checkpoint.rmdm` at the checkpoint cadence and at the end, and
/// validation sweeps to `out_dir/val_step{n}.csv`. With `resume`, continues
/// from the checkpoint in `out_dir`.
void run_training(const ModelConfig& model, const TrainConfig& train, const TrainingPaths& paths);

/// Tiny double-precision setup used by the gradient checks: 2 layers,
/// d_model 32, 16 positions, dropout 0.
ModelConfig grad_check_config(bool tied = false);

struct GradCheckOptions {
  std::uint64_t seed = 7;
  int batch = 2;
  int coordinates = 240;  // spread across every parameter array
  double step = 1e-4;
};

struct GradCheckResult {
  double max_relative_error = 0.0;
  int coordinates = 0;
  int redrawn = 0;  // coordinates whose difference stencil crossed a ReLU kink
  int groups = 0;
  std::string worst;  // tensor name and index of the worst coordinate
};

double relative_error(double a, double b);

/// Analytic gradient of the frozen-rollout window loss (or the frozen MLM
/// loss) against central finite differences.
GradCheckResult grad_check(const ModelConfig& cfg, Objective objective, int K,
                           const GradCheckOptions& opts = {});

/// K = 2: compares the Relay gradient minus the RelaySG gradient with the
/// through-h term assembled from a finite-difference adjoint dL1/dh1 and a
/// finite-difference Jacobian-vector probe of h1.
GradCheckResult bptt_decomposition_check(const ModelConfig& cfg, const GradCheckOptions& opts = {});

}  // namespace relay
