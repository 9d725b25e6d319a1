#include <algorithm>

#include "relay/error.hpp"
#include "relay/training.hpp"

namespace relay {

template <typename T>
EpisodeState<T> start_episode(std::span<const int> x0, std::span<const std::uint8_t> clue,
                              const ModelConfig& cfg, int record) {
  if (static_cast<int>(x0.size()) != cfg.seq_len)
    throw InputError("episode length does not match seq_len");
  EpisodeState<T> e;
  e.record = record;
  e.x0.assign(x0.begin(), x0.end());
  e.seq = fully_masked(x0, clue);
  if (cfg.relay_enabled) e.h = Matrix<T>::Zero(cfg.seq_len, cfg.d_model);
  e.finished = e.seq.masked_count() == 0;
  return e;
}

template <typename T>
EpisodeState<T> start_episode(const sudoku::PuzzleRecord& r, const ModelConfig& cfg, int record) {
  const MaskedSequence s = puzzle_sequence(r);
  std::vector<int> x0(r.solution.begin(), r.solution.end());
  return start_episode<T>(x0, s.clue, cfg, record);
}

namespace {

template <typename T>
struct StepRecord {
  std::vector<int> members;  // episode indices, row block order
  ForwardTape<T> tape;
  Matrix<T> d_logits;
};

}  // namespace

template <typename T>
WindowResult rollout_window(const ModelParams<T>& p, std::span<EpisodeState<T>> episodes,
                            Objective objective, int K, const RolloutControl& ctl,
                            ModelParams<T>* grads) {
  if (K < 1) throw ConfigError("rollout_window: K must be at least 1");
  if (objective == Objective::MLM) throw ConfigError("rollout_window: MLM has no rollout");
  const bool carry = objective == Objective::Relay || objective == Objective::RelaySG;
  if (carry && !p.config.relay_enabled)
    throw ConfigError("relay objectives need a model with relay enabled");
  if (!ctl.plan && (!ctl.train || !ctl.tau_rng))
    throw PreconditionError("rollout_window: thresholds need a config and an rng");
  if (ctl.plan && ctl.plan->size() != episodes.size())
    throw InputError("rollout plan does not match the episode count");
  for (const auto& e : episodes)
    if (e.finished) throw PreconditionError("rollout_window: finished episode in the batch");

  const Eigen::Index L = p.config.seq_len, d = p.config.d_model;
  const int B = static_cast<int>(episodes.size());
  WindowResult res;
  res.traces.resize(B);
  if (B == 0) return res;

  std::vector<double> window_tau(B, 0.0);
  if (!ctl.plan && ctl.train->tau_per_window)
    for (auto& t : window_tau) t = sample_threshold(*ctl.tau_rng, *ctl.train);

  std::vector<StepRecord<T>> steps;
  for (int k = 0; k < K; ++k) {
    StepRecord<T> rec;
    for (int e = 0; e < B; ++e)
      if (!episodes[e].finished) rec.members.push_back(e);
    if (rec.members.empty()) break;
    const Eigen::Index n = static_cast<Eigen::Index>(rec.members.size());

    std::vector<int> tokens;
    tokens.reserve(n * L);
    Matrix<T> relay_in;
    if (carry) relay_in.resize(n * L, d);
    for (Eigen::Index m = 0; m < n; ++m) {
      const auto& ep = episodes[rec.members[m]];
      tokens.insert(tokens.end(), ep.seq.tokens.begin(), ep.seq.tokens.end());
      if (carry) relay_in.middleRows(m * L, L) = ep.h;
    }
    rec.tape = forward_tape(p, tokens, carry ? &relay_in : nullptr, ctl.dropout_rng != nullptr,
                            ctl.dropout_rng);
    if (ctl.relu_signature) *ctl.relu_signature = relu_signature(rec.tape, *ctl.relu_signature);
    if (grads) rec.d_logits = Matrix<T>::Zero(rec.tape.logits.rows(), rec.tape.logits.cols());

    for (Eigen::Index m = 0; m < n; ++m) {
      const int e = rec.members[m];
      auto& ep = episodes[e];
      StepTrace st;
      st.masked = ep.seq.masked_positions();
      st.loss = masked_cross_entropy(rec.tape.logits, m * L, ep.x0, st.masked,
                                     grads ? &rec.d_logits : nullptr, ctl.grad_scale);
      if (ctl.plan) {
        const auto& planned = (*ctl.plan)[e];
        if (k >= static_cast<int>(planned.size())) throw InputError("rollout plan is too short");
        st.selected = planned[k];
      } else {
        std::vector<PositionConfidence> conf;
        conf.reserve(st.masked.size());
        for (int pos : st.masked)
          conf.push_back({pos, decode_position(rec.tape.logits, m * L + pos).second});
        st.tau = ctl.train->tau_per_window ? window_tau[e] : sample_threshold(*ctl.tau_rng, *ctl.train);
        st.selected = select_positions(conf, st.tau).selected;
      }
      // Teacher forcing: the committed value is always the ground truth.
      ep.seq = commit(ep.seq, st.selected, ep.x0);
      for (int pos : st.selected) st.committed.push_back({pos, ep.x0[pos]});
      if (carry) ep.h = rec.tape.hidden.middleRows(m * L, L);
      ep.finished = ep.seq.masked_count() == 0;
      res.traces[e].window_loss += st.loss;
      res.traces[e].steps.push_back(std::move(st));
    }
    steps.push_back(std::move(rec));
  }

  for (const auto& t : res.traces) res.loss += t.window_loss;
  res.loss /= B;

  if (grads) {
    Matrix<T> d_next;  // gradient w.r.t. the relay input of the following step
    std::vector<int> next_members;
    for (int k = static_cast<int>(steps.size()) - 1; k >= 0; --k) {
      auto& rec = steps[k];
      const Eigen::Index n = static_cast<Eigen::Index>(rec.members.size());
      Matrix<T> d_hidden;
      const bool through_h = objective == Objective::Relay && !next_members.empty();
      if (through_h) {
        d_hidden = Matrix<T>::Zero(n * L, d);
        for (std::size_t j = 0; j < next_members.size(); ++j) {
          const auto it = std::find(rec.members.begin(), rec.members.end(), next_members[j]);
          const Eigen::Index m = it - rec.members.begin();
          d_hidden.middleRows(m * L, L) = d_next.middleRows(static_cast<Eigen::Index>(j) * L, L);
        }
      }
      Matrix<T> d_relay;
      const bool want_relay = objective == Objective::Relay && k > 0;
      backward(p, rec.tape, rec.d_logits, through_h ? &d_hidden : nullptr, *grads,
               want_relay ? &d_relay : nullptr);
      d_next = std::move(d_relay);
      next_members = want_relay ? rec.members : std::vector<int>{};
    }
  }
  return res;
}

RolloutPlan plan_from_traces(std::span<const RolloutTrace> traces) {
  RolloutPlan plan(traces.size());
  for (std::size_t e = 0; e < traces.size(); ++e)
    for (const auto& st : traces[e].steps) plan[e].push_back(st.selected);
  return plan;
}

MlmBatch sample_mlm_batch(std::span<const std::vector<int>> x0,
                          std::span<const std::vector<std::uint8_t>> clue, double t_floor,
                          Rng& rng) {
  if (x0.size() != clue.size()) throw InputError("sample_mlm_batch: size mismatch");
  MlmBatch b;
  for (std::size_t i = 0; i < x0.size(); ++i) {
    const double t = rng.uniform(t_floor, 1.0);
    b.x0.push_back(x0[i]);
    b.inputs.push_back(mask_uniform(x0[i], t, clue[i], rng));
    b.t.push_back(t);
  }
  return b;
}

template <typename T>
double mlm_loss(const ModelParams<T>& p, const MlmBatch& batch, Rng* dropout_rng,
                ModelParams<T>* grads, double grad_scale, std::uint64_t* relu_sig) {
  const Eigen::Index L = p.config.seq_len;
  const std::size_t B = batch.inputs.size();
  if (B == 0) return 0.0;
  std::vector<int> tokens;
  for (const auto& s : batch.inputs) {
    if (s.size() != L) throw InputError("mlm_loss: sequence length does not match seq_len");
    tokens.insert(tokens.end(), s.tokens.begin(), s.tokens.end());
  }
  const auto tape = forward_tape<T>(p, tokens, nullptr, dropout_rng != nullptr, dropout_rng);
  if (relu_sig) *relu_sig = relu_signature(tape, *relu_sig);
  Matrix<T> d_logits;
  if (grads) d_logits = Matrix<T>::Zero(tape.logits.rows(), tape.logits.cols());
  double total = 0.0;
  for (std::size_t i = 0; i < B; ++i) {
    const double t = batch.t[i];
    if (!(t > 0.0)) throw RangeError("mlm_loss: t must be positive");
    const auto masked = batch.inputs[i].masked_positions();
    total += masked_cross_entropy(tape.logits, static_cast<Eigen::Index>(i) * L, batch.x0[i], masked,
                                  grads ? &d_logits : nullptr, grad_scale / t) /
             t;
  }
  if (grads) backward<T>(p, tape, d_logits, nullptr, *grads, nullptr);
  return total / static_cast<double>(B);
}

#define RELAY_INSTANTIATE(T)                                                                       \
  template EpisodeState<T> start_episode<T>(std::span<const int>, std::span<const std::uint8_t>,   \
                                            const ModelConfig&, int);                               \
  template EpisodeState<T> start_episode<T>(const sudoku::PuzzleRecord&, const ModelConfig&, int); \
  template WindowResult rollout_window<T>(const ModelParams<T>&, std::span<EpisodeState<T>>,        \
                                          Objective, int, const RolloutControl&, ModelParams<T>*);  \
  template double mlm_loss<T>(const ModelParams<T>&, const MlmBatch&, Rng*, ModelParams<T>*, double, \
                              std::uint64_t*);
RELAY_INSTANTIATE(float)
RELAY_INSTANTIATE(double)
#undef RELAY_INSTANTIATE

}  // namespace relay
