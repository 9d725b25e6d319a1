#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <optional>
#include <set>

#include "relay/error.hpp"
#include "relay/training.hpp"

namespace relay {

ModelConfig grad_check_config(bool tied) {
  ModelConfig c;
  c.n_layers = 2;
  c.d_model = 32;
  c.n_heads = 2;
  c.head_dim = 16;
  c.rotary_width = 16;
  c.d_ff = 64;
  c.dropout = 0.0;
  c.seq_len = 16;
  c.tie_embeddings = tied;
  c.relay_enabled = true;
  c.init_std = 0.1;
  return c;
}

double relative_error(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8});
}

namespace {

// Loss as a function of the parameters; also reports the ReLU sign pattern.
using LossFn =
    std::function<double(const ModelParams<double>&, ModelParams<double>*, std::uint64_t*)>;

struct Setup {
  ModelParams<double> params;
  std::vector<EpisodeState<double>> episodes;
  std::vector<std::vector<int>> x0;
  std::vector<std::vector<std::uint8_t>> clue;
};

Setup make_setup(const ModelConfig& cfg, const GradCheckOptions& opts) {
  if (cfg.dropout != 0.0) throw PreconditionError("gradient checks need dropout 0");
  Setup s;
  s.params = build_model<double>(cfg, opts.seed);
  Rng rng(opts.seed ^ 0xA5A5A5A5ULL);
  // Move norm scales, shifts and biases off their init so every group carries signal.
  for (auto& t : tensors(s.params))
    if (t.rows == 1)
      for (Eigen::Index i = 0; i < t.size(); ++i) t.data[i] += 0.1 * rng.normal();
  for (int b = 0; b < opts.batch; ++b) {
    std::vector<int> x(cfg.seq_len);
    std::vector<std::uint8_t> c(cfg.seq_len);
    for (int i = 0; i < cfg.seq_len; ++i) {
      x[i] = static_cast<int>(rng.below(token::kMask));
      c[i] = rng.uniform() < 0.25;
    }
    c[0] = 0;  // at least one masked position
    s.episodes.push_back(start_episode<double>(x, c, cfg));
    s.x0.push_back(std::move(x));
    s.clue.push_back(std::move(c));
  }
  return s;
}

// Frozen problem: the analytic gradient and the function it differentiates.
struct Frozen {
  RolloutPlan plan;
  MlmBatch mlm;
  // RelaySG: episode states entering each step, relay values held fixed.
  std::vector<std::vector<EpisodeState<double>>> snapshots;
  std::vector<RolloutPlan> step_plans;
};

RolloutPlan draw_plan(const Setup& s, Objective objective, int K, const GradCheckOptions& opts) {
  static const TrainConfig tc;
  Rng tau_rng(opts.seed + 13);
  auto eps = s.episodes;
  RolloutControl draw{&tc, &tau_rng, nullptr, nullptr, 1.0, nullptr};
  return plan_from_traces(rollout_window<double>(s.params, eps, objective, K, draw, nullptr).traces);
}

// Analytic gradient function (the objective's own estimator).
LossFn estimator(const Setup& s, Objective objective, int K, const GradCheckOptions& opts,
                 Frozen& fz) {
  const double scale = 1.0 / opts.batch;
  if (objective == Objective::MLM) {
    Rng rng(opts.seed + 11);
    static const TrainConfig tc;
    fz.mlm = sample_mlm_batch(s.x0, s.clue, tc.mlm_t_floor, rng);
    return [&fz, scale](const ModelParams<double>& p, ModelParams<double>* g, std::uint64_t* sig) {
      return mlm_loss(p, fz.mlm, nullptr, g, scale, sig);
    };
  }
  fz.plan = draw_plan(s, objective, K, opts);
  return [&s, &fz, objective, K, scale](const ModelParams<double>& p, ModelParams<double>* g,
                                        std::uint64_t* sig) {
    auto e = s.episodes;
    RolloutControl ctl{nullptr, nullptr, nullptr, &fz.plan, scale, sig};
    return rollout_window<double>(p, e, objective, K, ctl, g).loss;
  };
}

// The function whose exact gradient the estimator claims to be. For RelaySG
// the relay inputs of later steps are constants taken from the base run.
LossFn target(const Setup& s, Objective objective, int K, const GradCheckOptions& opts, Frozen& fz,
              LossFn est) {
  if (objective != Objective::RelaySG || K == 1) return est;
  const double scale = 1.0 / opts.batch;
  auto cur = s.episodes;
  for (int k = 0; k < K; ++k) {
    std::vector<EpisodeState<double>> snap;
    RolloutPlan step_plan;
    for (std::size_t e = 0; e < cur.size(); ++e) {
      if (cur[e].finished || k >= static_cast<int>(fz.plan[e].size())) continue;
      snap.push_back(cur[e]);
      step_plan.push_back({fz.plan[e][k]});
    }
    if (snap.empty()) break;
    // Advance the full batch one step to produce the next snapshot.
    auto advanced = snap;
    RolloutControl ctl{nullptr, nullptr, nullptr, &step_plan, 1.0, nullptr};
    rollout_window<double>(s.params, advanced, Objective::RelaySG, 1, ctl, nullptr);
    std::size_t j = 0;
    for (std::size_t e = 0; e < cur.size(); ++e)
      if (!cur[e].finished && k < static_cast<int>(fz.plan[e].size())) cur[e] = advanced[j++];
    fz.snapshots.push_back(std::move(snap));
    fz.step_plans.push_back(std::move(step_plan));
  }
  return [&fz, scale](const ModelParams<double>& p, ModelParams<double>* g, std::uint64_t* sig) {
    if (g) throw PreconditionError("held-relay loss is only evaluated");
    double total = 0.0;
    for (std::size_t k = 0; k < fz.snapshots.size(); ++k) {
      auto e = fz.snapshots[k];
      RolloutControl ctl{nullptr, nullptr, nullptr, &fz.step_plans[k], 1.0, sig};
      total += rollout_window<double>(p, e, Objective::RelaySG, 1, ctl, nullptr).loss *
               static_cast<double>(e.size()) * scale;
    }
    return total;
  };
}

struct Coordinate {
  int group;
  Eigen::Index index;
};

// Evenly spread over every parameter array; redraws within an array come from
// the same stream.
class CoordinateSampler {
 public:
  CoordinateSampler(ModelParams<double>& p, int total, std::uint64_t seed)
      : views_(tensors(p)), rng_(seed) {
    const int groups = static_cast<int>(views_.size());
    per_ = (total + groups - 1) / groups;
  }

  int groups() const { return static_cast<int>(views_.size()); }
  int per_group(int g) const { return static_cast<int>(std::min<Eigen::Index>(per_, views_[g].size())); }

  /// Next unused index of array `g`, or -1 when the array is exhausted.
  Eigen::Index draw(int g) {
    auto& used = used_[g];
    if (static_cast<Eigen::Index>(used.size()) >= views_[g].size()) return -1;
    Eigen::Index i;
    do i = static_cast<Eigen::Index>(rng_.below(views_[g].size()));
    while (!used.insert(i).second);
    return i;
  }

  TensorView<double>& view(int g) { return views_[g]; }

 private:
  std::vector<TensorView<double>> views_;
  Rng rng_;
  int per_ = 0;
  std::map<int, std::set<Eigen::Index>> used_;
};

void record(GradCheckResult& r, double a, double b, const std::string& name, Eigen::Index i) {
  const double e = relative_error(a, b);
  ++r.coordinates;
  if (e > r.max_relative_error || r.worst.empty()) {
    r.max_relative_error = e;
    r.worst = name + "[" + std::to_string(i) + "]";
  }
}

// Central difference of `f` along `w`; nullopt when the stencil crosses a
// ReLU kink.
template <typename F>
std::optional<double> central_difference(F&& f, double& w, double step, std::uint64_t base_sig) {
  const double saved = w;
  std::uint64_t su = 0, sd = 0;
  w = saved + step;
  const double up = f(&su);
  w = saved - step;
  const double down = f(&sd);
  w = saved;
  if (su != base_sig || sd != base_sig) return std::nullopt;
  return (up - down) / (2.0 * step);
}

constexpr int kMaxRedraws = 64;
// A stencil that straddles a kink is retried at step/10 and step/100.
constexpr int kShrinks = 2;

template <typename F>
std::optional<double> kink_free_difference(F&& f, double& w, double step, std::uint64_t base_sig) {
  for (int k = 0; k <= kShrinks; ++k, step *= 0.1)
    if (auto fd = central_difference(f, w, step, base_sig)) return fd;
  return std::nullopt;
}

template <typename Compare>
void sweep_coordinates(CoordinateSampler& cs, GradCheckResult& r, Compare&& compare) {
  r.groups = cs.groups();
  for (int g = 0; g < cs.groups(); ++g) {
    int accepted = 0, redraws = 0;
    while (accepted < cs.per_group(g)) {
      const Eigen::Index i = cs.draw(g);
      if (i < 0) break;
      if (compare(g, i)) {
        ++accepted;
      } else {
        ++r.redrawn;
        if (++redraws > kMaxRedraws)
          throw InvariantError("every probe of '" + cs.view(g).name + "' crosses a ReLU kink");
      }
    }
  }
}

}  // namespace

GradCheckResult grad_check(const ModelConfig& cfg, Objective objective, int K,
                           const GradCheckOptions& opts) {
  if (K < 1) throw ConfigError("grad_check: K must be at least 1");
  cfg.validate();
  Setup s = make_setup(cfg, opts);
  Frozen fz;
  const LossFn est = estimator(s, objective, K, opts, fz);
  const LossFn fn = target(s, objective, K, opts, fz, est);

  ModelParams<double> grads = zeros_like(s.params);
  std::uint64_t base_sig = 0;
  const double base = est(s.params, &grads, nullptr);
  const double held = fn(s.params, nullptr, &base_sig);
  if (est(s.params, nullptr, nullptr) != base || fn(s.params, nullptr, nullptr) != held)
    throw InvariantError("frozen loss is not deterministic");
  if (std::abs(held - base) > 1e-12 * std::max(1.0, std::abs(base)))
    throw InvariantError("held-relay loss disagrees with the window loss");

  GradCheckResult r;
  CoordinateSampler cs(s.params, opts.coordinates, opts.seed + 17);
  const auto gv = tensors(grads);
  sweep_coordinates(cs, r, [&](int g, Eigen::Index i) {
    const auto fd = kink_free_difference(
        [&](std::uint64_t* sig) { return fn(s.params, nullptr, sig); }, cs.view(g).data[i], opts.step,
        base_sig);
    if (!fd) return false;
    record(r, gv[g].data[i], *fd, cs.view(g).name, i);
    return true;
  });
  return r;
}

GradCheckResult bptt_decomposition_check(const ModelConfig& cfg, const GradCheckOptions& opts) {
  cfg.validate();
  if (!cfg.relay_enabled) throw ConfigError("decomposition check needs relay enabled");
  Setup s = make_setup(cfg, opts);
  Frozen fz;
  const LossFn relay_est = estimator(s, Objective::Relay, 2, opts, fz);
  const double scale = 1.0 / opts.batch;

  ModelParams<double> g_relay = zeros_like(s.params), g_sg = zeros_like(s.params);
  relay_est(s.params, &g_relay, nullptr);
  {
    auto e = s.episodes;
    RolloutControl ctl{nullptr, nullptr, nullptr, &fz.plan, scale, nullptr};
    rollout_window<double>(s.params, e, Objective::RelaySG, 2, ctl, &g_sg);
  }

  const Eigen::Index L = cfg.seq_len, d = cfg.d_model;
  const int B = opts.batch;
  const RolloutPlan& plan = fz.plan;

  // Step-0 inputs and the step-1 sequences reached by the frozen plan.
  std::vector<int> tokens0, tokens1, members1;
  std::vector<MaskedSequence> next;
  Matrix<double> relay0(B * L, d);
  for (int b = 0; b < B; ++b) {
    const auto& ep = s.episodes[b];
    tokens0.insert(tokens0.end(), ep.seq.tokens.begin(), ep.seq.tokens.end());
    relay0.middleRows(b * L, L) = ep.h;
    MaskedSequence n1 = commit(ep.seq, plan[b][0], ep.x0);
    if (n1.masked_count() > 0 && plan[b].size() > 1) {
      members1.push_back(b);
      tokens1.insert(tokens1.end(), n1.tokens.begin(), n1.tokens.end());
      next.push_back(std::move(n1));
    }
  }
  if (members1.empty()) throw PreconditionError("no episode reaches a second step");

  auto h1_of = [&](const ModelParams<double>& p, std::uint64_t* sig) {
    auto tape = forward_tape<double>(p, tokens0, &relay0, false, nullptr);
    if (sig) *sig = relu_signature(tape);
    return tape.hidden;
  };
  auto l1_of = [&](const Matrix<double>& h1, std::uint64_t* sig) {
    Matrix<double> relay1(static_cast<Eigen::Index>(members1.size()) * L, d);
    for (std::size_t m = 0; m < members1.size(); ++m)
      relay1.middleRows(m * L, L) = h1.middleRows(members1[m] * L, L);
    const auto tape = forward_tape<double>(s.params, tokens1, &relay1, false, nullptr);
    if (sig) *sig = relu_signature(tape);
    double total = 0.0;
    for (std::size_t m = 0; m < members1.size(); ++m)
      total += masked_cross_entropy(tape.logits, static_cast<Eigen::Index>(m) * L,
                                    s.episodes[members1[m]].x0, next[m].masked_positions());
    return total * scale;
  };

  // Adjoint of the step-1 loss with respect to h1.
  std::uint64_t sig0 = 0, sig1 = 0;
  Matrix<double> h1 = h1_of(s.params, &sig0);
  l1_of(h1, &sig1);
  Matrix<double> lambda = Matrix<double>::Zero(h1.rows(), h1.cols());
  for (Eigen::Index i = 0; i < h1.size(); ++i) {
    const auto fd = kink_free_difference([&](std::uint64_t* sig) { return l1_of(h1, sig); },
                                         h1.data()[i], opts.step, sig1);
    if (!fd) throw InvariantError("adjoint probe keeps crossing a ReLU kink");
    lambda.data()[i] = *fd;
  }

  GradCheckResult r;
  CoordinateSampler cs(s.params, opts.coordinates, opts.seed + 19);
  const auto gr = tensors(g_relay);
  const auto gs = tensors(g_sg);
  sweep_coordinates(cs, r, [&](int g, Eigen::Index i) {
    // Jacobian-vector probe: lambda . dh1/dtheta_i.
    const auto probe = kink_free_difference(
        [&](std::uint64_t* sig) { return (lambda.array() * h1_of(s.params, sig).array()).sum(); },
        cs.view(g).data[i], opts.step, sig0);
    if (!probe) return false;
    record(r, gr[g].data[i] - gs[g].data[i], *probe, cs.view(g).name, i);
    return true;
  });
  return r;
}

}  // namespace relay
