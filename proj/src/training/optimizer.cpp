#include <algorithm>
#include <cmath>

#include "relay/error.hpp"
#include "relay/training.hpp"

namespace relay {

template <typename T>
double global_norm(const ModelParams<T>& g) {
  double ss = 0.0;
  for (const auto& t : tensors(g))
    for (Eigen::Index i = 0; i < t.size(); ++i) ss += static_cast<double>(t.data[i]) * t.data[i];
  return std::sqrt(ss);
}

template <typename T>
double clip_global_norm(ModelParams<T>& g, double max_norm) {
  const double norm = global_norm(g);
  if (!std::isfinite(norm)) throw NumericError("gradient norm is not finite", -1);
  if (norm > max_norm) {
    const T scale = static_cast<T>(max_norm / norm);
    for (auto& t : tensors(g))
      for (Eigen::Index i = 0; i < t.size(); ++i) t.data[i] *= scale;
  }
  return norm;
}

template double global_norm<float>(const ModelParams<float>&);
template double global_norm<double>(const ModelParams<double>&);
template double clip_global_norm<float>(ModelParams<float>&, double);
template double clip_global_norm<double>(ModelParams<double>&, double);

AdamState make_adam(const ModelParams<float>& p) {
  return {zeros_like(p), zeros_like(p), 0};
}

double learning_rate(const TrainConfig& cfg, std::int64_t step) {
  if (cfg.warmup_steps <= 0) return cfg.lr;
  const double ramp = static_cast<double>(step + 1) / cfg.warmup_steps;
  return cfg.lr * std::min(1.0, ramp);
}

void adamw_update(ModelParams<float>& p, const ModelParams<float>& g, AdamState& s,
                  const TrainConfig& cfg, double lr) {
  ++s.t;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(s.t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(s.t));
  const float b1 = static_cast<float>(cfg.beta1), b2 = static_cast<float>(cfg.beta2);
  const float step = static_cast<float>(lr / bc1);
  const float inv_sqrt_bc2 = static_cast<float>(1.0 / std::sqrt(bc2));
  const float eps = static_cast<float>(cfg.adam_eps);
  const float decay = static_cast<float>(1.0 - lr * cfg.weight_decay);

  auto P = tensors(p);
  auto G = tensors(g);
  auto M = tensors(s.m);
  auto V = tensors(s.v);
  for (std::size_t k = 0; k < P.size(); ++k) {
    for (Eigen::Index i = 0; i < P[k].size(); ++i) {
      const float gi = G[k].data[i];
      float& m = M[k].data[i];
      float& v = V[k].data[i];
      m = b1 * m + (1.0f - b1) * gi;
      v = b2 * v + (1.0f - b2) * gi * gi;
      float& w = P[k].data[i];
      w *= decay;
      w -= step * m / (std::sqrt(v) * inv_sqrt_bc2 + eps);
    }
  }
}

}  // namespace relay
