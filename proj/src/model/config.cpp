#include <cmath>
#include <string>

#include "relay/error.hpp"
#include "relay/model.hpp"

namespace relay {

void ModelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("model config: " + msg); };
  if (n_layers < 1) fail("n_layers must be >= 1");
  if (d_model < 1 || d_ff < 1 || n_heads < 1 || head_dim < 1) fail("dimensions must be positive");
  if (d_model != n_heads * head_dim) fail("d_model must equal n_heads * head_dim");
  if (rotary_width < 0 || rotary_width > head_dim || rotary_width % 2 != 0)
    fail("rotary_width must be even and within [0, head_dim]");
  if (!(dropout >= 0.0 && dropout < 1.0)) fail("dropout must be in [0, 1)");
  if (vocab_size < 11) fail("vocab_size must be >= 11");
  if (seq_len < 1) fail("seq_len must be >= 1");
  if (!(rope_base > 0.0)) fail("rope_base must be positive");
  if (!(init_std >= 0.0)) fail("init_std must be non-negative");
}

std::int64_t parameter_count(const ModelConfig& cfg) {
  const std::int64_t d = cfg.d_model, f = cfg.d_ff, v = cfg.vocab_size;
  const std::int64_t norm = 2 * d;
  const std::int64_t per_layer = 4 * d * d + (d * f + f) + (f * d + d) + 2 * norm;
  std::int64_t total = cfg.n_layers * per_layer + norm + v * d;
  if (!cfg.tie_embeddings) total += d * v;
  if (cfg.relay_enabled) total += norm;
  return total;
}

namespace {

template <typename P, typename View>
std::vector<View> collect(P& p) {
  std::vector<View> out;
  auto add = [&out](std::string name, auto& m) {
    if (m.size() == 0) return;
    out.push_back(View{std::move(name), m.data(), m.rows(), m.cols()});
  };
  add("embedding", p.embedding);
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    auto& L = p.layers[l];
    const std::string pre = "layers." + std::to_string(l) + ".";
    add(pre + "attn_norm.scale", L.attn_norm_scale);
    add(pre + "attn_norm.shift", L.attn_norm_shift);
    add(pre + "attn.wq", L.wq);
    add(pre + "attn.wk", L.wk);
    add(pre + "attn.wv", L.wv);
    add(pre + "attn.wo", L.wo);
    add(pre + "mlp_norm.scale", L.mlp_norm_scale);
    add(pre + "mlp_norm.shift", L.mlp_norm_shift);
    add(pre + "mlp.w1", L.w1);
    add(pre + "mlp.b1", L.b1);
    add(pre + "mlp.w2", L.w2);
    add(pre + "mlp.b2", L.b2);
  }
  add("final_norm.scale", p.final_norm_scale);
  add("final_norm.shift", p.final_norm_shift);
  add("relay_norm.scale", p.relay_norm_scale);
  add("relay_norm.shift", p.relay_norm_shift);
  add("unembedding", p.unembedding);
  return out;
}

template <typename T>
void truncated_normal(Matrix<T>& m, double stddev, Rng& rng) {
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    double z = rng.normal();
    while (std::abs(z) > 2.0) z = rng.normal();
    m.data()[i] = static_cast<T>(z * stddev);
  }
}

}  // namespace

template <typename T>
std::vector<TensorView<T>> tensors(ModelParams<T>& p) {
  return collect<ModelParams<T>, TensorView<T>>(p);
}

template <typename T>
std::vector<TensorView<const T>> tensors(const ModelParams<T>& p) {
  return collect<const ModelParams<T>, TensorView<const T>>(p);
}

template <typename T>
std::int64_t allocated_scalars(const ModelParams<T>& p) {
  std::int64_t n = 0;
  for (const auto& t : tensors(p)) n += t.size();
  return n;
}

template <typename T>
ModelParams<T> build_model(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  const Eigen::Index d = cfg.d_model, f = cfg.d_ff, v = cfg.vocab_size;
  const double s = cfg.init_std;

  ModelParams<T> p;
  p.config = cfg;
  p.embedding.resize(v, d);
  truncated_normal(p.embedding, s, rng);
  p.layers.resize(cfg.n_layers);
  for (auto& L : p.layers) {
    L.attn_norm_scale = RowVector<T>::Ones(d);
    L.attn_norm_shift = RowVector<T>::Zero(d);
    for (Matrix<T>* w : {&L.wq, &L.wk, &L.wv, &L.wo}) {
      w->resize(d, d);
      truncated_normal(*w, s, rng);
    }
    L.mlp_norm_scale = RowVector<T>::Ones(d);
    L.mlp_norm_shift = RowVector<T>::Zero(d);
    L.w1.resize(d, f);
    truncated_normal(L.w1, s, rng);
    L.b1 = RowVector<T>::Zero(f);
    L.w2.resize(f, d);
    truncated_normal(L.w2, s, rng);
    L.b2 = RowVector<T>::Zero(d);
  }
  p.final_norm_scale = RowVector<T>::Ones(d);
  p.final_norm_shift = RowVector<T>::Zero(d);
  if (cfg.relay_enabled) {
    p.relay_norm_scale = cfg.relay_gamma_init == GammaInit::Ones ? RowVector<T>::Ones(d)
                                                                  : RowVector<T>::Zero(d);
    p.relay_norm_shift = RowVector<T>::Zero(d);
  }
  if (!cfg.tie_embeddings) {
    p.unembedding.resize(d, v);
    truncated_normal(p.unembedding, s, rng);
  }
  return p;
}

template <typename T>
ModelParams<T> zeros_like(const ModelParams<T>& p) {
  ModelParams<T> z = p;
  for (auto& t : tensors(z))
    for (Eigen::Index i = 0; i < t.size(); ++i) t.data[i] = T(0);
  return z;
}

#define RELAY_INSTANTIATE(T)                                                   \
  template std::vector<TensorView<T>> tensors<T>(ModelParams<T>&);             \
  template std::vector<TensorView<const T>> tensors<T>(const ModelParams<T>&); \
  template std::int64_t allocated_scalars<T>(const ModelParams<T>&);           \
  template ModelParams<T> build_model<T>(const ModelConfig&, std::uint64_t);   \
  template ModelParams<T> zeros_like<T>(const ModelParams<T>&);

RELAY_INSTANTIATE(float)
RELAY_INSTANTIATE(double)
#undef RELAY_INSTANTIATE

}  // namespace relay
