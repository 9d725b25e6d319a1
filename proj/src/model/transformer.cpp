#include <cmath>
#include <string>

#include "relay/error.hpp"
#include "relay/model.hpp"

namespace relay {

namespace {

constexpr double kNormEps = 1e-5;

template <typename T>
using Column = Eigen::Matrix<T, Eigen::Dynamic, 1>;

template <typename T>
Matrix<T> layer_norm(const Matrix<T>& x, const RowVector<T>& scale, const RowVector<T>& shift,
                     LayerNormTape<T>& tape) {
  const Eigen::Index n = x.rows(), d = x.cols();
  tape.normalized.resize(n, d);
  tape.rstd.resize(n);
  for (Eigen::Index r = 0; r < n; ++r) {
    const T mean = x.row(r).mean();
    const auto centered = (x.row(r).array() - mean).matrix();
    const T var = centered.squaredNorm() / static_cast<T>(d);
    const T rstd = T(1) / std::sqrt(var + static_cast<T>(kNormEps));
    tape.rstd(r) = rstd;
    tape.normalized.row(r) = centered * rstd;
  }
  Matrix<T> y = tape.normalized.array().rowwise() * scale.array();
  y.rowwise() += shift;
  return y;
}

// Returns dL/dx; accumulates scale and shift gradients.
template <typename T>
Matrix<T> layer_norm_backward(const Matrix<T>& dy, const LayerNormTape<T>& tape,
                              const RowVector<T>& scale, RowVector<T>& d_scale,
                              RowVector<T>& d_shift) {
  const Eigen::Index n = dy.rows(), d = dy.cols();
  d_scale += (dy.array() * tape.normalized.array()).colwise().sum().matrix();
  d_shift += dy.colwise().sum();
  Matrix<T> dxhat = dy.array().rowwise() * scale.array();
  Matrix<T> dx(n, d);
  const T inv_d = T(1) / static_cast<T>(d);
  for (Eigen::Index r = 0; r < n; ++r) {
    const T mean_g = dxhat.row(r).sum() * inv_d;
    const T mean_gx = dxhat.row(r).dot(tape.normalized.row(r)) * inv_d;
    dx.row(r) = tape.rstd(r) *
                (dxhat.row(r).array() - mean_g - tape.normalized.row(r).array() * mean_gx).matrix();
  }
  return dx;
}

// Rotation tables indexed by (position, pair).
template <typename T>
struct Rotary {
  Matrix<T> cos, sin;
  int pairs = 0;
};

template <typename T>
Rotary<T> make_rotary(const ModelConfig& cfg) {
  Rotary<T> r;
  r.pairs = cfg.rotary_width / 2;
  r.cos.resize(cfg.seq_len, r.pairs);
  r.sin.resize(cfg.seq_len, r.pairs);
  for (int pos = 0; pos < cfg.seq_len; ++pos) {
    for (int i = 0; i < r.pairs; ++i) {
      const double freq = std::pow(cfg.rope_base, -2.0 * i / cfg.rotary_width);
      const double angle = pos * freq;
      r.cos(pos, i) = static_cast<T>(std::cos(angle));
      r.sin(pos, i) = static_cast<T>(std::sin(angle));
    }
  }
  return r;
}

// Interleaved-pair rotation of the first rotary_width dims of every head.
// `direction` = +1 rotates forward, -1 applies the transpose.
template <typename T>
void rotate(Matrix<T>& x, const Rotary<T>& rot, const ModelConfig& cfg, int direction) {
  if (rot.pairs == 0) return;
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const int pos = static_cast<int>(r % cfg.seq_len);
    T* row = x.row(r).data();
    for (int h = 0; h < cfg.n_heads; ++h) {
      T* head = row + h * cfg.head_dim;
      for (int i = 0; i < rot.pairs; ++i) {
        const T c = rot.cos(pos, i);
        const T s = direction > 0 ? rot.sin(pos, i) : -rot.sin(pos, i);
        const T a = head[2 * i], b = head[2 * i + 1];
        head[2 * i] = a * c - b * s;
        head[2 * i + 1] = a * s + b * c;
      }
    }
  }
}

template <typename T>
Matrix<T> dropout_keep(Eigen::Index rows, Eigen::Index cols, double p, Rng& rng) {
  Matrix<T> keep(rows, cols);
  const T scale = static_cast<T>(1.0 / (1.0 - p));
  for (Eigen::Index i = 0; i < keep.size(); ++i) keep.data()[i] = rng.uniform() < p ? T(0) : scale;
  return keep;
}

template <typename T>
void check_finite(const Matrix<T>& m, const std::string& where, int layer) {
  if (!m.allFinite()) throw NumericError("non-finite activation in " + where, layer);
}

template <typename T>
const Matrix<T>& output_projection(const ModelParams<T>& p, Matrix<T>& scratch) {
  if (!p.config.tie_embeddings) return p.unembedding;
  scratch = p.embedding.transpose();
  return scratch;
}

}  // namespace

template <typename T>
Matrix<T> relay_transform(const Matrix<T>& h, const ModelParams<T>& p) {
  if (!p.config.relay_enabled) throw ConfigError("relay_transform: relay is disabled");
  LayerNormTape<T> tape;
  return layer_norm(h, p.relay_norm_scale, p.relay_norm_shift, tape);
}

template <typename T>
ForwardTape<T> forward_tape(const ModelParams<T>& p, std::span<const int> tokens,
                            const Matrix<T>* relay, bool train, Rng* rng) {
  const ModelConfig& cfg = p.config;
  const Eigen::Index L = cfg.seq_len, d = cfg.d_model, hd = cfg.head_dim;
  if (tokens.empty() || tokens.size() % static_cast<std::size_t>(L) != 0)
    throw InputError("token count must be a positive multiple of seq_len");
  const int batch = static_cast<int>(tokens.size() / L);
  const Eigen::Index n = static_cast<Eigen::Index>(tokens.size());
  for (int t : tokens)
    if (t < 0 || t >= cfg.vocab_size) throw InputError("token id " + std::to_string(t) + " out of range");
  if (relay) {
    if (!cfg.relay_enabled) throw ConfigError("relay input given but relay is disabled");
    if (relay->rows() != n || relay->cols() != d) throw InputError("relay state has wrong shape");
    if (!relay->allFinite()) throw InputError("relay state is not finite");
  }
  const bool drop = train && cfg.dropout > 0.0;
  if (drop && !rng) throw InputError("train-mode forward with dropout needs an rng");

  ForwardTape<T> tape;
  tape.tokens.assign(tokens.begin(), tokens.end());
  tape.batch = batch;
  tape.has_relay = relay != nullptr;

  Matrix<T> x(n, d);
  for (Eigen::Index r = 0; r < n; ++r) x.row(r) = p.embedding.row(tokens[r]);
  if (relay) x += layer_norm(*relay, p.relay_norm_scale, p.relay_norm_shift, tape.relay_norm);
  check_finite(x, "input embedding", -1);

  const Rotary<T> rot = make_rotary<T>(cfg);
  const T att_scale = T(1) / std::sqrt(static_cast<T>(hd));
  tape.layers.resize(cfg.n_layers);

  for (int l = 0; l < cfg.n_layers; ++l) {
    const auto& W = p.layers[l];
    auto& lt = tape.layers[l];
    lt.input = x;
    lt.attn_in = layer_norm(x, W.attn_norm_scale, W.attn_norm_shift, lt.attn_norm);
    lt.q.noalias() = lt.attn_in * W.wq;
    lt.k.noalias() = lt.attn_in * W.wk;
    lt.v.noalias() = lt.attn_in * W.wv;
    rotate(lt.q, rot, cfg, +1);
    rotate(lt.k, rot, cfg, +1);

    lt.probs.resize(static_cast<Eigen::Index>(batch) * cfg.n_heads * L, L);
    if (drop) lt.probs_keep = dropout_keep<T>(lt.probs.rows(), L, cfg.dropout, *rng);
    lt.context.resize(n, d);
    for (int b = 0; b < batch; ++b) {
      for (int h = 0; h < cfg.n_heads; ++h) {
        const Eigen::Index r0 = b * L, c0 = h * hd;
        const Eigen::Index p0 = (static_cast<Eigen::Index>(b) * cfg.n_heads + h) * L;
        auto P = lt.probs.middleRows(p0, L);
        P.noalias() = lt.q.block(r0, c0, L, hd) * lt.k.block(r0, c0, L, hd).transpose();
        P *= att_scale;
        for (Eigen::Index i = 0; i < L; ++i) {
          auto row = P.row(i);
          row.array() = (row.array() - row.maxCoeff()).exp();
          row /= row.sum();
        }
        if (drop) {
          Matrix<T> Pd = P.cwiseProduct(lt.probs_keep.middleRows(p0, L));
          lt.context.block(r0, c0, L, hd).noalias() = Pd * lt.v.block(r0, c0, L, hd);
        } else {
          lt.context.block(r0, c0, L, hd).noalias() = P * lt.v.block(r0, c0, L, hd);
        }
      }
    }
    Matrix<T> attn_out = lt.context * W.wo;
    if (drop) {
      lt.attn_out_keep = dropout_keep<T>(n, d, cfg.dropout, *rng);
      attn_out.array() *= lt.attn_out_keep.array();
    }
    lt.mid = x + attn_out;

    lt.mlp_in = layer_norm(lt.mid, W.mlp_norm_scale, W.mlp_norm_shift, lt.mlp_norm);
    lt.pre_act.noalias() = lt.mlp_in * W.w1;
    lt.pre_act.rowwise() += W.b1;
    lt.act = lt.pre_act.cwiseMax(T(0));
    Matrix<T> mlp_out = lt.act * W.w2;
    mlp_out.rowwise() += W.b2;
    if (drop) {
      lt.mlp_out_keep = dropout_keep<T>(n, d, cfg.dropout, *rng);
      mlp_out.array() *= lt.mlp_out_keep.array();
    }
    x = lt.mid + mlp_out;
    check_finite(x, "layer " + std::to_string(l), l);
  }

  tape.final_in = x;
  tape.hidden = layer_norm(x, p.final_norm_scale, p.final_norm_shift, tape.final_norm);
  Matrix<T> scratch;
  tape.logits.noalias() = tape.hidden * output_projection(p, scratch);
  check_finite(tape.logits, "logits", cfg.n_layers);
  return tape;
}

template <typename T>
std::uint64_t relu_signature(const ForwardTape<T>& tape, std::uint64_t seed) {
  std::uint64_t h = seed ^ 0xCBF29CE484222325ULL;
  for (const auto& lt : tape.layers) {
    const T* x = lt.pre_act.data();
    for (Eigen::Index i = 0; i < lt.pre_act.size(); ++i) {
      h ^= x[i] > T(0) ? 1U : 0U;
      h *= 0x100000001B3ULL;
    }
  }
  return h;
}

template <typename T>
StepOutput<T> forward(const ModelParams<T>& p, std::span<const int> tokens,
                      const Matrix<T>* relay, bool train, Rng* rng) {
  auto tape = forward_tape(p, tokens, relay, train, rng);
  return {std::move(tape.hidden), std::move(tape.logits)};
}

template <typename T>
void backward(const ModelParams<T>& p, const ForwardTape<T>& tape,
              const Matrix<T>& d_logits, const Matrix<T>* d_hidden,
              ModelParams<T>& grads, Matrix<T>* d_relay) {
  const ModelConfig& cfg = p.config;
  const Eigen::Index L = cfg.seq_len, hd = cfg.head_dim;
  const int batch = tape.batch;

  // Output head.
  Matrix<T> dh;
  if (cfg.tie_embeddings) {
    dh.noalias() = d_logits * p.embedding;
    grads.embedding.noalias() += d_logits.transpose() * tape.hidden;
  } else {
    dh.noalias() = d_logits * p.unembedding.transpose();
    grads.unembedding.noalias() += tape.hidden.transpose() * d_logits;
  }
  if (d_hidden) dh += *d_hidden;
  Matrix<T> dx = layer_norm_backward(dh, tape.final_norm, p.final_norm_scale,
                                     grads.final_norm_scale, grads.final_norm_shift);

  const Rotary<T> rot = make_rotary<T>(cfg);
  const T att_scale = T(1) / std::sqrt(static_cast<T>(hd));

  for (int l = cfg.n_layers - 1; l >= 0; --l) {
    const auto& W = p.layers[l];
    auto& G = grads.layers[l];
    const auto& lt = tape.layers[l];

    // MLP branch.
    Matrix<T> d_mlp = dx;
    if (lt.mlp_out_keep.size()) d_mlp.array() *= lt.mlp_out_keep.array();
    G.b2 += d_mlp.colwise().sum();
    G.w2.noalias() += lt.act.transpose() * d_mlp;
    Matrix<T> d_pre = d_mlp * W.w2.transpose();
    d_pre.array() *= (lt.pre_act.array() > T(0)).template cast<T>();
    G.b1 += d_pre.colwise().sum();
    G.w1.noalias() += lt.mlp_in.transpose() * d_pre;
    Matrix<T> d_mlp_in = d_pre * W.w1.transpose();
    Matrix<T> d_mid = dx + layer_norm_backward(d_mlp_in, lt.mlp_norm, W.mlp_norm_scale,
                                               G.mlp_norm_scale, G.mlp_norm_shift);

    // Attention branch.
    Matrix<T> d_attn = d_mid;
    if (lt.attn_out_keep.size()) d_attn.array() *= lt.attn_out_keep.array();
    G.wo.noalias() += lt.context.transpose() * d_attn;
    Matrix<T> d_ctx = d_attn * W.wo.transpose();

    const Eigen::Index n = d_ctx.rows();
    Matrix<T> dq = Matrix<T>::Zero(n, cfg.d_model);
    Matrix<T> dk = Matrix<T>::Zero(n, cfg.d_model);
    Matrix<T> dv = Matrix<T>::Zero(n, cfg.d_model);
    for (int b = 0; b < batch; ++b) {
      for (int h = 0; h < cfg.n_heads; ++h) {
        const Eigen::Index r0 = b * L, c0 = h * hd;
        const Eigen::Index p0 = (static_cast<Eigen::Index>(b) * cfg.n_heads + h) * L;
        const auto P = lt.probs.middleRows(p0, L);
        const auto dC = d_ctx.block(r0, c0, L, hd);
        Matrix<T> dP = dC * lt.v.block(r0, c0, L, hd).transpose();
        if (lt.probs_keep.size()) {
          Matrix<T> Pd = P.cwiseProduct(lt.probs_keep.middleRows(p0, L));
          dv.block(r0, c0, L, hd).noalias() += Pd.transpose() * dC;
          dP.array() *= lt.probs_keep.middleRows(p0, L).array();
        } else {
          dv.block(r0, c0, L, hd).noalias() += P.transpose() * dC;
        }
        Column<T> inner = (dP.array() * P.array()).rowwise().sum();
        Matrix<T> dS = (P.array() * (dP.array().colwise() - inner.array())).matrix() * att_scale;
        dq.block(r0, c0, L, hd).noalias() += dS * lt.k.block(r0, c0, L, hd);
        dk.block(r0, c0, L, hd).noalias() += dS.transpose() * lt.q.block(r0, c0, L, hd);
      }
    }
    rotate(dq, rot, cfg, -1);
    rotate(dk, rot, cfg, -1);
    G.wq.noalias() += lt.attn_in.transpose() * dq;
    G.wk.noalias() += lt.attn_in.transpose() * dk;
    G.wv.noalias() += lt.attn_in.transpose() * dv;
    Matrix<T> d_attn_in = dq * W.wq.transpose();
    d_attn_in.noalias() += dk * W.wk.transpose();
    d_attn_in.noalias() += dv * W.wv.transpose();
    dx = d_mid + layer_norm_backward(d_attn_in, lt.attn_norm, W.attn_norm_scale,
                                     G.attn_norm_scale, G.attn_norm_shift);
  }

  for (Eigen::Index r = 0; r < dx.rows(); ++r) grads.embedding.row(tape.tokens[r]) += dx.row(r);

  if (tape.has_relay) {
    Matrix<T> dr = layer_norm_backward(dx, tape.relay_norm, p.relay_norm_scale,
                                       grads.relay_norm_scale, grads.relay_norm_shift);
    if (d_relay) *d_relay = std::move(dr);
  }
}

#define RELAY_INSTANTIATE(T)                                                                    \
  template Matrix<T> relay_transform<T>(const Matrix<T>&, const ModelParams<T>&);               \
  template ForwardTape<T> forward_tape<T>(const ModelParams<T>&, std::span<const int>,          \
                                          const Matrix<T>*, bool, Rng*);                        \
  template StepOutput<T> forward<T>(const ModelParams<T>&, std::span<const int>,                \
                                    const Matrix<T>*, bool, Rng*);                              \
  template void backward<T>(const ModelParams<T>&, const ForwardTape<T>&, const Matrix<T>&,     \
                            const Matrix<T>*, ModelParams<T>&, Matrix<T>*);                     \
  template std::uint64_t relu_signature<T>(const ForwardTape<T>&, std::uint64_t);

RELAY_INSTANTIATE(float)
RELAY_INSTANTIATE(double)
#undef RELAY_INSTANTIATE

}  // namespace relay
