#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include <Eigen/Dense>

#include "relay/rng.hpp"

namespace relay {

/// Token ids shared by the model, the diffusion loop and the data pipeline.
namespace token {
inline constexpr int kBlank = 0;  // digits 1-9 map to themselves
inline constexpr int kMask = 10;
inline constexpr int kPad = 11;
inline constexpr int kFirstReserved = 12;
}  // namespace token

enum class GammaInit { Ones, Zeros };

struct ModelConfig {
  int n_layers = 4;
  int d_model = 384;
  int d_ff = 1536;
  int n_heads = 6;
  int head_dim = 64;
  int rotary_width = 64;
  double dropout = 0.1;
  int vocab_size = 17;
  bool tie_embeddings = false;
  bool relay_enabled = true;
  GammaInit relay_gamma_init = GammaInit::Ones;
  int seq_len = 81;
  // Artifact-level knobs; not part of the published architecture.
  double rope_base = 10000.0;
  double init_std = 0.02;

  /// Throws ConfigError when dimensions disagree.
  void validate() const;

  bool operator==(const ModelConfig&) const = default;
};

/// Closed-form count of learnable scalars allocated by build_model.
std::int64_t parameter_count(const ModelConfig& cfg);

template <typename T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using RowVector = Eigen::Matrix<T, 1, Eigen::Dynamic>;

template <typename T>
struct LayerParams {
  RowVector<T> attn_norm_scale, attn_norm_shift;
  Matrix<T> wq, wk, wv, wo;  // d_model x d_model, bias-free
  RowVector<T> mlp_norm_scale, mlp_norm_shift;
  Matrix<T> w1;  // d_model x d_ff
  RowVector<T> b1;
  Matrix<T> w2;  // d_ff x d_model
  RowVector<T> b2;
};

/// All learnable arrays. The same struct doubles as a gradient accumulator.
template <typename T>
struct ModelParams {
  ModelConfig config;
  Matrix<T> embedding;  // vocab x d_model
  std::vector<LayerParams<T>> layers;
  RowVector<T> final_norm_scale, final_norm_shift;
  RowVector<T> relay_norm_scale, relay_norm_shift;  // empty unless relay_enabled
  Matrix<T> unembedding;  // d_model x vocab; empty when tied (E^T is used)
};

/// Named, shape-annotated view of one parameter array.
template <typename T>
struct TensorView {
  std::string name;
  T* data = nullptr;
  Eigen::Index rows = 0;
  Eigen::Index cols = 0;
  Eigen::Index size() const { return rows * cols; }
};

/// Every allocated array of `p` in a fixed canonical order.
template <typename T>
std::vector<TensorView<T>> tensors(ModelParams<T>& p);
template <typename T>
std::vector<TensorView<const T>> tensors(const ModelParams<T>& p);

template <typename T>
std::int64_t allocated_scalars(const ModelParams<T>& p);

/// Truncated-normal projections/embeddings, unit norm scales, zero shifts and
/// biases. Relay-norm scale follows `relay_gamma_init`.
template <typename T>
ModelParams<T> build_model(const ModelConfig& cfg, std::uint64_t seed);

template <typename T>
ModelParams<T> zeros_like(const ModelParams<T>& p);

template <typename To, typename From>
ModelParams<To> cast_params(const ModelParams<From>& p) {
  ModelParams<To> out = zeros_like(build_model<To>(p.config, 0));
  auto dst = tensors(out);
  auto src = tensors(p);
  for (std::size_t i = 0; i < dst.size(); ++i)
    for (Eigen::Index k = 0; k < dst[i].size(); ++k) dst[i].data[k] = static_cast<To>(src[i].data[k]);
  return out;
}

/// Per-position affine normalization of the relay state (eps 1e-5) with the
/// relay-norm scale and shift. Throws ConfigError when relay is disabled.
template <typename T>
Matrix<T> relay_transform(const Matrix<T>& h, const ModelParams<T>& p);

template <typename T>
struct LayerNormTape {
  Matrix<T> normalized;  // (x - mean) * rstd
  Eigen::Matrix<T, Eigen::Dynamic, 1> rstd;
};

template <typename T>
struct LayerTape {
  Matrix<T> input;
  LayerNormTape<T> attn_norm;
  Matrix<T> attn_in;
  Matrix<T> q, k, v;   // q and k after rotary rotation
  Matrix<T> probs;     // (batch * heads * seq) x seq softmax weights
  Matrix<T> probs_keep;  // dropout keep-scale, empty when inactive
  Matrix<T> context;
  Matrix<T> attn_out_keep;
  Matrix<T> mid;
  LayerNormTape<T> mlp_norm;
  Matrix<T> mlp_in;
  Matrix<T> pre_act;
  Matrix<T> act;
  Matrix<T> mlp_out_keep;
};

/// Activations retained by one forward pass for the backward pass.
template <typename T>
struct ForwardTape {
  std::vector<int> tokens;
  int batch = 0;
  bool has_relay = false;
  LayerNormTape<T> relay_norm;
  std::vector<LayerTape<T>> layers;
  Matrix<T> final_in;
  LayerNormTape<T> final_norm;
  Matrix<T> hidden;  // relay state handed to the next step
  Matrix<T> logits;  // (batch * seq) x vocab
};

template <typename T>
struct StepOutput {
  Matrix<T> hidden;
  Matrix<T> logits;
};

/// One denoising pass over `tokens` (batch * seq_len ids). `relay` is the
/// incoming relay state (batch * seq_len x d_model) or null to skip injection.
/// Dropout is active iff `train` and is drawn from `rng`.
template <typename T>
ForwardTape<T> forward_tape(const ModelParams<T>& p, std::span<const int> tokens,
                            const Matrix<T>* relay, bool train, Rng* rng);

template <typename T>
StepOutput<T> forward(const ModelParams<T>& p, std::span<const int> tokens,
                      const Matrix<T>* relay, bool train, Rng* rng);

/// Hash of the sign pattern of every MLP pre-activation in `tape`. Two
/// forwards with equal signatures lie on the same linear piece of each ReLU.
template <typename T>
std::uint64_t relu_signature(const ForwardTape<T>& tape, std::uint64_t seed = 0);

/// Accumulates parameter gradients into `grads` given the loss gradient with
/// respect to the logits and, optionally, with respect to the emitted relay
/// state. Writes the gradient with respect to the incoming relay state to
/// `d_relay` when both it and a relay input exist.
template <typename T>
void backward(const ModelParams<T>& p, const ForwardTape<T>& tape,
              const Matrix<T>& d_logits, const Matrix<T>* d_hidden,
              ModelParams<T>& grads, Matrix<T>* d_relay);

}  // namespace relay
