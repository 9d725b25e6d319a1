#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "relay/model.hpp"
#include "relay/rng.hpp"
#include "relay/sudoku.hpp"

namespace relay {

/// Partially masked sequence. Clue positions hold fixed tokens and are never
/// masked; every other position is either MASK or a committed token.
struct MaskedSequence {
  std::vector<int> tokens;
  std::vector<std::uint8_t> masked;
  std::vector<std::uint8_t> clue;

  int size() const { return static_cast<int>(tokens.size()); }
  int masked_count() const;
  std::vector<int> masked_positions() const;
  /// Throws InvariantError if the mask flags and MASK tokens disagree or a
  /// clue is masked.
  void check_invariants() const;
};

/// Clues kept, every other position masked.
MaskedSequence fully_masked(std::span<const int> x0, std::span<const std::uint8_t> clue);

/// Masks each non-clue position of `x0` independently with probability `t`.
MaskedSequence mask_uniform(std::span<const int> x0, double t,
                            std::span<const std::uint8_t> clue, Rng& rng);

/// Mean cross-entropy of `x0` over `positions`, reading logits rows
/// `row0 + position`. When `d_logits` is given, adds `grad_scale` times the
/// gradient of the returned value into the same rows. Empty `positions` gives 0.
template <typename T>
double masked_cross_entropy(const Matrix<T>& logits, Eigen::Index row0, std::span<const int> x0,
                            std::span<const int> positions, Matrix<T>* d_logits = nullptr,
                            double grad_scale = 1.0);

/// Masked-diffusion loss: (1/t) times the per-token mean cross-entropy.
template <typename T>
double mdm_loss(const Matrix<T>& logits, std::span<const int> x0, std::span<const int> masked,
                double t);

/// Rollout loss: per-token mean cross-entropy with no time weight.
template <typename T>
double rollout_step_loss(const Matrix<T>& logits, std::span<const int> x0,
                         std::span<const int> masked);

/// How the softmax normalizer treats non-decodable ids (MASK, PAD, reserved).
enum class Normalizer { FullVocabulary, DecodableOnly };

/// Ids a decoded position may take: blank and the nine digits.
inline constexpr int kDecodableIds = 10;

struct PositionConfidence {
  int position = 0;
  double confidence = 0.0;
};

/// Best decodable id at one row of `logits` and its softmax probability.
template <typename T>
std::pair<int, double> decode_position(const Matrix<T>& logits, Eigen::Index row,
                                       Normalizer normalizer = Normalizer::FullVocabulary);

struct StepDecision {
  std::vector<PositionConfidence> confidences;
  std::vector<int> selected;  // in commit order
  bool fallback_used = false;
};

/// Sorts ascending by 1 - c (ties: lower position), keeps the longest prefix
/// whose running sum of 1 - c stays strictly below `tau`, and falls back to
/// the single most confident position when that prefix is empty.
StepDecision select_positions(std::span<const PositionConfidence> confidences, double tau);

/// Replaces the tokens at `selected` by `values[position]` and unmasks them.
MaskedSequence commit(const MaskedSequence& s, std::span<const int> selected,
                      std::span<const int> values);

/// Model call used by the decoding loop (eval mode, no dropout).
struct Denoiser {
  std::function<StepOutput<float>(std::span<const int> tokens, const Matrix<float>* relay)> step;
  /// Width of the relay state; 0 when the model carries none.
  int relay_dim = 0;
};

/// Wraps trained parameters. `use_relay` selects whether the relay state is
/// carried between passes.
Denoiser make_denoiser(const ModelParams<float>& p, bool use_relay);

struct CommittedToken {
  int position = 0;
  int value = 0;
};

struct GenerationStep {
  StepDecision decision;
  std::vector<CommittedToken> committed;
};

struct GenerationResult {
  std::vector<int> tokens;
  int nfe = 0;
  std::vector<GenerationStep> trace;
};

struct GenerateOptions {
  Normalizer normalizer = Normalizer::FullVocabulary;
};

/// Confidence-threshold decoding from `start` until nothing is masked, with
/// argmax commits and the relay state carried between passes.
GenerationResult generate(const Denoiser& model, const MaskedSequence& start, double tau,
                          const GenerateOptions& opts = {});

/// Sudoku front end: clues fixed, the other cells masked.
MaskedSequence puzzle_sequence(const sudoku::PuzzleRecord& r);
GenerationResult generate(const Denoiser& model, const sudoku::PuzzleRecord& r, double tau,
                          const GenerateOptions& opts = {});
sudoku::Board to_board(std::span<const int> tokens);

}  // namespace relay
