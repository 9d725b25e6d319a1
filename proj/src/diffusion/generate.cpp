#include "relay/diffusion.hpp"
#include "relay/error.hpp"

namespace relay {

Denoiser make_denoiser(const ModelParams<float>& p, bool use_relay) {
  Denoiser d;
  d.step = [&p](std::span<const int> tokens, const Matrix<float>* relay) {
    return forward<float>(p, tokens, relay, false, nullptr);
  };
  d.relay_dim = use_relay && p.config.relay_enabled ? p.config.d_model : 0;
  return d;
}

GenerationResult generate(const Denoiser& model, const MaskedSequence& start, double tau,
                          const GenerateOptions& opts) {
  if (!(tau > 0.0)) throw RangeError("generate: tau must be positive");
  start.check_invariants();

  GenerationResult out;
  MaskedSequence seq = start;
  Matrix<float> relay;
  if (model.relay_dim > 0) relay = Matrix<float>::Zero(seq.size(), model.relay_dim);

  while (seq.masked_count() > 0) {
    StepOutput<float> step = model.step(seq.tokens, model.relay_dim > 0 ? &relay : nullptr);
    ++out.nfe;

    std::vector<PositionConfidence> conf;
    std::vector<int> values(seq.tokens.size(), token::kMask);
    for (int pos : seq.masked_positions()) {
      const auto [value, c] = decode_position(step.logits, pos, opts.normalizer);
      conf.push_back({pos, c});
      values[pos] = value;
    }
    GenerationStep record;
    record.decision = select_positions(conf, tau);
    for (int pos : record.decision.selected) record.committed.push_back({pos, values[pos]});
    seq = commit(seq, record.decision.selected, values);
    out.trace.push_back(std::move(record));
    if (model.relay_dim > 0) relay = std::move(step.hidden);
  }
  out.tokens = seq.tokens;
  return out;
}

MaskedSequence puzzle_sequence(const sudoku::PuzzleRecord& r) {
  std::vector<int> x0(sudoku::kCells);
  std::vector<std::uint8_t> clue(sudoku::kCells);
  for (int i = 0; i < sudoku::kCells; ++i) {
    x0[i] = r.solution[i];
    clue[i] = r.puzzle[i] != 0;
  }
  return fully_masked(x0, clue);
}

GenerationResult generate(const Denoiser& model, const sudoku::PuzzleRecord& r, double tau,
                          const GenerateOptions& opts) {
  return generate(model, puzzle_sequence(r), tau, opts);
}

sudoku::Board to_board(std::span<const int> tokens) {
  if (tokens.size() != static_cast<std::size_t>(sudoku::kCells))
    throw InputError("to_board: expected 81 tokens");
  sudoku::Board b{};
  for (int i = 0; i < sudoku::kCells; ++i)
    b[i] = static_cast<std::uint8_t>(tokens[i] >= 0 && tokens[i] <= 9 ? tokens[i] : 0);
  return b;
}

}  // namespace relay
