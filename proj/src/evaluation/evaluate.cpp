#include <algorithm>
#include <array>
#include <atomic>
#include <exception>
#include <mutex>
#include <thread>

#include "relay/error.hpp"
#include "relay/evaluation.hpp"

namespace relay {

std::string_view to_string(Slice s) {
  return s == Slice::Unfiltered ? "unfiltered" : "deduction_only";
}

Slice slice_from_string(std::string_view s) {
  if (s == "unfiltered") return Slice::Unfiltered;
  if (s == "deduction_only") return Slice::DeductionOnly;
  throw FormatError("unknown slice '" + std::string(s) + "'");
}

int rollout_violations(std::span<const GenerationStep> trace, const sudoku::Board& clues) {
  sudoku::Board board = clues;
  std::array<bool, sudoku::kCells> occupied{};
  for (int i = 0; i < sudoku::kCells; ++i) occupied[i] = clues[i] != 0;
  int total = 0;
  for (const auto& step : trace) {
    for (const auto& c : step.committed) {
      if (c.position < 0 || c.position >= sudoku::kCells)
        throw ConsistencyError("commit outside the board");
      if (occupied[c.position])
        throw ConsistencyError("commit to occupied cell " + std::to_string(c.position));
      if (c.value < 0 || c.value > 9) throw ConsistencyError("commit of a non-digit value");
      if (c.value != 0) {
        for (int u : sudoku::units_of(c.position)) {
          for (int cell : sudoku::units()[u]) {
            if (board[cell] == c.value) {
              ++total;
              break;
            }
          }
        }
      }
      board[c.position] = static_cast<std::uint8_t>(c.value);
      occupied[c.position] = true;
    }
  }
  return total;
}

PuzzleOutcome score_generation(const GenerationResult& g, const sudoku::PuzzleRecord& r) {
  const sudoku::Board final_board = to_board(g.tokens);
  PuzzleOutcome o;
  o.exact = final_board == r.solution;
  o.legal_final = sudoku::check_legality(final_board).legal;
  o.nfe = g.nfe;
  o.violations = rollout_violations(g.trace, r.puzzle);
  return o;
}

EvalReport evaluate_set(const Denoiser& model, const std::vector<sudoku::PuzzleRecord>& records,
                        double tau, Slice slice, const EvalOptions& opts) {
  if (records.empty()) throw EmptySetError("evaluate_set: no records");
  std::vector<PuzzleOutcome> outcomes(records.size());
  const int workers = std::max(1, std::min<int>(opts.workers, static_cast<int>(records.size())));

  auto run = [&](std::size_t i) {
    outcomes[i] = score_generation(generate(model, records[i], tau, opts.generate), records[i]);
  };
  if (workers == 1) {
    for (std::size_t i = 0; i < records.size(); ++i) run(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < records.size(); i = next++) {
          try {
            run(i);
          } catch (...) {
            std::lock_guard lock(failure_mutex);
            if (!failure) failure = std::current_exception();
          }
        }
      });
    }
    for (auto& t : pool) t.join();
    if (failure) std::rethrow_exception(failure);
  }

  EvalReport rep;
  rep.slice = slice;
  rep.tau = tau;
  rep.n = static_cast<int>(records.size());
  double exact = 0, nfe = 0, legal = 0, viol = 0;
  for (const auto& o : outcomes) {
    exact += o.exact;
    nfe += o.nfe;
    legal += o.legal_final;
    viol += o.violations;
  }
  rep.exact_match = exact / rep.n;
  rep.mean_nfe = nfe / rep.n;
  rep.legal_final_rate = legal / rep.n;
  rep.mean_rollout_violations = viol / rep.n;
  return rep;
}

void FrontierTable::add(FrontierRow row) {
  for (const auto& r : rows) {
    if (r.objective == row.objective && r.tied == row.tied && r.tau == row.tau &&
        r.report.slice == row.report.slice)
      throw InvariantError("frontier table already has this (objective, tied, tau, slice)");
  }
  rows.push_back(std::move(row));
}

FrontierTable sweep(const Denoiser& model, std::span<const SliceRecords> slices,
                    std::span<const double> taus, const RunLabel& label, const EvalOptions& opts) {
  if (taus.empty()) throw InputError("sweep: no thresholds");
  for (double t : taus)
    if (!(t > 0.0)) throw RangeError("sweep: thresholds must be positive");
  std::vector<double> sorted(taus.begin(), taus.end());
  std::sort(sorted.begin(), sorted.end());

  FrontierTable table;
  for (double tau : sorted) {
    for (const auto& s : slices) {
      FrontierRow row;
      row.objective = label.objective;
      row.tied = label.tied;
      row.tau = tau;
      row.seed = label.seed;
      row.report = evaluate_set(model, *s.records, tau, s.slice, opts);
      table.add(std::move(row));
    }
  }
  return table;
}

}  // namespace relay
