#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "relay/diffusion.hpp"
#include "relay/sudoku.hpp"

namespace relay {

enum class Slice { Unfiltered, DeductionOnly };

std::string_view to_string(Slice s);
Slice slice_from_string(std::string_view s);

struct EvalReport {
  Slice slice = Slice::Unfiltered;
  double tau = 0.0;
  int n = 0;
  double exact_match = 0.0;
  double mean_nfe = 0.0;
  double legal_final_rate = 0.0;
  double mean_rollout_violations = 0.0;

  bool operator==(const EvalReport&) const = default;
};

/// Per-puzzle outcome that evaluate_set aggregates.
struct PuzzleOutcome {
  bool exact = false;
  bool legal_final = false;
  int nfe = 0;
  int violations = 0;
};

struct EvalOptions {
  int workers = 1;
  GenerateOptions generate;
};

/// Replays the commits of `trace` onto `clues`; each committed digit adds one
/// violation per unit (row, column, box) that already holds that digit.
/// Throws ConsistencyError when a commit targets a clue or an already
/// committed cell.
int rollout_violations(std::span<const GenerationStep> trace, const sudoku::Board& clues);

PuzzleOutcome score_generation(const GenerationResult& g, const sudoku::PuzzleRecord& r);

/// Decodes every record at threshold `tau`; order-preserving across workers.
EvalReport evaluate_set(const Denoiser& model, const std::vector<sudoku::PuzzleRecord>& records,
                        double tau, Slice slice, const EvalOptions& opts = {});

struct FrontierRow {
  std::string objective;
  bool tied = false;
  double tau = 0.0;
  EvalReport report;
  std::uint64_t seed = 0;

  bool operator==(const FrontierRow&) const = default;
};

struct FrontierTable {
  std::vector<FrontierRow> rows;

  /// Throws InvariantError if (objective, tied, tau, slice) is already present.
  void add(FrontierRow row);
};

struct RunLabel {
  std::string objective;
  bool tied = false;
  std::uint64_t seed = 0;
};

struct SliceRecords {
  Slice slice = Slice::Unfiltered;
  const std::vector<sudoku::PuzzleRecord>* records = nullptr;
};

/// One evaluate_set per tau per slice; rows sorted by tau, then slice.
FrontierTable sweep(const Denoiser& model, std::span<const SliceRecords> slices,
                    std::span<const double> taus, const RunLabel& label,
                    const EvalOptions& opts = {});

inline constexpr double kSweepTaus[] = {0.05, 0.10, 0.15, 0.20, 0.25};

enum class ReportFormat { Csv, Json };

/// Byte-stable: fixed column order, floats printed with six decimals.
std::string format_report(const FrontierTable& table, ReportFormat format);
void emit_report(const FrontierTable& table, const std::string& path, ReportFormat format);
FrontierTable parse_report_csv(const std::string& text);
/// `{objective}_{tied|untied}_{slice}.{csv|json}`
std::string report_filename(const std::string& objective, bool tied, Slice slice,
                            ReportFormat format);

struct MeanSd {
  double mean = 0.0;
  double sd = 0.0;  // sample standard deviation, n - 1 denominator
};

MeanSd mean_sd(std::span<const double> values);
/// "mean ± sd" with `decimals` places.
std::string format_mean_sd(const MeanSd& m, int decimals = 2);

}  // namespace relay
