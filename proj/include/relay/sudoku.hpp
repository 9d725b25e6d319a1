#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "relay/rng.hpp"

namespace relay::sudoku {

inline constexpr int kCells = 81;
inline constexpr int kUnits = 27;

/// 81 cells in row-major order; 0 is blank, 1-9 are digits.
using Board = std::array<std::uint8_t, kCells>;

constexpr int row_of(int cell) { return cell / 9; }
constexpr int col_of(int cell) { return cell % 9; }
constexpr int box_of(int cell) { return 3 * (row_of(cell) / 3) + col_of(cell) / 3; }

/// Cells of unit `u`: rows 0-8, then columns 9-17, then boxes 18-26.
const std::array<std::array<int, 9>, kUnits>& units();
/// The three unit indices (row, column, box) containing `cell`.
std::array<int, 3> units_of(int cell);

/// Set of digits 1-9 stored as a bitmask (bit d for digit d).
class DigitSet {
 public:
  constexpr DigitSet() = default;
  constexpr explicit DigitSet(std::uint16_t bits) : bits_(bits & kAll) {}
  static constexpr DigitSet all() { return DigitSet(kAll); }

  constexpr bool contains(int d) const { return (bits_ >> d) & 1U; }
  constexpr void insert(int d) { bits_ |= static_cast<std::uint16_t>(1U << d); }
  constexpr void erase(int d) { bits_ &= static_cast<std::uint16_t>(~(1U << d)); }
  constexpr int size() const { return std::popcount(bits_); }
  constexpr bool empty() const { return bits_ == 0; }
  constexpr std::uint16_t bits() const { return bits_; }
  /// Lowest digit in the set, 0 when empty.
  constexpr int first() const { return bits_ ? std::countr_zero(bits_) : 0; }
  std::vector<int> digits() const;

  constexpr bool operator==(const DigitSet&) const = default;

 private:
  static constexpr std::uint16_t kAll = 0x3FE;
  std::uint16_t bits_ = 0;
};

struct LegalityReport {
  bool legal = true;
  int violations = 0;
};

enum class StrategyTag {
  NakedSingle,
  HiddenSingle,
  NakedPair,
  HiddenPair,
  NakedTriple,
  HiddenTriple,
  NakedQuad,
  HiddenQuad,
  XWing,
  Swordfish,
  Jellyfish,
  Backtracking,
};

enum class Tier { Basic, Advanced, Master, Fallback };

Tier tier_of(StrategyTag tag);
std::string_view to_string(StrategyTag tag);
/// Throws FormatError for unknown names.
StrategyTag strategy_from_string(std::string_view name);

struct Annotation {
  std::vector<Board> trajectory;
  int num_steps = 0;
  std::set<StrategyTag> strategies_used;
};

struct PuzzleRecord {
  Board puzzle{};
  Board solution{};
  std::vector<int> clue_positions;
  std::optional<Annotation> annotation;
};

struct SolveResult {
  Board solution{};
  Annotation annotation;
};

// Board-level operations.

/// Counts (unit, digit) duplicates over the 27 units: k copies of a digit in
/// one unit contribute k - 1.
LegalityReport check_legality(const Board& b);
/// Candidate digits for every blank cell. Throws PreconditionError when `b` is
/// illegal.
std::map<int, DigitSet> candidates(const Board& b);
int filled_count(const Board& b);
bool is_complete(const Board& b);

/// Number of completions of `b`, stopping once `limit` are found. The first
/// completion found is written to `first` when provided.
int count_solutions(const Board& b, int limit, Board* first = nullptr);

/// Human-style solve. Strategies run cheapest first; when none progresses a
/// single placement is taken from the unique completion and tagged
/// Backtracking.
SolveResult solve_with_trace(const Board& puzzle);

// Record ingestion.

Board parse_board(std::string_view text);
std::string board_to_string(const Board& b);
PuzzleRecord parse_record(std::string_view line);
std::string serialize_record(const PuzzleRecord& r);

/// Result of reading a puzzle file: one entry per data line.
struct PuzzleFile {
  std::vector<PuzzleRecord> records;
  /// Data-line index of each record (comments and blank lines excluded).
  std::vector<int> line_index;
  /// Data lines that failed to parse, with the reason.
  std::vector<std::pair<int, std::string>> skipped;
};

/// Reads `<puzzle81>,<solution81>` lines. Malformed lines are collected in
/// `skipped` instead of aborting the read.
PuzzleFile read_puzzle_file(const std::string& path);

/// Keeps records whose trace used an Advanced or Master strategy and never
/// fell back to backtracking, in input order, stopping after `n`.
std::vector<PuzzleRecord> cohort_filter(const std::vector<PuzzleRecord>& records,
                                        std::size_t n);
bool is_deduction_only(const Annotation& a);
/// True when every strategy in the trace is Basic.
bool is_basic_only(const Annotation& a);

// Annotation sidecar (JSON lines).

std::string annotation_to_json(int index, const Annotation& a, bool with_trajectory);
/// Returns the line index and annotation encoded in one sidecar line.
std::pair<int, Annotation> annotation_from_json(std::string_view line);
/// Attaches sidecar annotations (by data-line index) to records.
void attach_annotations(std::vector<PuzzleRecord>& records,
                        const std::vector<int>& line_index,
                        const std::string& sidecar_path);

// Synthetic puzzles.

/// Uniformly shuffled complete grid from randomized backtracking.
Board random_solution(Rng& rng);

struct PuzzleShape {
  int target_clues = 30;  // digging stops here or when no cell can go
  bool basic_only = false;  // keep the puzzle solvable by singles alone
};

/// Removes clues from a random solution in random order while the puzzle keeps
/// a unique completion (and, with `basic_only`, a singles-only solve path).
PuzzleRecord make_puzzle(Rng& rng, const PuzzleShape& shape);

}  // namespace relay::sudoku
