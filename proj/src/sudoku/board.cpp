#include <algorithm>
#include <string>

#include "relay/error.hpp"
#include "relay/sudoku.hpp"

namespace relay::sudoku {

namespace {

std::array<std::array<int, 9>, kUnits> build_units() {
  std::array<std::array<int, 9>, kUnits> u{};
  for (int r = 0; r < 9; ++r)
    for (int c = 0; c < 9; ++c) u[r][c] = 9 * r + c;
  for (int c = 0; c < 9; ++c)
    for (int r = 0; r < 9; ++r) u[9 + c][r] = 9 * r + c;
  for (int b = 0; b < 9; ++b) {
    const int r0 = 3 * (b / 3), c0 = 3 * (b % 3);
    for (int k = 0; k < 9; ++k) u[18 + b][k] = 9 * (r0 + k / 3) + c0 + k % 3;
  }
  return u;
}

// Digits already present in each unit of `b`.
std::array<DigitSet, kUnits> used_digits(const Board& b) {
  std::array<DigitSet, kUnits> used{};
  for (int i = 0; i < kCells; ++i) {
    if (b[i] == 0) continue;
    for (int u : units_of(i)) used[u].insert(b[i]);
  }
  return used;
}

int count_rec(Board& b, int limit, Board* first, int found) {
  // Most-constrained blank cell first.
  int best = -1;
  DigitSet best_set;
  const auto used = used_digits(b);
  for (int i = 0; i < kCells; ++i) {
    if (b[i] != 0) continue;
    const auto u = units_of(i);
    DigitSet s(static_cast<std::uint16_t>(
        DigitSet::all().bits() &
        ~(used[u[0]].bits() | used[u[1]].bits() | used[u[2]].bits())));
    if (best < 0 || s.size() < best_set.size()) {
      best = i;
      best_set = s;
      if (s.size() <= 1) break;
    }
  }
  if (best < 0) {
    if (found == 0 && first) *first = b;
    return found + 1;
  }
  for (int d : best_set.digits()) {
    b[best] = static_cast<std::uint8_t>(d);
    found = count_rec(b, limit, first, found);
    b[best] = 0;
    if (found >= limit) break;
  }
  return found;
}

}  // namespace

const std::array<std::array<int, 9>, kUnits>& units() {
  static const auto u = build_units();
  return u;
}

std::array<int, 3> units_of(int cell) {
  return {row_of(cell), 9 + col_of(cell), 18 + box_of(cell)};
}

std::vector<int> DigitSet::digits() const {
  std::vector<int> out;
  for (int d = 1; d <= 9; ++d)
    if (contains(d)) out.push_back(d);
  return out;
}

LegalityReport check_legality(const Board& b) {
  LegalityReport rep;
  for (const auto& unit : units()) {
    std::array<int, 10> count{};
    for (int cell : unit) ++count[b[cell]];
    for (int d = 1; d <= 9; ++d)
      if (count[d] > 1) rep.violations += count[d] - 1;
  }
  rep.legal = rep.violations == 0;
  return rep;
}

std::map<int, DigitSet> candidates(const Board& b) {
  if (!check_legality(b).legal)
    throw PreconditionError("candidates: board is not legal");
  const auto used = used_digits(b);
  std::map<int, DigitSet> out;
  for (int i = 0; i < kCells; ++i) {
    if (b[i] != 0) continue;
    const auto u = units_of(i);
    out.emplace(i, DigitSet(static_cast<std::uint16_t>(
                       DigitSet::all().bits() &
                       ~(used[u[0]].bits() | used[u[1]].bits() | used[u[2]].bits()))));
  }
  return out;
}

int filled_count(const Board& b) {
  return static_cast<int>(std::count_if(b.begin(), b.end(), [](auto v) { return v != 0; }));
}

bool is_complete(const Board& b) { return filled_count(b) == kCells; }

int count_solutions(const Board& b, int limit, Board* first) {
  if (limit <= 0) return 0;
  if (!check_legality(b).legal) return 0;
  Board work = b;
  return count_rec(work, limit, first, 0);
}

Board parse_board(std::string_view text) {
  if (text.size() != kCells)
    throw FormatError("board field must have 81 characters, got " +
                      std::to_string(text.size()));
  Board b{};
  for (int i = 0; i < kCells; ++i) {
    const char ch = text[i];
    if (ch == '.' || ch == '0') {
      b[i] = 0;
    } else if (ch >= '1' && ch <= '9') {
      b[i] = static_cast<std::uint8_t>(ch - '0');
    } else {
      throw FormatError(std::string("illegal board character '") + ch + "' at " +
                        std::to_string(i));
    }
  }
  return b;
}

std::string board_to_string(const Board& b) {
  std::string s(kCells, '0');
  for (int i = 0; i < kCells; ++i) s[i] = static_cast<char>('0' + b[i]);
  return s;
}

PuzzleRecord parse_record(std::string_view line) {
  while (!line.empty() && (line.back() == '\r' || line.back() == '\n' || line.back() == ' '))
    line.remove_suffix(1);
  const auto comma = line.find(',');
  if (comma == std::string_view::npos || line.find(',', comma + 1) != std::string_view::npos)
    throw FormatError("record must contain exactly two comma-separated fields");

  PuzzleRecord r;
  r.puzzle = parse_board(line.substr(0, comma));
  r.solution = parse_board(line.substr(comma + 1));

  if (!is_complete(r.solution) || !check_legality(r.solution).legal)
    throw ConsistencyError("solution is not a complete legal board");
  for (int i = 0; i < kCells; ++i) {
    if (r.puzzle[i] == 0) continue;
    if (r.puzzle[i] != r.solution[i])
      throw ConsistencyError("solution contradicts clue at cell " + std::to_string(i));
    r.clue_positions.push_back(i);
  }
  return r;
}

std::string serialize_record(const PuzzleRecord& r) {
  return board_to_string(r.puzzle) + "," + board_to_string(r.solution);
}

}  // namespace relay::sudoku
