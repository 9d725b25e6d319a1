#include <algorithm>
#include <numeric>

#include "relay/error.hpp"
#include "relay/sudoku.hpp"

namespace relay::sudoku {

namespace {

bool fill(Board& b, int cell, Rng& rng) {
  if (cell == kCells) return true;
  if (b[cell] != 0) return fill(b, cell + 1, rng);
  std::array<int, 9> digits;
  std::iota(digits.begin(), digits.end(), 1);
  for (int i = 8; i > 0; --i) std::swap(digits[i], digits[rng.below(i + 1)]);
  for (int d : digits) {
    bool ok = true;
    for (int u : units_of(cell))
      for (int c : units()[u]) ok = ok && b[c] != d;
    if (!ok) continue;
    b[cell] = static_cast<std::uint8_t>(d);
    if (fill(b, cell + 1, rng)) return true;
    b[cell] = 0;
  }
  return false;
}

// Naked and hidden singles until stuck; true when the board completes.
bool singles_solve(Board b) {
  for (;;) {
    if (is_complete(b)) return true;
    const auto cand = candidates(b);
    bool placed = false;
    for (const auto& [cell, set] : cand) {
      if (set.empty()) return false;
      if (set.size() == 1) {
        b[cell] = static_cast<std::uint8_t>(set.first());
        placed = true;
        break;
      }
    }
    if (placed) continue;
    for (const auto& unit : units()) {
      for (int d = 1; d <= 9 && !placed; ++d) {
        int where = -1, count = 0;
        for (int c : unit) {
          auto it = cand.find(c);
          if (it != cand.end() && it->second.contains(d)) {
            where = c;
            ++count;
          }
        }
        if (count == 1) {
          b[where] = static_cast<std::uint8_t>(d);
          placed = true;
        }
      }
      if (placed) break;
    }
    if (!placed) return false;
  }
}

}  // namespace

Board random_solution(Rng& rng) {
  Board b{};
  fill(b, 0, rng);
  return b;
}

PuzzleRecord make_puzzle(Rng& rng, const PuzzleShape& shape) {
  if (shape.target_clues < 17 || shape.target_clues > kCells)
    throw RangeError("make_puzzle: target_clues must lie in [17, 81]");
  PuzzleRecord r;
  r.solution = random_solution(rng);
  r.puzzle = r.solution;
  std::array<int, kCells> order;
  std::iota(order.begin(), order.end(), 0);
  for (int i = kCells - 1; i > 0; --i) std::swap(order[i], order[rng.below(i + 1)]);
  int clues = kCells;
  for (int cell : order) {
    if (clues <= shape.target_clues) break;
    const std::uint8_t keep = r.puzzle[cell];
    r.puzzle[cell] = 0;
    const bool ok = shape.basic_only ? singles_solve(r.puzzle) : count_solutions(r.puzzle, 2) == 1;
    if (ok) {
      --clues;
    } else {
      r.puzzle[cell] = keep;
    }
  }
  for (int i = 0; i < kCells; ++i)
    if (r.puzzle[i]) r.clue_positions.push_back(i);
  return r;
}

}  // namespace relay::sudoku
