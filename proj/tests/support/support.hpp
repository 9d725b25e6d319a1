#pragma once

#include <array>
#include <string>
#include <vector>

#include "relay/rng.hpp"
#include "relay/sudoku.hpp"

namespace relay::testing {

using sudoku::Board;
using sudoku::PuzzleRecord;

/// Plain backtracking over the most constrained cell, written without the
/// library's solver. Stops after `limit` solutions.
int naive_count(Board b, int limit, Board* first = nullptr);

/// For every unit, each cell holding a digit already seen earlier in the same
/// unit counts one.
int brute_violations(const Board& b);

/// Published 17-clue puzzles with unique solutions.
const std::vector<std::string>& seventeen_clue_puzzles();

/// Random symmetry of the grid: digit relabeling, row and column shuffles
/// inside bands and stacks, band and stack shuffles, optional transpose.
struct GridSymmetry {
  std::array<int, 10> digit{};
  std::array<int, 9> row{}, col{};
  bool transpose = false;

  static GridSymmetry random(Rng& rng);
  Board apply(const Board& b) const;
};

/// `n` 17-clue records drawn from the fixtures under random symmetries.
std::vector<PuzzleRecord> seventeen_clue_set(int n, std::uint64_t seed);
/// `n` generated records with unique solutions.
std::vector<PuzzleRecord> generated_set(int n, int clues, std::uint64_t seed, bool basic_only = false);

PuzzleRecord record_from(const Board& puzzle, const Board& solution);
std::string write_records(const std::string& path, const std::vector<PuzzleRecord>& records);

/// Fresh empty directory under the system temp dir.
std::string temp_dir(const std::string& name);

}  // namespace relay::testing
