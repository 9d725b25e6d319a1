#include "support.hpp"

#include <algorithm>
#include <filesystem>
#include <numeric>

#include "relay/io.hpp"

namespace relay::testing {

namespace {

bool allowed(const Board& b, int cell, int d) {
  const int r = cell / 9, c = cell % 9;
  for (int k = 0; k < 9; ++k) {
    if (b[r * 9 + k] == d || b[k * 9 + c] == d) return false;
  }
  const int br = r / 3 * 3, bc = c / 3 * 3;
  for (int dr = 0; dr < 3; ++dr)
    for (int dc = 0; dc < 3; ++dc)
      if (b[(br + dr) * 9 + bc + dc] == d) return false;
  return true;
}

void search(Board& b, int limit, int& found, Board* first) {
  int best = -1, best_n = 10;
  for (int cell = 0; cell < 81; ++cell) {
    if (b[cell]) continue;
    int n = 0;
    for (int d = 1; d <= 9; ++d) n += allowed(b, cell, d);
    if (n < best_n) {
      best = cell;
      best_n = n;
    }
  }
  if (best < 0) {
    if (found == 0 && first) *first = b;
    ++found;
    return;
  }
  for (int d = 1; d <= 9 && found < limit; ++d) {
    if (!allowed(b, best, d)) continue;
    b[best] = static_cast<std::uint8_t>(d);
    search(b, limit, found, first);
    b[best] = 0;
  }
}

}  // namespace

int naive_count(Board b, int limit, Board* first) {
  if (brute_violations(b) > 0) return 0;
  int found = 0;
  search(b, limit, found, first);
  return found;
}

int brute_violations(const Board& b) {
  int total = 0;
  auto scan = [&](auto cell_at) {
    for (int i = 0; i < 9; ++i) {
      const int di = b[cell_at(i)];
      if (!di) continue;
      for (int j = 0; j < i; ++j) {
        if (b[cell_at(j)] == di) {
          ++total;
          break;
        }
      }
    }
  };
  for (int u = 0; u < 9; ++u) {
    scan([u](int i) { return u * 9 + i; });
    scan([u](int i) { return i * 9 + u; });
    scan([u](int i) { return (u / 3 * 3 + i / 3) * 9 + u % 3 * 3 + i % 3; });
  }
  return total;
}

const std::vector<std::string>& seventeen_clue_puzzles() {
  static const std::vector<std::string> p = {
      "000000010400000000020000000000050407008000300001090000300400200050100000000806000",
      "000000010400000000020000000000050604008000300001090000300400200050100000000807000",
      "000000012000035000000600070700000300000400800100000000000120000080000040050000600",
      "000000012003600000000007000410020000000500300700000600280000040000300500000000000",
      "000000012008030000000000040120500000000004700060000000507000300000620000000100000",
      "000000012040050000000009000070600400000100000000000050000087500601000300200000000",
      "000000012050400000000000030700600400001000000000080000920000800000510700000003000",
      "000000013000030080070000000000206000030000900000010000600500204000400700100000000",
      "000000013000200000000000080000760200008000400010000000200000750600340000000008000",
      "000000013000500070000802000000400900107000000000000200890000050040000600000010000",
      "000000013020500000000000000103000070000802000004000000000340500670000200000010000",
  };
  return p;
}

GridSymmetry GridSymmetry::random(Rng& rng) {
  auto shuffle = [&](auto& a, int n) {
    for (int i = n - 1; i > 0; --i) std::swap(a[i], a[rng.below(i + 1)]);
  };
  GridSymmetry s;
  std::array<int, 9> digits;
  std::iota(digits.begin(), digits.end(), 1);
  shuffle(digits, 9);
  s.digit[0] = 0;
  for (int d = 1; d <= 9; ++d) s.digit[d] = digits[d - 1];
  auto lines = [&](std::array<int, 9>& out) {
    std::array<int, 3> bands{0, 1, 2};
    shuffle(bands, 3);
    for (int b = 0; b < 3; ++b) {
      std::array<int, 3> inner{0, 1, 2};
      shuffle(inner, 3);
      for (int k = 0; k < 3; ++k) out[b * 3 + k] = bands[b] * 3 + inner[k];
    }
  };
  lines(s.row);
  lines(s.col);
  s.transpose = rng.below(2) == 1;
  return s;
}

Board GridSymmetry::apply(const Board& b) const {
  Board out{};
  for (int r = 0; r < 9; ++r)
    for (int c = 0; c < 9; ++c) {
      const int src = transpose ? col[c] * 9 + row[r] : row[r] * 9 + col[c];
      out[r * 9 + c] = static_cast<std::uint8_t>(digit[b[src]]);
    }
  return out;
}

PuzzleRecord record_from(const Board& puzzle, const Board& solution) {
  PuzzleRecord r;
  r.puzzle = puzzle;
  r.solution = solution;
  for (int i = 0; i < 81; ++i)
    if (puzzle[i]) r.clue_positions.push_back(i);
  return r;
}

std::vector<PuzzleRecord> seventeen_clue_set(int n, std::uint64_t seed) {
  const auto& src = seventeen_clue_puzzles();
  std::vector<std::pair<Board, Board>> base;
  for (const auto& s : src) {
    const Board p = sudoku::parse_board(s);
    Board sol{};
    naive_count(p, 1, &sol);
    base.emplace_back(p, sol);
  }
  Rng rng(seed);
  std::vector<PuzzleRecord> out;
  for (int i = 0; i < n; ++i) {
    const auto& [p, sol] = base[i % base.size()];
    const GridSymmetry g = GridSymmetry::random(rng);
    out.push_back(record_from(g.apply(p), g.apply(sol)));
  }
  return out;
}

std::vector<PuzzleRecord> generated_set(int n, int clues, std::uint64_t seed, bool basic_only) {
  Rng rng(seed);
  std::vector<PuzzleRecord> out;
  for (int i = 0; i < n; ++i) out.push_back(sudoku::make_puzzle(rng, {clues, basic_only}));
  return out;
}

std::string write_records(const std::string& path, const std::vector<PuzzleRecord>& records) {
  std::string text;
  for (const auto& r : records) text += sudoku::serialize_record(r) + "\n";
  write_file_atomic(path, text);
  return path;
}

std::string temp_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("relay_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir.string();
}

}  // namespace relay::testing
