#include <algorithm>
#include <string>

#include "relay/error.hpp"
#include "relay/sudoku.hpp"

namespace relay::sudoku {

namespace {

// Pencil-mark state: filled cells plus surviving candidates of blank cells.
struct Grid {
  Board cells{};
  std::array<DigitSet, kCells> cand{};

  explicit Grid(const Board& b) : cells(b) {
    for (const auto& [cell, set] : candidates(b)) cand[cell] = set;
  }

  void place(int cell, int digit) {
    cells[cell] = static_cast<std::uint8_t>(digit);
    cand[cell] = DigitSet();
    for (int u : units_of(cell))
      for (int peer : units()[u]) cand[peer].erase(digit);
  }

  bool eliminate(int cell, int digit) {
    if (cells[cell] != 0 || !cand[cell].contains(digit)) return false;
    cand[cell].erase(digit);
    return true;
  }

  bool placed_in_unit(int u, int digit) const {
    for (int cell : units()[u])
      if (cells[cell] == digit) return true;
    return false;
  }
};

// Visits every n-element combination of [0, m) in lexicographic order until
// `fn` returns true.
template <typename Fn>
bool for_each_combination(int m, int n, Fn&& fn) {
  if (n > m || n <= 0) return false;
  std::vector<int> idx(n);
  for (int i = 0; i < n; ++i) idx[i] = i;
  while (true) {
    if (fn(idx)) return true;
    int i = n - 1;
    while (i >= 0 && idx[i] == m - n + i) --i;
    if (i < 0) return false;
    ++idx[i];
    for (int j = i + 1; j < n; ++j) idx[j] = idx[j - 1] + 1;
  }
}

bool naked_single(Grid& g) {
  for (int i = 0; i < kCells; ++i) {
    if (g.cells[i] == 0 && g.cand[i].size() == 1) {
      g.place(i, g.cand[i].first());
      return true;
    }
  }
  return false;
}

bool hidden_single(Grid& g) {
  for (int i = 0; i < kCells; ++i) {
    if (g.cells[i] != 0) continue;
    for (int d : g.cand[i].digits()) {
      for (int u : units_of(i)) {
        int count = 0;
        for (int cell : units()[u])
          if (g.cand[cell].contains(d)) ++count;
        if (count == 1) {
          g.place(i, d);
          return true;
        }
      }
    }
  }
  return false;
}

bool naked_subset(Grid& g, int n) {
  for (const auto& unit : units()) {
    std::vector<int> pool;
    for (int cell : unit) {
      const int k = g.cand[cell].size();
      if (g.cells[cell] == 0 && k >= 2 && k <= n) pool.push_back(cell);
    }
    const bool hit = for_each_combination(static_cast<int>(pool.size()), n, [&](const std::vector<int>& pick) {
      std::uint16_t mask = 0;
      for (int p : pick) mask |= g.cand[pool[p]].bits();
      if (DigitSet(mask).size() != n) return false;
      bool progress = false;
      for (int cell : unit) {
        if (g.cells[cell] != 0) continue;
        if (std::any_of(pick.begin(), pick.end(), [&](int p) { return pool[p] == cell; })) continue;
        for (int d : DigitSet(mask).digits()) progress |= g.eliminate(cell, d);
      }
      return progress;
    });
    if (hit) return true;
  }
  return false;
}

bool hidden_subset(Grid& g, int n) {
  for (int u = 0; u < kUnits; ++u) {
    const auto& unit = units()[u];
    std::vector<int> digits;
    std::array<std::uint16_t, 10> where{};  // bit k: unit slot k holds the candidate
    for (int d = 1; d <= 9; ++d) {
      if (g.placed_in_unit(u, d)) continue;
      for (int k = 0; k < 9; ++k)
        if (g.cand[unit[k]].contains(d)) where[d] |= static_cast<std::uint16_t>(1U << k);
      const int c = std::popcount(where[d]);
      if (c >= 2 && c <= n) digits.push_back(d);
    }
    const bool hit = for_each_combination(static_cast<int>(digits.size()), n, [&](const std::vector<int>& pick) {
      std::uint16_t slots = 0;
      DigitSet keep;
      for (int p : pick) {
        slots |= where[digits[p]];
        keep.insert(digits[p]);
      }
      if (std::popcount(slots) != n) return false;
      bool progress = false;
      for (int k = 0; k < 9; ++k) {
        if (!((slots >> k) & 1U)) continue;
        for (int d : g.cand[unit[k]].digits())
          if (!keep.contains(d)) progress |= g.eliminate(unit[k], d);
      }
      return progress;
    });
    if (hit) return true;
  }
  return false;
}

// Basic fish of size n (2 = X-Wing, 3 = Swordfish, 4 = Jellyfish), row-based
// then column-based, per digit.
bool fish(Grid& g, int n) {
  for (int d = 1; d <= 9; ++d) {
    for (int orient = 0; orient < 2; ++orient) {
      auto cell_at = [orient](int line, int pos) { return orient == 0 ? 9 * line + pos : 9 * pos + line; };
      std::vector<int> lines;
      std::array<std::uint16_t, 9> cover{};
      for (int line = 0; line < 9; ++line) {
        bool placed = false;
        for (int pos = 0; pos < 9; ++pos) {
          const int cell = cell_at(line, pos);
          if (g.cells[cell] == d) placed = true;
          if (g.cand[cell].contains(d)) cover[line] |= static_cast<std::uint16_t>(1U << pos);
        }
        const int c = std::popcount(cover[line]);
        if (!placed && c >= 2 && c <= n) lines.push_back(line);
      }
      const bool hit = for_each_combination(static_cast<int>(lines.size()), n, [&](const std::vector<int>& pick) {
        std::uint16_t positions = 0;
        std::uint16_t base = 0;
        for (int p : pick) {
          positions |= cover[lines[p]];
          base |= static_cast<std::uint16_t>(1U << lines[p]);
        }
        if (std::popcount(positions) != n) return false;
        bool progress = false;
        for (int line = 0; line < 9; ++line) {
          if ((base >> line) & 1U) continue;
          for (int pos = 0; pos < 9; ++pos)
            if ((positions >> pos) & 1U) progress |= g.eliminate(cell_at(line, pos), d);
        }
        return progress;
      });
      if (hit) return true;
    }
  }
  return false;
}

void check_consistent(const Grid& g) {
  for (int i = 0; i < kCells; ++i)
    if (g.cells[i] == 0 && g.cand[i].empty())
      throw UnsolvableError("cell " + std::to_string(i) + " has no candidates");
  for (int u = 0; u < kUnits; ++u) {
    for (int d = 1; d <= 9; ++d) {
      if (g.placed_in_unit(u, d)) continue;
      bool possible = false;
      for (int cell : units()[u]) possible |= g.cand[cell].contains(d);
      if (!possible)
        throw UnsolvableError("digit " + std::to_string(d) + " has no place in unit " +
                              std::to_string(u));
    }
  }
}

struct Strategy {
  StrategyTag tag;
  bool (*apply)(Grid&);
};

constexpr Strategy kStrategies[] = {
    {StrategyTag::NakedSingle, naked_single},
    {StrategyTag::HiddenSingle, hidden_single},
    {StrategyTag::NakedPair, [](Grid& g) { return naked_subset(g, 2); }},
    {StrategyTag::HiddenPair, [](Grid& g) { return hidden_subset(g, 2); }},
    {StrategyTag::NakedTriple, [](Grid& g) { return naked_subset(g, 3); }},
    {StrategyTag::HiddenTriple, [](Grid& g) { return hidden_subset(g, 3); }},
    {StrategyTag::NakedQuad, [](Grid& g) { return naked_subset(g, 4); }},
    {StrategyTag::HiddenQuad, [](Grid& g) { return hidden_subset(g, 4); }},
    {StrategyTag::XWing, [](Grid& g) { return fish(g, 2); }},
    {StrategyTag::Swordfish, [](Grid& g) { return fish(g, 3); }},
    {StrategyTag::Jellyfish, [](Grid& g) { return fish(g, 4); }},
};

void guided_placement(Grid& g) {
  Board completion{};
  const int n = count_solutions(g.cells, 2, &completion);
  if (n == 0) throw UnsolvableError("board has no completion");
  if (n > 1) throw AmbiguityError("board has more than one completion");
  int best = -1;
  for (int i = 0; i < kCells; ++i) {
    if (g.cells[i] != 0) continue;
    if (best < 0 || g.cand[i].size() < g.cand[best].size()) best = i;
  }
  g.place(best, completion[best]);
}

}  // namespace

Tier tier_of(StrategyTag tag) {
  switch (tag) {
    case StrategyTag::NakedSingle:
    case StrategyTag::HiddenSingle:
      return Tier::Basic;
    case StrategyTag::NakedPair:
    case StrategyTag::HiddenPair:
    case StrategyTag::NakedTriple:
    case StrategyTag::HiddenTriple:
    case StrategyTag::NakedQuad:
    case StrategyTag::HiddenQuad:
      return Tier::Advanced;
    case StrategyTag::XWing:
    case StrategyTag::Swordfish:
    case StrategyTag::Jellyfish:
      return Tier::Master;
    case StrategyTag::Backtracking:
      return Tier::Fallback;
  }
  return Tier::Fallback;
}

std::string_view to_string(StrategyTag tag) {
  switch (tag) {
    case StrategyTag::NakedSingle: return "NakedSingle";
    case StrategyTag::HiddenSingle: return "HiddenSingle";
    case StrategyTag::NakedPair: return "NakedPair";
    case StrategyTag::HiddenPair: return "HiddenPair";
    case StrategyTag::NakedTriple: return "NakedTriple";
    case StrategyTag::HiddenTriple: return "HiddenTriple";
    case StrategyTag::NakedQuad: return "NakedQuad";
    case StrategyTag::HiddenQuad: return "HiddenQuad";
    case StrategyTag::XWing: return "XWing";
    case StrategyTag::Swordfish: return "Swordfish";
    case StrategyTag::Jellyfish: return "Jellyfish";
    case StrategyTag::Backtracking: return "Backtracking";
  }
  return "?";
}

StrategyTag strategy_from_string(std::string_view name) {
  for (int t = 0; t <= static_cast<int>(StrategyTag::Backtracking); ++t) {
    const auto tag = static_cast<StrategyTag>(t);
    if (to_string(tag) == name) return tag;
  }
  throw FormatError("unknown strategy tag '" + std::string(name) + "'");
}

SolveResult solve_with_trace(const Board& puzzle) {
  if (!check_legality(puzzle).legal)
    throw PreconditionError("solve_with_trace: puzzle is not legal");

  Grid g(puzzle);
  SolveResult out;
  out.annotation.trajectory.push_back(puzzle);
  check_consistent(g);

  while (!is_complete(g.cells)) {
    bool progressed = false;
    for (const auto& s : kStrategies) {
      if (s.apply(g)) {
        out.annotation.strategies_used.insert(s.tag);
        progressed = true;
        break;
      }
    }
    if (!progressed) {
      guided_placement(g);
      out.annotation.strategies_used.insert(StrategyTag::Backtracking);
    }
    check_consistent(g);
    out.annotation.trajectory.push_back(g.cells);
  }

  if (!check_legality(g.cells).legal)
    throw UnsolvableError("solver reached an illegal complete board");
  out.solution = g.cells;
  out.annotation.num_steps = static_cast<int>(out.annotation.trajectory.size()) - 1;
  return out;
}

}  // namespace relay::sudoku
