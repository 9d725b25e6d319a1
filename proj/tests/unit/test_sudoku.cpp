#include <doctest.h>

#include <algorithm>
#include <string>

#include "relay/error.hpp"
#include "relay/sudoku.hpp"
#include "support.hpp"

using namespace relay;
using namespace relay::sudoku;
using relay::testing::brute_violations;
using relay::testing::naive_count;

namespace {

const char* kSolved =
    "534678912672195348198342567859761423426853791713924856961537284287419635345286179";

Board solved() { return parse_board(kSolved); }

int filled(const Board& b) { return filled_count(b); }

}  // namespace

TEST_CASE("board indexing and units") {
  CHECK(row_of(40) == 4);
  CHECK(col_of(40) == 4);
  CHECK(box_of(40) == 4);
  CHECK(box_of(80) == 8);
  CHECK(box_of(26) == 2);
  for (int cell = 0; cell < kCells; ++cell) {
    for (int u : units_of(cell)) {
      const auto& members = units()[u];
      CHECK(std::find(members.begin(), members.end(), cell) != members.end());
    }
  }
}

TEST_CASE("legality examples") {
  Board empty{};
  CHECK(check_legality(empty).legal);
  CHECK(check_legality(empty).violations == 0);

  Board two_fives{};
  two_fives[0] = 5;
  two_fives[4] = 5;
  const auto rep = check_legality(two_fives);
  CHECK_FALSE(rep.legal);
  CHECK(rep.violations == 1);

  Board three_fives{};
  three_fives[0] = three_fives[4] = three_fives[8] = 5;
  // Row holds three: 2. Boxes 0, 1, 2 hold one each.
  CHECK(check_legality(three_fives).violations == 2);

  CHECK(check_legality(solved()).legal);
  CHECK(is_complete(solved()));
}

TEST_CASE("legality matches the brute-force counter on corrupted boards") {
  Rng rng(11);
  for (int trial = 0; trial < 1000; ++trial) {
    Board b = solved();
    const int edits = 1 + static_cast<int>(rng.below(12));
    for (int e = 0; e < edits; ++e) b[rng.below(81)] = static_cast<std::uint8_t>(rng.below(10));
    const auto rep = check_legality(b);
    REQUIRE(rep.violations == brute_violations(b));
    REQUIRE(rep.legal == (rep.violations == 0));
  }
}

TEST_CASE("candidates") {
  Board empty{};
  const auto all = candidates(empty);
  CHECK(all.size() == 81);
  for (const auto& [cell, set] : all) CHECK(set == DigitSet::all());

  Board forced{};
  for (int c = 1; c <= 8; ++c) forced[c] = static_cast<std::uint8_t>(c);
  const auto cand = candidates(forced);
  CHECK(cand.at(0).size() == 1);
  CHECK(cand.at(0).contains(9));

  Board bad{};
  bad[0] = bad[1] = 3;
  CHECK_THROWS_AS(candidates(bad), PreconditionError);

  Rng rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    Board b = solved();
    for (int i = 0; i < 81; ++i)
      if (rng.uniform() < 0.6) b[i] = 0;
    for (const auto& [cell, set] : candidates(b)) {
      DigitSet oracle;
      for (int d = 1; d <= 9; ++d) {
        Board probe = b;
        probe[cell] = static_cast<std::uint8_t>(d);
        if (brute_violations(probe) == 0) oracle.insert(d);
      }
      REQUIRE(set == oracle);
    }
  }
}

TEST_CASE("parse_record") {
  const std::string blank(81, '0');
  const auto r = parse_record(blank + "," + kSolved);
  CHECK(r.clue_positions.empty());
  CHECK(r.solution == solved());

  const std::string dotted(81, '.');
  CHECK(parse_record(dotted + "," + kSolved).clue_positions.empty());

  CHECK_THROWS_AS(parse_record(std::string(80, '0') + "," + kSolved), FormatError);
  CHECK_THROWS_AS(parse_record(std::string(80, '0') + "x," + kSolved), FormatError);
  CHECK_THROWS_AS(parse_record(blank), FormatError);

  std::string broken = kSolved;
  std::swap(broken[0], broken[1]);  // same digits, column duplicates appear
  CHECK_THROWS_AS(parse_record(blank + "," + broken), ConsistencyError);

  std::string contradict = blank;
  contradict[0] = '1';  // solution has 5 there
  CHECK_THROWS_AS(parse_record(contradict + "," + kSolved), ConsistencyError);

  for (const auto& p : relay::testing::seventeen_clue_puzzles()) {
    Board sol{};
    REQUIRE(naive_count(parse_board(p), 2, &sol) == 1);
    const auto rec = parse_record(p + "," + board_to_string(sol));
    CHECK(rec.clue_positions.size() == 17);
    CHECK(rec.solution == sol);
  }
}

TEST_CASE("serialize then parse is the identity") {
  for (const auto& r : relay::testing::seventeen_clue_set(30, 3)) {
    const auto back = parse_record(serialize_record(r));
    CHECK(back.puzzle == r.puzzle);
    CHECK(back.solution == r.solution);
    CHECK(back.clue_positions == r.clue_positions);
  }
}

TEST_CASE("solver examples") {
  const auto done = solve_with_trace(solved());
  CHECK(done.solution == solved());
  CHECK(done.annotation.trajectory.size() == 1);
  CHECK(done.annotation.num_steps == 0);
  CHECK(done.annotation.strategies_used.empty());

  Board one_blank = solved();
  one_blank[37] = 0;
  const auto single = solve_with_trace(one_blank);
  CHECK(single.solution == solved());
  CHECK(single.annotation.strategies_used == std::set<StrategyTag>{StrategyTag::NakedSingle});
  CHECK(single.annotation.num_steps == 1);

  Board bad{};
  bad[0] = bad[1] = 3;
  CHECK_THROWS_AS(solve_with_trace(bad), PreconditionError);
}

TEST_CASE("solver agrees with the backtracking oracle and keeps every step legal") {
  const auto set = relay::testing::seventeen_clue_set(100, 17);
  for (const auto& r : set) {
    Board oracle{};
    REQUIRE(naive_count(r.puzzle, 2, &oracle) == 1);
    const auto res = solve_with_trace(r.puzzle);
    REQUIRE(res.solution == oracle);
    const auto& traj = res.annotation.trajectory;
    REQUIRE(traj.front() == r.puzzle);
    REQUIRE(traj.back() == oracle);
    REQUIRE(res.annotation.num_steps == static_cast<int>(traj.size()) - 1);
    for (std::size_t k = 0; k < traj.size(); ++k) {
      REQUIRE(brute_violations(traj[k]) == 0);
      if (k > 0) REQUIRE(filled(traj[k]) >= filled(traj[k - 1]));
      for (int c : r.clue_positions) REQUIRE(traj[k][c] == r.puzzle[c]);
    }
  }
}

TEST_CASE("solver on generated puzzles") {
  for (const auto& r : relay::testing::generated_set(30, 26, 9)) {
    const auto res = solve_with_trace(r.puzzle);
    CHECK(res.solution == r.solution);
  }
  for (const auto& r : relay::testing::generated_set(20, 30, 10, true)) {
    const auto res = solve_with_trace(r.puzzle);
    CHECK(res.solution == r.solution);
    CHECK(is_basic_only(res.annotation));
  }
}

TEST_CASE("strategy tags and tiers") {
  CHECK(tier_of(StrategyTag::NakedSingle) == Tier::Basic);
  CHECK(tier_of(StrategyTag::HiddenSingle) == Tier::Basic);
  CHECK(tier_of(StrategyTag::NakedPair) == Tier::Advanced);
  CHECK(tier_of(StrategyTag::HiddenQuad) == Tier::Advanced);
  CHECK(tier_of(StrategyTag::XWing) == Tier::Master);
  CHECK(tier_of(StrategyTag::Jellyfish) == Tier::Master);
  CHECK(tier_of(StrategyTag::Backtracking) == Tier::Fallback);
  for (int t = 0; t <= static_cast<int>(StrategyTag::Backtracking); ++t) {
    const auto tag = static_cast<StrategyTag>(t);
    CHECK(strategy_from_string(to_string(tag)) == tag);
  }
  CHECK_THROWS_AS(strategy_from_string("ForcingChain"), FormatError);
}

namespace {

PuzzleRecord annotated(std::set<StrategyTag> tags, int id) {
  PuzzleRecord r;
  r.puzzle[0] = static_cast<std::uint8_t>(id);
  Annotation a;
  a.strategies_used = std::move(tags);
  r.annotation = a;
  return r;
}

}  // namespace

TEST_CASE("cohort filter") {
  using S = StrategyTag;
  std::vector<PuzzleRecord> rs = {
      annotated({S::NakedSingle}, 1),
      annotated({S::NakedPair, S::Backtracking}, 2),
      annotated({S::HiddenSingle, S::XWing}, 3),
      annotated({S::HiddenTriple}, 4),
      annotated({S::Swordfish, S::NakedSingle}, 5),
  };
  const auto kept = cohort_filter(rs, 10);
  REQUIRE(kept.size() == 3);
  CHECK(kept[0].puzzle[0] == 3);
  CHECK(kept[1].puzzle[0] == 4);
  CHECK(kept[2].puzzle[0] == 5);
  CHECK(cohort_filter(rs, 2).size() == 2);

  rs.push_back(PuzzleRecord{});
  CHECK_THROWS_AS(cohort_filter(rs, 10), MissingAnnotationError);
}

TEST_CASE("annotation sidecar lines round-trip") {
  const auto r = relay::testing::seventeen_clue_set(1, 4).front();
  const auto res = solve_with_trace(r.puzzle);
  for (bool traj : {false, true}) {
    const auto [index, a] = annotation_from_json(annotation_to_json(12, res.annotation, traj));
    CHECK(index == 12);
    CHECK(a.num_steps == res.annotation.num_steps);
    CHECK(a.strategies_used == res.annotation.strategies_used);
    if (traj)
      CHECK(a.trajectory == res.annotation.trajectory);
    else
      CHECK(a.trajectory.empty());
  }
  CHECK_THROWS_AS(annotation_from_json("{not json"), FormatError);
  CHECK_THROWS_AS(annotation_from_json("{\"index\": 0}"), FormatError);
}

TEST_CASE("puzzle file reading skips malformed lines") {
  const auto dir = relay::testing::temp_dir("sudoku_file");
  const auto recs = relay::testing::seventeen_clue_set(3, 8);
  std::string text = "# header comment\n";
  text += serialize_record(recs[0]) + "\n";
  text += "garbage line\n\n";
  text += serialize_record(recs[1]) + "\n";
  text += serialize_record(recs[2]) + "\n";
  const auto path = dir + "/p.txt";
  {
    std::FILE* f = std::fopen(path.c_str(), "w");
    std::fputs(text.c_str(), f);
    std::fclose(f);
  }
  const auto file = read_puzzle_file(path);
  CHECK(file.records.size() == 3);
  CHECK(file.line_index == std::vector<int>{0, 2, 3});
  REQUIRE(file.skipped.size() == 1);
  CHECK(file.skipped[0].first == 1);
  CHECK_THROWS_AS(read_puzzle_file(dir + "/missing.txt"), IoError);
}

TEST_CASE("generator") {
  Rng rng(21);
  const Board sol = random_solution(rng);
  CHECK(check_legality(sol).legal);
  CHECK(is_complete(sol));
  const auto r = make_puzzle(rng, {30, false});
  CHECK(naive_count(r.puzzle, 2) == 1);
  CHECK(filled_count(r.puzzle) >= 30);
  CHECK_THROWS_AS(make_puzzle(rng, {16, false}), RangeError);
}
