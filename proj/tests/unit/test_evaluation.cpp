#include <algorithm>
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include <json.hpp>

#include "relay/error.hpp"
#include "relay/evaluation.hpp"
#include "relay/io.hpp"
#include "support.hpp"

using namespace relay;
using relay::testing::brute_violations;

namespace {

// Every cell peaked at its solution digit; 1 - c = `miss` for each.
Denoiser solution_stub(const sudoku::PuzzleRecord& r, double miss) {
  const float a = static_cast<float>(std::log((1.0 - miss) * 16.0 / miss));
  Denoiser d;
  d.step = [r, a](std::span<const int>, const Matrix<float>*) {
    StepOutput<float> o;
    o.logits = Matrix<float>::Zero(81, 17);
    for (int i = 0; i < 81; ++i) o.logits(i, r.solution[i]) = a;
    return o;
  };
  return d;
}

// Knows the answer for every record in `set` by matching the clue pattern.
Denoiser set_stub(const std::vector<sudoku::PuzzleRecord>& set, double miss) {
  const float a = static_cast<float>(std::log((1.0 - miss) * 16.0 / miss));
  Denoiser d;
  d.step = [set, a](std::span<const int> tokens, const Matrix<float>*) {
    StepOutput<float> o;
    o.logits = Matrix<float>::Zero(81, 17);
    for (const auto& r : set) {
      bool match = true;
      for (int c : r.clue_positions) match &= tokens[c] == r.puzzle[c];
      if (!match) continue;
      for (int i = 0; i < 81; ++i) o.logits(i, r.solution[i]) = a;
      break;
    }
    return o;
  };
  return d;
}

Denoiser noisy_stub() {
  Denoiser d;
  d.step = [](std::span<const int> tokens, const Matrix<float>*) {
    std::uint64_t seed = 7;
    for (int t : tokens) seed = seed * 31 + static_cast<std::uint64_t>(t);
    Rng rng(seed);
    StepOutput<float> o;
    o.logits.resize(81, 17);
    for (Eigen::Index i = 0; i < o.logits.size(); ++i)
      o.logits.data()[i] = static_cast<float>(2.0 * rng.normal());
    return o;
  };
  return d;
}

Denoiser uniform_stub() {
  Denoiser d;
  d.step = [](std::span<const int>, const Matrix<float>*) {
    StepOutput<float> o;
    o.logits = Matrix<float>::Zero(81, 17);
    return o;
  };
  return d;
}

// Replays a trace and sums the change in the brute-force count per commit.
int delta_oracle(const GenerationResult& g, const sudoku::Board& clues) {
  sudoku::Board b = clues;
  int total = 0;
  for (const auto& step : g.trace)
    for (const auto& c : step.committed) {
      const int before = brute_violations(b);
      b[c.position] = static_cast<std::uint8_t>(c.value);
      total += brute_violations(b) - before;
    }
  return total;
}

FrontierRow row(const std::string& obj, bool tied, double tau, Slice s, std::uint64_t seed) {
  FrontierRow r;
  r.objective = obj;
  r.tied = tied;
  r.tau = tau;
  r.seed = seed;
  r.report.slice = s;
  r.report.tau = tau;
  r.report.n = 2000;
  r.report.exact_match = 0.626667;
  r.report.mean_nfe = 7.43;
  r.report.legal_final_rate = 0.7;
  r.report.mean_rollout_violations = 0.9;
  return r;
}

}  // namespace

TEST_CASE("rollout_violations examples") {
  const auto r = relay::testing::seventeen_clue_set(1, 3).front();
  const auto g = generate(solution_stub(r, 0.012), r, 0.15);
  CHECK(rollout_violations(g.trace, r.puzzle) == 0);

  // Commit a digit equal to a clue in the same row, away from its column/box.
  const int clue = r.clue_positions[0];
  const int row = sudoku::row_of(clue);
  int target = -1;
  for (int c = 0; c < 9; ++c) {
    const int cell = row * 9 + c;
    if (r.puzzle[cell] || sudoku::box_of(cell) == sudoku::box_of(clue)) continue;
    bool col_clash = false;
    for (int rr = 0; rr < 9; ++rr) col_clash |= r.puzzle[rr * 9 + c] == r.puzzle[clue];
    if (!col_clash) {
      target = cell;
      break;
    }
  }
  REQUIRE(target >= 0);
  GenerationStep step;
  step.committed.push_back({target, r.puzzle[clue]});
  CHECK(rollout_violations(std::vector<GenerationStep>{step}, r.puzzle) == 1);

  GenerationStep onto_clue;
  onto_clue.committed.push_back({clue, 1});
  CHECK_THROWS_AS(rollout_violations(std::vector<GenerationStep>{onto_clue}, r.puzzle),
                  ConsistencyError);
  GenerationStep twice;
  twice.committed = {{target, 1}, {target, 2}};
  CHECK_THROWS_AS(rollout_violations(std::vector<GenerationStep>{twice}, r.puzzle),
                  ConsistencyError);
}

TEST_CASE("rollout_violations equals the brute-force delta oracle") {
  const auto set = relay::testing::seventeen_clue_set(40, 9);
  const auto model = noisy_stub();
  for (const auto& r : set)
    for (double tau : {0.05, 0.25}) {
      const auto g = generate(model, r, tau);
      REQUIRE(rollout_violations(g.trace, r.puzzle) == delta_oracle(g, r.puzzle));
    }

  // Random traces over random clue boards.
  Rng rng(10);
  for (int trial = 0; trial < 500; ++trial) {
    sudoku::Board clues{};
    for (int i = 0; i < 81; ++i)
      if (rng.uniform() < 0.2) clues[i] = static_cast<std::uint8_t>(1 + rng.below(9));
    std::vector<int> open;
    for (int i = 0; i < 81; ++i)
      if (!clues[i]) open.push_back(i);
    for (int i = static_cast<int>(open.size()) - 1; i > 0; --i)
      std::swap(open[i], open[rng.below(i + 1)]);
    GenerationResult g;
    std::size_t k = 0;
    while (k < open.size()) {
      GenerationStep st;
      const std::size_t n = 1 + rng.below(6);
      for (std::size_t j = 0; j < n && k < open.size(); ++j, ++k)
        st.committed.push_back({open[k], static_cast<int>(rng.below(10))});
      g.trace.push_back(st);
    }
    REQUIRE(rollout_violations(g.trace, clues) == delta_oracle(g, clues));
  }
}

TEST_CASE("evaluate_set with an oracle stub") {
  const auto set = relay::testing::seventeen_clue_set(12, 4);
  const auto model = set_stub(set, 0.012);
  const auto rep = evaluate_set(model, set, 0.15, Slice::Unfiltered);
  CHECK(rep.n == 12);
  CHECK(rep.exact_match == 1.0);
  CHECK(rep.legal_final_rate == 1.0);
  CHECK(rep.mean_rollout_violations == 0.0);
  // 1 - c = 0.012 for every cell: 12 cells fit under 0.15, so 6 passes.
  CHECK(rep.mean_nfe == 6.0);
  CHECK(evaluate_set(model, set, 0.05, Slice::Unfiltered).mean_nfe == 16.0);
  CHECK_THROWS_AS(evaluate_set(model, {}, 0.15, Slice::Unfiltered), EmptySetError);
}

TEST_CASE("evaluate_set with uniform logits") {
  const auto set = relay::testing::seventeen_clue_set(10, 5);
  const auto rep = evaluate_set(uniform_stub(), set, 0.15, Slice::Unfiltered);
  CHECK(rep.exact_match == 0.0);
  CHECK(rep.mean_nfe == 64.0);  // fallback commits one cell per pass
  CHECK(rep.exact_match <= rep.legal_final_rate);
  double viol = 0;
  for (const auto& r : set) viol += delta_oracle(generate(uniform_stub(), r, 0.15), r.puzzle);
  CHECK(rep.mean_rollout_violations == doctest::Approx(viol / 10));
}

TEST_CASE("evaluate_set is deterministic across worker counts") {
  const auto set = relay::testing::seventeen_clue_set(16, 6);
  const auto model = noisy_stub();
  EvalOptions one, four;
  four.workers = 4;
  const auto a = evaluate_set(model, set, 0.1, Slice::DeductionOnly, one);
  const auto b = evaluate_set(model, set, 0.1, Slice::DeductionOnly, one);
  const auto c = evaluate_set(model, set, 0.1, Slice::DeductionOnly, four);
  CHECK(a == b);
  CHECK(a == c);
  CHECK(a.exact_match <= a.legal_final_rate);
  CHECK(a.legal_final_rate >= 0.0);
  CHECK(a.legal_final_rate <= 1.0);
  CHECK(a.mean_nfe >= 1.0);
  CHECK(a.mean_nfe <= 64.0);
}

TEST_CASE("sweep") {
  const auto set = relay::testing::seventeen_clue_set(6, 7);
  const SliceRecords slices[] = {{Slice::Unfiltered, &set}, {Slice::DeductionOnly, &set}};
  const double one[] = {0.15};
  const auto model = noisy_stub();
  const auto t1 = sweep(model, std::span(slices, 1), one, {"relay", true, 3});
  REQUIRE(t1.rows.size() == 1);
  CHECK(t1.rows[0].report == evaluate_set(model, set, 0.15, Slice::Unfiltered));
  CHECK(t1.rows[0].objective == "relay");
  CHECK(t1.rows[0].seed == 3);

  const double taus[] = {0.25, 0.05, 0.15};
  const auto t = sweep(model, slices, taus, {"relay", true, 3});
  REQUIRE(t.rows.size() == 6);
  for (std::size_t i = 1; i < t.rows.size(); ++i) CHECK(t.rows[i - 1].tau <= t.rows[i].tau);

  const double bad[] = {0.0};
  CHECK_THROWS_AS(sweep(model, slices, bad, {"relay", true, 3}), RangeError);
  CHECK_THROWS_AS(sweep(model, slices, std::span<const double>{}, {"relay", true, 3}), InputError);
}

TEST_CASE("sweep with saturated confidences") {
  const auto set = relay::testing::seventeen_clue_set(5, 8);
  const SliceRecords slices[] = {{Slice::Unfiltered, &set}};

  // c = 1 up to float rounding: every tau commits all 64 cells in one pass.
  const auto sure = set_stub(set, 1e-9);
  const auto t = sweep(sure, slices, kSweepTaus, {"relay", false, 0});
  REQUIRE(t.rows.size() == 5);
  for (const auto& r : t.rows) {
    auto a = r.report, b = t.rows[0].report;
    a.tau = b.tau = 0;
    CHECK(a == b);
    CHECK(r.report.mean_nfe == 1.0);
  }

  // c = 0.988: the prefix holds 4, 8, 12, 16, 20 cells per pass.
  const auto t2 = sweep(set_stub(set, 0.012), slices, kSweepTaus, {"relay", false, 0});
  const double nfe[] = {16, 8, 6, 4, 4};
  for (int i = 0; i < 5; ++i) CHECK(t2.rows[i].report.mean_nfe == nfe[i]);
}

TEST_CASE("frontier table rejects duplicates") {
  FrontierTable t;
  t.add(row("relay", true, 0.15, Slice::Unfiltered, 0));
  t.add(row("relay", true, 0.15, Slice::DeductionOnly, 0));
  t.add(row("relay", false, 0.15, Slice::Unfiltered, 0));
  CHECK_THROWS_AS(t.add(row("relay", true, 0.15, Slice::Unfiltered, 1)), InvariantError);
}

TEST_CASE("report formats") {
  FrontierTable empty;
  CHECK(format_report(empty, ReportFormat::Csv) ==
        "objective,tied,slice,tau,n,exact_match,mean_nfe,legal_final_rate,"
        "mean_rollout_violations,seed\n");
  CHECK(parse_report_csv(format_report(empty, ReportFormat::Csv)).rows.empty());

  FrontierTable one;
  one.add(row("relay", true, 0.15, Slice::Unfiltered, 2));
  const auto csv = format_report(one, ReportFormat::Csv);
  const auto line = csv.substr(csv.find('\n') + 1);
  CHECK(line == "relay,true,unfiltered,0.150000,2000,0.626667,7.430000,0.700000,0.900000,2\n");
  CHECK(std::count(line.begin(), line.end(), ',') == 9);

  FrontierTable t;
  for (double tau : kSweepTaus)
    for (auto s : {Slice::Unfiltered, Slice::DeductionOnly}) t.add(row("relay_sg", false, tau, s, 5));
  const auto text = format_report(t, ReportFormat::Csv);
  CHECK(format_report(parse_report_csv(text), ReportFormat::Csv) == text);
  CHECK(parse_report_csv(text).rows == t.rows);

  const auto j = nlohmann::json::parse(format_report(t, ReportFormat::Json));
  REQUIRE(j.size() == t.rows.size());
  CHECK(j[0].at("objective") == "relay_sg");
  CHECK(j[0].at("tied") == false);
  CHECK(j[0].at("slice") == "unfiltered");
  CHECK(j[0].at("tau").get<double>() == doctest::Approx(0.05));
  CHECK(j[0].size() == 10);

  const auto dir = relay::testing::temp_dir("reports");
  emit_report(t, dir + "/a.csv", ReportFormat::Csv);
  emit_report(t, dir + "/b.csv", ReportFormat::Csv);
  CHECK(read_file(dir + "/a.csv") == read_file(dir + "/b.csv"));

  CHECK_THROWS_AS(parse_report_csv("bad header\n"), FormatError);
  CHECK_THROWS_AS(parse_report_csv(format_report(empty, ReportFormat::Csv) + "a,b\n"), FormatError);
  CHECK_THROWS_AS(parse_report_csv(format_report(empty, ReportFormat::Csv) +
                                   "relay,maybe,unfiltered,0.1,1,0,0,0,0,0\n"),
                  FormatError);

  CHECK(report_filename("relay", true, Slice::DeductionOnly, ReportFormat::Csv) ==
        "relay_tied_deduction_only.csv");
  CHECK(report_filename("mlm", false, Slice::Unfiltered, ReportFormat::Json) ==
        "mlm_untied_unfiltered.json");
}

TEST_CASE("mean and sample sd over seeds") {
  const double v[] = {1.0, 2.0, 3.0};
  const auto m = mean_sd(v);
  CHECK(m.mean == 2.0);
  CHECK(m.sd == 1.0);
  CHECK(format_mean_sd(m) == "2.00 ± 1.00");
  const double table2[] = {0.6, 0.65, 0.63};
  const auto t = mean_sd(table2);
  CHECK(t.sd == doctest::Approx(std::sqrt(((0.6 - t.mean) * (0.6 - t.mean) +
                                           (0.65 - t.mean) * (0.65 - t.mean) +
                                           (0.63 - t.mean) * (0.63 - t.mean)) / 2)));
  const double single[] = {4.0};
  CHECK(mean_sd(single).sd == 0.0);
}

TEST_CASE("slice names") {
  CHECK(slice_from_string("unfiltered") == Slice::Unfiltered);
  CHECK(slice_from_string("deduction_only") == Slice::DeductionOnly);
  CHECK(to_string(Slice::DeductionOnly) == "deduction_only");
  CHECK_THROWS_AS(slice_from_string("easy"), FormatError);
}
