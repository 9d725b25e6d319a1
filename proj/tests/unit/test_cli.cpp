#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <sstream>

#include "relay/checkpoint.hpp"
#include "relay/cli.hpp"
#include "relay/evaluation.hpp"
#include "relay/io.hpp"
#include "relay/sudoku.hpp"
#include "support.hpp"

using namespace relay;

namespace {

struct Result {
  int code = 0;
  std::string out, err;
};

Result run(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  Result r;
  r.code = dispatch(args, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

std::string config(const char* name) { return std::string(RELAY_CONFIG_DIR) + "/" + name; }

int count_lines(const std::string& s) { return static_cast<int>(std::count(s.begin(), s.end(), '\n')); }

}  // namespace

TEST_CASE("inspect reports the published counts") {
  const std::pair<const char*, const char*> cases[] = {
      {"relay_untied.cfg", "params: 7106304\n"},
      {"relay_tied.cfg", "params: 7099776\n"},
      {"norelay_untied.cfg", "params: 7105536\n"},
      {"norelay_tied.cfg", "params: 7099008\n"},
  };
  for (const auto& [name, expect] : cases) {
    const auto r = run({"inspect", "--config", config(name)});
    CHECK(r.code == 0);
    CHECK(r.out.rfind(expect, 0) == 0);
  }
  const auto flip = run({"inspect", "--config", config("relay_untied.cfg"), "--tied", "true"});
  CHECK(flip.out.rfind("params: 7099776\n", 0) == 0);
}

TEST_CASE("usage errors exit 2") {
  CHECK(run({}).code == 2);
  CHECK(run({"frobnicate"}).code == 2);
  CHECK(run({"sweep", "--data", "x.txt"}).code == 2);
  CHECK(run({"inspect", "--bogus"}).code == 2);
  CHECK(run({"train", "--data", "x"}).code == 2);
  CHECK(run({"gradcheck", "--objective", "nope"}).code == 2);
  CHECK(run({"gradcheck", "--K", "0"}).code == 2);
  const auto help = run({"--help"});
  CHECK(help.code == 0);
  CHECK(help.out.find("gradcheck") != std::string::npos);
}

TEST_CASE("domain errors exit 1") {
  const auto dir = relay::testing::temp_dir("cli_errors");
  CHECK(run({"inspect", "--config", dir + "/missing.cfg"}).code == 1);
  write_file_atomic(dir + "/bad.cfg", "nonsense_key = 3\n");
  const auto bad = run({"inspect", "--config", dir + "/bad.cfg"});
  CHECK(bad.code == 1);
  CHECK(bad.err.find("nonsense_key") != std::string::npos);
  CHECK(run({"eval", "--checkpoint", dir + "/none.rmdm", "--data", dir + "/none.txt"}).code == 1);

  // A config error leaves the output directory untouched.
  const auto out = dir + "/train_out";
  write_file_atomic(dir + "/data.txt", "");
  CHECK(run({"train", "--config", dir + "/bad.cfg", "--data", dir + "/data.txt", "--out", out}).code == 1);
  CHECK_FALSE(std::filesystem::exists(out));
}

TEST_CASE("annotate") {
  const auto dir = relay::testing::temp_dir("cli_annotate");
  write_file_atomic(dir + "/empty.txt", "");
  auto r = run({"annotate", "--data", dir + "/empty.txt", "--out", dir + "/empty.jsonl"});
  CHECK(r.code == 0);
  CHECK(read_file(dir + "/empty.jsonl").empty());

  const auto recs = relay::testing::seventeen_clue_set(9, 2);
  std::string text;
  for (int i = 0; i < 10; ++i) {
    if (i == 4)
      text += "this line is not a puzzle\n";
    else
      text += sudoku::serialize_record(recs[i < 4 ? i : i - 1]) + "\n";
  }
  write_file_atomic(dir + "/ten.txt", text);
  r = run({"annotate", "--data", dir + "/ten.txt", "--out", dir + "/ten.jsonl", "--workers", "2"});
  CHECK(r.code == 0);
  CHECK(r.out == "annotated 9, resumed 0, skipped 1\n");
  const auto sidecar = read_file(dir + "/ten.jsonl");
  CHECK(count_lines(sidecar) == 9);

  // Rerunning resumes everything.
  r = run({"annotate", "--data", dir + "/ten.txt", "--out", dir + "/ten.jsonl"});
  CHECK(r.out == "annotated 0, resumed 9, skipped 1\n");
  CHECK(read_file(dir + "/ten.jsonl") == sidecar);

  // Worker count does not change the output.
  run({"annotate", "--data", dir + "/ten.txt", "--out", dir + "/one.jsonl"});
  CHECK(read_file(dir + "/one.jsonl") == sidecar);

  auto file = sudoku::read_puzzle_file(dir + "/ten.txt");
  sudoku::attach_annotations(file.records, file.line_index, dir + "/ten.jsonl");
  for (const auto& rec : file.records) {
    REQUIRE(rec.annotation.has_value());
    const auto res = sudoku::solve_with_trace(rec.puzzle);
    CHECK(rec.annotation->strategies_used == res.annotation.strategies_used);
    CHECK(rec.annotation->num_steps == res.annotation.num_steps);
  }
}

TEST_CASE("annotate and cohort end to end") {
  const auto dir = relay::testing::temp_dir("cli_cohort");
  const auto recs = relay::testing::seventeen_clue_set(30, 3);
  relay::testing::write_records(dir + "/p.txt", recs);
  CHECK(run({"annotate", "--data", dir + "/p.txt", "--out", dir + "/p.jsonl"}).code == 0);
  const auto r = run({"cohort", "--data", dir + "/p.txt", "--annotations", dir + "/p.jsonl", "--n", "5",
                      "--out", dir + "/cohort.txt"});
  CHECK(r.code == 0);
  const auto cohort = sudoku::read_puzzle_file(dir + "/cohort.txt");
  CHECK(cohort.records.size() <= 5);
  for (const auto& rec : cohort.records)
    CHECK(sudoku::is_deduction_only(sudoku::solve_with_trace(rec.puzzle).annotation));
}

TEST_CASE("train, eval and sweep on a toy run") {
  const auto dir = relay::testing::temp_dir("cli_train");
  relay::testing::write_records(dir + "/p.txt", relay::testing::seventeen_clue_set(8, 4));
  write_file_atomic(dir + "/toy.cfg",
                    "n_layers = 1\nd_model = 32\nn_heads = 2\nhead_dim = 16\nrotary_width = 16\n"
                    "d_ff = 64\ntie_embeddings = true\nbatch_size = 4\ntotal_steps = 3\n"
                    "warmup_steps = 2\nlog_every = 1\n");
  const std::vector<std::string> base = {"train", "--config", dir + "/toy.cfg", "--data", dir + "/p.txt",
                                         "--seed", "5"};
  auto a = base, b = base;
  a.insert(a.end(), {"--out", dir + "/a"});
  b.insert(b.end(), {"--out", dir + "/b"});
  REQUIRE(run(a).code == 0);
  REQUIRE(run(b).code == 0);
  CHECK(read_file(dir + "/a/metrics.csv") == read_file(dir + "/b/metrics.csv"));
  CHECK(read_file(dir + "/a/checkpoint.rmdm") == read_file(dir + "/b/checkpoint.rmdm"));
  CHECK(count_lines(read_file(dir + "/a/metrics.csv")) == 4);

  const auto ck = dir + "/a/checkpoint.rmdm";
  const auto insp = run({"inspect", "--checkpoint", ck});
  CHECK(insp.code == 0);
  CHECK(insp.out.rfind("params: ", 0) == 0);

  auto e = run({"eval", "--checkpoint", ck, "--data", dir + "/p.txt", "--tau", "0.2", "--n", "3",
                "--out", dir + "/eval"});
  CHECK(e.code == 0);
  CHECK(e.out.find("slice=unfiltered tau=0.20 n=3") != std::string::npos);
  CHECK(std::filesystem::exists(dir + "/eval/relay_tied_unfiltered.csv"));

  auto s = run({"sweep", "--checkpoint", ck, "--data", dir + "/p.txt", "--n", "3", "--taus", "0.1,0.2",
                "--out", dir + "/sweep"});
  CHECK(s.code == 0);
  const auto table = parse_report_csv(read_file(dir + "/sweep/relay_tied_unfiltered.csv"));
  CHECK(table.rows.size() == 2);
  CHECK(std::filesystem::exists(dir + "/sweep/relay_tied_unfiltered.json"));

  auto c = base;
  c.insert(c.end(), {"--out", dir + "/c", "--seed", "6"});
  c.erase(c.begin() + 5, c.begin() + 7);  // drop the first --seed
  REQUIRE(run(c).code == 0);
  auto multi = run({"sweep", "--checkpoint", ck, "--checkpoint", dir + "/c/checkpoint.rmdm", "--data",
                    dir + "/p.txt", "--n", "3", "--taus", "0.15", "--out", dir + "/multi"});
  CHECK(multi.code == 0);
  CHECK(multi.out.find("over 2 checkpoints") != std::string::npos);
  CHECK(multi.out.find(" ± ") != std::string::npos);
  CHECK(std::filesystem::exists(dir + "/multi/seed5/relay_tied_unfiltered.csv"));
  CHECK(std::filesystem::exists(dir + "/multi/seed6/relay_tied_unfiltered.csv"));
}

TEST_CASE("gradcheck command") {
  const auto r = run({"gradcheck", "--objective", "mlm", "--K", "1"});
  CHECK(r.code == 0);
  CHECK(r.out.find("max relative error") != std::string::npos);
}
