// Synthetic puzzle files for desk-scale runs: `<puzzle81>,<solution81>` lines.
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "relay/error.hpp"
#include "relay/io.hpp"
#include "relay/sudoku.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Generate puzzles with unique solutions"};
  int n = 1000, clues = 30;
  std::uint64_t seed = 0;
  bool basic_only = false;
  std::string out;
  app.add_option("--n", n, "Number of puzzles")->check(CLI::PositiveNumber);
  app.add_option("--clues", clues, "Target clue count")->check(CLI::Range(17, 81));
  app.add_option("--seed", seed);
  app.add_flag("--basic-only", basic_only, "Keep puzzles solvable by singles alone");
  app.add_option("--out", out)->required();
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    std::cout << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n" << app.help();
    return 2;
  }

  try {
    relay::Rng rng(seed);
    std::string text;
    for (int i = 0; i < n; ++i) {
      const auto r = relay::sudoku::make_puzzle(rng, {clues, basic_only});
      text += relay::sudoku::serialize_record(r) + "\n";
    }
    relay::write_file_atomic(out, text);
  } catch (const relay::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
