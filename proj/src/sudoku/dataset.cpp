#include <fstream>
#include <unordered_map>

#include <json.hpp>

#include "relay/error.hpp"
#include "relay/sudoku.hpp"

namespace relay::sudoku {

using nlohmann::json;

PuzzleFile read_puzzle_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open puzzle file '" + path + "'");
  PuzzleFile out;
  std::string line;
  int data_line = 0;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    try {
      out.records.push_back(parse_record(line));
      out.line_index.push_back(data_line);
    } catch (const Error& e) {
      out.skipped.emplace_back(data_line, e.what());
    }
    ++data_line;
  }
  return out;
}

bool is_deduction_only(const Annotation& a) {
  if (a.strategies_used.count(StrategyTag::Backtracking)) return false;
  for (auto tag : a.strategies_used) {
    const Tier t = tier_of(tag);
    if (t == Tier::Advanced || t == Tier::Master) return true;
  }
  return false;
}

bool is_basic_only(const Annotation& a) {
  for (auto tag : a.strategies_used)
    if (tier_of(tag) != Tier::Basic) return false;
  return true;
}

std::vector<PuzzleRecord> cohort_filter(const std::vector<PuzzleRecord>& records,
                                        std::size_t n) {
  std::vector<PuzzleRecord> kept;
  for (std::size_t i = 0; i < records.size() && kept.size() < n; ++i) {
    if (!records[i].annotation)
      throw MissingAnnotationError("record " + std::to_string(i) + " has no annotation");
    if (is_deduction_only(*records[i].annotation)) kept.push_back(records[i]);
  }
  return kept;
}

std::string annotation_to_json(int index, const Annotation& a, bool with_trajectory) {
  json j;
  j["index"] = index;
  j["num_steps"] = a.num_steps;
  json tags = json::array();
  for (auto t : a.strategies_used) tags.push_back(std::string(to_string(t)));
  j["strategies_used"] = std::move(tags);
  if (with_trajectory) {
    json traj = json::array();
    for (const auto& b : a.trajectory) traj.push_back(board_to_string(b));
    j["trajectory"] = std::move(traj);
  }
  return j.dump();
}

std::pair<int, Annotation> annotation_from_json(std::string_view line) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::exception& e) {
    throw FormatError(std::string("annotation line is not valid JSON: ") + e.what());
  }
  try {
    Annotation a;
    const int index = j.at("index").get<int>();
    a.num_steps = j.at("num_steps").get<int>();
    for (const auto& t : j.at("strategies_used")) a.strategies_used.insert(strategy_from_string(t.get<std::string>()));
    if (j.contains("trajectory"))
      for (const auto& b : j.at("trajectory")) a.trajectory.push_back(parse_board(b.get<std::string>()));
    return {index, std::move(a)};
  } catch (const json::exception& e) {
    throw FormatError(std::string("annotation line has missing or mistyped keys: ") + e.what());
  }
}

void attach_annotations(std::vector<PuzzleRecord>& records,
                        const std::vector<int>& line_index,
                        const std::string& sidecar_path) {
  std::ifstream in(sidecar_path);
  if (!in) throw IoError("cannot open annotation sidecar '" + sidecar_path + "'");
  std::unordered_map<int, Annotation> by_index;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto [idx, ann] = annotation_from_json(line);
    by_index[idx] = std::move(ann);
  }
  for (std::size_t i = 0; i < records.size(); ++i) {
    auto it = by_index.find(line_index[i]);
    if (it != by_index.end()) records[i].annotation = it->second;
  }
}

}  // namespace relay::sudoku
