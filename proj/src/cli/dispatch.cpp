#include <atomic>
#include <cstdio>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <thread>

#include <CLI11.hpp>

#include "relay/checkpoint.hpp"
#include "relay/cli.hpp"
#include "relay/error.hpp"
#include "relay/evaluation.hpp"
#include "relay/io.hpp"
#include "relay/training.hpp"

namespace relay {

namespace {

struct Flags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string objective;
  std::string tied;
  std::optional<int> K;
  double tau = 0.15;
  std::string taus;
  std::string data;
  std::string annotations;
  std::vector<std::string> checkpoints;
  std::string out;
  int workers = 1;
  std::string slice = "unfiltered";
  int n = 2000;
  bool resume = false;
  bool with_trajectory = false;
};

std::vector<double> parse_taus(const std::string& text) {
  RunConfig scratch;
  set_config_value(scratch, "val_taus", text);
  return scratch.train.val_taus;
}

RunConfig resolve_config(const Flags& f) {
  RunConfig cfg;
  if (!f.config.empty()) cfg = load_config(f.config);
  if (f.seed) cfg.train.seed = *f.seed;
  if (!f.objective.empty()) cfg.train.objective = objective_from_string(f.objective);
  if (!f.tied.empty()) cfg.model.tie_embeddings = f.tied == "true";
  if (f.K) cfg.train.K = *f.K;
  if (cfg.train.objective == Objective::MLM) cfg.train.K = 1;
  cfg.model.validate();
  cfg.train.validate();
  return cfg;
}

int cmd_inspect(const Flags& f, std::ostream& out) {
  if (!f.checkpoints.empty()) {
    const auto ck = load_checkpoint(f.checkpoints.front());
    out << "params: " << allocated_scalars(ck.params) << "\n";
    out << config_to_json(ck.params.config).dump() << "\n";
    return 0;
  }
  const RunConfig cfg = resolve_config(f);
  out << "params: " << parameter_count(cfg.model) << "\n";
  out << config_to_json(cfg.model).dump() << "\n";
  return 0;
}

int cmd_gradcheck(const Flags& f, std::ostream& out) {
  const Objective o = f.objective.empty() ? Objective::Relay : objective_from_string(f.objective);
  const int K = f.K.value_or(2);
  GradCheckOptions opts;
  if (f.seed) opts.seed = *f.seed;
  const auto r = grad_check(grad_check_config(f.tied == "true"), o, K, opts);
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.3e", r.max_relative_error);
  out << "objective " << to_string(o) << " K " << K << ": max relative error " << buf << " over "
      << r.coordinates << " coordinates in " << r.groups << " arrays (worst " << r.worst << ")\n";
  return r.max_relative_error < 1e-4 ? 0 : 1;
}

int cmd_annotate(const Flags& f, std::ostream& out, std::ostream& err) {
  const auto file = sudoku::read_puzzle_file(f.data);
  for (const auto& [line, why] : file.skipped) err << "skipping line " << line << ": " << why << "\n";

  std::map<int, std::string> lines;
  if (std::filesystem::exists(f.out)) {
    const std::string existing = read_file(f.out);
    std::size_t pos = 0;
    while (pos < existing.size()) {
      auto nl = existing.find('\n', pos);
      if (nl == std::string::npos) nl = existing.size();
      const std::string line = existing.substr(pos, nl - pos);
      pos = nl + 1;
      if (line.empty()) continue;
      lines[sudoku::annotation_from_json(line).first] = line;
    }
  }
  const std::size_t resumed = lines.size();

  std::vector<std::size_t> todo;
  for (std::size_t i = 0; i < file.records.size(); ++i)
    if (!lines.count(file.line_index[i])) todo.push_back(i);

  std::mutex mu;
  std::atomic<std::size_t> next{0};
  std::size_t done = 0, failed = 0;
  auto work = [&] {
    for (std::size_t k = next++; k < todo.size(); k = next++) {
      const std::size_t i = todo[k];
      std::string line, problem;
      try {
        const auto res = sudoku::solve_with_trace(file.records[i].puzzle);
        if (res.solution != file.records[i].solution)
          throw ConsistencyError("solver disagrees with the stored solution");
        line = sudoku::annotation_to_json(file.line_index[i], res.annotation, f.with_trajectory);
      } catch (const Error& e) {
        problem = e.what();
      }
      std::lock_guard lock(mu);
      if (problem.empty()) {
        lines[file.line_index[i]] = std::move(line);
      } else {
        ++failed;
        err << "skipping record on line " << file.line_index[i] << ": " << problem << "\n";
      }
      if (++done % 1000 == 0) err << "annotated " << done << " / " << todo.size() << "\n";
    }
  };
  const int workers = std::max(1, f.workers);
  if (workers == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }

  std::string text;
  for (const auto& [idx, line] : lines) text += line + "\n";
  write_file_atomic(f.out, text);
  out << "annotated " << (lines.size() - resumed) << ", resumed " << resumed << ", skipped "
      << (file.skipped.size() + failed) << "\n";
  return 0;
}

std::vector<sudoku::PuzzleRecord> load_slice(const Flags& f, Slice slice) {
  auto file = sudoku::read_puzzle_file(f.data);
  if (slice == Slice::DeductionOnly) {
    if (f.annotations.empty()) throw InputError("the deduction_only slice needs --annotations");
    sudoku::attach_annotations(file.records, file.line_index, f.annotations);
    return sudoku::cohort_filter(file.records, static_cast<std::size_t>(f.n));
  }
  auto recs = std::move(file.records);
  if (recs.size() > static_cast<std::size_t>(f.n)) recs.resize(f.n);
  return recs;
}

int cmd_cohort(const Flags& f, std::ostream& out) {
  const auto recs = load_slice(f, Slice::DeductionOnly);
  std::string text;
  for (const auto& r : recs) text += sudoku::serialize_record(r) + "\n";
  write_file_atomic(f.out, text);
  out << "cohort: " << recs.size() << " records\n";
  return 0;
}

struct Labelled {
  LoadedCheckpoint ck;
  RunLabel label;
  bool use_relay = true;
};

Labelled open_checkpoint(const std::string& path, const Flags& f) {
  Labelled l{load_checkpoint(path), {}, true};
  const auto& meta = l.ck.meta;
  Objective o = l.ck.params.config.relay_enabled ? Objective::Relay : Objective::Rollout;
  if (meta.contains("train")) {
    o = objective_from_string(meta["train"].at("objective").get<std::string>());
    l.label.seed = meta["train"].at("seed").get<std::uint64_t>();
  }
  if (!f.objective.empty()) o = objective_from_string(f.objective);
  if (f.seed) l.label.seed = *f.seed;
  l.label.objective = std::string(to_string(o));
  l.label.tied = l.ck.params.config.tie_embeddings;
  l.use_relay = o == Objective::Relay || o == Objective::RelaySG;
  return l;
}

std::string report_line(const EvalReport& r) {
  char buf[256];
  std::snprintf(buf, sizeof(buf),
                "slice=%s tau=%.2f n=%d exact_match=%.6f mean_nfe=%.6f legal_final_rate=%.6f "
                "mean_rollout_violations=%.6f",
                std::string(to_string(r.slice)).c_str(), r.tau, r.n, r.exact_match, r.mean_nfe,
                r.legal_final_rate, r.mean_rollout_violations);
  return buf;
}

int cmd_eval(const Flags& f, std::ostream& out) {
  const Slice slice = slice_from_string(f.slice);
  const auto records = load_slice(f, slice);
  const Labelled l = open_checkpoint(f.checkpoints.front(), f);
  const Denoiser den = make_denoiser(l.ck.params, l.use_relay);
  EvalOptions opts;
  opts.workers = f.workers;
  const EvalReport rep = evaluate_set(den, records, f.tau, slice, opts);
  out << report_line(rep) << "\n";
  if (!f.out.empty()) {
    std::filesystem::create_directories(f.out);
    FrontierTable t;
    t.add({l.label.objective, l.label.tied, f.tau, rep, l.label.seed});
    emit_report(t, f.out + "/" + report_filename(l.label.objective, l.label.tied, slice, ReportFormat::Csv),
                ReportFormat::Csv);
  }
  return 0;
}

int cmd_sweep(const Flags& f, std::ostream& out) {
  const std::vector<double> taus =
      f.taus.empty() ? std::vector<double>(std::begin(kSweepTaus), std::end(kSweepTaus)) : parse_taus(f.taus);
  std::vector<Slice> slices{Slice::Unfiltered};
  if (!f.annotations.empty()) slices.push_back(Slice::DeductionOnly);
  std::vector<std::vector<sudoku::PuzzleRecord>> sets;
  for (Slice s : slices) sets.push_back(load_slice(f, s));
  std::vector<SliceRecords> inputs;
  for (std::size_t i = 0; i < slices.size(); ++i) inputs.push_back({slices[i], &sets[i]});
  EvalOptions opts;
  opts.workers = f.workers;
  if (!f.out.empty()) std::filesystem::create_directories(f.out);

  // (objective, tied, slice, tau) -> per-checkpoint values, for the seed aggregate.
  std::map<std::tuple<std::string, bool, std::string, double>, std::vector<EvalReport>> agg;
  const bool multi = f.checkpoints.size() > 1;
  for (const auto& path : f.checkpoints) {
    const Labelled l = open_checkpoint(path, f);
    const Denoiser den = make_denoiser(l.ck.params, l.use_relay);
    const FrontierTable table = sweep(den, inputs, taus, l.label, opts);
    for (const auto& r : table.rows) {
      out << l.label.objective << " " << (l.label.tied ? "tied" : "untied") << " seed " << l.label.seed
          << " " << report_line(r.report) << "\n";
      agg[{r.objective, r.tied, std::string(to_string(r.report.slice)), r.tau}].push_back(r.report);
    }
    if (f.out.empty()) continue;
    const std::string dir = multi ? f.out + "/seed" + std::to_string(l.label.seed) : f.out;
    std::filesystem::create_directories(dir);
    for (Slice s : slices) {
      FrontierTable part;
      for (const auto& r : table.rows)
        if (r.report.slice == s) part.add(r);
      emit_report(part, dir + "/" + report_filename(l.label.objective, l.label.tied, s, ReportFormat::Csv),
                  ReportFormat::Csv);
      emit_report(part, dir + "/" + report_filename(l.label.objective, l.label.tied, s, ReportFormat::Json),
                  ReportFormat::Json);
    }
  }
  if (multi) {
    for (const auto& [key, reps] : agg) {
      std::vector<double> acc, nfe;
      for (const auto& r : reps) {
        acc.push_back(100.0 * r.exact_match);
        nfe.push_back(r.mean_nfe);
      }
      char tau[16];
      std::snprintf(tau, sizeof(tau), "%.2f", std::get<3>(key));
      out << std::get<0>(key) << " " << (std::get<1>(key) ? "tied" : "untied") << " " << std::get<2>(key)
          << " tau " << tau << ": acc " << format_mean_sd(mean_sd(acc)) << " %, nfe "
          << format_mean_sd(mean_sd(nfe)) << " over " << reps.size() << " checkpoints\n";
    }
  }
  return 0;
}

int cmd_train(const Flags& f, std::ostream& out) {
  const RunConfig cfg = resolve_config(f);
  // Validate inputs before the output directory is touched.
  if (!std::filesystem::exists(f.data)) throw IoError("cannot open '" + f.data + "'");
  if (!cfg.train.val_data.empty() && !std::filesystem::exists(cfg.train.val_data))
    throw IoError("cannot open '" + cfg.train.val_data + "'");
  run_training(cfg.model, cfg.train, {f.data, f.out, f.resume});
  out << "trained " << to_string(cfg.train.objective) << " for " << cfg.train.total_steps
      << " steps; checkpoint " << f.out << "/checkpoint.rmdm\n";
  return 0;
}

}  // namespace

int dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Relay-state masked diffusion for Sudoku"};
  app.name("relaymdm");
  app.require_subcommand(1, 1);
  Flags f;
  const auto objectives = CLI::IsMember({"mlm", "rollout", "relay_sg", "relay"});
  const auto bools = CLI::IsMember({"true", "false"});

  auto* annotate = app.add_subcommand("annotate", "Attach solver traces to a puzzle file");
  annotate->add_option("--data", f.data, "Puzzle file")->required();
  annotate->add_option("--out", f.out, "Sidecar output")->required();
  annotate->add_option("--workers", f.workers, "Worker threads")->check(CLI::PositiveNumber);
  annotate->add_flag("--with-trajectory", f.with_trajectory, "Store every intermediate board");

  auto* cohort = app.add_subcommand("cohort", "Write the deduction-only cohort");
  cohort->add_option("--data", f.data)->required();
  cohort->add_option("--annotations", f.annotations)->required();
  cohort->add_option("--n", f.n, "Cohort size")->check(CLI::PositiveNumber);
  cohort->add_option("--out", f.out)->required();

  auto* train = app.add_subcommand("train", "Train one objective");
  train->add_option("--config", f.config);
  train->add_option("--seed", f.seed);
  train->add_option("--objective", f.objective)->check(objectives);
  train->add_option("--tied", f.tied)->check(bools);
  train->add_option("--K", f.K)->check(CLI::PositiveNumber);
  train->add_option("--data", f.data)->required();
  train->add_option("--out", f.out)->required();
  train->add_flag("--resume", f.resume, "Continue from the checkpoint in --out");

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint at one threshold");
  eval->add_option("--checkpoint", f.checkpoints)->required()->expected(1);
  eval->add_option("--data", f.data)->required();
  eval->add_option("--annotations", f.annotations);
  eval->add_option("--slice", f.slice)->check(CLI::IsMember({"unfiltered", "deduction_only"}));
  eval->add_option("--tau", f.tau)->check(CLI::PositiveNumber);
  eval->add_option("--n", f.n)->check(CLI::PositiveNumber);
  eval->add_option("--workers", f.workers)->check(CLI::PositiveNumber);
  eval->add_option("--objective", f.objective)->check(objectives);
  eval->add_option("--seed", f.seed);
  eval->add_option("--out", f.out, "Report directory");

  auto* sweep_cmd = app.add_subcommand("sweep", "Threshold sweep over one or more checkpoints");
  sweep_cmd->add_option("--checkpoint", f.checkpoints)->required();
  sweep_cmd->add_option("--data", f.data)->required();
  sweep_cmd->add_option("--annotations", f.annotations);
  sweep_cmd->add_option("--taus", f.taus, "Comma-separated thresholds");
  sweep_cmd->add_option("--n", f.n)->check(CLI::PositiveNumber);
  sweep_cmd->add_option("--workers", f.workers)->check(CLI::PositiveNumber);
  sweep_cmd->add_option("--objective", f.objective)->check(objectives);
  sweep_cmd->add_option("--seed", f.seed);
  sweep_cmd->add_option("--out", f.out, "Report directory");

  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference gradient check");
  gradcheck->add_option("--objective", f.objective)->check(objectives);
  gradcheck->add_option("--K", f.K)->check(CLI::PositiveNumber);
  gradcheck->add_option("--seed", f.seed);
  gradcheck->add_option("--tied", f.tied)->check(bools);

  auto* inspect = app.add_subcommand("inspect", "Parameter count of a config or checkpoint");
  inspect->add_option("--config", f.config);
  inspect->add_option("--checkpoint", f.checkpoints)->expected(1);
  inspect->add_option("--tied", f.tied)->check(bools);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << e.what() << "\n" << app.help();
    return 2;
  }

  try {
    if (*annotate) return cmd_annotate(f, out, err);
    if (*cohort) return cmd_cohort(f, out);
    if (*train) return cmd_train(f, out);
    if (*eval) return cmd_eval(f, out);
    if (*sweep_cmd) return cmd_sweep(f, out);
    if (*gradcheck) return cmd_gradcheck(f, out);
    if (*inspect) return cmd_inspect(f, out);
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  std::vector<const char*> argv{"relaymdm"};
  for (const auto& a : args) argv.push_back(a.c_str());
  return dispatch(static_cast<int>(argv.size()), argv.data(), out, err);
}

}  // namespace relay
