#include <cmath>
#include <cstdio>
#include <sstream>

#include "relay/error.hpp"
#include "relay/evaluation.hpp"
#include "relay/io.hpp"

namespace relay {

namespace {

constexpr const char* kCsvHeader =
    "objective,tied,slice,tau,n,exact_match,mean_nfe,legal_final_rate,mean_rollout_violations,seed";

std::string fixed6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream is(line);
  while (std::getline(is, field, sep)) out.push_back(field);
  if (!line.empty() && line.back() == sep) out.emplace_back();
  return out;
}

}  // namespace

std::string format_report(const FrontierTable& table, ReportFormat format) {
  std::string out;
  if (format == ReportFormat::Csv) {
    out = std::string(kCsvHeader) + "\n";
    for (const auto& r : table.rows) {
      out += r.objective + "," + (r.tied ? "true" : "false") + "," +
             std::string(to_string(r.report.slice)) + "," + fixed6(r.tau) + "," +
             std::to_string(r.report.n) + "," + fixed6(r.report.exact_match) + "," +
             fixed6(r.report.mean_nfe) + "," + fixed6(r.report.legal_final_rate) + "," +
             fixed6(r.report.mean_rollout_violations) + "," + std::to_string(r.seed) + "\n";
    }
    return out;
  }
  out = "[";
  for (std::size_t i = 0; i < table.rows.size(); ++i) {
    const auto& r = table.rows[i];
    out += i ? ",\n " : "\n ";
    out += "{\"objective\":\"" + r.objective + "\",\"tied\":" + (r.tied ? "true" : "false") +
           ",\"slice\":\"" + std::string(to_string(r.report.slice)) + "\",\"tau\":" + fixed6(r.tau) +
           ",\"n\":" + std::to_string(r.report.n) + ",\"exact_match\":" + fixed6(r.report.exact_match) +
           ",\"mean_nfe\":" + fixed6(r.report.mean_nfe) +
           ",\"legal_final_rate\":" + fixed6(r.report.legal_final_rate) +
           ",\"mean_rollout_violations\":" + fixed6(r.report.mean_rollout_violations) +
           ",\"seed\":" + std::to_string(r.seed) + "}";
  }
  out += table.rows.empty() ? "]\n" : "\n]\n";
  return out;
}

void emit_report(const FrontierTable& table, const std::string& path, ReportFormat format) {
  write_file_atomic(path, format_report(table, format));
}

FrontierTable parse_report_csv(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  if (!std::getline(is, line) || line != kCsvHeader) throw FormatError("report CSV header mismatch");
  FrontierTable table;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto f = split(line, ',');
    if (f.size() != 10) throw FormatError("report CSV row must have 10 fields");
    try {
      FrontierRow r;
      r.objective = f[0];
      if (f[1] != "true" && f[1] != "false") throw FormatError("tied must be true or false");
      r.tied = f[1] == "true";
      r.report.slice = slice_from_string(f[2]);
      r.tau = std::stod(f[3]);
      r.report.tau = r.tau;
      r.report.n = std::stoi(f[4]);
      r.report.exact_match = std::stod(f[5]);
      r.report.mean_nfe = std::stod(f[6]);
      r.report.legal_final_rate = std::stod(f[7]);
      r.report.mean_rollout_violations = std::stod(f[8]);
      r.seed = std::stoull(f[9]);
      table.add(std::move(r));
    } catch (const std::logic_error&) {
      throw FormatError("report CSV row has a malformed number: " + line);
    }
  }
  return table;
}

std::string report_filename(const std::string& objective, bool tied, Slice slice,
                            ReportFormat format) {
  return objective + "_" + (tied ? "tied" : "untied") + "_" + std::string(to_string(slice)) +
         (format == ReportFormat::Csv ? ".csv" : ".json");
}

MeanSd mean_sd(std::span<const double> values) {
  MeanSd m;
  if (values.empty()) return m;
  for (double v : values) m.mean += v;
  m.mean /= static_cast<double>(values.size());
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - m.mean) * (v - m.mean);
    m.sd = std::sqrt(ss / static_cast<double>(values.size() - 1));
  }
  return m;
}

std::string format_mean_sd(const MeanSd& m, int decimals) {
  char buf[96];
  std::snprintf(buf, sizeof(buf), "%.*f ± %.*f", decimals, m.mean, decimals, m.sd);
  return buf;
}

}  // namespace relay
