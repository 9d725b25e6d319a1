#include <algorithm>
#include <charconv>
#include <set>
#include <sstream>

#include "relay/error.hpp"
#include "relay/io.hpp"
#include "relay/training.hpp"

namespace relay {

std::string_view to_string(Objective o) {
  switch (o) {
    case Objective::MLM: return "mlm";
    case Objective::Rollout: return "rollout";
    case Objective::RelaySG: return "relay_sg";
    case Objective::Relay: return "relay";
  }
  return "?";
}

Objective objective_from_string(std::string_view s) {
  if (s == "mlm") return Objective::MLM;
  if (s == "rollout") return Objective::Rollout;
  if (s == "relay_sg") return Objective::RelaySG;
  if (s == "relay") return Objective::Relay;
  throw ConfigError("unknown objective '" + std::string(s) + "'");
}

void TrainConfig::validate() const {
  auto require = [](bool ok, const char* what) {
    if (!ok) throw ConfigError(what);
  };
  require(K >= 1, "K must be at least 1");
  require(batch_size >= 1, "batch_size must be positive");
  require(micro_batch >= 0, "micro_batch must be non-negative");
  require(lr >= 0.0, "lr must be non-negative");
  require(weight_decay >= 0.0, "weight_decay must be non-negative");
  require(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0, "betas must lie in [0, 1)");
  require(adam_eps > 0.0, "adam_eps must be positive");
  require(warmup_steps >= 0, "warmup_steps must be non-negative");
  require(grad_clip > 0.0, "grad_clip must be positive");
  require(threshold_mean > 0.0 && threshold_std >= 0.0, "threshold parameters out of range");
  require(mlm_t_floor > 0.0 && mlm_t_floor < 1.0, "mlm_t_floor must lie in (0, 1)");
  require(total_steps >= 0, "total_steps must be non-negative");
  require(log_every >= 1, "log_every must be positive");
  require(val_every >= 1, "val_every must be positive");
  require(val_n >= 1, "val_n must be positive");
  require(checkpoint_every >= 0, "checkpoint_every must be non-negative");
  for (double t : val_taus) require(t > 0.0, "val_taus must be positive");
}

double sample_threshold(Rng& rng, const TrainConfig& cfg) {
  return std::clamp(rng.normal(cfg.threshold_mean, cfg.threshold_std), 0.01, 0.99);
}

namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename Int>
Int parse_int(std::string_view key, std::string_view v) {
  Int out{};
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || ptr != v.data() + v.size())
    throw ConfigError("'" + std::string(key) + "' expects an integer, got '" + std::string(v) + "'");
  return out;
}

double parse_double(std::string_view key, std::string_view v) {
  std::size_t used = 0;
  double out = 0.0;
  try {
    out = std::stod(std::string(v), &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != v.size())
    throw ConfigError("'" + std::string(key) + "' expects a number, got '" + std::string(v) + "'");
  return out;
}

bool parse_bool(std::string_view key, std::string_view v) {
  if (v == "true") return true;
  if (v == "false") return false;
  throw ConfigError("'" + std::string(key) + "' expects true or false");
}

std::vector<double> parse_list(std::string_view key, std::string_view v) {
  std::vector<double> out;
  std::size_t start = 0;
  while (start <= v.size()) {
    const auto comma = v.find(',', start);
    const auto item = trim(v.substr(start, comma == std::string_view::npos ? v.npos : comma - start));
    out.push_back(parse_double(key, item));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

}  // namespace

void set_config_value(RunConfig& cfg, std::string_view key, std::string_view value) {
  ModelConfig& m = cfg.model;
  TrainConfig& t = cfg.train;
  const std::string_view v = trim(value);
  if (key == "n_layers") m.n_layers = parse_int<int>(key, v);
  else if (key == "d_model") m.d_model = parse_int<int>(key, v);
  else if (key == "d_ff") m.d_ff = parse_int<int>(key, v);
  else if (key == "n_heads") m.n_heads = parse_int<int>(key, v);
  else if (key == "head_dim") m.head_dim = parse_int<int>(key, v);
  else if (key == "rotary_width") m.rotary_width = parse_int<int>(key, v);
  else if (key == "dropout") m.dropout = parse_double(key, v);
  else if (key == "vocab_size") m.vocab_size = parse_int<int>(key, v);
  else if (key == "tie_embeddings") m.tie_embeddings = parse_bool(key, v);
  else if (key == "relay_enabled") m.relay_enabled = parse_bool(key, v);
  else if (key == "relay_gamma_init") {
    if (v == "ones") m.relay_gamma_init = GammaInit::Ones;
    else if (v == "zeros") m.relay_gamma_init = GammaInit::Zeros;
    else throw ConfigError("relay_gamma_init expects ones or zeros");
  }
  else if (key == "seq_len") m.seq_len = parse_int<int>(key, v);
  else if (key == "rope_base") m.rope_base = parse_double(key, v);
  else if (key == "init_std") m.init_std = parse_double(key, v);
  else if (key == "K") t.K = parse_int<int>(key, v);
  else if (key == "batch_size") t.batch_size = parse_int<int>(key, v);
  else if (key == "micro_batch") t.micro_batch = parse_int<int>(key, v);
  else if (key == "lr") t.lr = parse_double(key, v);
  else if (key == "weight_decay") t.weight_decay = parse_double(key, v);
  else if (key == "beta1") t.beta1 = parse_double(key, v);
  else if (key == "beta2") t.beta2 = parse_double(key, v);
  else if (key == "adam_eps") t.adam_eps = parse_double(key, v);
  else if (key == "warmup_steps") t.warmup_steps = parse_int<int>(key, v);
  else if (key == "grad_clip") t.grad_clip = parse_double(key, v);
  else if (key == "threshold_mean") t.threshold_mean = parse_double(key, v);
  else if (key == "threshold_std") t.threshold_std = parse_double(key, v);
  else if (key == "tau_per_window") t.tau_per_window = parse_bool(key, v);
  else if (key == "mlm_t_floor") t.mlm_t_floor = parse_double(key, v);
  else if (key == "total_steps") t.total_steps = parse_int<std::int64_t>(key, v);
  else if (key == "log_every") t.log_every = parse_int<int>(key, v);
  else if (key == "val_every") t.val_every = parse_int<int>(key, v);
  else if (key == "val_n") t.val_n = parse_int<int>(key, v);
  else if (key == "val_taus") t.val_taus = parse_list(key, v);
  else if (key == "val_data") t.val_data = std::string(v);
  else if (key == "checkpoint_every") t.checkpoint_every = parse_int<int>(key, v);
  else if (key == "seed") t.seed = parse_int<std::uint64_t>(key, v);
  else if (key == "objective") t.objective = objective_from_string(v);
  else throw ConfigError("unknown config key '" + std::string(key) + "'");
}

RunConfig parse_config(std::string_view text, RunConfig base) {
  std::set<std::string, std::less<>> seen;
  int line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto nl = text.find('\n', pos);
    std::string_view line = text.substr(pos, nl == std::string_view::npos ? text.npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos)
      throw ConfigError("config line " + std::to_string(line_no) + " has no '='");
    const auto key = trim(line.substr(0, eq));
    if (!seen.insert(std::string(key)).second)
      throw ConfigError("config key '" + std::string(key) + "' set twice");
    set_config_value(base, key, line.substr(eq + 1));
  }
  base.model.validate();
  base.train.validate();
  return base;
}

RunConfig load_config(const std::string& path, RunConfig base) {
  return parse_config(read_file(path), std::move(base));
}

nlohmann::json train_config_to_json(const TrainConfig& t) {
  return {{"K", t.K},
          {"batch_size", t.batch_size},
          {"micro_batch", t.micro_batch},
          {"lr", t.lr},
          {"weight_decay", t.weight_decay},
          {"beta1", t.beta1},
          {"beta2", t.beta2},
          {"adam_eps", t.adam_eps},
          {"warmup_steps", t.warmup_steps},
          {"grad_clip", t.grad_clip},
          {"threshold_mean", t.threshold_mean},
          {"threshold_std", t.threshold_std},
          {"tau_per_window", t.tau_per_window},
          {"mlm_t_floor", t.mlm_t_floor},
          {"total_steps", t.total_steps},
          {"log_every", t.log_every},
          {"val_every", t.val_every},
          {"val_n", t.val_n},
          {"val_taus", t.val_taus},
          {"val_data", t.val_data},
          {"checkpoint_every", t.checkpoint_every},
          {"seed", t.seed},
          {"objective", std::string(to_string(t.objective))}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  try {
    TrainConfig t;
    t.K = j.at("K").get<int>();
    t.batch_size = j.at("batch_size").get<int>();
    t.micro_batch = j.at("micro_batch").get<int>();
    t.lr = j.at("lr").get<double>();
    t.weight_decay = j.at("weight_decay").get<double>();
    t.beta1 = j.at("beta1").get<double>();
    t.beta2 = j.at("beta2").get<double>();
    t.adam_eps = j.at("adam_eps").get<double>();
    t.warmup_steps = j.at("warmup_steps").get<int>();
    t.grad_clip = j.at("grad_clip").get<double>();
    t.threshold_mean = j.at("threshold_mean").get<double>();
    t.threshold_std = j.at("threshold_std").get<double>();
    t.tau_per_window = j.at("tau_per_window").get<bool>();
    t.mlm_t_floor = j.at("mlm_t_floor").get<double>();
    t.total_steps = j.at("total_steps").get<std::int64_t>();
    t.log_every = j.at("log_every").get<int>();
    t.val_every = j.at("val_every").get<int>();
    t.val_n = j.at("val_n").get<int>();
    t.val_taus = j.at("val_taus").get<std::vector<double>>();
    t.val_data = j.at("val_data").get<std::string>();
    t.checkpoint_every = j.at("checkpoint_every").get<int>();
    t.seed = j.at("seed").get<std::uint64_t>();
    t.objective = objective_from_string(j.at("objective").get<std::string>());
    return t;
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("malformed training config: ") + e.what());
  }
}

}  // namespace relay
