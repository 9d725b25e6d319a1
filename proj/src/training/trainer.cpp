#include <cmath>
#include <cstdio>
#include <filesystem>
#include <sstream>

#include "relay/checkpoint.hpp"
#include "relay/error.hpp"
#include "relay/io.hpp"
#include "relay/training.hpp"

namespace relay {

using nlohmann::json;

Trainer::Trainer(const ModelConfig& model, const TrainConfig& train,
                 const std::vector<sudoku::PuzzleRecord>* data)
    : model_(model), train_(train), data_(data) {
  model_.validate();
  train_.validate();
  if (!data_ || data_->empty()) throw EmptySetError("training needs at least one record");
  if (model_.seq_len != sudoku::kCells) throw ConfigError("sudoku training needs seq_len 81");
  if ((train_.objective == Objective::Relay || train_.objective == Objective::RelaySG) &&
      !model_.relay_enabled)
    throw ConfigError("relay objectives need relay_enabled = true");
  Rng master(train_.seed);
  params_ = build_model<float>(model_, master.next_u64());
  data_rng_ = master.split();
  tau_rng_ = master.split();
  dropout_rng_ = master.split();
  adam_ = make_adam(params_);
  pool_.resize(train_.batch_size);
  for (auto& e : pool_) e.finished = true;
}

void Trainer::reseed_finished() {
  for (auto& e : pool_) {
    if (!e.finished) continue;
    const int idx = static_cast<int>(data_rng_.below(data_->size()));
    e = start_episode<float>((*data_)[idx], model_, idx);
  }
}

void Trainer::numeric_failure(double loss, std::span<const int> members) const {
  std::ostringstream os;
  os << "non-finite loss " << loss << " at step " << step_;
  for (int e : members) {
    const auto& ep = pool_[e];
    os << "\n  episode " << e << " record " << ep.record << " tokens ";
    for (int t : ep.seq.tokens) os << (t == token::kMask ? '_' : static_cast<char>('0' + t % 10));
    os << " masked " << ep.seq.masked_count();
  }
  throw NumericError(os.str());
}

StepMetrics Trainer::step() {
  const int B = train_.batch_size;
  const int micro = train_.micro_batch > 0 ? std::min(train_.micro_batch, B) : B;
  const double scale = 1.0 / B;
  Rng* dropout = model_.dropout > 0.0 ? &dropout_rng_ : nullptr;

  StepMetrics m;
  m.step = step_ + 1;
  ModelParams<float> grads = zeros_like(params_);
  double loss_sum = 0.0;

  if (train_.objective == Objective::MLM) {
    std::vector<std::vector<int>> x0(B);
    std::vector<std::vector<std::uint8_t>> clue(B);
    std::vector<int> records(B);
    for (int i = 0; i < B; ++i) {
      records[i] = static_cast<int>(data_rng_.below(data_->size()));
      const auto& r = (*data_)[records[i]];
      x0[i].assign(r.solution.begin(), r.solution.end());
      for (int c = 0; c < sudoku::kCells; ++c) clue[i].push_back(r.puzzle[c] != 0);
    }
    const MlmBatch batch = sample_mlm_batch(x0, clue, train_.mlm_t_floor, data_rng_);
    for (int b0 = 0; b0 < B; b0 += micro) {
      const int n = std::min(micro, B - b0);
      MlmBatch sub;
      sub.x0.assign(batch.x0.begin() + b0, batch.x0.begin() + b0 + n);
      sub.inputs.assign(batch.inputs.begin() + b0, batch.inputs.begin() + b0 + n);
      sub.t.assign(batch.t.begin() + b0, batch.t.begin() + b0 + n);
      const double l = mlm_loss(params_, sub, dropout, &grads, scale);
      if (!std::isfinite(l)) {
        std::ostringstream os;
        os << "non-finite MLM loss at step " << step_ << " over records";
        for (int i = b0; i < b0 + n; ++i) os << ' ' << records[i];
        throw NumericError(os.str());
      }
      loss_sum += l * n;
    }
    last_traces_.clear();
  } else {
    reseed_finished();
    last_traces_.assign(B, {});
    RolloutControl ctl{&train_, &tau_rng_, dropout, nullptr, scale};
    for (int b0 = 0; b0 < B; b0 += micro) {
      const int n = std::min(micro, B - b0);
      std::span<EpisodeState<float>> chunk(pool_.data() + b0, n);
      WindowResult w = rollout_window(params_, chunk, train_.objective, train_.K, ctl, &grads);
      if (!std::isfinite(w.loss)) {
        std::vector<int> members(n);
        for (int i = 0; i < n; ++i) members[i] = b0 + i;
        numeric_failure(w.loss, members);
      }
      loss_sum += w.loss * n;
      for (int i = 0; i < n; ++i) last_traces_[b0 + i] = std::move(w.traces[i]);
    }
    for (const auto& e : pool_) m.episodes_finished += e.finished ? 1 : 0;
  }

  m.loss = loss_sum / B;
  m.lr = learning_rate(train_, step_);
  m.grad_norm = clip_global_norm(grads, train_.grad_clip);
  adamw_update(params_, grads, adam_, train_, m.lr);
  ++step_;
  return m;
}

void Trainer::save(const std::string& path) const {
  auto arrays = model_arrays(params_);
  for (auto& a : model_arrays(adam_.m, "adam.m.")) arrays.push_back(std::move(a));
  for (auto& a : model_arrays(adam_.v, "adam.v.")) arrays.push_back(std::move(a));

  json pool = json::array();
  NamedArray h{"pool.h", {0, 0}, {}};
  for (const auto& e : pool_) {
    pool.push_back({{"record", e.record},
                    {"x0", e.x0},
                    {"tokens", e.seq.tokens},
                    {"masked", e.seq.masked},
                    {"clue", e.seq.clue},
                    {"finished", e.finished}});
    if (e.h.size() > 0) {
      h.data.insert(h.data.end(), e.h.data(), e.h.data() + e.h.size());
      h.shape = {h.shape[0] + e.h.rows(), e.h.cols()};
    }
  }
  arrays.push_back(std::move(h));

  const json meta = {{"kind", "trainer"},
                     {"train", train_config_to_json(train_)},
                     {"step", step_},
                     {"adam_t", adam_.t},
                     {"dataset_size", data_->size()},
                     {"rng",
                      {{"data", data_rng_.serialize()},
                       {"tau", tau_rng_.serialize()},
                       {"dropout", dropout_rng_.serialize()}}},
                     {"pool", pool}};
  write_container(path, config_to_json(model_), meta, arrays);
}

Trainer Trainer::load(const std::string& path, const std::vector<sudoku::PuzzleRecord>* data) {
  const Container c = read_container(path);
  const json& meta = c.header.at("meta");
  if (meta.value("kind", "") != "trainer")
    throw CheckpointError("'" + path + "' holds no training state");
  const ModelConfig model = config_from_json(c.header.at("config"));
  Trainer t(model, train_config_from_json(meta.at("train")), data);
  if (meta.at("dataset_size").get<std::size_t>() != data->size())
    throw ConfigError("resume dataset differs from the one the run started with");
  try {
    t.params_ = params_from_arrays(model, c);
    t.adam_.m = params_from_arrays(model, c, "adam.m.");
    t.adam_.v = params_from_arrays(model, c, "adam.v.");
    t.adam_.t = meta.at("adam_t").get<std::int64_t>();
    t.step_ = meta.at("step").get<std::int64_t>();
    t.data_rng_ = Rng::deserialize(meta.at("rng").at("data").get<std::string>());
    t.tau_rng_ = Rng::deserialize(meta.at("rng").at("tau").get<std::string>());
    t.dropout_rng_ = Rng::deserialize(meta.at("rng").at("dropout").get<std::string>());

    const NamedArray* h = c.find("pool.h");
    if (!h) throw ShapeError("checkpoint is missing array 'pool.h'");
    const auto& pool = meta.at("pool");
    if (pool.size() != t.pool_.size()) throw ShapeError("episode pool size mismatch");
    std::size_t offset = 0;
    const std::size_t block = model.relay_enabled ? std::size_t(model.seq_len) * model.d_model : 0;
    for (std::size_t i = 0; i < pool.size(); ++i) {
      auto& e = t.pool_[i];
      e.record = pool[i].at("record").get<int>();
      e.x0 = pool[i].at("x0").get<std::vector<int>>();
      e.seq.tokens = pool[i].at("tokens").get<std::vector<int>>();
      e.seq.masked = pool[i].at("masked").get<std::vector<std::uint8_t>>();
      e.seq.clue = pool[i].at("clue").get<std::vector<std::uint8_t>>();
      e.finished = pool[i].at("finished").get<bool>();
      if (e.record >= 0 && block > 0) {
        if (offset + block > h->data.size()) throw ShapeError("pool.h is too short");
        e.h = Eigen::Map<const Matrix<float>>(h->data.data() + offset, model.seq_len, model.d_model);
        offset += block;
      }
    }
  } catch (const json::exception& e) {
    throw CheckpointError(std::string("malformed training state: ") + e.what());
  }
  return t;
}

namespace {

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), f, v);
  return buf;
}

std::string metrics_row(const StepMetrics& m, Objective o, const FrontierTable* val) {
  std::string row = std::to_string(m.step) + "," + std::string(to_string(o)) + "," +
                    fmt("%.6f", m.loss) + "," + fmt("%.6e", m.lr) + "," + fmt("%.6f", m.grad_norm) +
                    "," + std::to_string(m.episodes_finished) + ",";
  std::string em, nfe;
  if (val) {
    for (const auto& r : val->rows) {
      if (std::abs(r.tau - 0.15) < 1e-12) {
        em = fmt("%.6f", r.report.exact_match);
        nfe = fmt("%.6f", r.report.mean_nfe);
      }
    }
  }
  return row + em + "," + nfe + "\n";
}

// Rows logged after the checkpoint a resumed run restarts from are dropped.
std::string truncate_metrics(const std::string& text, std::int64_t steps_done) {
  std::istringstream is(text);
  std::string line, out;
  bool header = true;
  while (std::getline(is, line)) {
    if (header) {
      if (line != kMetricsHeader) throw FormatError("existing metrics log has a different header");
      out += line + "\n";
      header = false;
      continue;
    }
    if (line.empty()) continue;
    if (std::stoll(line.substr(0, line.find(','))) <= steps_done) out += line + "\n";
  }
  return header ? std::string(kMetricsHeader) + "\n" : out;
}

}  // namespace

void run_training(const ModelConfig& model, const TrainConfig& train, const TrainingPaths& paths) {
  model.validate();
  train.validate();
  const auto data = sudoku::read_puzzle_file(paths.data);
  if (data.records.empty()) throw EmptySetError("no usable records in '" + paths.data + "'");
  std::vector<sudoku::PuzzleRecord> val;
  if (!train.val_data.empty()) {
    auto v = sudoku::read_puzzle_file(train.val_data).records;
    if (v.size() > static_cast<std::size_t>(train.val_n)) v.resize(train.val_n);
    val = std::move(v);
  }

  std::filesystem::create_directories(paths.out_dir);
  const std::string ckpt = paths.out_dir + "/checkpoint.rmdm";
  const std::string metrics_path = paths.out_dir + "/metrics.csv";

  const bool resuming = paths.resume && std::filesystem::exists(ckpt);
  Trainer tr = resuming ? Trainer::load(ckpt, &data.records) : Trainer(model, train, &data.records);
  if (resuming) {
    if (tr.train_config().objective != train.objective)
      throw ConfigError("resume objective differs from the checkpoint");
    tr.set_total_steps(train.total_steps);
  }
  std::string metrics = resuming && std::filesystem::exists(metrics_path)
                            ? truncate_metrics(read_file(metrics_path), tr.steps_done())
                            : std::string(kMetricsHeader) + "\n";

  const TrainConfig& cfg = tr.train_config();
  const int ckpt_every = cfg.checkpoint_every > 0 ? cfg.checkpoint_every : cfg.val_every;
  const bool use_relay = cfg.objective == Objective::Relay || cfg.objective == Objective::RelaySG;

  if (tr.steps_done() >= cfg.total_steps) {
    write_file_atomic(metrics_path, metrics);
    tr.save(ckpt);
    return;
  }
  while (tr.steps_done() < cfg.total_steps) {
    const StepMetrics m = tr.step();
    const std::int64_t s = tr.steps_done();
    const bool last = s == cfg.total_steps;

    std::optional<FrontierTable> table;
    if (!val.empty() && (s % cfg.val_every == 0 || last)) {
      const Denoiser den = make_denoiser(tr.params(), use_relay);
      const SliceRecords slices[] = {{Slice::Unfiltered, &val}};
      table = sweep(den, slices, cfg.val_taus,
                    {std::string(to_string(cfg.objective)), tr.params().config.tie_embeddings, cfg.seed});
      emit_report(*table, paths.out_dir + "/val_step" + std::to_string(s) + ".csv", ReportFormat::Csv);
    }
    const bool log = s % cfg.log_every == 0 || last || table;
    if (log) {
      metrics += metrics_row(m, cfg.objective, table ? &*table : nullptr);
      write_file_atomic(metrics_path, metrics);
    }
    if (s % ckpt_every == 0 || last) tr.save(ckpt);
  }
}

}  // namespace relay
