#include <bit>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "relay/checkpoint.hpp"
#include "relay/error.hpp"

namespace relay {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

using nlohmann::json;

namespace {

constexpr char kMagic[4] = {'R', 'M', 'D', 'M'};

template <typename Int>
void put(std::string& out, Int v) {
  char buf[sizeof(Int)];
  std::memcpy(buf, &v, sizeof(Int));
  out.append(buf, sizeof(Int));
}

template <typename Int>
Int get(const std::string& in, std::size_t& pos) {
  if (pos + sizeof(Int) > in.size()) throw CheckpointError("checkpoint is truncated");
  Int v;
  std::memcpy(&v, in.data() + pos, sizeof(Int));
  pos += sizeof(Int);
  return v;
}

std::int64_t element_count(const std::vector<std::int64_t>& shape) {
  std::int64_t n = 1;
  for (auto s : shape) {
    if (s < 0) throw ShapeError("negative dimension in manifest");
    n *= s;
  }
  return n;
}

}  // namespace

const NamedArray* Container::find(const std::string& name) const {
  for (const auto& a : arrays)
    if (a.name == name) return &a;
  return nullptr;
}

void write_container(const std::string& path, const json& config, const json& meta,
                     const std::vector<NamedArray>& arrays) {
  json manifest = json::array();
  std::int64_t offset = 0;
  for (const auto& a : arrays) {
    if (element_count(a.shape) != static_cast<std::int64_t>(a.data.size()))
      throw ShapeError("array '" + a.name + "' data does not match its shape");
    const std::int64_t bytes = static_cast<std::int64_t>(a.data.size() * sizeof(float));
    manifest.push_back({{"name", a.name}, {"shape", a.shape}, {"offset", offset}, {"bytes", bytes}});
    offset += bytes;
  }
  const json header = {{"config", config}, {"meta", meta}, {"arrays", manifest}};
  const std::string text = header.dump();

  std::string blob(kMagic, 4);
  put<std::uint32_t>(blob, kCheckpointVersion);
  put<std::uint64_t>(blob, text.size());
  blob += text;

  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write '" + tmp + "'");
    out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
    for (const auto& a : arrays)
      out.write(reinterpret_cast<const char*>(a.data.data()),
                static_cast<std::streamsize>(a.data.size() * sizeof(float)));
    if (!out) throw IoError("write failed for '" + tmp + "'");
  }
  std::filesystem::rename(tmp, path);
}

Container read_container(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + path + "'");
  const std::string blob((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (blob.size() < 4 || std::memcmp(blob.data(), kMagic, 4) != 0)
    throw CheckpointError("'" + path + "' is not an RMDM checkpoint");
  std::size_t pos = 4;
  const auto version = get<std::uint32_t>(blob, pos);
  if (version != kCheckpointVersion)
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  const auto header_len = get<std::uint64_t>(blob, pos);
  if (pos + header_len > blob.size()) throw CheckpointError("checkpoint header is truncated");

  Container c;
  try {
    c.header = json::parse(blob.substr(pos, header_len));
  } catch (const json::exception& e) {
    throw CheckpointError(std::string("checkpoint header is not valid JSON: ") + e.what());
  }
  pos += header_len;
  const std::size_t data_size = blob.size() - pos;

  try {
    for (const auto& entry : c.header.at("arrays")) {
      NamedArray a;
      a.name = entry.at("name").get<std::string>();
      a.shape = entry.at("shape").get<std::vector<std::int64_t>>();
      const auto offset = entry.at("offset").get<std::int64_t>();
      const auto bytes = entry.at("bytes").get<std::int64_t>();
      const std::int64_t n = element_count(a.shape);
      if (bytes != n * static_cast<std::int64_t>(sizeof(float)))
        throw ShapeError("array '" + a.name + "' byte count disagrees with its shape");
      if (offset < 0 || static_cast<std::size_t>(offset + bytes) > data_size)
        throw CheckpointError("array '" + a.name + "' extends past the end of the file");
      a.data.resize(static_cast<std::size_t>(n));
      std::memcpy(a.data.data(), blob.data() + pos + offset, static_cast<std::size_t>(bytes));
      c.arrays.push_back(std::move(a));
    }
  } catch (const json::exception& e) {
    throw CheckpointError(std::string("malformed checkpoint manifest: ") + e.what());
  }
  return c;
}

json config_to_json(const ModelConfig& cfg) {
  return {{"n_layers", cfg.n_layers},
          {"d_model", cfg.d_model},
          {"d_ff", cfg.d_ff},
          {"n_heads", cfg.n_heads},
          {"head_dim", cfg.head_dim},
          {"rotary_width", cfg.rotary_width},
          {"dropout", cfg.dropout},
          {"vocab_size", cfg.vocab_size},
          {"tie_embeddings", cfg.tie_embeddings},
          {"relay_enabled", cfg.relay_enabled},
          {"relay_gamma_init", cfg.relay_gamma_init == GammaInit::Ones ? "ones" : "zeros"},
          {"seq_len", cfg.seq_len},
          {"rope_base", cfg.rope_base},
          {"init_std", cfg.init_std}};
}

ModelConfig config_from_json(const json& j) {
  try {
    ModelConfig cfg;
    cfg.n_layers = j.at("n_layers").get<int>();
    cfg.d_model = j.at("d_model").get<int>();
    cfg.d_ff = j.at("d_ff").get<int>();
    cfg.n_heads = j.at("n_heads").get<int>();
    cfg.head_dim = j.at("head_dim").get<int>();
    cfg.rotary_width = j.at("rotary_width").get<int>();
    cfg.dropout = j.at("dropout").get<double>();
    cfg.vocab_size = j.at("vocab_size").get<int>();
    cfg.tie_embeddings = j.at("tie_embeddings").get<bool>();
    cfg.relay_enabled = j.at("relay_enabled").get<bool>();
    const auto gamma = j.at("relay_gamma_init").get<std::string>();
    if (gamma != "ones" && gamma != "zeros") throw ConfigError("relay_gamma_init must be ones or zeros");
    cfg.relay_gamma_init = gamma == "ones" ? GammaInit::Ones : GammaInit::Zeros;
    cfg.seq_len = j.at("seq_len").get<int>();
    cfg.rope_base = j.at("rope_base").get<double>();
    cfg.init_std = j.at("init_std").get<double>();
    cfg.validate();
    return cfg;
  } catch (const json::exception& e) {
    throw CheckpointError(std::string("malformed config in checkpoint: ") + e.what());
  }
}

std::vector<NamedArray> model_arrays(const ModelParams<float>& p, const std::string& prefix) {
  std::vector<NamedArray> out;
  for (const auto& t : tensors(p)) {
    NamedArray a;
    a.name = prefix + t.name;
    a.shape = {t.rows, t.cols};
    a.data.assign(t.data, t.data + t.size());
    out.push_back(std::move(a));
  }
  return out;
}

ModelParams<float> params_from_arrays(const ModelConfig& cfg, const Container& c,
                                      const std::string& prefix) {
  ModelParams<float> p = zeros_like(build_model<float>(cfg, 0));
  for (auto& t : tensors(p)) {
    const NamedArray* a = c.find(prefix + t.name);
    if (!a) throw ShapeError("checkpoint is missing array '" + prefix + t.name + "'");
    if (a->shape != std::vector<std::int64_t>{t.rows, t.cols})
      throw ShapeError("array '" + a->name + "' has the wrong shape for the config");
    std::memcpy(t.data, a->data.data(), a->data.size() * sizeof(float));
  }
  // Arrays the config does not allocate would otherwise be silently dropped.
  for (const char* name : {"unembedding", "relay_norm.scale", "relay_norm.shift"}) {
    const bool allocated = [&] {
      for (const auto& t : tensors(p))
        if (t.name == name) return true;
      return false;
    }();
    if (!allocated && c.find(prefix + name))
      throw ConfigError(std::string("checkpoint carries '") + name +
                        "' which the config does not allocate");
  }
  return p;
}

void save_checkpoint(const std::string& path, const ModelParams<float>& p, const json& meta) {
  write_container(path, config_to_json(p.config), meta, model_arrays(p));
}

LoadedCheckpoint load_checkpoint(const std::string& path, const ModelConfig* expected) {
  Container c = read_container(path);
  const ModelConfig stored = config_from_json(c.header.at("config"));
  ModelConfig cfg = stored;
  if (expected) {
    if (expected->tie_embeddings != stored.tie_embeddings)
      throw ConfigError("checkpoint tying does not match the requested config");
    if (expected->relay_enabled != stored.relay_enabled)
      throw ConfigError("checkpoint relay flag does not match the requested config");
    ModelConfig a = *expected, b = stored;
    a.dropout = b.dropout = 0.0;
    if (!(a == b)) throw ConfigError("checkpoint architecture does not match the requested config");
    cfg = *expected;
  }
  LoadedCheckpoint out{params_from_arrays(cfg, c), c.header.value("meta", json::object())};
  return out;
}

}  // namespace relay
