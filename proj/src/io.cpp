#include "dspp/io.hpp"

#include "dspp/error.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <optional>
#include <sstream>

namespace dspp {

using nlohmann::json;

// ---- config ------------------------------------------------------------------------------------

json to_json(const ModelConfig& c) {
  json j;
  j["family"] = to_string(c.family);
  j["layers"] = c.layers;
  j["hidden_width"] = c.hidden_width;
  j["inducing_points"] = c.inducing_points;
  j["quadrature"] = to_string(c.quadrature);
  j["quadrature_sites"] = c.quadrature_sites;
  j["mc_samples"] = c.mc_samples;
  j["eval_mc_samples"] = c.eval_mc_samples;
  j["topology"] = c.topology;
  j["covariance"] = c.covariance ? json(to_string(*c.covariance)) : json(nullptr);
  j["smoothness"] = to_string(c.smoothness);
  j["lmc"] = c.lmc;
  return j;
}

json to_json(const TrainConfig& c) {
  json j;
  j["lr0"] = c.lr0;
  j["epochs"] = c.epochs;
  j["batch_size"] = c.batch_size;
  j["beta_reg"] = c.beta_reg ? json(*c.beta_reg) : json(nullptr);
  j["restarts"] = c.restarts;
  j["warmup_epochs"] = c.warmup_epochs ? json(*c.warmup_epochs) : json(nullptr);
  j["seed"] = c.seed;
  j["adam"] = {{"beta1", c.adam.beta1}, {"beta2", c.adam.beta2}, {"eps", c.adam.eps}};
  return j;
}

json to_json(const DataConfig& c) {
  json j;
  j["path"] = c.path;
  j["targets"] = c.targets;
  j["synthetic"] = c.synthetic;
  j["synthetic_n"] = c.synthetic_n;
  j["synthetic_d"] = c.synthetic_d;
  j["synthetic_dy"] = c.synthetic_dy;
  j["split_seed"] = c.split_seed;
  j["split_index"] = c.split_index;
  j["name"] = c.name;
  return j;
}

json to_json(const RunConfig& c) {
  return {{"schema_version", kConfigSchemaVersion},
          {"model", to_json(c.model)},
          {"training", to_json(c.train)},
          {"data", to_json(c.data)}};
}

namespace {

class Reader {
 public:
  Reader(const json& j, std::string section) : j_(j), section_(std::move(section)) {
    if (!j_.is_object()) throw ConfigError("config section '" + section_ + "' must be an object");
  }

  template <typename T>
  void read(const char* key, T& out) {
    seen_.emplace_back(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception& e) {
      throw ConfigError("config key '" + section_ + "." + key + "': " + e.what());
    }
  }

  template <typename T>
  void read_optional(const char* key, std::optional<T>& out) {
    seen_.emplace_back(key);
    if (!j_.contains(key)) return;
    if (j_.at(key).is_null()) {
      out.reset();
      return;
    }
    T v{};
    read(key, v);
    out = v;
  }

  /// String-valued key; a JSON null calls `apply` with nullopt.
  template <typename F>
  void read_text(const char* key, F&& apply) {
    seen_.emplace_back(key);
    if (!j_.contains(key)) return;
    const json& v = j_.at(key);
    if (!v.is_string() && !v.is_null()) {
      throw ConfigError("config key '" + section_ + "." + key + "' must be a string");
    }
    try {
      apply(v.is_null() ? std::optional<std::string>{} : std::optional<std::string>{v.get<std::string>()});
    } catch (const std::invalid_argument& e) {
      throw ConfigError("config key '" + section_ + "." + key + "': " + e.what());
    }
  }

  void finish() const {
    for (const auto& [k, v] : j_.items()) {
      if (std::find(seen_.begin(), seen_.end(), k) == seen_.end()) {
        throw ConfigError("unknown config key '" + section_ + "." + k + "'");
      }
    }
  }

 private:
  const json& j_;
  std::string section_;
  std::vector<std::string> seen_;
};

}  // namespace

namespace {

template <typename Parse>
auto required(Parse parse, const char* what) {
  return [parse, what](const std::optional<std::string>& s) {
    if (!s) throw std::invalid_argument(std::string(what) + " may not be null");
    return parse(*s);
  };
}

}  // namespace

RunConfig run_config_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  if (!j.contains("schema_version")) throw ConfigError("config lacks schema_version");
  if (j.at("schema_version") != kConfigSchemaVersion) {
    throw ConfigError("unsupported config schema_version " + j.at("schema_version").dump());
  }
  for (const auto& [k, v] : j.items()) {
    if (k != "schema_version" && k != "model" && k != "training" && k != "data") {
      throw ConfigError("unknown config section '" + k + "'");
    }
  }
  RunConfig c;
  if (j.contains("model")) {
    Reader r(j.at("model"), "model");
    ModelConfig& m = c.model;
    r.read_text("family", [&](const auto& s) { m.family = required(parse_family, "family")(s); });
    r.read("layers", m.layers);
    r.read("hidden_width", m.hidden_width);
    r.read("inducing_points", m.inducing_points);
    r.read_text("quadrature",
                [&](const auto& s) { m.quadrature = required(parse_quadrature_kind, "quadrature")(s); });
    r.read("quadrature_sites", m.quadrature_sites);
    r.read("mc_samples", m.mc_samples);
    r.read("eval_mc_samples", m.eval_mc_samples);
    r.read("topology", m.topology);
    r.read_text("covariance", [&](const auto& s) {
      m.covariance = s ? std::optional<CovarianceForm>(parse_covariance_form(*s)) : std::nullopt;
    });
    r.read_text("smoothness", [&](const auto& s) { m.smoothness = required(parse_smoothness, "smoothness")(s); });
    r.read("lmc", m.lmc);
    r.finish();
  }
  if (j.contains("training")) {
    Reader r(j.at("training"), "training");
    TrainConfig& t = c.train;
    r.read("lr0", t.lr0);
    r.read("epochs", t.epochs);
    r.read("batch_size", t.batch_size);
    r.read_optional("beta_reg", t.beta_reg);
    r.read("restarts", t.restarts);
    r.read_optional("warmup_epochs", t.warmup_epochs);
    r.read("seed", t.seed);
    json adam = json::object();
    r.read("adam", adam);
    Reader a(adam, "training.adam");
    a.read("beta1", t.adam.beta1);
    a.read("beta2", t.adam.beta2);
    a.read("eps", t.adam.eps);
    a.finish();
    r.finish();
  }
  if (j.contains("data")) {
    Reader r(j.at("data"), "data");
    DataConfig& d = c.data;
    r.read("path", d.path);
    r.read("targets", d.targets);
    r.read("synthetic", d.synthetic);
    r.read("synthetic_n", d.synthetic_n);
    r.read("synthetic_d", d.synthetic_d);
    r.read("synthetic_dy", d.synthetic_dy);
    r.read("split_seed", d.split_seed);
    r.read("split_index", d.split_index);
    r.read("name", d.name);
    r.finish();
  }
  try {
    c.model.validate();
    c.train.validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return c;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path + "'");
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError("config '" + path + "' is not valid JSON: " + e.what());
  }
  return run_config_from_json(j);
}

void apply_override(json& doc, const std::string& assignment) {
  const std::size_t eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not key=value");
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(text);
  } catch (const json::exception&) {
    value = text;
  }
  json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const std::size_t dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw ConfigError("override key '" + key + "' has an empty component");
    if (dot == std::string::npos) {
      (*node)[part] = value;
      break;
    }
    json& child = (*node)[part];
    if (child.is_null()) child = json::object();
    if (!child.is_object()) throw ConfigError("override key '" + key + "' descends into a non-object");
    node = &child;
    start = dot + 1;
  }
}

// ---- checkpoints -------------------------------------------------------------------------------

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

template <typename T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

class Cursor {
 public:
  explicit Cursor(const std::string& bytes) : bytes_(bytes) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }

  std::string take(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  [[nodiscard]] bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw std::runtime_error("checkpoint is truncated");
  }

  const std::string& bytes_;
  std::size_t pos_ = 0;
};

void fnv(std::uint64_t& h, const void* data, std::size_t n) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ULL;
  }
}

}  // namespace

std::uint64_t schema_hash(const std::vector<NamedParam>& table) {
  std::uint64_t h = 14695981039346656037ULL;
  for (const NamedParam& p : table) {
    fnv(h, p.name.data(), p.name.size());
    const auto rows = static_cast<std::uint64_t>(p.value.rows());
    const auto cols = static_cast<std::uint64_t>(p.value.cols());
    fnv(h, &rows, sizeof rows);
    fnv(h, &cols, sizeof cols);
  }
  return h;
}

std::string encode_checkpoint(const Checkpoint& ckpt) {
  std::string out(kCheckpointMagic, sizeof kCheckpointMagic);
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint64_t>(out, schema_hash(ckpt.table));
  const std::string meta = ckpt.meta.dump();
  put<std::uint64_t>(out, meta.size());
  out += meta;
  put<std::uint64_t>(out, ckpt.table.size());
  for (const NamedParam& p : ckpt.table) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(p.name.size()));
    out += p.name;
    put<std::uint64_t>(out, static_cast<std::uint64_t>(p.value.rows()));
    put<std::uint64_t>(out, static_cast<std::uint64_t>(p.value.cols()));
    for (Eigen::Index k = 0; k < p.value.size(); ++k) put<double>(out, p.value.data()[k]);
  }
  return out;
}

Checkpoint decode_checkpoint(const std::string& bytes) {
  Cursor c(bytes);
  if (c.take(sizeof kCheckpointMagic) != std::string(kCheckpointMagic, sizeof kCheckpointMagic)) {
    throw std::runtime_error("not a checkpoint (bad magic)");
  }
  const auto version = c.get<std::uint32_t>();
  if (version != kCheckpointVersion) throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));
  const auto hash = c.get<std::uint64_t>();
  Checkpoint ckpt;
  const auto meta_len = c.get<std::uint64_t>();
  try {
    ckpt.meta = json::parse(c.take(meta_len));
  } catch (const json::exception& e) {
    throw std::runtime_error(std::string("checkpoint metadata is not valid JSON: ") + e.what());
  }
  const auto count = c.get<std::uint64_t>();
  for (std::uint64_t i = 0; i < count; ++i) {
    NamedParam p;
    p.name = c.take(c.get<std::uint32_t>());
    const auto rows = c.get<std::uint64_t>();
    const auto cols = c.get<std::uint64_t>();
    p.value.resize(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    for (Eigen::Index k = 0; k < p.value.size(); ++k) p.value.data()[k] = c.get<double>();
    ckpt.table.push_back(std::move(p));
  }
  if (!c.done()) throw std::runtime_error("checkpoint has trailing bytes");
  if (schema_hash(ckpt.table) != hash) throw std::runtime_error("checkpoint schema hash mismatch");
  return ckpt;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write checkpoint '" + path + "'");
  const std::string bytes = encode_checkpoint(ckpt);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("failed writing checkpoint '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return decode_checkpoint(ss.str());
}

Checkpoint make_checkpoint(const Model& model, const Standardizer& standardizer, const json& meta) {
  Checkpoint ckpt;
  ckpt.meta = meta;
  ckpt.meta["model"] = to_json(model.config());
  ckpt.meta["input_dim"] = model.input_dim();
  ckpt.meta["output_dims"] = model.output_dims();
  ckpt.table = model.params().entries();
  ckpt.table.push_back({"data.x_mean", standardizer.x_mean});
  ckpt.table.push_back({"data.x_scale", standardizer.x_scale});
  ckpt.table.push_back({"data.y_mean", standardizer.y_mean});
  ckpt.table.push_back({"data.y_scale", standardizer.y_scale});
  return ckpt;
}

LoadedModel restore_checkpoint(const Checkpoint& ckpt) {
  json doc = {{"schema_version", kConfigSchemaVersion}, {"model", ckpt.meta.at("model")}};
  const ModelConfig config = run_config_from_json(doc).model;
  Model model(config, ckpt.meta.at("input_dim").get<int>(), ckpt.meta.at("output_dims").get<int>());
  auto lookup = [&](const std::string& name) -> const Eigen::MatrixXd& {
    for (const NamedParam& p : ckpt.table) {
      if (p.name == name) return p.value;
    }
    throw std::runtime_error("checkpoint lacks '" + name + "'");
  };
  ParamSet& ps = model.params();
  for (std::size_t b = 0; b < ps.blocks(); ++b) {
    const Eigen::MatrixXd& v = lookup(ps[b].name);
    if (v.rows() != ps.value(b).rows() || v.cols() != ps.value(b).cols()) {
      throw DimensionMismatch("checkpoint entry '" + ps[b].name + "' has the wrong shape");
    }
    ps.value(b) = v;
  }
  if (ckpt.table.size() != ps.blocks() + 4) throw std::runtime_error("checkpoint has unexpected entries");
  Standardizer s;
  s.x_mean = lookup("data.x_mean");
  s.x_scale = lookup("data.x_scale");
  s.y_mean = lookup("data.y_mean");
  s.y_scale = lookup("data.y_scale");
  return {std::move(model), std::move(s), ckpt.meta};
}

}  // namespace dspp
