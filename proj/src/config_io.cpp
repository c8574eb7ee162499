#include "d3kit/config_io.hpp"

#include <fstream>
#include <initializer_list>
#include <sstream>

#include "d3kit/errors.hpp"

namespace d3kit {

using nlohmann::json;
using nlohmann::ordered_json;

json load_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("malformed JSON in '" + path + "': " + e.what());
  }
}

namespace {

// Typed access to one JSON object with unknown-key rejection.
class Fields {
 public:
  Fields(const json& j, std::string what, std::initializer_list<const char*> keys)
      : j_(j), what_(std::move(what)) {
    if (!j.is_object()) throw ConfigError(what_ + " must be a JSON object");
    for (const auto& [key, value] : j.items()) {
      bool known = false;
      for (const char* k : keys) known = known || key == k;
      if (!known) throw ConfigError(what_ + ": unknown key '" + key + "'");
    }
  }

  bool has(const char* key) const { return j_.contains(key); }
  const json& at(const char* key) const {
    if (!has(key)) throw ConfigError(what_ + ": missing '" + key + "'");
    return j_.at(key);
  }

  std::size_t count(const char* key) const { return as_count(at(key), key); }
  std::size_t count(const char* key, std::size_t fallback) const {
    return has(key) ? count(key) : fallback;
  }
  double real(const char* key, double fallback) const {
    if (!has(key)) return fallback;
    const json& v = j_.at(key);
    if (!v.is_number()) throw ConfigError(what_ + ": '" + key + "' must be a number");
    return v.get<double>();
  }
  std::string text(const char* key, const std::string& fallback) const {
    if (!has(key)) return fallback;
    const json& v = j_.at(key);
    if (!v.is_string()) throw ConfigError(what_ + ": '" + key + "' must be a string");
    return v.get<std::string>();
  }

  std::size_t as_count(const json& v, const std::string& key) const {
    if (!v.is_number_unsigned()) {
      throw ConfigError(what_ + ": '" + key + "' must be a non-negative integer");
    }
    return v.get<std::size_t>();
  }

  const std::string& what() const { return what_; }

 private:
  const json& j_;
  std::string what_;
};

std::pair<std::size_t, std::size_t> kernel_of(const Fields& f) {
  if (!f.has("kernel")) return {3, 3};
  const json& k = f.at("kernel");
  if (k.is_array()) {
    if (k.size() != 2) throw ConfigError(f.what() + ": kernel must be [kh, kw]");
    return {f.as_count(k[0], "kernel"), f.as_count(k[1], "kernel")};
  }
  const std::size_t s = f.as_count(k, "kernel");
  return {s, s};
}

DilationMode mode_of(const Fields& f, DilationMode fallback) {
  if (!f.has("mode")) return fallback;
  try {
    return parse_dilation_mode(f.text("mode", ""));
  } catch (const std::exception& e) {
    throw ConfigError(f.what() + ": " + e.what());
  }
}

D2Config d2_fields(const Fields& f, DilationMode fallback) {
  D2Config cfg;
  cfg.layers = f.count("L");
  cfg.growth = f.count("k");
  std::tie(cfg.kernel_h, cfg.kernel_w) = kernel_of(f);
  cfg.mode = mode_of(f, fallback);
  cfg.validate();
  return cfg;
}

Reduction reduction_of(const Fields& f) {
  if (f.has("c") && f.has("reduction")) {
    throw ConfigError(f.what() + ": give either 'c' or 'reduction'");
  }
  if (f.has("c")) return Reduction::compress(f.real("c", 0.0));
  if (!f.has("reduction")) return Reduction::none();
  const json& r = f.at("reduction");
  if (r.is_string() && r.get<std::string>() == "none") return Reduction::none();
  if (r.is_object()) {
    Fields rf(r, f.what() + " reduction", {"compress", "last"});
    if (rf.has("compress") && !rf.has("last")) {
      return Reduction::compress(rf.real("compress", 0.0));
    }
    if (rf.has("last") && !rf.has("compress")) {
      return Reduction::last(rf.count("last"));
    }
  }
  throw ConfigError(f.what() +
                    ": reduction must be \"none\", {\"compress\": c} or {\"last\": n}");
}

D3Config d3_fields(const Fields& f, DilationMode fallback) {
  D3Config cfg;
  cfg.blocks = f.count("M");
  cfg.inner = d2_fields(f, fallback);
  cfg.bottleneck_channels = f.count("B", 0);
  cfg.reduction = reduction_of(f);
  cfg.validate();
  return cfg;
}

constexpr std::initializer_list<const char*> kD2Keys = {
    "block", "L", "k", "kernel", "mode", "in_channels"};
constexpr std::initializer_list<const char*> kD3Keys = {
    "block", "M", "L", "k", "B", "c", "reduction", "kernel", "mode", "in_channels"};

ordered_json reduction_json(const Reduction& r) {
  switch (r.kind) {
    case Reduction::Kind::Compress:
      return {{"compress", r.rate}};
    case Reduction::Kind::LastN:
      return {{"last", r.last_n}};
    case Reduction::Kind::None:
      break;
  }
  return "none";
}

}  // namespace

D2Config d2_from_json(const json& j) {
  return d2_fields(Fields(j, "d2 config", kD2Keys), DilationMode::Multi);
}

D3Config d3_from_json(const json& j) {
  return d3_fields(Fields(j, "d3 config", kD3Keys), DilationMode::Multi);
}

BlockSpec block_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("block config must be a JSON object");
  std::string kind = j.contains("M") ? "d3" : "d2";
  if (j.contains("block")) {
    if (!j["block"].is_string()) throw ConfigError("'block' must be a string");
    kind = j["block"].get<std::string>();
  }
  BlockSpec spec;
  if (kind == "d2") {
    Fields f(j, "d2 config", kD2Keys);
    spec.block = d2_fields(f, DilationMode::Multi);
    spec.in_channels = f.count("in_channels", 1);
  } else if (kind == "d3") {
    Fields f(j, "d3 config", kD3Keys);
    spec.block = d3_fields(f, DilationMode::Multi);
    spec.in_channels = f.count("in_channels", 1);
  } else {
    throw ConfigError("'block' must be \"d2\" or \"d3\", got '" + kind + "'");
  }
  if (spec.in_channels == 0) throw ConfigError("in_channels must be >= 1");
  return spec;
}

BackboneConfig backbone_from_json(const json& j) {
  Fields f(j, "backbone config",
           {"preset", "in_channels", "mode", "stem", "scales", "extract", "head"});
  const DilationMode mode = mode_of(f, DilationMode::Multi);
  if (f.has("preset")) {
    if (f.has("stem") || f.has("scales") || f.has("extract") || f.has("head") ||
        f.has("in_channels")) {
      throw ConfigError("backbone config: 'preset' takes only 'mode' alongside");
    }
    try {
      return preset(f.text("preset", ""), mode);
    } catch (const LookupError& e) {
      throw ConfigError(e.what());
    }
  }
  BackboneConfig cfg;
  cfg.in_channels = f.count("in_channels", 3);

  const json& stem = f.at("stem");
  if (!stem.is_array() || stem.empty()) {
    throw ConfigError("backbone config: 'stem' must be a non-empty array");
  }
  for (const json& s : stem) {
    Fields sf(s, "stem layer", {"channels", "kernel", "stride"});
    cfg.stem.push_back(StemLayer{sf.count("channels"), sf.count("kernel", 3),
                                 sf.count("stride", 1)});
  }

  const json& scales = f.at("scales");
  if (!scales.is_array() || scales.size() != BackboneConfig::kScales) {
    throw ConfigError("backbone config: 'scales' must list four D3 blocks");
  }
  for (std::size_t i = 0; i < BackboneConfig::kScales; ++i) {
    Fields sf(scales[i], "scale " + std::to_string(i + 1),
              {"M", "L", "k", "B", "c", "reduction", "kernel", "mode"});
    cfg.scales[i] = d3_fields(sf, mode);
  }

  const json& extract = f.at("extract");
  if (!extract.is_array() || extract.size() != BackboneConfig::kScales) {
    throw ConfigError("backbone config: 'extract' must list four widths");
  }
  for (std::size_t i = 0; i < BackboneConfig::kScales; ++i) {
    cfg.extract[i] = f.as_count(extract[i], "extract");
  }
  if (f.has("head")) {
    Fields hf(f.at("head"), "head", {"fusion_channels"});
    cfg.fusion_channels = hf.count("fusion_channels", 0);
  }
  cfg.validate();
  return cfg;
}

ordered_json to_json(const D2Config& cfg) {
  return {{"block", "d2"},
          {"L", cfg.layers},
          {"k", cfg.growth},
          {"kernel", {cfg.kernel_h, cfg.kernel_w}},
          {"mode", to_string(cfg.mode)}};
}

ordered_json to_json(const D3Config& cfg) {
  return {{"block", "d3"},
          {"M", cfg.blocks},
          {"L", cfg.inner.layers},
          {"k", cfg.inner.growth},
          {"B", cfg.bottleneck_channels},
          {"reduction", reduction_json(cfg.reduction)},
          {"kernel", {cfg.inner.kernel_h, cfg.inner.kernel_w}},
          {"mode", to_string(cfg.inner.mode)}};
}

ordered_json to_json(const BackboneConfig& cfg) {
  ordered_json j;
  j["in_channels"] = cfg.in_channels;
  j["stem"] = ordered_json::array();
  for (const auto& s : cfg.stem) {
    j["stem"].push_back(
        {{"channels", s.channels}, {"kernel", s.kernel}, {"stride", s.stride}});
  }
  j["scales"] = ordered_json::array();
  for (const auto& d3 : cfg.scales) {
    ordered_json s = to_json(d3);
    s.erase("block");
    j["scales"].push_back(std::move(s));
  }
  j["extract"] = cfg.extract;
  j["head"] = {{"fusion_channels", cfg.fusion_out_channels()}};
  return j;
}

ToyConfig toy_from_json(const json& j) {
  Fields f(j, "toy config", {"model", "task", "train"});
  ToyConfig cfg;
  if (f.has("model")) {
    Fields mf(f.at("model"), "toy model", {"L", "k", "kernel", "mode"});
    D2Config d2;
    d2.layers = mf.count("L");
    d2.growth = mf.count("k");
    if (mf.has("kernel")) {
      std::tie(d2.kernel_h, d2.kernel_w) = kernel_of(mf);
    } else {
      d2.kernel_h = 3;
      d2.kernel_w = 1;
    }
    if (d2.kernel_w != 1) throw ConfigError("toy model kernel width must be 1");
    d2.mode = mode_of(mf, DilationMode::Multi);
    d2.validate();
    cfg.model.d2 = d2;
  }
  if (f.has("task")) {
    Fields tf(f.at("task"), "toy task", {"n", "distance", "count", "period", "seed"});
    cfg.length = tf.count("n", cfg.length);
    cfg.distance = tf.count("distance", cfg.distance);
    cfg.count = tf.count("count", cfg.count);
    cfg.period = tf.count("period", cfg.period);
    cfg.task_seed = tf.count("seed", cfg.task_seed);
  }
  if (f.has("train")) {
    Fields rf(f.at("train"), "toy training", {"lr", "momentum", "epochs", "batch"});
    cfg.train.lr = rf.real("lr", cfg.train.lr);
    cfg.train.momentum = rf.real("momentum", cfg.train.momentum);
    cfg.train.epochs = rf.count("epochs", cfg.train.epochs);
    cfg.train.batch = rf.count("batch", cfg.train.batch);
    if (cfg.train.batch == 0) throw ConfigError("toy training: batch must be >= 1");
  }
  return cfg;
}

ordered_json to_json(const ParamReport& report) {
  ordered_json entries = ordered_json::array();
  for (const auto& [name, count] : report.entries) {
    entries.push_back({{"name", name}, {"params", count}});
  }
  return {{"entries", std::move(entries)}, {"total", report.total}};
}

std::string to_csv(const ParamReport& report) {
  std::ostringstream out;
  out << "name,params\n";
  for (const auto& [name, count] : report.entries) out << name << ',' << count << '\n';
  out << "total," << report.total << '\n';
  return out.str();
}

}  // namespace d3kit
