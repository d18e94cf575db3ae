#pragma once

#include "json.hpp"
#include "toml.hpp"

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

#include "wum/data.hpp"
#include "wum/discriminator.hpp"
#include "wum/errors.hpp"
#include "wum/generator.hpp"
#include "wum/losses.hpp"

namespace wum {

struct LossConfig {
  LossWeights weights;
  MultiResConfig stft;
  dsp::MelConfig mel;

  void validate() const {
    weights.validate();
    stft.validate();
    mel.validate();
  }
  bool operator==(const LossConfig&) const = default;
};

struct TrainConfig {
  std::int64_t epochs = 25;
  std::int64_t batch_size = 64;
  double lr = 2e-4;
  double lr_min = 2e-5;
  double beta1 = 0.6;
  double beta2 = 0.99;
  double weight_decay = 0.01;
  std::int64_t warmup_steps = 500;
  std::int64_t patience = 3;
  std::uint64_t seed = 0;
  std::int64_t steps_per_epoch = 0;  // 0: one pass over the training split
  std::int64_t max_steps = 0;        // 0: unlimited
  double validation_rate = 8000.0;
  std::int64_t validation_items = 0;  // 0: every test utterance

  void validate() const {
    using wum::detail::require;
    require(epochs >= 1, "train.epochs must be >= 1");
    require(batch_size >= 1, "train.batch_size must be >= 1");
    require(lr > 0.0, "train.lr must be > 0");
    require(lr_min >= 0.0 && lr_min <= lr, "train.lr_min must lie in [0, lr]");
    require(beta1 > 0.0 && beta1 < beta2 && beta2 < 1.0, "train: need 0 < beta1 < beta2 < 1");
    require(weight_decay >= 0.0, "train.weight_decay must be >= 0");
    require(warmup_steps >= 0, "train.warmup_steps must be >= 0");
    require(patience >= 1, "train.patience must be >= 1");
    require(steps_per_epoch >= 0 && max_steps >= 0, "train.steps_per_epoch and train.max_steps must be >= 0");
    require(validation_rate >= 4000.0 && validation_rate <= 24000.0, "train.validation_rate must lie in [4000, 24000]");
    require(validation_items >= 0, "train.validation_items must be >= 0");
  }
  bool operator==(const TrainConfig&) const = default;
};

struct EvalConfig {
  std::vector<std::int64_t> rates{4000, 8000, 12000, 16000, 24000};
  dsp::StftConfig lsd{2048, 512, 2048};
  double lsd_eps = 1e-8;
  std::int64_t iterations = 50;
  std::int64_t warmup_iterations = 1;
  std::int64_t max_items = 0;  // 0: every test utterance
  std::uint64_t seed = 0;

  void validate() const {
    using wum::detail::require;
    require(!rates.empty(), "eval.rates must not be empty");
    for (auto r : rates) {
      require(r == 4000 || r == 8000 || r == 12000 || r == 16000 || r == 24000,
              "eval.rates entries must be one of 4000, 8000, 12000, 16000, 24000");
    }
    lsd.validate();
    require(lsd_eps > 0.0, "eval.lsd_eps must be > 0");
    require(iterations >= 1, "eval.iterations must be >= 1");
    require(warmup_iterations >= 1, "eval.warmup_iterations must be >= 1");
    require(max_items >= 0, "eval.max_items must be >= 0");
  }
  bool operator==(const EvalConfig&) const = default;
};

struct Config {
  GeneratorConfig generator;
  DiscriminatorConfig discriminator;
  LossConfig losses;
  DataConfig data;
  TrainConfig train;
  EvalConfig eval;

  void validate() const {
    generator.validate();
    discriminator.validate();
    losses.validate();
    data.validate();
    train.validate();
    eval.validate();
  }
  bool operator==(const Config&) const = default;
};

namespace cfgio {

template <class E>
struct EnumNames;

template <>
struct EnumNames<ssm::Discretization> {
  static constexpr std::pair<ssm::Discretization, const char*> items[] = {
      {ssm::Discretization::kZeroOrderHold, "zoh"}, {ssm::Discretization::kEuler, "euler"}};
};
template <>
struct EnumNames<ShortClipPolicy> {
  static constexpr std::pair<ShortClipPolicy, const char*> items[] = {{ShortClipPolicy::kPad, "pad"},
                                                                       {ShortClipPolicy::kSkip, "skip"}};
};
template <>
struct EnumNames<SplitScheme> {
  static constexpr std::pair<SplitScheme, const char*> items[] = {{SplitScheme::kSpeaker, "speaker"},
                                                                   {SplitScheme::kFile, "file"}};
};

/// One TOML table, either being filled from a struct or read back into one.
class Node {
 public:
  Node(toml::table& t, bool reading, std::string path) : t_(t), reading_(reading), path_(std::move(path)) {}

  Node section(const std::string& key) {
    if (!reading_) {
      t_.insert_or_assign(key, toml::table{});
    } else if (!t_.contains(key)) {
      t_.insert_or_assign(key, toml::table{});
    }
    auto* sub = t_.get(key)->as_table();
    if (sub == nullptr) throw ConfigError(where(key) + ": expected a table");
    return Node(*sub, reading_, where(key));
  }

  template <class T>
  void field(const std::string& key, T& value) {
    if (!reading_) {
      t_.insert_or_assign(key, encode(value));
      return;
    }
    if (const auto* n = t_.get(key)) value = decode<T>(*n, where(key));
  }

 private:
  [[nodiscard]] std::string where(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  template <class T>
  static auto encode(const T& v) {
    if constexpr (std::is_same_v<T, bool> || std::is_same_v<T, double> || std::is_same_v<T, std::string>) {
      return toml::value<T>(v);
    } else if constexpr (std::is_enum_v<T>) {
      for (const auto& [e, name] : EnumNames<T>::items)
        if (e == v) return toml::value<std::string>(name);
      return toml::value<std::string>("?");
    } else if constexpr (std::is_integral_v<T>) {
      return toml::value<std::int64_t>(static_cast<std::int64_t>(v));
    } else if constexpr (std::is_same_v<T, std::vector<dsp::StftConfig>>) {
      toml::array arr;
      for (const auto& c : v) arr.push_back(toml::array{c.fft_size, c.hop, c.window_length});
      return arr;
    } else {
      toml::array arr;
      for (const auto& e : v) arr.push_back(encode(e));
      return arr;
    }
  }

  template <class T>
  static T decode(const toml::node& n, const std::string& path) {
    if constexpr (std::is_same_v<T, bool>) {
      if (auto v = n.value_exact<bool>()) return *v;
      throw ConfigError(path + ": expected a boolean");
    } else if constexpr (std::is_same_v<T, double>) {
      if (n.is_integer() || n.is_floating_point()) return *n.value<double>();
      throw ConfigError(path + ": expected a number");
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (auto v = n.value_exact<std::string>()) return *v;
      throw ConfigError(path + ": expected a string");
    } else if constexpr (std::is_enum_v<T>) {
      if (auto v = n.value_exact<std::string>()) {
        for (const auto& [e, name] : EnumNames<T>::items)
          if (*v == name) return e;
      }
      std::string allowed;
      for (const auto& [e, name] : EnumNames<T>::items) allowed += std::string(allowed.empty() ? "" : ", ") + name;
      throw ConfigError(path + ": expected one of " + allowed);
    } else if constexpr (std::is_integral_v<T>) {
      auto v = n.value_exact<std::int64_t>();
      if (!v) throw ConfigError(path + ": expected an integer");
      if constexpr (std::is_unsigned_v<T>) {
        if (*v < 0) throw ConfigError(path + ": expected a non-negative integer");
      }
      if (static_cast<std::int64_t>(static_cast<T>(*v)) != *v) throw ConfigError(path + ": integer out of range");
      return static_cast<T>(*v);
    } else if constexpr (std::is_same_v<T, std::vector<dsp::StftConfig>>) {
      const auto* arr = n.as_array();
      if (arr == nullptr) throw ConfigError(path + ": expected an array of [fft, hop, window] triples");
      T out;
      for (std::size_t i = 0; i < arr->size(); ++i) {
        const auto sub = decode<std::vector<int>>(*arr->get(i), path + "[" + std::to_string(i) + "]");
        if (sub.size() != 3) throw ConfigError(path + "[" + std::to_string(i) + "]: expected [fft, hop, window]");
        out.push_back({sub[0], sub[1], sub[2]});
      }
      return out;
    } else {
      const auto* arr = n.as_array();
      if (arr == nullptr) throw ConfigError(path + ": expected an array");
      T out;
      for (std::size_t i = 0; i < arr->size(); ++i)
        out.push_back(decode<typename T::value_type>(*arr->get(i), path + "[" + std::to_string(i) + "]"));
      return out;
    }
  }

  toml::table& t_;
  bool reading_;
  std::string path_;
};

inline void bind(Node n, GeneratorConfig& c) {
  n.field("depth", c.depth);
  n.field("stem_blocks", c.stem_blocks);
  n.field("stem_width", c.stem_width);
  n.field("stem_kernel", c.stem_kernel);
  n.field("mamba_blocks", c.mamba_blocks);
  n.field("channel_schedule", c.channel_schedule);
  n.field("bottleneck_dim", c.bottleneck_dim);
  n.field("down_kernel", c.down_kernel);
  n.field("resblock_kernel", c.resblock_kernel);
  n.field("resblock_dilations", c.resblock_dilations);
  n.field("up_kernel", c.up_kernel);
  n.field("up_stride", c.up_stride);
  n.field("out_kernel", c.out_kernel);
  n.field("leaky_slope", c.leaky_slope);
  n.field("deep", c.deep);
  n.field("no_mamba", c.no_mamba);
  auto m = n.section("mamba");
  m.field("d_state", c.mamba.d_state);
  m.field("expand", c.mamba.expand);
  m.field("conv_width", c.mamba.conv_width);
  m.field("dt_rank", c.mamba.dt_rank);
  m.field("dt_min", c.mamba.dt_min);
  m.field("dt_max", c.mamba.dt_max);
  m.field("discretization", c.mamba.disc);
  m.field("scan_chunk", c.mamba.chunk);
}

inline void bind(Node n, DiscriminatorConfig& c) {
  n.field("periods", c.periods);
  n.field("mpd_channels", c.mpd_channels);
  n.field("mpd_kernel", c.mpd_kernel);
  n.field("mpd_stride", c.mpd_stride);
  n.field("mpd_extra_layers", c.mpd_extra_layers);
  n.field("msd_scales", c.msd_scales);
  n.field("msd_channels", c.msd_channels);
  n.field("msd_groups", c.msd_groups);
  n.field("msd_extra_layers", c.msd_extra_layers);
  n.field("leaky_slope", c.leaky_slope);
}

inline void bind(Node n, LossConfig& c) {
  n.field("mel_weight", c.weights.mel);
  n.field("stft_weight", c.weights.stft);
  n.field("l1_weight", c.weights.l1);
  n.field("stft_resolutions", c.stft.resolutions);
  auto m = n.section("mel");
  m.field("fft_size", c.mel.stft.fft_size);
  m.field("hop", c.mel.stft.hop);
  m.field("window_length", c.mel.stft.window_length);
  m.field("n_mels", c.mel.n_mels);
  m.field("f_min", c.mel.f_min);
  m.field("f_max", c.mel.f_max);
  m.field("log_floor", c.mel.log_floor);
}

inline void bind(Node n, DataConfig& c) {
  n.field("root", c.root);
  n.field("cache_dir", c.cache_dir);
  n.field("chunk", c.chunk);
  n.field("min_cutoff_hz", c.min_cutoff_hz);
  n.field("max_cutoff_hz", c.max_cutoff_hz);
  n.field("short_clips", c.short_clips);
  auto s = n.section("split");
  s.field("scheme", c.split.scheme);
  s.field("train_ratio", c.split.train_ratio);
  s.field("seed", c.split.seed);
  s.field("test_speakers", c.split.test_speakers);
}

inline void bind(Node n, TrainConfig& c) {
  n.field("epochs", c.epochs);
  n.field("batch_size", c.batch_size);
  n.field("lr", c.lr);
  n.field("lr_min", c.lr_min);
  n.field("beta1", c.beta1);
  n.field("beta2", c.beta2);
  n.field("weight_decay", c.weight_decay);
  n.field("warmup_steps", c.warmup_steps);
  n.field("patience", c.patience);
  n.field("seed", c.seed);
  n.field("steps_per_epoch", c.steps_per_epoch);
  n.field("max_steps", c.max_steps);
  n.field("validation_rate", c.validation_rate);
  n.field("validation_items", c.validation_items);
}

inline void bind(Node n, EvalConfig& c) {
  n.field("rates", c.rates);
  n.field("lsd_fft", c.lsd.fft_size);
  n.field("lsd_hop", c.lsd.hop);
  n.field("lsd_window", c.lsd.window_length);
  n.field("lsd_eps", c.lsd_eps);
  n.field("iterations", c.iterations);
  n.field("warmup_iterations", c.warmup_iterations);
  n.field("max_items", c.max_items);
  n.field("seed", c.seed);
}

inline void bind(Node root, Config& c) {
  bind(root.section("generator"), c.generator);
  bind(root.section("discriminator"), c.discriminator);
  bind(root.section("losses"), c.losses);
  bind(root.section("data"), c.data);
  bind(root.section("train"), c.train);
  bind(root.section("eval"), c.eval);
}

/// Overlays `over` onto `base`; every key in `over` must already exist in `base`
/// with a compatible type.
inline void merge(toml::table& base, const toml::table& over, const std::string& path = "") {
  for (const auto& [k, v] : over) {
    const std::string key(k.str());
    const std::string where = path.empty() ? key : path + "." + key;
    auto* dst = base.get(key);
    if (dst == nullptr) throw ConfigError(where + ": unknown key");
    if (dst->is_table()) {
      if (!v.is_table()) throw ConfigError(where + ": expected a table");
      merge(*dst->as_table(), *v.as_table(), where);
      continue;
    }
    if (v.is_table()) throw ConfigError(where + ": unexpected table");
    const bool numeric_ok = dst->is_floating_point() && v.is_integer();
    if (dst->type() != v.type() && !numeric_ok) throw ConfigError(where + ": value has the wrong type");
    if (numeric_ok) {
      base.insert_or_assign(key, *v.value<double>());
    } else {
      v.visit([&](const auto& node) { base.insert_or_assign(key, node); });
    }
  }
}

}  // namespace cfgio

inline toml::table to_table(const Config& c) {
  toml::table t;
  Config copy = c;
  cfgio::bind(cfgio::Node(t, false, ""), copy);
  return t;
}

/// Reads every known key; keys absent from `t` keep their defaults.
inline Config from_table(const toml::table& t) {
  toml::table base = to_table(Config{});
  cfgio::merge(base, t);
  Config c;
  cfgio::bind(cfgio::Node(base, true, ""), c);
  return c;
}

inline std::string to_toml_string(const Config& c) {
  std::ostringstream os;
  os << to_table(c) << "\n";
  return os.str();
}

inline nlohmann::json to_json(const Config& c) {
  std::ostringstream os;
  os << toml::json_formatter(to_table(c));
  return nlohmann::json::parse(os.str());
}

namespace cfgio {

inline toml::table json_table(const nlohmann::json& j, const std::string& path);

/// Calls `put` with the TOML counterpart of a JSON value.
template <class Put>
void json_value(const nlohmann::json& v, const std::string& path, Put&& put);

inline toml::array json_array(const nlohmann::json& v, const std::string& path) {
  toml::array arr;
  for (const auto& e : v) {
    if (e.is_array()) {
      arr.push_back(json_array(e, path));
    } else if (e.is_object()) {
      arr.push_back(json_table(e, path));
    } else {
      json_value(e, path, [&](auto&& n) { arr.push_back(std::move(n)); });
    }
  }
  return arr;
}

template <class Put>
void json_value(const nlohmann::json& v, const std::string& path, Put&& put) {
  if (v.is_boolean()) {
    put(toml::value<bool>(v.get<bool>()));
  } else if (v.is_number_integer()) {
    put(toml::value<std::int64_t>(v.get<std::int64_t>()));
  } else if (v.is_number_float()) {
    put(toml::value<double>(v.get<double>()));
  } else if (v.is_string()) {
    put(toml::value<std::string>(v.get<std::string>()));
  } else {
    throw ConfigError(path + ": unsupported JSON value");
  }
}

inline toml::table json_table(const nlohmann::json& j, const std::string& path) {
  toml::table t;
  for (const auto& [k, v] : j.items()) {
    const std::string where = path.empty() ? k : path + "." + k;
    if (v.is_array()) {
      t.insert_or_assign(k, json_array(v, where));
    } else if (v.is_object()) {
      t.insert_or_assign(k, json_table(v, where));
    } else {
      json_value(v, where, [&](auto&& n) { t.insert_or_assign(k, std::move(n)); });
    }
  }
  return t;
}

}  // namespace cfgio

inline Config from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("config json: expected an object");
  return from_table(cfgio::json_table(j, ""));
}

/// Stable digest of the effective configuration.
inline std::string config_hash(const Config& c) { return detail::hex64(detail::fnv1a(to_json(c).dump())); }

/// Applies one `dotted.key=value` override. Values are parsed as TOML and fall
/// back to a bare string.
inline void apply_override(toml::table& t, const std::string& spec) {
  const auto eq = spec.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + spec + "': expected key=value");
  const std::string key = spec.substr(0, eq), raw = spec.substr(eq + 1);
  toml::table over;
  toml::table* cursor = &over;
  std::size_t start = 0;
  for (;;) {
    const auto dot = key.find('.', start);
    const auto part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw ConfigError("override '" + spec + "': empty key segment");
    if (dot == std::string::npos) {
      toml::table parsed;
      try {
        parsed = toml::parse("v = " + raw);
      } catch (const toml::parse_error&) {
        parsed.insert_or_assign("v", raw);
      }
      parsed.get("v")->visit([&](const auto& node) { cursor->insert_or_assign(part, node); });
      break;
    }
    cursor->insert_or_assign(part, toml::table{});
    cursor = cursor->get(part)->as_table();
    start = dot + 1;
  }
  cfgio::merge(t, over);
}

/// Defaults, then the TOML text, then overrides in order; the result is validated.
inline Config parse_config(const std::string& text, const std::vector<std::string>& overrides = {},
                           const std::string& source = "config") {
  toml::table base = to_table(Config{});
  try {
    cfgio::merge(base, toml::parse(text, source));
  } catch (const toml::parse_error& e) {
    std::ostringstream os;
    os << source << ": " << e.description() << " at line " << e.source().begin.line;
    throw ConfigError(os.str());
  }
  for (const auto& o : overrides) apply_override(base, o);
  Config c;
  cfgio::bind(cfgio::Node(base, true, ""), c);
  try {
    c.validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const InvalidInput& e) {
    throw ConfigError(e.what());
  }
  return c;
}

inline Config load_config(const std::filesystem::path& path, const std::vector<std::string>& overrides = {}) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), overrides, path.string());
}

inline void save_config(const std::filesystem::path& path, const Config& c) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << to_toml_string(c);
}

}  // namespace wum
