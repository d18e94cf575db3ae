#pragma once

#include "CLI11.hpp"
#include "json.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "wum/wum.hpp"

namespace wum::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 1;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitRuntime = 3;

struct Options {
  std::string command;
  std::string config;
  std::vector<std::string> overrides;
  std::string out = "out";
  std::optional<std::uint64_t> seed;
  std::vector<std::string> rates;
  std::optional<std::int64_t> iterations;
  std::string checkpoint;
  std::string index;
  std::string resume;
  std::vector<std::string> inputs;
};

/// "8", "8k", "8kHz" and "8000" all mean 8000 Hz.
inline std::int64_t parse_rate(std::string s) {
  for (const char* suffix : {"kHz", "khz", "k"}) {
    const std::string suf = suffix;
    if (s.size() > suf.size() && s.compare(s.size() - suf.size(), suf.size(), suf) == 0) {
      s.resize(s.size() - suf.size());
      break;
    }
  }
  double v = 0.0;
  try {
    std::size_t used = 0;
    v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
  } catch (const std::exception&) {
    throw ConfigError("eval.rates: cannot parse rate '" + s + "'");
  }
  return std::llround(v < 1000.0 ? v * 1000.0 : v);
}

/// Config file (or defaults) plus overrides, with the flag shorthands folded in.
inline Config effective_config(const Options& o) {
  auto overrides = o.overrides;
  if (o.seed) {
    overrides.push_back("train.seed=" + std::to_string(*o.seed));
    overrides.push_back("eval.seed=" + std::to_string(*o.seed));
  }
  if (!o.rates.empty()) {
    std::string list = "eval.rates=[";
    for (std::size_t i = 0; i < o.rates.size(); ++i) list += (i ? "," : "") + std::to_string(parse_rate(o.rates[i]));
    overrides.push_back(list + "]");
  }
  if (o.iterations) overrides.push_back("eval.iterations=" + std::to_string(*o.iterations));
  if (o.config.empty()) return parse_config("", overrides, "<defaults>");
  return load_config(o.config, overrides);
}

inline DatasetIndex load_or_build_index(const Options& o, const Config& cfg, std::ostream& log) {
  namespace fs = std::filesystem;
  fs::path path = o.index.empty() ? fs::path(o.out) / "index.json" : fs::path(o.index);
  if (fs::exists(path)) {
    std::ifstream in(path);
    try {
      return index_from_json(nlohmann::json::parse(in));
    } catch (const nlohmann::json::exception& e) {
      throw IoError(path.string() + ": " + e.what());
    }
  }
  if (!o.index.empty()) throw IoError("index not found: " + path.string());
  if (cfg.data.root.empty()) throw ConfigError("data.root: required when no index is available");
  log << "indexing " << cfg.data.root << "\n";
  return build_index(cfg.data.root, cfg.data.split);
}

inline std::vector<AudioBuffer> load_split(const DatasetIndex& index, Split split, const Config& cfg,
                                           std::int64_t limit) {
  AudioCache cache(cfg.data.cache_dir);
  std::vector<AudioBuffer> out;
  for (const auto& u : index.subset(split)) {
    if (limit > 0 && static_cast<std::int64_t>(out.size()) >= limit) break;
    out.push_back(cache.load(index.absolute(u)));
  }
  if (out.empty()) throw InvalidInput(std::string("no ") + to_string(split) + " utterances in the index");
  return out;
}

inline void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << "\n";
}

/// The checkpoint's model sections replace whatever the config file said.
inline Generator generator_from(const Options& o, Config& cfg, std::ostream& log) {
  if (o.checkpoint.empty()) throw InvalidInput("--checkpoint is required for " + o.command);
  auto ckpt = load_checkpoint(o.checkpoint);
  if (!(ckpt.config.generator == cfg.generator)) log << "using the generator settings stored in the checkpoint\n";
  cfg.generator = ckpt.config.generator;
  return load_generator(ckpt);
}

inline int cmd_prepare(const Options& o, Config& cfg, std::ostream& out) {
  if (cfg.data.root.empty()) throw ConfigError("data.root: required for prepare");
  auto index = build_index(cfg.data.root, cfg.data.split);
  AudioCache cache(cfg.data.cache_dir);
  for (const auto& u : index.items) (void)cache.load(index.absolute(u));
  write_json(std::filesystem::path(o.out) / "index.json", to_json(index));
  out << "indexed " << index.items.size() << " files (" << index.subset(Split::kTrain).size() << " train, "
      << index.subset(Split::kTest).size() << " test, " << index.skipped << " skipped)\n";
  return kExitOk;
}

inline int cmd_train(const Options& o, Config& cfg, std::ostream& out) {
  auto index = load_or_build_index(o, cfg, out);
  auto source = std::make_shared<CorpusSource>(index, Split::kTrain, cfg.data);
  auto refs = load_split(index, Split::kTest, cfg, cfg.train.validation_items);
  TrainHooks hooks;
  hooks.on_step = [&out](const StepRecord& r) {
    out << "step " << r.step << " epoch " << r.epoch << " L_G " << r.metrics.L_G << " L_D " << r.metrics.L_D
        << " L_mel " << r.metrics.L_mel << "\n";
  };
  std::optional<std::filesystem::path> resume;
  if (!o.resume.empty()) resume = o.resume;
  auto res = train(cfg, source, refs, o.out, hooks, resume);
  out << "trained " << res.steps << " steps over " << res.epochs_run << " epochs"
      << (res.early_stopped ? " (early stop)" : "") << ", best validation LSD " << res.best_metric << "\n"
      << "best checkpoint: " << res.best_checkpoint.string() << "\n";
  return kExitOk;
}

inline int cmd_infer(const Options& o, Config& cfg, std::ostream& out) {
  namespace fs = std::filesystem;
  if (o.inputs.empty()) throw InvalidInput("infer: no input files");
  auto g = generator_from(o, cfg, out);
  auto enhance = generator_enhancer(g);
  for (const auto& in : o.inputs) {
    auto audio = read_wav(in);
    if (audio.rate > dsp::kTargetRate)
      throw InvalidInput(in + ": sampling rate " + std::to_string(audio.rate) + " Hz exceeds 48000 Hz");
    if (audio.rate < 4000 || audio.rate > 24000)
      out << in << ": " << audio.rate << " Hz lies outside the 4-24 kHz range the model targets\n";
    auto x = AudioCache::to_48k(std::move(audio));
    const float peak = x.peak();
    const float scale = peak > 0.0f ? 1.0f / peak : 1.0f;
    for (float& v : x.samples) v = std::clamp(v * scale, -1.0f, 1.0f);
    auto y = enhance(x.samples);
    for (float& v : y) v = std::clamp(v / scale, -1.0f, 1.0f);
    const auto dst = fs::path(o.out) / (fs::path(in).stem().string() + "_48k.wav");
    write_wav(dst, {std::move(y), dsp::kTargetRate});
    out << in << " -> " << dst.string() << "\n";
  }
  return kExitOk;
}

inline int cmd_eval(const Options& o, Config& cfg, std::ostream& out) {
  auto g = generator_from(o, cfg, out);
  auto index = load_or_build_index(o, cfg, out);
  auto refs = load_split(index, Split::kTest, cfg, cfg.eval.max_items);
  auto rep = evaluate(generator_enhancer(g), refs, cfg.eval.rates, cfg.eval.lsd, cfg.eval.lsd_eps);
  rep.parameters = count_parameters(cfg.generator);
  write_json(std::filesystem::path(o.out) / "eval_report.json", rep.to_json());
  out << rep.table();
  return kExitOk;
}

/// Without a checkpoint the configured generator is timed with fresh weights.
inline int cmd_bench(const Options& o, Config& cfg, std::ostream& out) {
  Generator g = o.checkpoint.empty() ? Generator(cfg.generator) : generator_from(o, cfg, out);
  auto index = load_or_build_index(o, cfg, out);
  auto clips = load_split(index, Split::kTest, cfg, cfg.eval.max_items);
  EvalReport rep;
  rep.rows.clear();
  rep.parameters = count_parameters(cfg.generator);
  rep.latency = benchmark_inference(g, clips, cfg.eval.iterations, cfg.eval.warmup_iterations, cfg.eval.seed);
  write_json(std::filesystem::path(o.out) / "bench_report.json", rep.to_json());
  out << rep.table();
  return kExitOk;
}

/// Runs one command; returns the process exit code. argv[0] is the program name.
inline int run(const std::vector<std::string>& argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Speech super-resolution to 48 kHz", "wum"};
  app.require_subcommand(1);
  Options o;
  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "TOML config file");
    sub->add_option("--override", o.overrides, "dotted.key=value, repeatable");
    sub->add_option("--out", o.out, "output directory");
    sub->add_option("--seed", o.seed, "sets train.seed and eval.seed");
    sub->add_option("--index", o.index, "dataset index (default: <out>/index.json)");
  };
  auto* prepare = app.add_subcommand("prepare", "index the corpus and fill the 48 kHz cache");
  common(prepare);
  auto* trn = app.add_subcommand("train", "train a model");
  common(trn);
  trn->add_option("--resume", o.resume, "checkpoint to resume from");
  auto* infer = app.add_subcommand("infer", "upsample WAV files to 48 kHz");
  common(infer);
  infer->add_option("--checkpoint", o.checkpoint)->required();
  infer->add_option("inputs", o.inputs, "input WAV files")->required();
  auto* ev = app.add_subcommand("eval", "LSD per input rate on the test split");
  common(ev);
  ev->add_option("--checkpoint", o.checkpoint)->required();
  ev->add_option("--rates", o.rates, "input rates, e.g. 8,16,24")->delimiter(',');
  auto* bench = app.add_subcommand("bench", "inference latency");
  common(bench);
  bench->add_option("--checkpoint", o.checkpoint);
  bench->add_option("--iterations", o.iterations, "timed iterations");

  std::vector<const char*> cargv;
  for (const auto& a : argv) cargv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(cargv.size()), cargv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "wum: " << e.what() << "\n" << app.help();
    return kExitUsage;
  }
  o.command = app.get_subcommands().front()->get_name();

  try {
    Config cfg = effective_config(o);
    std::filesystem::create_directories(o.out);
    int code = kExitOk;
    if (o.command == "prepare") code = cmd_prepare(o, cfg, out);
    else if (o.command == "train") code = cmd_train(o, cfg, out);
    else if (o.command == "infer") code = cmd_infer(o, cfg, out);
    else if (o.command == "eval") code = cmd_eval(o, cfg, out);
    else code = cmd_bench(o, cfg, out);
    save_config(std::filesystem::path(o.out) / "config.toml", cfg);
    return code;
  } catch (const ConfigError& e) {
    err << "wum: invalid config: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    err << "wum " << o.command << ": " << e.what() << "\n";
    return kExitRuntime;
  }
}

}  // namespace wum::cli
