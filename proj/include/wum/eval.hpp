#pragma once

#include <torch/torch.h>

#include "json.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <iomanip>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "wum/audio.hpp"
#include "wum/config.hpp"
#include "wum/dsp/degrade.hpp"
#include "wum/dsp/spectral.hpp"
#include "wum/generator.hpp"

namespace wum {

/// Log-spectral distance of two equal-length waveforms: the frame mean of
/// sqrt(mean_f (log10(|Y|^2 / |Yhat|^2))^2), magnitudes floored at eps.
/// (B, T) inputs give the mean of the per-row values.
inline double lsd(const torch::Tensor& y, const torch::Tensor& y_hat, const dsp::StftConfig& cfg = {2048, 512, 2048},
                  double eps = 1e-8) {
  wum::detail::require(y.sizes() == y_hat.sizes(), "lsd: y and y_hat must have equal shapes");
  wum::detail::require(y.dim() == 1 || y.dim() == 2, "lsd: expected (T) or (B, T) waveforms");
  torch::NoGradGuard ng;
  auto a = dsp::stft_magnitude(y.to(torch::kFloat64), cfg).clamp_min(eps);
  auto b = dsp::stft_magnitude(y_hat.to(torch::kFloat64), cfg).clamp_min(eps);
  auto d = torch::log10(a.pow(2) / b.pow(2));
  auto per_frame = d.pow(2).mean(-2).sqrt();  // mean over bins
  return per_frame.mean(-1).mean().item<double>();
}

inline double lsd(std::span<const float> y, std::span<const float> y_hat, const dsp::StftConfig& cfg = {2048, 512, 2048},
                  double eps = 1e-8) {
  auto wrap = [](std::span<const float> s) {
    return torch::from_blob(const_cast<float*>(s.data()), {static_cast<std::int64_t>(s.size())}, torch::kFloat32);
  };
  wum::detail::require(y.size() == y_hat.size(), "lsd: length mismatch");
  return lsd(wrap(y), wrap(y_hat), cfg, eps);
}

/// Maps a sinc-interpolated 48 kHz waveform (T) to its enhanced version (T).
using Enhancer = std::function<std::vector<float>(const std::vector<float>&)>;

inline std::vector<float> identity_enhancer(const std::vector<float>& x) { return x; }

inline Enhancer generator_enhancer(Generator g) {
  return [g](const std::vector<float>& x) mutable {
    torch::NoGradGuard ng;
    g->eval();
    auto in = torch::from_blob(const_cast<float*>(x.data()), {1, static_cast<std::int64_t>(x.size())}, torch::kFloat32);
    auto out = g(in).contiguous();
    return std::vector<float>(out.data_ptr<float>(), out.data_ptr<float>() + out.numel());
  };
}

struct LsdRow {
  std::string label;  // "8kHz" or "AVG"
  std::int64_t rate = 0;  // 0 for the average row
  double lsd = 0.0;
  double baseline = 0.0;  // identity (sinc interpolation only)
  std::size_t items = 0;
};

struct LatencyStats {
  double mean_ms_per_s = 0.0;
  double std_ms_per_s = 0.0;
  std::int64_t iterations = 0;
  std::int64_t warmup = 0;
  std::string hardware;
};

struct EvalReport {
  std::vector<LsdRow> rows;
  std::int64_t parameters = 0;
  std::optional<LatencyStats> latency;
  dsp::StftConfig lsd_stft{2048, 512, 2048};
  double lsd_eps = 1e-8;

  [[nodiscard]] std::string table() const {
    std::ostringstream os;
    os << std::fixed;
    if (!rows.empty()) {
      os << std::left << std::setw(8) << "rate" << std::right << std::setw(10) << "LSD" << std::setw(12) << "baseline"
         << std::setw(8) << "items" << "\n";
      for (const auto& r : rows) {
        os << std::left << std::setw(8) << r.label << std::right << std::setprecision(4) << std::setw(10) << r.lsd
           << std::setw(12) << r.baseline << std::setw(8) << r.items << "\n";
      }
    }
    os << "parameters: " << parameters << "\n";
    if (latency) {
      os << std::setprecision(3) << "latency: " << latency->mean_ms_per_s << " +/- " << latency->std_ms_per_s
         << " ms per second of speech over " << latency->iterations << " iterations (" << latency->warmup
         << " warm-up excluded)\n"
         << "hardware: " << latency->hardware << "\n";
    }
    return os.str();
  }

  [[nodiscard]] nlohmann::json to_json() const {
    nlohmann::json j;
    j["parameters"] = parameters;
    j["lsd_stft"] = {{"fft_size", lsd_stft.fft_size}, {"hop", lsd_stft.hop}, {"window_length", lsd_stft.window_length}};
    j["lsd_eps"] = lsd_eps;
    j["rows"] = nlohmann::json::array();
    for (const auto& r : rows) {
      j["rows"].push_back(
          {{"label", r.label}, {"rate", r.rate}, {"lsd", r.lsd}, {"baseline", r.baseline}, {"items", r.items}});
    }
    if (latency) {
      j["latency"] = {{"mean_ms_per_s", latency->mean_ms_per_s},
                      {"std_ms_per_s", latency->std_ms_per_s},
                      {"iterations", latency->iterations},
                      {"warmup", latency->warmup},
                      {"hardware", latency->hardware}};
    }
    return j;
  }
};

inline std::string rate_label(std::int64_t rate) {
  std::ostringstream os;
  os << rate / 1000 << "kHz";
  return os.str();
}

/// Degrades each peak-normalised reference at cutoff rate/2, enhances it and
/// scores it against the reference. Rows follow `rates`, then AVG.
inline EvalReport evaluate(const Enhancer& enhance, const std::vector<AudioBuffer>& refs,
                           const std::vector<std::int64_t>& rates, const dsp::StftConfig& stft = {2048, 512, 2048},
                           double eps = 1e-8) {
  wum::detail::require(!refs.empty(), "evaluate: no test audio");
  wum::detail::require(!rates.empty(), "evaluate: no rates");
  for (auto r : rates) {
    wum::detail::require(r == 4000 || r == 8000 || r == 12000 || r == 16000 || r == 24000,
                         "evaluate: unsupported rate " + std::to_string(r) + " Hz");
  }
  std::vector<std::vector<float>> ys;
  for (const auto& a : refs) {
    wum::detail::require(a.rate == dsp::kTargetRate, "evaluate: references must be 48 kHz");
    ys.push_back(dsp::normalize_peak(a).samples);
  }
  EvalReport rep;
  rep.lsd_stft = stft;
  rep.lsd_eps = eps;
  LsdRow avg{"AVG", 0, 0.0, 0.0, 0};
  for (auto r : rates) {
    LsdRow row{rate_label(r), r, 0.0, 0.0, ys.size()};
    for (const auto& y : ys) {
      auto x = dsp::simulate_low_resolution(y, static_cast<double>(r) / 2.0);
      for (float& v : x) v = std::clamp(v, -1.0f, 1.0f);
      const auto y_hat = enhance(x);
      wum::detail::require(y_hat.size() == y.size(), "evaluate: enhancer changed the length");
      row.lsd += lsd(y, y_hat, stft, eps);
      row.baseline += lsd(y, x, stft, eps);
    }
    row.lsd /= static_cast<double>(ys.size());
    row.baseline /= static_cast<double>(ys.size());
    avg.lsd += row.lsd / static_cast<double>(rates.size());
    avg.baseline += row.baseline / static_cast<double>(rates.size());
    avg.items = ys.size();
    rep.rows.push_back(row);
  }
  rep.rows.push_back(avg);
  return rep;
}

inline std::string hardware_descriptor() {
  std::string model = "unknown cpu";
  std::ifstream in("/proc/cpuinfo");
  for (std::string line; std::getline(in, line);) {
    if (line.rfind("model name", 0) == 0) {
      if (auto c = line.find(':'); c != std::string::npos) model = line.substr(c + 2);
      break;
    }
  }
  std::ostringstream os;
  os << model << ", " << std::thread::hardware_concurrency() << " hw threads, torch threads "
     << torch::get_num_threads();
  return os.str();
}

/// Monte-Carlo latency in ms per second of input audio. Each iteration times
/// one randomly chosen clip; `warmup` iterations run first and are discarded.
inline LatencyStats benchmark_inference(Generator g, const std::vector<AudioBuffer>& clips, std::int64_t iterations = 50,
                                        std::int64_t warmup = 1, std::uint64_t seed = 0) {
  wum::detail::require(!clips.empty(), "benchmark_inference: no test files");
  wum::detail::require(iterations >= 1 && warmup >= 1, "benchmark_inference: need >= 1 iteration and warm-up");
  for (const auto& c : clips) wum::detail::require(c.rate > 0 && !c.empty(), "benchmark_inference: empty clip");
  torch::NoGradGuard ng;
  g->eval();
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, clips.size() - 1);
  std::vector<double> samples;
  for (std::int64_t i = 0; i < warmup + iterations; ++i) {
    const auto& clip = clips[pick(rng)];
    auto x = torch::from_blob(const_cast<float*>(clip.samples.data()), {1, static_cast<std::int64_t>(clip.size())},
                              torch::kFloat32);
    const auto t0 = std::chrono::steady_clock::now();
    auto y = g(x);
    const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    if (i >= warmup) samples.push_back(ms / clip.duration_seconds());
  }
  LatencyStats s;
  s.iterations = iterations;
  s.warmup = warmup;
  s.hardware = hardware_descriptor();
  for (double v : samples) s.mean_ms_per_s += v;
  s.mean_ms_per_s /= static_cast<double>(samples.size());
  if (samples.size() > 1) {
    double ss = 0.0;
    for (double v : samples) ss += (v - s.mean_ms_per_s) * (v - s.mean_ms_per_s);
    s.std_ms_per_s = std::sqrt(ss / static_cast<double>(samples.size() - 1));
  }
  return s;
}

}  // namespace wum
