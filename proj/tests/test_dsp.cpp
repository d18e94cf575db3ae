#include <gtest/gtest.h>
#include <torch/torch.h>

#include <cmath>
#include <numbers>

#include "test_support.hpp"
#include "wum/audio.hpp"
#include "wum/dsp/chebyshev.hpp"
#include "wum/dsp/degrade.hpp"
#include "wum/dsp/resample.hpp"
#include "wum/dsp/spectral.hpp"

using namespace wum;
using wum::testkit::correlation;
using wum::testkit::rms;
using wum::testkit::sine;
using wum::testkit::white_noise;

namespace {

// Energy of |X|^2 summed over bins whose centre frequency lies in [lo, hi).
double band_energy(const std::vector<float>& x, double lo, double hi, double rate = 48000.0) {
  dsp::StftConfig cfg{2048, 512, 2048};
  auto mag = dsp::stft_magnitude(AudioBuffer{x, static_cast<int>(rate)}, cfg);
  double total = 0.0;
  for (int k = 0; k < cfg.bins(); ++k) {
    const double f = k * rate / cfg.fft_size;
    if (f >= lo && f < hi) total += mag[k].pow(2).sum().item<double>();
  }
  return total;
}

}  // namespace

TEST(Resample, SameRateIsIdentity) {
  AudioBuffer x{white_noise(48000, 1), 48000};
  auto y = dsp::resample_sinc(x, 48000);
  EXPECT_EQ(y.rate, 48000);
  EXPECT_EQ(y.samples, x.samples);
}

TEST(Resample, LengthFollowsRateRatio) {
  AudioBuffer x{white_noise(48000, 2), 48000};
  auto y = dsp::resample_sinc(x, 16000);
  EXPECT_EQ(y.rate, 16000);
  EXPECT_EQ(y.size(), 16000u);
  EXPECT_EQ(dsp::resample_sinc(AudioBuffer{white_noise(33601, 3), 48000}, 8000).size(), 5600u);  // round(5600.17)
}

TEST(Resample, EmptyInputRejected) {
  AudioBuffer empty{{}, 48000};
  EXPECT_THROW(dsp::resample_sinc(empty, 16000), InvalidInput);
}

TEST(Resample, SineSurvivesDownAndUp) {
  const std::size_t n = 48000;
  auto x = sine(1000.0, 48000.0, n);
  auto down = dsp::resample_sinc(x, 48000.0, 16000.0);
  // oracle: the same sine evaluated analytically on the 16 kHz grid
  auto expect_down = sine(1000.0, 16000.0, down.size());
  EXPECT_GT(correlation(down, expect_down, 500, down.size() - 500), 0.9999);
  auto up = dsp::resample_sinc(down, 16000.0, 48000.0);
  ASSERT_EQ(up.size(), n);
  EXPECT_GT(correlation(up, x, 1500, n - 1500), 0.999);
  EXPECT_NEAR(rms(up, 1500, n - 1500), rms(x, 1500, n - 1500), 1e-3);
}

TEST(Resample, RoundTripMatchesBandLimitedNoise) {
  // Error energy of down->up, measured only below the low rate's passband,
  // must sit 40 dB under the signal energy there.
  const std::size_t n = 48000;
  auto x = white_noise(n, 11);
  auto z = dsp::resample_sinc(dsp::resample_sinc(x, 48000.0, 16000.0), 16000.0, 48000.0);
  std::vector<float> err(n);
  for (std::size_t i = 0; i < n; ++i) err[i] = z[i] - x[i];
  const std::size_t lo = 2000, hi = n - 2000;
  auto window = torch::hann_window(static_cast<std::int64_t>(hi - lo), torch::kFloat64);
  auto spec = [&](const std::vector<float>& s) {
    auto t = testkit::to_tensor(s).to(torch::kFloat64).slice(0, lo, hi) * window;
    return torch::fft::rfft(t).abs().pow(2);
  };
  auto sx = spec(x), se = spec(err);
  const auto band = static_cast<std::int64_t>(0.9 * 8000.0 / 48000.0 * static_cast<double>(hi - lo));
  const double ratio = se.slice(0, 0, band).sum().item<double>() / sx.slice(0, 0, band).sum().item<double>();
  EXPECT_LT(10.0 * std::log10(ratio), -40.0);
}

TEST(Chebyshev, DesignHasRequestedRipple) {
  auto sos = dsp::design_chebyshev1_lowpass(8, 0.05, 4000.0, 48000.0);
  ASSERT_EQ(sos.size(), 4u);
  double lo = 1e9, hi = 0;
  for (double f = 0; f <= 4000.0; f += 10.0) {
    const double m = dsp::sos_magnitude(sos, f, 48000.0);
    lo = std::min(lo, m);
    hi = std::max(hi, m);
  }
  EXPECT_NEAR(20 * std::log10(hi), 0.0, 1e-6);
  EXPECT_NEAR(20 * std::log10(lo), -0.05, 1e-3);
  // edge of a type-I passband sits exactly at -ripple
  EXPECT_NEAR(20 * std::log10(dsp::sos_magnitude(sos, 4000.0, 48000.0)), -0.05, 1e-6);
  for (const auto& s : sos) {
    // stable: poles inside the unit circle
    EXPECT_LT(s.a2, 1.0);
  }
}

TEST(Chebyshev, ConstantPassesWithDcGain) {
  std::vector<float> x(4800, 0.5f);
  dsp::ChebyshevSpec raw;
  raw.centre_ripple = false;
  auto y = dsp::chebyshev_lowpass(x, 48000.0, 4000.0, raw);
  auto sos = dsp::design_chebyshev1_lowpass(8, 0.05, 4000.0, 48000.0);
  const double dc = std::pow(dsp::sos_magnitude(sos, 0.0, 48000.0), 2);  // forward + backward pass
  EXPECT_NEAR(20 * std::log10(dc), -0.1, 1e-6);
  for (std::size_t i = 0; i < x.size(); i += 97) EXPECT_NEAR(y[i], 0.5 * dc, 1e-5);
}

TEST(Chebyshev, CentredRippleStraddlesZeroDb) {
  auto sos = dsp::chebyshev_design({}, 4000.0, 48000.0);
  double lo = 1e9, hi = 0;
  for (double f = 0; f <= 4000.0; f += 10.0) {
    const double m = dsp::sos_magnitude(sos, f, 48000.0);
    lo = std::min(lo, m);
    hi = std::max(hi, m);
  }
  EXPECT_NEAR(20 * std::log10(hi), 0.025, 1e-6);
  EXPECT_NEAR(20 * std::log10(lo), -0.025, 1e-3);
}

TEST(Chebyshev, StopbandToneAttenuated60dB) {
  auto sos = dsp::chebyshev_design({}, 4000.0, 48000.0);
  const double predicted_db = 40.0 * std::log10(dsp::sos_magnitude(sos, 10000.0, 48000.0));
  EXPECT_LT(predicted_db, -60.0);
  auto x = sine(10000.0, 48000.0, 48000);
  auto y = dsp::chebyshev_lowpass(x, 48000.0, 4000.0);
  const double measured_db = 20.0 * std::log10(rms(y, 2400, 45600) / rms(x, 2400, 45600));
  EXPECT_LT(measured_db, -60.0);
}

TEST(Chebyshev, PassbandToneWithin1dB) {
  auto sos = dsp::chebyshev_design({}, 4000.0, 48000.0);
  const double predicted_db = 40.0 * std::log10(dsp::sos_magnitude(sos, 1000.0, 48000.0));
  EXPECT_LT(std::abs(predicted_db), 1.0);
  auto x = sine(1000.0, 48000.0, 48000);
  auto y = dsp::chebyshev_lowpass(x, 48000.0, 4000.0);
  const double measured_db = 20.0 * std::log10(rms(y, 2400, 45600) / rms(x, 2400, 45600));
  EXPECT_NEAR(measured_db, predicted_db, 0.05);
  EXPECT_LT(std::abs(measured_db), 1.0);
}

TEST(Chebyshev, CutoffAtNyquistRejected) {
  AudioBuffer x{sine(1000.0, 48000.0, 1000), 48000};
  EXPECT_THROW(dsp::chebyshev_lowpass(x, 24000.0), InvalidInput);
  EXPECT_THROW(dsp::chebyshev_lowpass(x, 30000.0), InvalidInput);
  EXPECT_THROW(dsp::chebyshev_lowpass(x, 0.0), InvalidInput);
}

TEST(Chebyshev, IsLinear) {
  auto x = white_noise(9600, 21);
  auto z = white_noise(9600, 22);
  const float a = 0.7f, b = -1.3f;
  std::vector<float> mix(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) mix[i] = a * x[i] + b * z[i];
  auto fx = dsp::chebyshev_lowpass(x, 48000.0, 6000.0);
  auto fz = dsp::chebyshev_lowpass(z, 48000.0, 6000.0);
  auto fm = dsp::chebyshev_lowpass(mix, 48000.0, 6000.0);
  double err = 0, ref = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double expect = a * fx[i] + b * fz[i];
    err += (fm[i] - expect) * (fm[i] - expect);
    ref += expect * expect;
  }
  EXPECT_LT(std::sqrt(err / ref), 1e-6);
}

TEST(Stft, ZerosGiveZeros) {
  dsp::StftConfig cfg{1024, 256, 1024};
  auto mag = dsp::stft_magnitude(AudioBuffer{std::vector<float>(4096, 0.0f), 48000}, cfg);
  EXPECT_EQ(mag.size(0), 513);
  EXPECT_EQ(mag.size(1), 4096 / 256 + 1);
  EXPECT_EQ(mag.abs().max().item<float>(), 0.0f);
}

TEST(Stft, BinCentredSinePeaksAtItsBin) {
  dsp::StftConfig cfg{1024, 256, 1024};
  const int bin = 37;
  auto x = sine(bin * 48000.0 / 1024.0, 48000.0, 8192);
  auto mag = dsp::stft_magnitude(AudioBuffer{x, 48000}, cfg);
  auto peaks = mag.argmax(0);
  // edge frames see the reflected (sign-flipped) sine, which splits the peak
  const std::int64_t first = cfg.fft_size / 2 / cfg.hop;
  const std::int64_t last = (8192 - cfg.fft_size / 2) / cfg.hop;
  for (std::int64_t t = first; t <= last; ++t) EXPECT_EQ(peaks[t].item<std::int64_t>(), bin) << "frame " << t;
}

TEST(Stft, FrameEnergyMatchesWindowedTimeDomain) {
  dsp::StftConfig cfg{2048, 512, 1200};
  const std::size_t n = 9000;
  auto x = white_noise(n, 5);
  auto mag = dsp::stft_magnitude(AudioBuffer{x, 48000}, cfg).to(torch::kFloat64);

  // oracle: reflect-pad by fft/2, place a periodic Hann of window_length
  // centred in the fft frame, sum the squared windowed samples.
  const int pad = cfg.fft_size / 2;
  std::vector<double> padded(n + 2 * pad);
  for (std::size_t i = 0; i < padded.size(); ++i) {
    auto j = static_cast<std::ptrdiff_t>(i) - pad;
    if (j < 0) j = -j;
    if (j >= static_cast<std::ptrdiff_t>(n)) j = 2 * static_cast<std::ptrdiff_t>(n) - 2 - j;
    padded[i] = x[static_cast<std::size_t>(j)];
  }
  const int offset = (cfg.fft_size - cfg.window_length) / 2;
  for (std::int64_t t = 0; t < mag.size(1); t += 3) {
    double time_energy = 0;
    for (int k = 0; k < cfg.window_length; ++k) {
      const double w = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * k / cfg.window_length);
      const double v = w * padded[static_cast<std::size_t>(t * cfg.hop + offset + k)];
      time_energy += v * v;
    }
    auto p = mag.select(1, t).pow(2);
    double spec_energy = 2.0 * p.sum().item<double>() - p[0].item<double>() - p[cfg.fft_size / 2].item<double>();
    spec_energy /= cfg.fft_size;
    EXPECT_NEAR(spec_energy / time_energy, 1.0, 1e-4) << "frame " << t;
  }
}

TEST(Stft, SignFlipInvariant) {
  dsp::StftConfig cfg{1024, 128, 800};
  auto x = white_noise(5000, 8);
  auto neg = x;
  for (auto& v : neg) v = -v;
  auto a = dsp::stft_magnitude(AudioBuffer{x, 48000}, cfg);
  auto b = dsp::stft_magnitude(AudioBuffer{neg, 48000}, cfg);
  EXPECT_TRUE(torch::allclose(a, b, 0.0, 1e-7));
}

TEST(Stft, ShortSignalRejected) {
  dsp::StftConfig cfg{2048, 512, 2048};
  EXPECT_THROW(dsp::stft_magnitude(AudioBuffer{std::vector<float>(2000, 0.1f), 48000}, cfg), InvalidInput);
  EXPECT_THROW((dsp::StftConfig{512, 600, 512}.validate()), InvalidInput);
}

TEST(Mel, SilenceIsLogFloor) {
  dsp::MelConfig cfg;
  auto m = dsp::mel_spectrogram(AudioBuffer{std::vector<float>(8192, 0.0f), 48000}, cfg);
  EXPECT_EQ(m.size(0), 128);
  EXPECT_TRUE(torch::allclose(m, torch::full_like(m, std::log(1e-5f)), 0.0, 1e-6));
}

TEST(Mel, SelfDifferenceIsZero) {
  dsp::MelConfig cfg;
  AudioBuffer x{white_noise(12000, 9), 48000};
  auto a = dsp::mel_spectrogram(x, cfg);
  EXPECT_EQ((a - dsp::mel_spectrogram(x, cfg)).abs().sum().item<float>(), 0.0f);
  EXPECT_TRUE(torch::isfinite(a).all().item<bool>());
}

TEST(Mel, DoublingAmplitudeRaisesCellsBoundedly) {
  dsp::MelConfig cfg;
  auto x = white_noise(16384, 10);
  auto x2 = x;
  for (auto& v : x2) v *= 2.0f;
  auto a = dsp::mel_spectrogram(AudioBuffer{x, 48000}, cfg);
  auto b = dsp::mel_spectrogram(AudioBuffer{x2, 48000}, cfg);
  auto diff = (b - a).to(torch::kFloat64);
  EXPECT_GE(diff.min().item<double>(), -1e-5);
  EXPECT_LE(diff.max().item<double>(), std::log(4.0) + 1e-5);
}

TEST(Mel, FilterbankCoversBand) {
  dsp::MelConfig cfg;
  auto fb = dsp::mel_filterbank(cfg);
  // every filter picks up at least one fft bin
  EXPECT_GT(fb.sum(1).min().item<double>(), 0.0);
  EXPECT_THROW((dsp::MelConfig{dsp::StftConfig{}, 128, 0.0, 30000.0}.validate()), InvalidInput);
}

TEST(NormalizePeak, Examples) {
  auto a = dsp::normalize_peak(AudioBuffer{{0.5f, -0.25f}, 48000});
  EXPECT_EQ(a.samples, (std::vector<float>{1.0f, -0.5f}));
  auto b = dsp::normalize_peak(AudioBuffer{{1.0f, -1.0f}, 48000});
  EXPECT_EQ(b.samples, (std::vector<float>{1.0f, -1.0f}));
  auto c = dsp::normalize_peak(AudioBuffer{{0.0f, 0.0f, 0.0f}, 48000});
  EXPECT_EQ(c.samples, (std::vector<float>{0.0f, 0.0f, 0.0f}));
}

TEST(NormalizePeak, PeakIsExactlyOne) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto y = dsp::normalize_peak(AudioBuffer{white_noise(1000, seed, 0.01 + 0.1 * seed), 48000});
    EXPECT_EQ(y.peak(), 1.0f);
  }
}

TEST(Degrade, NoiseLosesEnergyAboveCutoff) {
  AudioBuffer y{white_noise(48000, 13), 48000};
  auto x = dsp::simulate_low_resolution(y, 4000.0);
  const double before = band_energy(y.samples, 5000.0, 24001.0);
  const double after = band_energy(x.samples, 5000.0, 24001.0);
  EXPECT_LE(after, 0.01 * before);
}

TEST(Degrade, PassbandSinePreserved) {
  AudioBuffer y{sine(1000.0, 48000.0, 48000), 48000};
  auto x = dsp::simulate_low_resolution(y, 8000.0);
  EXPECT_GT(correlation(x.samples, y.samples, 2400, 45600), 0.999);
}

TEST(Degrade, OddLengthPreserved) {
  AudioBuffer y{white_noise(33601, 14), 48000};
  for (double cutoff : {2000.0, 3333.3, 8000.0, 12000.0}) {
    EXPECT_EQ(dsp::simulate_low_resolution(y, cutoff).size(), 33601u) << cutoff;
  }
}

TEST(Degrade, SecondPassRemovesAlmostNothing) {
  AudioBuffer y{white_noise(48000, 15), 48000};
  auto once = dsp::simulate_low_resolution(y, 5000.0);
  auto twice = dsp::simulate_low_resolution(once, 5000.0);
  const double e1 = band_energy(once.samples, 0.0, 4500.0);
  const double e2 = band_energy(twice.samples, 0.0, 4500.0);
  EXPECT_LT(std::abs(e2 - e1) / e1, 0.01);
}

TEST(Degrade, RejectsBadRateAndCutoff) {
  AudioBuffer y{white_noise(4800, 16), 16000};
  EXPECT_THROW(dsp::simulate_low_resolution(y, 4000.0), InvalidInput);
  AudioBuffer z{white_noise(4800, 16), 48000};
  EXPECT_THROW(dsp::simulate_low_resolution(z, 1000.0), InvalidInput);
  EXPECT_THROW(dsp::simulate_low_resolution(z, 13000.0), InvalidInput);
}

TEST(Wav, RoundTripFloatAndPcm16) {
  auto dir = testkit::temp_dir("wav");
  AudioBuffer x{white_noise(1234, 17, 0.3), 44100};
  write_wav(dir / "f.wav", x, WavFormat::kFloat32);
  auto f = read_wav(dir / "f.wav");
  EXPECT_EQ(f.rate, 44100);
  EXPECT_EQ(f.samples, x.samples);
  write_wav(dir / "p.wav", x, WavFormat::kPcm16);
  auto p = read_wav(dir / "p.wav");
  ASSERT_EQ(p.size(), x.size());
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(p.samples[i], std::clamp(x.samples[i], -1.0f, 1.0f), 1.0 / 32768);
  auto info = read_wav_info(dir / "p.wav");
  EXPECT_EQ(info.frames, 1234u);
  EXPECT_EQ(info.bits_per_sample, 16);
}

TEST(Wav, StereoRejected) {
  auto dir = testkit::temp_dir("wav_stereo");
  // hand-built 2-channel PCM16 header with 2 frames
  std::string bytes = "RIFF";
  auto u32 = [&](std::uint32_t v) { for (int i = 0; i < 4; ++i) bytes.push_back(static_cast<char>((v >> (8 * i)) & 0xff)); };
  auto u16 = [&](std::uint16_t v) { bytes.push_back(static_cast<char>(v & 0xff)); bytes.push_back(static_cast<char>(v >> 8)); };
  u32(36 + 8);
  bytes += "WAVEfmt ";
  u32(16); u16(1); u16(2); u32(48000); u32(48000 * 4); u16(4); u16(16);
  bytes += "data";
  u32(8);
  bytes.append(8, '\0');
  std::ofstream(dir / "s.wav", std::ios::binary).write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  EXPECT_THROW(read_wav(dir / "s.wav"), InvalidInput);
  EXPECT_THROW(read_wav(dir / "missing.wav"), IoError);
}
