#pragma once

// Selective state-space scan kernels on flat row-major buffers.
//
//   a_t  = exp(delta_t * A)
//   b_t  = k(delta_t, A) * B_t * u_t        k = expm1(delta*A)/A  (zero-order hold)
//                                           k = delta             (Euler)
//   h_t  = a_t * h_{t-1} + b_t,   h_{-1} = h0 (zeros by default)
//   y_t  = sum_n C_t[n] h_t[:, n] + D * u_t
//
// Shapes: u, delta, y: (batch, length, channels); A: (channels, state);
// B, C: (batch, length, state); D: (channels) or empty.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "wum/errors.hpp"

namespace wum::ssm {

enum class Discretization { kZeroOrderHold, kEuler };

struct ScanDims {
  std::int64_t batch = 1;
  std::int64_t length = 0;
  std::int64_t channels = 0;
  std::int64_t state = 0;

  [[nodiscard]] std::int64_t seq_elems() const { return batch * length * channels; }
  [[nodiscard]] std::int64_t proj_elems() const { return batch * length * state; }
  [[nodiscard]] std::int64_t state_elems() const { return channels * state; }
};

template <class T>
struct ScanInputs {
  ScanDims dims;
  std::span<const T> u;
  std::span<const T> delta;
  std::span<const T> A;
  std::span<const T> B;
  std::span<const T> C;
  std::span<const T> D;   // may be empty: no skip term
  std::span<const T> h0;  // may be empty: zero initial state, else (batch, channels, state)
  Discretization disc = Discretization::kZeroOrderHold;
};

template <class T>
struct ScanGrads {
  std::vector<T> u, delta, A, B, C, D;
};

inline constexpr std::int64_t kDefaultChunk = 64;

namespace detail {

template <class T>
void check_inputs(const ScanInputs<T>& in) {
  const auto& d = in.dims;
  auto fail = [](const std::string& m) { throw InvalidInput("selective_scan: " + m); };
  if (d.batch < 1 || d.length < 1 || d.channels < 1 || d.state < 1) fail("all dimensions must be >= 1");
  const auto seq = static_cast<std::size_t>(d.seq_elems());
  const auto proj = static_cast<std::size_t>(d.proj_elems());
  if (in.u.size() != seq) fail("u has " + std::to_string(in.u.size()) + " elements, expected " + std::to_string(seq));
  if (in.delta.size() != seq) fail("delta shape does not match u");
  if (in.A.size() != static_cast<std::size_t>(d.state_elems())) fail("A must be (channels, state)");
  if (in.B.size() != proj) fail("B must be (batch, length, state)");
  if (in.C.size() != proj) fail("C must be (batch, length, state)");
  if (!in.D.empty() && in.D.size() != static_cast<std::size_t>(d.channels)) fail("D must be (channels)");
  if (!in.h0.empty() && in.h0.size() != static_cast<std::size_t>(d.batch * d.state_elems()))
    fail("h0 must be (batch, channels, state)");
}

template <class T>
struct ExpTraits;

template <>
struct ExpTraits<float> {
  using Int = std::int32_t;
  static constexpr float kLo = -87.0f, kHi = 88.0f;
  static constexpr float kShifter = 12582912.0f;  // 1.5 * 2^23
  static constexpr int kMantissa = 23, kBias = 127, kDegree = 7;
};

template <>
struct ExpTraits<double> {
  using Int = std::int64_t;
  static constexpr double kLo = -708.0, kHi = 709.0;
  static constexpr double kShifter = 6755399441055744.0;  // 1.5 * 2^52
  static constexpr int kMantissa = 52, kBias = 1023, kDegree = 13;
};

// 1 / (i + 1)!
template <class T>
inline constexpr T kInvFactorial[14] = {T(1.0),
                                        T(1.0 / 2),
                                        T(1.0 / 6),
                                        T(1.0 / 24),
                                        T(1.0 / 120),
                                        T(1.0 / 720),
                                        T(1.0 / 5040),
                                        T(1.0 / 40320),
                                        T(1.0 / 362880),
                                        T(1.0 / 3628800),
                                        T(1.0 / 39916800),
                                        T(1.0 / 479001600),
                                        T(1.0 / 6227020800.0),
                                        T(1.0 / 87178291200.0)};

/// exp(x) and expm1(x) together, branch-free so loops over it vectorise.
/// x = k ln2 + r with |r| <= ln2/2, expm1(r) by Taylor polynomial, then
/// exp = 2^k (1 + q) and expm1 = 2^k q + (2^k - 1).
template <class T>
inline void exp_expm1(T x, T& e, T& em1) {
  using Tr = ExpTraits<T>;
  constexpr T log2e = T(1.4426950408889634), ln2_hi = T(0.693145751953125), ln2_lo = T(1.4286068203094173e-06);
  x = x < Tr::kLo ? Tr::kLo : x;
  x = x > Tr::kHi ? Tr::kHi : x;
  const T kf = (x * log2e + Tr::kShifter) - Tr::kShifter;
  const T r = (x - kf * ln2_hi) - kf * ln2_lo;
  // Horner on 1 + r/2! + r^2/3! + ...
  T p = kInvFactorial<T>[Tr::kDegree - 1];
#pragma GCC unroll 16
  for (int i = Tr::kDegree - 2; i >= 0; --i) p = p * r + kInvFactorial<T>[i];
  const T q = r * p;
  const auto k = static_cast<typename Tr::Int>(kf);
  const T two_k = std::bit_cast<T>(static_cast<typename Tr::Int>((k + Tr::kBias)) << Tr::kMantissa);
  e = two_k + two_k * q;
  em1 = two_k * q + (two_k - T(1));
}

/// 1/A with 0 where A == 0, so the gain loop multiplies instead of divides.
template <class T>
inline std::vector<T> reciprocals(std::span<const T> a) {
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] == T(0) ? T(0) : T(1) / a[i];
  return out;
}

/// Decay exp(delta*A) and input gain k(delta, A) for one channel's state row.
template <class T>
inline void discretize_row(T delta, const T* a_row, const T* inv_row, std::int64_t ns, Discretization disc, T* decay,
                           T* gain) {
  if (disc == Discretization::kEuler) {
    for (std::int64_t n = 0; n < ns; ++n) {
      T em1;
      exp_expm1(delta * a_row[n], decay[n], em1);
      gain[n] = delta;
    }
    return;
  }
  for (std::int64_t n = 0; n < ns; ++n) {
    T em1;
    exp_expm1(delta * a_row[n], decay[n], em1);
    gain[n] = em1 * inv_row[n] + delta * static_cast<T>(a_row[n] == T(0));
  }
}

/// discretize_row over all channels of one timestep; outputs are (channels, state).
template <class T>
inline void discretize_rows(const T* delta, const T* A, const T* inv_A, std::int64_t ch, std::int64_t ns,
                            Discretization disc, T* decay, T* gain) {
  for (std::int64_t d = 0; d < ch; ++d) {
    discretize_row(delta[d], A + d * ns, inv_A + d * ns, ns, disc, decay + d * ns, gain + d * ns);
  }
}

// d(input_gain)/d(a_cont), series form near delta*a_cont == 0.
template <class T>
inline T input_gain_dA(T delta, T a_cont, T decay, T gain, Discretization disc) {
  if (disc == Discretization::kEuler) return T(0);
  const T x = delta * a_cont;
  if (std::abs(x) < T(1e-3)) return delta * delta * (T(0.5) + x / T(3));
  return (delta * decay - gain) / a_cont;
}

template <class T>
inline T input_gain_ddelta(T decay, Discretization disc) {
  return disc == Discretization::kEuler ? T(1) : decay;
}

template <class T>
void check_finite(std::span<const T> y) {
  for (T v : y) {
    if (!std::isfinite(v)) throw NumericalError("selective_scan: non-finite value in output");
  }
}

}  // namespace detail

/// Sequential oracle: one scalar recurrence per (batch, channel, state).
template <class T>
std::vector<T> selective_scan_reference(const ScanInputs<T>& in) {
  detail::check_inputs(in);
  const auto [nb, len, ch, ns] = in.dims;
  std::vector<T> y(static_cast<std::size_t>(in.dims.seq_elems()), T(0));
  const auto inv_a = detail::reciprocals(in.A);
  for (std::int64_t b = 0; b < nb; ++b) {
    for (std::int64_t d = 0; d < ch; ++d) {
      for (std::int64_t n = 0; n < ns; ++n) {
        const T a_cont = in.A[static_cast<std::size_t>(d * ns + n)];
        T h = in.h0.empty() ? T(0) : in.h0[static_cast<std::size_t>((b * ch + d) * ns + n)];
        for (std::int64_t t = 0; t < len; ++t) {
          const auto seq_i = static_cast<std::size_t>((b * len + t) * ch + d);
          const auto proj_i = static_cast<std::size_t>((b * len + t) * ns + n);
          const T dt = in.delta[seq_i];
          T decay, gain;
          detail::discretize_row(dt, &a_cont, &inv_a[static_cast<std::size_t>(d * ns + n)], 1, in.disc, &decay, &gain);
          h = decay * h + gain * in.B[proj_i] * in.u[seq_i];
          y[seq_i] += in.C[proj_i] * h;
        }
      }
      if (!in.D.empty()) {
        for (std::int64_t t = 0; t < len; ++t) {
          const auto seq_i = static_cast<std::size_t>((b * len + t) * ch + d);
          y[seq_i] += in.D[static_cast<std::size_t>(d)] * in.u[seq_i];
        }
      }
    }
  }
  detail::check_finite<T>(y);
  return y;
}

/// Output of the fast scan. `checkpoints` holds the hidden state at every
/// chunk boundary, (batch, chunks + 1, channels, state); row 0 is h0 and the
/// last row is the final state. The backward pass replays chunks from it.
template <class T>
struct ScanResult {
  std::vector<T> y;
  std::vector<T> checkpoints;
  std::int64_t chunk = kDefaultChunk;
  [[nodiscard]] std::int64_t num_chunks(std::int64_t length) const { return (length + chunk - 1) / chunk; }
};

/// Chunked scan. Inside a chunk the affine maps h -> a*h + b are composed
/// with a Brent-Kung prefix scan (log depth); chunks are chained
/// sequentially through the carried state. Every inner loop runs over the
/// contiguous channels*state block.
template <class T>
ScanResult<T> selective_scan_fast(const ScanInputs<T>& in, std::int64_t chunk = kDefaultChunk) {
  detail::check_inputs(in);
  wum::detail::require(chunk >= 1, "selective_scan_fast: chunk must be >= 1");
  const auto [nb, len, ch, ns] = in.dims;
  const std::int64_t dn = ch * ns;
  const std::int64_t n_chunks = (len + chunk - 1) / chunk;

  ScanResult<T> out;
  out.chunk = chunk;
  out.y.assign(static_cast<std::size_t>(in.dims.seq_elems()), T(0));
  out.checkpoints.assign(static_cast<std::size_t>(nb * (n_chunks + 1) * dn), T(0));

  std::vector<T> acoef(static_cast<std::size_t>(chunk * dn));
  std::vector<T> bcoef(static_cast<std::size_t>(chunk * dn));
  std::vector<T> gain(static_cast<std::size_t>(dn));
  std::vector<T> carry(static_cast<std::size_t>(dn));
  const auto inv_a = detail::reciprocals(in.A);

  auto combine = [&](std::int64_t prev, std::int64_t cur) {
    T* a_cur = acoef.data() + cur * dn;
    T* b_cur = bcoef.data() + cur * dn;
    const T* a_prev = acoef.data() + prev * dn;
    const T* b_prev = bcoef.data() + prev * dn;
    for (std::int64_t j = 0; j < dn; ++j) {
      b_cur[j] = a_cur[j] * b_prev[j] + b_cur[j];
      a_cur[j] = a_cur[j] * a_prev[j];
    }
  };

  for (std::int64_t b = 0; b < nb; ++b) {
    T* ckpt = out.checkpoints.data() + b * (n_chunks + 1) * dn;
    if (in.h0.empty()) {
      std::fill(carry.begin(), carry.end(), T(0));
    } else {
      std::copy_n(in.h0.begin() + b * dn, dn, carry.begin());
    }
    std::copy(carry.begin(), carry.end(), ckpt);

    for (std::int64_t c = 0; c < n_chunks; ++c) {
      const std::int64_t t0 = c * chunk;
      const std::int64_t clen = std::min(chunk, len - t0);

      for (std::int64_t i = 0; i < clen; ++i) {
        const std::int64_t t = t0 + i;
        const T* dt = in.delta.data() + (b * len + t) * ch;
        const T* ut = in.u.data() + (b * len + t) * ch;
        const T* bt = in.B.data() + (b * len + t) * ns;
        T* ai = acoef.data() + i * dn;
        T* bi = bcoef.data() + i * dn;
        detail::discretize_rows(dt, in.A.data(), inv_a.data(), ch, ns, in.disc, ai, gain.data());
        for (std::int64_t d = 0; d < ch; ++d) {
          for (std::int64_t n = 0; n < ns; ++n) bi[d * ns + n] = gain[d * ns + n] * bt[n] * ut[d];
        }
      }

      std::int64_t top = 1;
      for (std::int64_t s = 1; s < clen; s *= 2) {
        top = s;
        for (std::int64_t i = 2 * s - 1; i < clen; i += 2 * s) combine(i - s, i);
      }
      for (std::int64_t s = top; s >= 1; s /= 2) {
        for (std::int64_t i = 3 * s - 1; i < clen; i += 2 * s) combine(i - s, i);
      }

      for (std::int64_t i = 0; i < clen; ++i) {
        const std::int64_t t = t0 + i;
        T* hi = bcoef.data() + i * dn;
        const T* ai = acoef.data() + i * dn;
        for (std::int64_t j = 0; j < dn; ++j) hi[j] = ai[j] * carry[j] + hi[j];
        const T* ct = in.C.data() + (b * len + t) * ns;
        const T* ut = in.u.data() + (b * len + t) * ch;
        T* yt = out.y.data() + (b * len + t) * ch;
        for (std::int64_t d = 0; d < ch; ++d) {
          T acc = T(0);
          const T* hd = hi + d * ns;
          for (std::int64_t n = 0; n < ns; ++n) acc += ct[n] * hd[n];
          if (!in.D.empty()) acc += in.D[static_cast<std::size_t>(d)] * ut[d];
          yt[d] = acc;
        }
      }
      std::copy_n(bcoef.data() + (clen - 1) * dn, dn, carry.begin());
      std::copy(carry.begin(), carry.end(), ckpt + (c + 1) * dn);
    }
  }
  detail::check_finite<T>(out.y);
  return out;
}

/// Reverse-mode gradients of sum(grad_y * y) w.r.t. every scan input.
/// Each chunk's hidden states are replayed sequentially from the forward
/// checkpoints, so memory stays at O(chunk * channels * state).
/// Gradients w.r.t. h0 are not produced.
template <class T>
ScanGrads<T> selective_scan_backward(const ScanInputs<T>& in, const ScanResult<T>& fwd, std::span<const T> grad_y) {
  detail::check_inputs(in);
  const auto [nb, len, ch, ns] = in.dims;
  const std::int64_t dn = ch * ns;
  const std::int64_t chunk = fwd.chunk;
  const std::int64_t n_chunks = fwd.num_chunks(len);
  wum::detail::require(grad_y.size() == static_cast<std::size_t>(in.dims.seq_elems()),
                  "selective_scan_backward: grad_y shape mismatch");
  wum::detail::require(fwd.checkpoints.size() == static_cast<std::size_t>(nb * (n_chunks + 1) * dn),
                  "selective_scan_backward: checkpoint buffer does not match inputs");

  ScanGrads<T> g;
  g.u.assign(static_cast<std::size_t>(in.dims.seq_elems()), T(0));
  g.delta.assign(g.u.size(), T(0));
  g.B.assign(static_cast<std::size_t>(in.dims.proj_elems()), T(0));
  g.C.assign(g.B.size(), T(0));
  std::vector<double> dA(static_cast<std::size_t>(dn), 0.0);
  std::vector<double> dD(static_cast<std::size_t>(ch), 0.0);

  std::vector<T> hbuf(static_cast<std::size_t>((chunk + 1) * dn));
  std::vector<T> abuf(static_cast<std::size_t>(chunk * dn));
  std::vector<T> kbuf(static_cast<std::size_t>(chunk * dn));
  std::vector<T> gh(static_cast<std::size_t>(dn));
  const auto inv_a = detail::reciprocals(in.A);

  for (std::int64_t b = 0; b < nb; ++b) {
    std::fill(gh.begin(), gh.end(), T(0));
    const T* ckpt = fwd.checkpoints.data() + b * (n_chunks + 1) * dn;
    for (std::int64_t c = n_chunks - 1; c >= 0; --c) {
      const std::int64_t t0 = c * chunk;
      const std::int64_t clen = std::min(chunk, len - t0);
      std::copy_n(ckpt + c * dn, dn, hbuf.begin());
      for (std::int64_t i = 0; i < clen; ++i) {
        const std::int64_t t = t0 + i;
        const T* dt = in.delta.data() + (b * len + t) * ch;
        const T* ut = in.u.data() + (b * len + t) * ch;
        const T* bt = in.B.data() + (b * len + t) * ns;
        const T* hp = hbuf.data() + i * dn;
        T* hn = hbuf.data() + (i + 1) * dn;
        T* ai = abuf.data() + i * dn;
        T* ki = kbuf.data() + i * dn;
        detail::discretize_rows(dt, in.A.data(), inv_a.data(), ch, ns, in.disc, ai, ki);
        for (std::int64_t d = 0; d < ch; ++d) {
          for (std::int64_t n = 0; n < ns; ++n) {
            const std::int64_t j = d * ns + n;
            hn[j] = ai[j] * hp[j] + ki[j] * bt[n] * ut[d];
          }
        }
      }
      for (std::int64_t i = clen - 1; i >= 0; --i) {
        const std::int64_t t = t0 + i;
        const auto seq_off = (b * len + t) * ch;
        const auto proj_off = (b * len + t) * ns;
        const T* dt = in.delta.data() + seq_off;
        const T* ut = in.u.data() + seq_off;
        const T* gy = grad_y.data() + seq_off;
        const T* bt = in.B.data() + proj_off;
        const T* ct = in.C.data() + proj_off;
        T* gu = g.u.data() + seq_off;
        T* gdt = g.delta.data() + seq_off;
        T* gB = g.B.data() + proj_off;
        T* gC = g.C.data() + proj_off;
        const T* hp = hbuf.data() + i * dn;
        const T* hc = hbuf.data() + (i + 1) * dn;
        const T* ai = abuf.data() + i * dn;
        const T* ki = kbuf.data() + i * dn;
        for (std::int64_t d = 0; d < ch; ++d) {
          const T* a_row = in.A.data() + d * ns;
          T du = T(0), ddt = T(0);
          for (std::int64_t n = 0; n < ns; ++n) {
            const std::int64_t j = d * ns + n;
            const T gh_t = gh[j] + ct[n] * gy[d];  // dL/dh_t
            gC[n] += gy[d] * hc[j];
            du += gh_t * ki[j] * bt[n];
            const T g_bbar = gh_t * ut[d];
            gB[n] += g_bbar * ki[j];
            const T g_gain = g_bbar * bt[n];
            const T g_decay = gh_t * hp[j];
            ddt += g_decay * a_row[n] * ai[j] + g_gain * detail::input_gain_ddelta(ai[j], in.disc);
            dA[static_cast<std::size_t>(j)] += static_cast<double>(
                g_decay * dt[d] * ai[j] + g_gain * detail::input_gain_dA(dt[d], a_row[n], ai[j], ki[j], in.disc));
            gh[j] = gh_t * ai[j];
          }
          if (!in.D.empty()) {
            du += in.D[static_cast<std::size_t>(d)] * gy[d];
            dD[static_cast<std::size_t>(d)] += static_cast<double>(gy[d] * ut[d]);
          }
          gu[d] = du;
          gdt[d] = ddt;
        }
      }
    }
  }
  g.A.assign(dA.begin(), dA.end());
  if (!in.D.empty()) g.D.assign(dD.begin(), dD.end());
  return g;
}

}  // namespace wum::ssm
