#pragma once

#include <torch/torch.h>

#include <span>
#include <vector>

#include "wum/errors.hpp"
#include "wum/ssm/selective_scan.hpp"

namespace wum::ssm {

/// Tensors driving one selective scan. delta must already be positive
/// (post-softplus) and A strictly negative.
///   u, delta: (B, T, D)   A: (D, N)   B, C: (B, T, N)   D: (D) or undefined
struct SsmParams {
  torch::Tensor delta;
  torch::Tensor A;
  torch::Tensor B;
  torch::Tensor C;
  torch::Tensor D;
};

/// Hidden state carried by the recurrence, (B, D, N). Zero at sequence start.
struct SsmState {
  torch::Tensor h;
};

struct ScanOptions {
  Discretization disc = Discretization::kZeroOrderHold;
  std::int64_t chunk = kDefaultChunk;
};

namespace detail {

inline void check_param_shapes(const torch::Tensor& u, const SsmParams& p) {
  auto fail = [](const std::string& m) { throw InvalidInput("selective_scan: " + m); };
  if (u.dim() != 3) fail("u must be (batch, length, channels)");
  const auto nb = u.size(0), len = u.size(1), ch = u.size(2);
  if (!p.delta.defined() || p.delta.sizes() != u.sizes()) fail("delta must match u");
  if (!p.A.defined() || p.A.dim() != 2 || p.A.size(0) != ch) fail("A must be (channels, state)");
  const auto ns = p.A.size(1);
  if (!p.B.defined() || p.B.dim() != 3 || p.B.size(0) != nb || p.B.size(1) != len || p.B.size(2) != ns)
    fail("B must be (batch, length, state)");
  if (!p.C.defined() || p.C.sizes() != p.B.sizes()) fail("C must be (batch, length, state)");
  if (p.D.defined() && (p.D.dim() != 1 || p.D.size(0) != ch)) fail("D must be (channels)");
  if (u.size(1) < 1) fail("length must be >= 1");
}

template <class T>
std::span<const T> span_of(const torch::Tensor& t) {
  if (!t.defined()) return {};
  return {t.data_ptr<T>(), static_cast<std::size_t>(t.numel())};
}

template <class T>
ScanInputs<T> make_inputs(const torch::Tensor& u, const torch::Tensor& delta, const torch::Tensor& A,
                          const torch::Tensor& B, const torch::Tensor& C, const torch::Tensor& D,
                          const torch::Tensor& h0, Discretization disc) {
  ScanInputs<T> in;
  in.dims = {u.size(0), u.size(1), u.size(2), A.size(1)};
  in.u = span_of<T>(u);
  in.delta = span_of<T>(delta);
  in.A = span_of<T>(A);
  in.B = span_of<T>(B);
  in.C = span_of<T>(C);
  in.D = span_of<T>(D);
  in.h0 = span_of<T>(h0);
  in.disc = disc;
  return in;
}

template <class T>
torch::Tensor to_tensor(std::vector<T>&& v, at::IntArrayRef shape, const torch::TensorOptions& opts) {
  auto out = torch::empty(shape, opts);
  std::copy(v.begin(), v.end(), out.data_ptr<T>());
  return out;
}

inline torch::Tensor contiguous_or_undefined(const torch::Tensor& t) {
  return t.defined() ? t.detach().contiguous() : t;
}

}  // namespace detail

/// Sequential oracle on tensors (no autograd).
inline torch::Tensor selective_scan_reference(const torch::Tensor& u, const SsmParams& p,
                                              Discretization disc = Discretization::kZeroOrderHold) {
  detail::check_param_shapes(u, p);
  torch::NoGradGuard no_grad;
  auto uc = u.contiguous(), dc = p.delta.contiguous(), ac = p.A.contiguous(), bc = p.B.contiguous(),
       cc = p.C.contiguous(), Dc = detail::contiguous_or_undefined(p.D);
  torch::Tensor out;
  AT_DISPATCH_FLOATING_TYPES(u.scalar_type(), "selective_scan_reference", [&] {
    auto in = detail::make_inputs<scalar_t>(uc, dc, ac, bc, cc, Dc, {}, disc);
    out = detail::to_tensor<scalar_t>(selective_scan_reference(in), u.sizes(), u.options());
  });
  return out;
}

class SelectiveScanFunction : public torch::autograd::Function<SelectiveScanFunction> {
 public:
  static torch::Tensor forward(torch::autograd::AutogradContext* ctx, torch::Tensor u, torch::Tensor delta,
                               torch::Tensor A, torch::Tensor B, torch::Tensor C, torch::Tensor D,
                               std::int64_t disc, std::int64_t chunk) {
    u = u.contiguous();
    delta = delta.contiguous();
    A = A.contiguous();
    B = B.contiguous();
    C = C.contiguous();
    if (D.defined()) D = D.contiguous();
    torch::Tensor y, ckpt;
    AT_DISPATCH_FLOATING_TYPES(u.scalar_type(), "selective_scan_fwd", [&] {
      auto in = detail::make_inputs<scalar_t>(u, delta, A, B, C, D, {}, static_cast<Discretization>(disc));
      auto res = selective_scan_fast(in, chunk);
      const auto n_chunks = res.num_chunks(u.size(1));
      y = detail::to_tensor<scalar_t>(std::move(res.y), u.sizes(), u.options());
      ckpt = detail::to_tensor<scalar_t>(std::move(res.checkpoints),
                                         {u.size(0), n_chunks + 1, u.size(2), A.size(1)}, u.options());
    });
    ctx->save_for_backward({u, delta, A, B, C, D, ckpt});
    ctx->saved_data["disc"] = disc;
    ctx->saved_data["chunk"] = chunk;
    return y;
  }

  static torch::autograd::variable_list backward(torch::autograd::AutogradContext* ctx,
                                                 torch::autograd::variable_list grad_outputs) {
    auto saved = ctx->get_saved_variables();
    const auto& u = saved[0];
    const auto& delta = saved[1];
    const auto& A = saved[2];
    const auto& B = saved[3];
    const auto& C = saved[4];
    const auto& D = saved[5];
    const auto& ckpt = saved[6];
    const auto disc = static_cast<Discretization>(ctx->saved_data["disc"].toInt());
    const auto chunk = ctx->saved_data["chunk"].toInt();
    auto gy = grad_outputs[0].contiguous();

    torch::Tensor gu, gdelta, gA, gB, gC, gD;
    AT_DISPATCH_FLOATING_TYPES(u.scalar_type(), "selective_scan_bwd", [&] {
      auto in = detail::make_inputs<scalar_t>(u, delta, A, B, C, D, {}, disc);
      ScanResult<scalar_t> fwd;
      fwd.chunk = chunk;
      fwd.checkpoints.assign(ckpt.data_ptr<scalar_t>(), ckpt.data_ptr<scalar_t>() + ckpt.numel());
      auto g = selective_scan_backward<scalar_t>(in, fwd, detail::span_of<scalar_t>(gy));
      gu = detail::to_tensor<scalar_t>(std::move(g.u), u.sizes(), u.options());
      gdelta = detail::to_tensor<scalar_t>(std::move(g.delta), delta.sizes(), u.options());
      gA = detail::to_tensor<scalar_t>(std::move(g.A), A.sizes(), u.options());
      gB = detail::to_tensor<scalar_t>(std::move(g.B), B.sizes(), u.options());
      gC = detail::to_tensor<scalar_t>(std::move(g.C), C.sizes(), u.options());
      if (D.defined()) gD = detail::to_tensor<scalar_t>(std::move(g.D), D.sizes(), u.options());
    });
    return {gu, gdelta, gA, gB, gC, gD, torch::Tensor(), torch::Tensor()};
  }
};

/// Fast chunked scan; differentiable w.r.t. u and every SsmParams tensor.
inline torch::Tensor selective_scan(const torch::Tensor& u, const SsmParams& p, const ScanOptions& opts = {}) {
  detail::check_param_shapes(u, p);
  return SelectiveScanFunction::apply(u, p.delta, p.A, p.B, p.C, p.D, static_cast<std::int64_t>(opts.disc),
                                      opts.chunk);
}

/// Scan from an explicit initial state; returns y and the final state. No autograd.
inline std::pair<torch::Tensor, SsmState> selective_scan_with_state(const torch::Tensor& u, const SsmParams& p,
                                                                    const SsmState& init,
                                                                    const ScanOptions& opts = {}) {
  detail::check_param_shapes(u, p);
  torch::NoGradGuard no_grad;
  auto uc = u.contiguous(), dc = p.delta.contiguous(), ac = p.A.contiguous(), bc = p.B.contiguous(),
       cc = p.C.contiguous(), Dc = detail::contiguous_or_undefined(p.D);
  auto h0 = init.h.defined() ? init.h.contiguous() : torch::Tensor();
  if (h0.defined()) {
    wum::detail::require(h0.dim() == 3 && h0.size(0) == u.size(0) && h0.size(1) == u.size(2) &&
                             h0.size(2) == p.A.size(1),
                         "selective_scan: state must be (batch, channels, state)");
  }
  torch::Tensor y, h_last;
  AT_DISPATCH_FLOATING_TYPES(u.scalar_type(), "selective_scan_state", [&] {
    auto in = detail::make_inputs<scalar_t>(uc, dc, ac, bc, cc, Dc, h0, opts.disc);
    auto res = selective_scan_fast(in, opts.chunk);
    const auto n_chunks = res.num_chunks(u.size(1));
    auto ck = detail::to_tensor<scalar_t>(std::move(res.checkpoints),
                                          {u.size(0), n_chunks + 1, u.size(2), p.A.size(1)}, u.options());
    h_last = ck.select(1, n_chunks).clone();
    y = detail::to_tensor<scalar_t>(std::move(res.y), u.sizes(), u.options());
  });
  return {y, SsmState{h_last}};
}

}  // namespace wum::ssm
