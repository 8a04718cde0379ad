#include "cvnn/nn_ops.hpp"

#include <algorithm>
#include <limits>
#include <array>
#include <cmath>
#include <memory>

#include "cvnn/errors.hpp"
#include "internal.hpp"

namespace cvnn {

namespace {

Tape& same_tape(std::initializer_list<Var> vars) {
  Tape* tape = nullptr;
  for (const Var& v : vars) {
    if (!v.tape) throw GraphError("use of an unbound variable");
    if (tape && v.tape != tape) throw GraphError("operands live on different tapes");
    tape = v.tape;
  }
  return *tape;
}

// ---------------------------------------------------------------------------
// im2col convolution kernels

struct ConvDims {
  std::size_t n, c, h, w, o, kh, kw, ho, wo, pad, stride;
  std::size_t ck() const { return c * kh * kw; }
  std::size_t hw_out() const { return ho * wo; }
};

ConvDims conv_dims(const Shape& x, const Shape& w, ConvGeometry g) {
  if (x.rank() != 4) throw ShapeError("convolution input must be (N,C,H,W), got " + x.str());
  if (w.rank() != 4) throw ShapeError("convolution kernel must be (O,C,kh,kw), got " + w.str());
  if (x[1] != w[1]) {
    throw ShapeError("convolution channel mismatch: input " + x.str() + ", kernel " + w.str());
  }
  if (g.stride == 0) throw ShapeError("convolution stride must be positive");
  if (x[2] + 2 * g.pad < w[2] || x[3] + 2 * g.pad < w[3]) {
    throw ShapeError("convolution kernel " + w.str() + " larger than padded input " + x.str());
  }
  ConvDims d{x[0], x[1], x[2], x[3], w[0], w[2], w[3], 0, 0, g.pad, g.stride};
  d.ho = (d.h + 2 * d.pad - d.kh) / d.stride + 1;
  d.wo = (d.w + 2 * d.pad - d.kw) / d.stride + 1;
  return d;
}

std::size_t chunk_size(const ConvDims& d) {
  constexpr std::size_t kBudget = std::size_t{4} << 20;  // doubles per column buffer
  return std::clamp<std::size_t>(kBudget / std::max<std::size_t>(1, d.ck() * d.hw_out()), 1, d.n);
}

// Output columns [lo, hi) whose input column ow*stride + k - pad is inside [0, w).
std::pair<std::size_t, std::size_t> valid_range(std::size_t out, std::size_t in, std::size_t k, std::size_t pad,
                                                std::size_t stride) {
  std::size_t lo = 0;
  while (lo < out && lo * stride + k < pad) ++lo;
  std::size_t hi = lo;
  while (hi < out && hi * stride + k - pad < in) ++hi;
  return {lo, hi};
}

void im2col(const ConvDims& d, const double* x, std::size_t n0, std::size_t n1, double* col) {
  const std::size_t cols = (n1 - n0) * d.hw_out();
  for (std::size_t c = 0; c < d.c; ++c) {
    for (std::size_t ki = 0; ki < d.kh; ++ki) {
      const auto [oh_lo, oh_hi] = valid_range(d.ho, d.h, ki, d.pad, d.stride);
      for (std::size_t kj = 0; kj < d.kw; ++kj) {
        const auto [ow_lo, ow_hi] = valid_range(d.wo, d.w, kj, d.pad, d.stride);
        double* row = col + ((c * d.kh + ki) * d.kw + kj) * cols;
        for (std::size_t n = n0; n < n1; ++n) {
          const double* plane = x + (n * d.c + c) * d.h * d.w;
          double* dst = row + (n - n0) * d.hw_out();
          for (std::size_t oh = 0; oh < d.ho; ++oh) {
            double* out = dst + oh * d.wo;
            if (oh < oh_lo || oh >= oh_hi) {
              std::fill_n(out, d.wo, 0.0);
              continue;
            }
            const double* src = plane + (oh * d.stride + ki - d.pad) * d.w;
            std::fill_n(out, ow_lo, 0.0);
            if (d.stride == 1) {
              std::copy(src + ow_lo + kj - d.pad, src + ow_hi + kj - d.pad, out + ow_lo);
            } else {
              for (std::size_t ow = ow_lo; ow < ow_hi; ++ow) out[ow] = src[ow * d.stride + kj - d.pad];
            }
            std::fill(out + ow_hi, out + d.wo, 0.0);
          }
        }
      }
    }
  }
}

void col2im(const ConvDims& d, const double* col, std::size_t n0, std::size_t n1, double* x) {
  const std::size_t cols = (n1 - n0) * d.hw_out();
  for (std::size_t c = 0; c < d.c; ++c) {
    for (std::size_t ki = 0; ki < d.kh; ++ki) {
      const auto [oh_lo, oh_hi] = valid_range(d.ho, d.h, ki, d.pad, d.stride);
      for (std::size_t kj = 0; kj < d.kw; ++kj) {
        const auto [ow_lo, ow_hi] = valid_range(d.wo, d.w, kj, d.pad, d.stride);
        const double* row = col + ((c * d.kh + ki) * d.kw + kj) * cols;
        for (std::size_t n = n0; n < n1; ++n) {
          double* plane = x + (n * d.c + c) * d.h * d.w;
          const double* src = row + (n - n0) * d.hw_out();
          for (std::size_t oh = oh_lo; oh < oh_hi; ++oh) {
            double* dst = plane + (oh * d.stride + ki - d.pad) * d.w;
            const double* in = src + oh * d.wo;
            for (std::size_t ow = ow_lo; ow < ow_hi; ++ow) dst[ow * d.stride + kj - d.pad] += in[ow];
          }
        }
      }
    }
  }
}

Tensor conv_forward_raw(const Tensor& x, const Tensor& w, const Tensor* bias, ConvGeometry g) {
  const ConvDims d = conv_dims(x.shape(), w.shape(), g);
  if (bias && bias->numel() != d.o) throw ShapeError("convolution bias must have " + std::to_string(d.o) + " entries");
  Tensor out(Shape{d.n, d.o, d.ho, d.wo});
  const std::size_t chunk = chunk_size(d);
  std::vector<double> col(d.ck() * chunk * d.hw_out());
  std::vector<double> res(d.o * chunk * d.hw_out());
  for (std::size_t n0 = 0; n0 < d.n; n0 += chunk) {
    const std::size_t n1 = std::min(d.n, n0 + chunk);
    const std::size_t cols = (n1 - n0) * d.hw_out();
    im2col(d, x.ptr(), n0, n1, col.data());
    detail::gemm(false, false, d.o, cols, d.ck(), 1.0, w.ptr(), col.data(), 0.0, res.data());
    for (std::size_t n = n0; n < n1; ++n) {
      for (std::size_t o = 0; o < d.o; ++o) {
        const double b = bias ? (*bias)[o] : 0.0;
        const double* src = res.data() + o * cols + (n - n0) * d.hw_out();
        double* dst = out.ptr() + (n * d.o + o) * d.hw_out();
        for (std::size_t p = 0; p < d.hw_out(); ++p) dst[p] = src[p] + b;
      }
    }
  }
  return out;
}

void conv_backward_raw(const Tensor& x, const Tensor& w, const Tensor& gy, ConvGeometry g, Tensor* gx, Tensor* gw,
                       Tensor* gb) {
  const ConvDims d = conv_dims(x.shape(), w.shape(), g);
  if (gx) *gx = Tensor(x.shape());
  if (gw) *gw = Tensor(w.shape());
  if (gb) {
    *gb = Tensor(Shape{d.o});
    for (std::size_t n = 0; n < d.n; ++n) {
      for (std::size_t o = 0; o < d.o; ++o) {
        const double* src = gy.ptr() + (n * d.o + o) * d.hw_out();
        double s = 0.0;
        for (std::size_t p = 0; p < d.hw_out(); ++p) s += src[p];
        (*gb)[o] += s;
      }
    }
  }
  if (!gx && !gw) return;
  const std::size_t chunk = chunk_size(d);
  std::vector<double> col(d.ck() * chunk * d.hw_out());
  std::vector<double> gym(d.o * chunk * d.hw_out());
  for (std::size_t n0 = 0; n0 < d.n; n0 += chunk) {
    const std::size_t n1 = std::min(d.n, n0 + chunk);
    const std::size_t cols = (n1 - n0) * d.hw_out();
    for (std::size_t n = n0; n < n1; ++n) {
      for (std::size_t o = 0; o < d.o; ++o) {
        std::copy_n(gy.ptr() + (n * d.o + o) * d.hw_out(), d.hw_out(), gym.data() + o * cols + (n - n0) * d.hw_out());
      }
    }
    if (gw) {
      im2col(d, x.ptr(), n0, n1, col.data());
      detail::gemm(false, true, d.o, d.ck(), cols, 1.0, gym.data(), col.data(), 1.0, gw->ptr());
    }
    if (gx) {
      detail::gemm(true, false, d.ck(), cols, d.o, 1.0, w.ptr(), gym.data(), 0.0, col.data());
      col2im(d, col.data(), n0, n1, gx->ptr());
    }
  }
}

// Channel bookkeeping for rank-2 (N,C) and rank-4 (N,C,H,W) tensors.
struct ChannelLayout {
  std::size_t n, c, inner;
  std::size_t count() const { return n * inner; }
};

ChannelLayout channel_layout(const Shape& s) {
  if (s.rank() == 2) return {s[0], s[1], 1};
  if (s.rank() == 4) return {s[0], s[1], s[2] * s[3]};
  throw ShapeError("channel op expects (N,C) or (N,C,H,W), got " + s.str());
}

template <typename Fn>
void for_channel(const ChannelLayout& l, std::size_t c, Fn fn) {
  for (std::size_t n = 0; n < l.n; ++n) {
    const std::size_t base = (n * l.c + c) * l.inner;
    for (std::size_t p = 0; p < l.inner; ++p) fn(base + p);
  }
}

// Inverse square root of the symmetric 2x2 matrix [[a,b],[b,d]].
struct InvSqrt2 {
  double rr, ri, ii;
};

InvSqrt2 inv_sqrt2(double a, double b, double d) {
  const double s = std::sqrt(std::max(a * d - b * b, 0.0));
  const double t = std::sqrt(a + d + 2.0 * s);
  const double q = 1.0 / (s * t);
  return {(d + s) * q, -b * q, (a + s) * q};
}

// Gradient of inv_sqrt2 w.r.t. (a, b, d) given gradients w.r.t. its entries.
void inv_sqrt2_backward(double a, double b, double d, double g_rr, double g_ri, double g_ii, double& ga, double& gb,
                        double& gd) {
  const double s = std::sqrt(std::max(a * d - b * b, 0.0));
  const double t = std::sqrt(a + d + 2.0 * s);
  const double q = 1.0 / (s * t);
  auto partial = [&](double da, double db, double dd) {
    const double ds = (d * da + a * dd - 2.0 * b * db) / (2.0 * s);
    const double dt = (da + dd + 2.0 * ds) / (2.0 * t);
    const double dq = -q * (ds / s + dt / t);
    const double drr = (dd + ds) * q + (d + s) * dq;
    const double dri = -db * q - b * dq;
    const double dii = (da + ds) * q + (a + s) * dq;
    return g_rr * drr + g_ri * dri + g_ii * dii;
  };
  ga = partial(1.0, 0.0, 0.0);
  gb = partial(0.0, 1.0, 0.0);
  gd = partial(0.0, 0.0, 1.0);
}

}  // namespace

Var conv2d(Var x, Var weight, std::optional<Var> bias, ConvGeometry geometry) {
  Tape& tape = bias ? same_tape({x, weight, *bias}) : same_tape({x, weight});
  Tensor out = conv_forward_raw(x.value(), weight.value(), bias ? &bias->value() : nullptr, geometry);
  std::vector<Var> inputs{x, weight};
  if (bias) inputs.push_back(*bias);
  return tape.record1("conv2d", inputs, std::move(out), [x, weight, geometry](const BackwardContext& ctx) {
    std::vector<Tensor> res(ctx.needs.size());
    conv_backward_raw(x.value(), weight.value(), ctx.grads[0], geometry, ctx.needs[0] ? &res[0] : nullptr,
                      ctx.needs[1] ? &res[1] : nullptr, ctx.needs.size() > 2 && ctx.needs[2] ? &res[2] : nullptr);
    return res;
  });
}

namespace {

// Real kernel [[A,-B],[B,A]] acting on channel-stacked (x, y).
Tensor block_kernel(const Tensor& a, const Tensor& b) {
  const Shape& s = a.shape();
  const std::size_t o = s[0], c = s[1], k = s[2] * s[3];
  Tensor w(Shape{2 * o, 2 * c, s[2], s[3]});
  for (std::size_t i = 0; i < o; ++i) {
    for (std::size_t j = 0; j < c; ++j) {
      const double* ap = a.ptr() + (i * c + j) * k;
      const double* bp = b.ptr() + (i * c + j) * k;
      for (std::size_t q = 0; q < k; ++q) {
        w[((i)*2 * c + j) * k + q] = ap[q];
        w[((i)*2 * c + c + j) * k + q] = -bp[q];
        w[((o + i) * 2 * c + j) * k + q] = bp[q];
        w[((o + i) * 2 * c + c + j) * k + q] = ap[q];
      }
    }
  }
  return w;
}

}  // namespace

CVar complex_conv2d(CVar x, Var a, Var b, std::optional<CVar> bias, ConvGeometry geometry) {
  Tape& tape = bias ? same_tape({x.re, x.im, a, b, bias->re, bias->im}) : same_tape({x.re, x.im, a, b});
  const Shape& xs = x.re.value().shape();
  if (x.im.value().shape() != xs) throw ShapeError("complex parts differ in shape");
  if (a.value().shape() != b.value().shape()) {
    throw ShapeError("complex kernel parts differ: " + a.value().shape().str() + " vs " + b.value().shape().str());
  }
  const std::size_t o = a.value().shape()[0];
  const std::array<Tensor, 2> parts{x.re.value(), x.im.value()};
  const Tensor stacked = cvnn::concat(parts, 1);
  const Tensor kernel = block_kernel(a.value(), b.value());
  Tensor out = conv_forward_raw(stacked, kernel, nullptr, geometry);
  Tensor re = cvnn::slice(out, 1, 0, o);
  Tensor im = cvnn::slice(out, 1, o, 2 * o);
  if (bias) {
    const Tensor& br = bias->re.value();
    const Tensor& bi = bias->im.value();
    if (br.numel() != o || bi.numel() != o) throw ShapeError("complex conv bias must have " + std::to_string(o) + " entries");
    const std::size_t inner = re.shape()[2] * re.shape()[3];
    for (std::size_t k = 0; k < re.numel(); ++k) {
      const std::size_t ch = (k / inner) % o;
      re[k] += br[ch];
      im[k] += bi[ch];
    }
  }
  std::vector<Var> inputs{x.re, x.im, a, b};
  if (bias) {
    inputs.push_back(bias->re);
    inputs.push_back(bias->im);
  }
  std::vector<Tensor> outs;
  outs.push_back(std::move(re));
  outs.push_back(std::move(im));
  auto vars = tape.record(
      "complex_conv2d", inputs, std::move(outs), [x, a, b, geometry, o](const BackwardContext& ctx) {
        std::vector<Tensor> res(ctx.needs.size());
        const std::array<Tensor, 2> gparts{ctx.grads[0], ctx.grads[1]};
        const Tensor gy = cvnn::concat(gparts, 1);
        const bool need_x = ctx.needs[0] || ctx.needs[1];
        const bool need_w = ctx.needs[2] || ctx.needs[3];
        const std::array<Tensor, 2> parts{x.re.value(), x.im.value()};
        const Tensor stacked = cvnn::concat(parts, 1);
        const Tensor kernel = block_kernel(a.value(), b.value());
        Tensor gx, gw;
        conv_backward_raw(stacked, kernel, gy, geometry, need_x ? &gx : nullptr, need_w ? &gw : nullptr, nullptr);
        const std::size_t c = stacked.shape()[1] / 2;
        if (need_x) {
          if (ctx.needs[0]) res[0] = cvnn::slice(gx, 1, 0, c);
          if (ctx.needs[1]) res[1] = cvnn::slice(gx, 1, c, 2 * c);
        }
        if (need_w) {
          const Shape& ks = a.value().shape();
          const std::size_t k = ks[2] * ks[3];
          Tensor ga(ks), gb(ks);
          for (std::size_t i = 0; i < o; ++i) {
            for (std::size_t j = 0; j < c; ++j) {
              for (std::size_t q = 0; q < k; ++q) {
                const double top_left = gw[(i * 2 * c + j) * k + q];
                const double top_right = gw[(i * 2 * c + c + j) * k + q];
                const double bottom_left = gw[((o + i) * 2 * c + j) * k + q];
                const double bottom_right = gw[((o + i) * 2 * c + c + j) * k + q];
                ga[(i * c + j) * k + q] = top_left + bottom_right;
                gb[(i * c + j) * k + q] = bottom_left - top_right;
              }
            }
          }
          res[2] = std::move(ga);
          res[3] = std::move(gb);
        }
        if (ctx.needs.size() > 4) {
          const std::size_t inner = ctx.grads[0].shape()[2] * ctx.grads[0].shape()[3];
          for (std::size_t part = 0; part < 2; ++part) {
            if (!ctx.needs[4 + part]) continue;
            Tensor gbias(Shape{o});
            const Tensor& g = ctx.grads[part];
            for (std::size_t k2 = 0; k2 < g.numel(); ++k2) gbias[(k2 / inner) % o] += g[k2];
            res[4 + part] = std::move(gbias);
          }
        }
        return res;
      });
  return {vars[0], vars[1]};
}

Var linear(Var x, Var weight, std::optional<Var> bias) {
  Tape& tape = bias ? same_tape({x, weight, *bias}) : same_tape({x, weight});
  const Shape& xs = x.value().shape();
  const Shape& ws = weight.value().shape();
  if (xs.rank() != 2 || ws.rank() != 2 || xs[1] != ws[1]) {
    throw ShapeError("linear: input " + xs.str() + " incompatible with weight " + ws.str());
  }
  const std::size_t n = xs[0], din = xs[1], dout = ws[0];
  Tensor out(Shape{n, dout});
  if (bias) {
    if (bias->value().numel() != dout) throw ShapeError("linear bias must have " + std::to_string(dout) + " entries");
    for (std::size_t i = 0; i < n; ++i) std::copy_n(bias->value().ptr(), dout, out.ptr() + i * dout);
  }
  detail::gemm(false, true, n, dout, din, 1.0, x.value().ptr(), weight.value().ptr(), bias ? 1.0 : 0.0, out.ptr());
  std::vector<Var> inputs{x, weight};
  if (bias) inputs.push_back(*bias);
  return tape.record1("linear", inputs, std::move(out), [x, weight, n, din, dout](const BackwardContext& ctx) {
    const Tensor& g = ctx.grads[0];
    std::vector<Tensor> res(ctx.needs.size());
    if (ctx.needs[0]) {
      res[0] = Tensor(Shape{n, din});
      detail::gemm(false, false, n, din, dout, 1.0, g.ptr(), weight.value().ptr(), 0.0, res[0].ptr());
    }
    if (ctx.needs[1]) {
      res[1] = Tensor(Shape{dout, din});
      detail::gemm(true, false, dout, din, n, 1.0, g.ptr(), x.value().ptr(), 0.0, res[1].ptr());
    }
    if (ctx.needs.size() > 2 && ctx.needs[2]) {
      Tensor gb(Shape{dout});
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < dout; ++j) gb[j] += g[i * dout + j];
      }
      res[2] = std::move(gb);
    }
    return res;
  });
}

CVar complex_linear(CVar x, Var a, Var b, std::optional<CVar> bias) {
  Tape& tape = bias ? same_tape({x.re, x.im, a, b, bias->re, bias->im}) : same_tape({x.re, x.im, a, b});
  const Shape& xs = x.re.value().shape();
  const Shape& ws = a.value().shape();
  if (x.im.value().shape() != xs) throw ShapeError("complex parts differ in shape");
  if (b.value().shape() != ws) throw ShapeError("complex weight parts differ in shape");
  if (xs.rank() != 2 || ws.rank() != 2 || xs[1] != ws[1]) {
    throw ShapeError("complex_linear: input " + xs.str() + " incompatible with weight " + ws.str());
  }
  const std::size_t n = xs[0], din = xs[1], dout = ws[0];
  Tensor re(Shape{n, dout}), im(Shape{n, dout});
  if (bias) {
    if (bias->re.value().numel() != dout || bias->im.value().numel() != dout) {
      throw ShapeError("complex_linear bias must have " + std::to_string(dout) + " entries");
    }
    for (std::size_t i = 0; i < n; ++i) {
      std::copy_n(bias->re.value().ptr(), dout, re.ptr() + i * dout);
      std::copy_n(bias->im.value().ptr(), dout, im.ptr() + i * dout);
    }
  }
  const double* xr = x.re.value().ptr();
  const double* xi = x.im.value().ptr();
  const double* ap = a.value().ptr();
  const double* bp = b.value().ptr();
  detail::gemm(false, true, n, dout, din, 1.0, xr, ap, 1.0, re.ptr());
  detail::gemm(false, true, n, dout, din, -1.0, xi, bp, 1.0, re.ptr());
  detail::gemm(false, true, n, dout, din, 1.0, xr, bp, 1.0, im.ptr());
  detail::gemm(false, true, n, dout, din, 1.0, xi, ap, 1.0, im.ptr());
  std::vector<Var> inputs{x.re, x.im, a, b};
  if (bias) {
    inputs.push_back(bias->re);
    inputs.push_back(bias->im);
  }
  std::vector<Tensor> outs;
  outs.push_back(std::move(re));
  outs.push_back(std::move(im));
  auto vars = tape.record("complex_linear", inputs, std::move(outs), [x, a, b, n, din, dout](const BackwardContext& ctx) {
    const double* gr = ctx.grads[0].ptr();
    const double* gi = ctx.grads[1].ptr();
    const double* xr = x.re.value().ptr();
    const double* xi = x.im.value().ptr();
    const double* ap = a.value().ptr();
    const double* bp = b.value().ptr();
    std::vector<Tensor> res(ctx.needs.size());
    if (ctx.needs[0]) {
      res[0] = Tensor(Shape{n, din});
      detail::gemm(false, false, n, din, dout, 1.0, gr, ap, 0.0, res[0].ptr());
      detail::gemm(false, false, n, din, dout, 1.0, gi, bp, 1.0, res[0].ptr());
    }
    if (ctx.needs[1]) {
      res[1] = Tensor(Shape{n, din});
      detail::gemm(false, false, n, din, dout, -1.0, gr, bp, 0.0, res[1].ptr());
      detail::gemm(false, false, n, din, dout, 1.0, gi, ap, 1.0, res[1].ptr());
    }
    if (ctx.needs[2]) {
      res[2] = Tensor(Shape{dout, din});
      detail::gemm(true, false, dout, din, n, 1.0, gr, xr, 0.0, res[2].ptr());
      detail::gemm(true, false, dout, din, n, 1.0, gi, xi, 1.0, res[2].ptr());
    }
    if (ctx.needs[3]) {
      res[3] = Tensor(Shape{dout, din});
      detail::gemm(true, false, dout, din, n, -1.0, gr, xi, 0.0, res[3].ptr());
      detail::gemm(true, false, dout, din, n, 1.0, gi, xr, 1.0, res[3].ptr());
    }
    for (std::size_t part = 0; part < 2 && ctx.needs.size() > 4; ++part) {
      if (!ctx.needs[4 + part]) continue;
      Tensor gb(Shape{dout});
      const Tensor& g = ctx.grads[part];
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < dout; ++j) gb[j] += g[i * dout + j];
      }
      res[4 + part] = std::move(gb);
    }
    return res;
  });
  return {vars[0], vars[1]};
}

Var max_pool2d(Var x, std::size_t window, std::size_t stride) {
  Tape& tape = same_tape({x});
  const Shape& s = x.value().shape();
  if (s.rank() != 4) throw ShapeError("max_pool2d expects (N,C,H,W), got " + s.str());
  if (window == 0 || stride == 0) throw ShapeError("pool window and stride must be positive");
  if (window > s[2] || window > s[3]) {
    throw ShapeError("pool window " + std::to_string(window) + " larger than map " + s.str());
  }
  if ((s[2] - window) % stride != 0 || (s[3] - window) % stride != 0) {
    throw ShapeError("map " + s.str() + " not evenly covered by pool window " + std::to_string(window) +
                     " stride " + std::to_string(stride));
  }
  const std::size_t ho = (s[2] - window) / stride + 1, wo = (s[3] - window) / stride + 1;
  const std::size_t planes = s[0] * s[1];
  Tensor out(Shape{s[0], s[1], ho, wo});
  auto argmax = std::make_shared<std::vector<std::uint32_t>>(out.numel());
  const double* xp = x.value().ptr();
  double margin = std::numeric_limits<double>::infinity();
  for (std::size_t p = 0; p < planes; ++p) {
    const double* plane = xp + p * s[2] * s[3];
    for (std::size_t i = 0; i < ho; ++i) {
      for (std::size_t j = 0; j < wo; ++j) {
        std::size_t best = (i * stride) * s[3] + j * stride;
        double runner_up = -std::numeric_limits<double>::infinity();
        for (std::size_t di = 0; di < window; ++di) {
          for (std::size_t dj = 0; dj < window; ++dj) {
            const std::size_t idx = (i * stride + di) * s[3] + j * stride + dj;
            if (plane[idx] > plane[best]) {
              runner_up = plane[best];
              best = idx;
            } else if (idx != best) {
              runner_up = std::max(runner_up, plane[idx]);
            }
          }
        }
        margin = std::min(margin, plane[best] - runner_up);
        const std::size_t o = (p * ho + i) * wo + j;
        out[o] = plane[best];
        (*argmax)[o] = static_cast<std::uint32_t>(best);
      }
    }
  }
  tape.note_kink(margin);
  const Shape in_shape = s;
  return tape.record1("max_pool2d", {x}, std::move(out), [argmax, in_shape, ho, wo](const BackwardContext& ctx) {
    Tensor gx(in_shape);
    const Tensor& g = ctx.grads[0];
    const std::size_t plane = in_shape[2] * in_shape[3];
    for (std::size_t o = 0; o < g.numel(); ++o) gx[(o / (ho * wo)) * plane + (*argmax)[o]] += g[o];
    return std::vector<Tensor>{std::move(gx)};
  });
}

CVar complex_pool2d(CVar x, std::size_t window, std::size_t stride) {
  return {max_pool2d(x.re, window, stride), max_pool2d(x.im, window, stride)};
}

Var batch_normalize(Var x, double eps, ChannelStats* stats_out) {
  Tape& tape = same_tape({x});
  const Tensor& xv = x.value();
  const ChannelLayout l = channel_layout(xv.shape());
  const double m = static_cast<double>(l.count());
  Tensor out(xv.shape());
  ChannelStats stats{Tensor(Shape{l.c}), Tensor(Shape{l.c})};
  auto inv_std = std::make_shared<std::vector<double>>(l.c);
  for (std::size_t c = 0; c < l.c; ++c) {
    double s = 0.0;
    for_channel(l, c, [&](std::size_t k) { s += xv[k]; });
    const double mu = s / m;
    double v = 0.0;
    for_channel(l, c, [&](std::size_t k) { v += (xv[k] - mu) * (xv[k] - mu); });
    v /= m;
    stats.mean[c] = mu;
    stats.var[c] = v;
    const double is = 1.0 / std::sqrt(v + eps);
    (*inv_std)[c] = is;
    for_channel(l, c, [&](std::size_t k) { out[k] = (xv[k] - mu) * is; });
  }
  if (stats_out) *stats_out = stats;
  return tape.record1("batch_normalize", {x}, std::move(out), [l, inv_std, m](const BackwardContext& ctx) {
    const Tensor& g = ctx.grads[0];
    const Tensor& y = ctx.outputs[0];
    Tensor gx(g.shape());
    for (std::size_t c = 0; c < l.c; ++c) {
      double sg = 0.0, sgy = 0.0;
      for_channel(l, c, [&](std::size_t k) {
        sg += g[k];
        sgy += g[k] * y[k];
      });
      const double mg = sg / m, mgy = sgy / m, is = (*inv_std)[c];
      for_channel(l, c, [&](std::size_t k) { gx[k] = is * (g[k] - mg - y[k] * mgy); });
    }
    return std::vector<Tensor>{std::move(gx)};
  });
}

Var normalize_with(Var x, const ChannelStats& stats, double eps) {
  Tape& tape = same_tape({x});
  const Tensor& xv = x.value();
  const ChannelLayout l = channel_layout(xv.shape());
  if (stats.mean.numel() != l.c || stats.var.numel() != l.c) {
    throw ShapeError("normalization statistics do not match " + std::to_string(l.c) + " channels");
  }
  auto inv_std = std::make_shared<std::vector<double>>(l.c);
  Tensor out(xv.shape());
  for (std::size_t c = 0; c < l.c; ++c) {
    const double is = 1.0 / std::sqrt(stats.var[c] + eps);
    (*inv_std)[c] = is;
    const double mu = stats.mean[c];
    for_channel(l, c, [&](std::size_t k) { out[k] = (xv[k] - mu) * is; });
  }
  return tape.record1("normalize_with", {x}, std::move(out), [l, inv_std](const BackwardContext& ctx) {
    Tensor gx(ctx.grads[0].shape());
    for (std::size_t c = 0; c < l.c; ++c) {
      for_channel(l, c, [&](std::size_t k) { gx[k] = ctx.grads[0][k] * (*inv_std)[c]; });
    }
    return std::vector<Tensor>{std::move(gx)};
  });
}

Var channel_affine(Var x, Var gamma, Var beta) {
  Tape& tape = same_tape({x, gamma, beta});
  const Tensor& xv = x.value();
  const ChannelLayout l = channel_layout(xv.shape());
  if (gamma.value().numel() != l.c || beta.value().numel() != l.c) {
    throw ShapeError("affine parameters do not match " + std::to_string(l.c) + " channels");
  }
  Tensor out(xv.shape());
  for (std::size_t c = 0; c < l.c; ++c) {
    const double gm = gamma.value()[c], bt = beta.value()[c];
    for_channel(l, c, [&](std::size_t k) { out[k] = gm * xv[k] + bt; });
  }
  return tape.record1("channel_affine", {x, gamma, beta}, std::move(out), [x, gamma, l](const BackwardContext& ctx) {
    const Tensor& g = ctx.grads[0];
    const Tensor& xv = x.value();
    std::vector<Tensor> res(3);
    if (ctx.needs[0]) {
      res[0] = Tensor(g.shape());
      for (std::size_t c = 0; c < l.c; ++c) {
        const double gm = gamma.value()[c];
        for_channel(l, c, [&](std::size_t k) { res[0][k] = g[k] * gm; });
      }
    }
    if (ctx.needs[1] || ctx.needs[2]) {
      Tensor gg(Shape{l.c}), gb(Shape{l.c});
      for (std::size_t c = 0; c < l.c; ++c) {
        for_channel(l, c, [&](std::size_t k) {
          gg[c] += g[k] * xv[k];
          gb[c] += g[k];
        });
      }
      if (ctx.needs[1]) res[1] = gg.reshaped(gamma.value().shape());
      if (ctx.needs[2]) res[2] = gb.reshaped(gamma.value().shape());
    }
    return res;
  });
}

CVar covariance_whiten(CVar x, double eps, ComplexStats* stats_out) {
  Tape& tape = same_tape({x.re, x.im});
  const Tensor& xr = x.re.value();
  const Tensor& xi = x.im.value();
  if (xi.shape() != xr.shape()) throw ShapeError("complex parts differ in shape");
  const ChannelLayout l = channel_layout(xr.shape());
  const double m = static_cast<double>(l.count());
  ComplexStats stats{Tensor(Shape{l.c}), Tensor(Shape{l.c}), Tensor(Shape{l.c}), Tensor(Shape{l.c}),
                     Tensor(Shape{l.c})};
  Tensor out_r(xr.shape()), out_i(xr.shape());
  // Centered inputs are needed by the backward rule.
  auto centered_r = std::make_shared<Tensor>(xr.shape());
  auto centered_i = std::make_shared<Tensor>(xr.shape());
  auto regularized = std::make_shared<std::vector<std::array<double, 3>>>(l.c);
  for (std::size_t c = 0; c < l.c; ++c) {
    double sr = 0.0, si = 0.0;
    for_channel(l, c, [&](std::size_t k) {
      sr += xr[k];
      si += xi[k];
    });
    const double mr = sr / m, mi = si / m;
    double vrr = 0.0, vri = 0.0, vii = 0.0;
    for_channel(l, c, [&](std::size_t k) {
      const double cr = xr[k] - mr, ci = xi[k] - mi;
      (*centered_r)[k] = cr;
      (*centered_i)[k] = ci;
      vrr += cr * cr;
      vri += cr * ci;
      vii += ci * ci;
    });
    vrr /= m;
    vri /= m;
    vii /= m;
    stats.mean_re[c] = mr;
    stats.mean_im[c] = mi;
    stats.cov_rr[c] = vrr;
    stats.cov_ri[c] = vri;
    stats.cov_ii[c] = vii;
    (*regularized)[c] = {vrr + eps, vri, vii + eps};
    const InvSqrt2 w = inv_sqrt2(vrr + eps, vri, vii + eps);
    for_channel(l, c, [&](std::size_t k) {
      const double cr = (*centered_r)[k], ci = (*centered_i)[k];
      out_r[k] = w.rr * cr + w.ri * ci;
      out_i[k] = w.ri * cr + w.ii * ci;
    });
  }
  if (stats_out) *stats_out = stats;
  std::vector<Tensor> outs;
  outs.push_back(std::move(out_r));
  outs.push_back(std::move(out_i));
  auto vars = tape.record("covariance_whiten", {x.re, x.im}, std::move(outs),
                          [l, m, centered_r, centered_i, regularized](const BackwardContext& ctx) {
                            const Tensor& gr = ctx.grads[0];
                            const Tensor& gi = ctx.grads[1];
                            const Tensor& cr = *centered_r;
                            const Tensor& ci = *centered_i;
                            Tensor dr(gr.shape()), di(gr.shape());
                            for (std::size_t c = 0; c < l.c; ++c) {
                              const auto [a, b, d] = (*regularized)[c];
                              const InvSqrt2 w = inv_sqrt2(a, b, d);
                              double g_rr = 0.0, g_ri = 0.0, g_ii = 0.0;
                              for_channel(l, c, [&](std::size_t k) {
                                g_rr += gr[k] * cr[k];
                                g_ri += gr[k] * ci[k] + gi[k] * cr[k];
                                g_ii += gi[k] * ci[k];
                              });
                              double ga = 0.0, gb = 0.0, gd = 0.0;
                              inv_sqrt2_backward(a, b, d, g_rr, g_ri, g_ii, ga, gb, gd);
                              double sum_r = 0.0, sum_i = 0.0;
                              for_channel(l, c, [&](std::size_t k) {
                                const double vr = w.rr * gr[k] + w.ri * gi[k] + (2.0 * ga * cr[k] + gb * ci[k]) / m;
                                const double vi = w.ri * gr[k] + w.ii * gi[k] + (2.0 * gd * ci[k] + gb * cr[k]) / m;
                                dr[k] = vr;
                                di[k] = vi;
                                sum_r += vr;
                                sum_i += vi;
                              });
                              const double mean_r = sum_r / m, mean_i = sum_i / m;
                              for_channel(l, c, [&](std::size_t k) {
                                dr[k] -= mean_r;
                                di[k] -= mean_i;
                              });
                            }
                            return std::vector<Tensor>{std::move(dr), std::move(di)};
                          });
  return {vars[0], vars[1]};
}

CVar whiten_with(CVar x, const ComplexStats& stats, double eps) {
  Tape& tape = same_tape({x.re, x.im});
  const Tensor& xr = x.re.value();
  const Tensor& xi = x.im.value();
  if (xi.shape() != xr.shape()) throw ShapeError("complex parts differ in shape");
  const ChannelLayout l = channel_layout(xr.shape());
  if (stats.mean_re.numel() != l.c) throw ShapeError("whitening statistics do not match channel count");
  auto ws = std::make_shared<std::vector<InvSqrt2>>(l.c);
  Tensor out_r(xr.shape()), out_i(xr.shape());
  for (std::size_t c = 0; c < l.c; ++c) {
    const InvSqrt2 w = inv_sqrt2(stats.cov_rr[c] + eps, stats.cov_ri[c], stats.cov_ii[c] + eps);
    (*ws)[c] = w;
    const double mr = stats.mean_re[c], mi = stats.mean_im[c];
    for_channel(l, c, [&](std::size_t k) {
      const double cr = xr[k] - mr, ci = xi[k] - mi;
      out_r[k] = w.rr * cr + w.ri * ci;
      out_i[k] = w.ri * cr + w.ii * ci;
    });
  }
  std::vector<Tensor> outs;
  outs.push_back(std::move(out_r));
  outs.push_back(std::move(out_i));
  auto vars = tape.record("whiten_with", {x.re, x.im}, std::move(outs), [l, ws](const BackwardContext& ctx) {
    const Tensor& gr = ctx.grads[0];
    const Tensor& gi = ctx.grads[1];
    Tensor dr(gr.shape()), di(gr.shape());
    for (std::size_t c = 0; c < l.c; ++c) {
      const InvSqrt2 w = (*ws)[c];
      for_channel(l, c, [&](std::size_t k) {
        dr[k] = w.rr * gr[k] + w.ri * gi[k];
        di[k] = w.ri * gr[k] + w.ii * gi[k];
      });
    }
    return std::vector<Tensor>{std::move(dr), std::move(di)};
  });
  return {vars[0], vars[1]};
}

CVar dft2d(Var x) {
  Tape& tape = same_tape({x});
  const ComplexTensor spectrum = cvnn::dft2d(x.value());
  std::vector<Tensor> outs{spectrum.real(), spectrum.imag()};
  const Shape s = x.value().shape();
  auto vars = tape.record("dft2d", {x}, std::move(outs), [s](const BackwardContext& ctx) {
    Tensor gx(s);
    detail::dft_planes(ctx.grads[0].data(), ctx.grads[1].data(), gx.data(), {}, s[0] * s[1], s[2], s[3], +1);
    return std::vector<Tensor>{std::move(gx)};
  });
  return {vars[0], vars[1]};
}

Var l2_normalize_rows(Var x, double eps) {
  Tape& tape = same_tape({x});
  const Tensor& xv = x.value();
  if (xv.shape().rank() != 2) throw ShapeError("l2 normalization expects (N,D), got " + xv.shape().str());
  const std::size_t n = xv.shape()[0], d = xv.shape()[1];
  auto norms = std::make_shared<std::vector<double>>(n);
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) s += xv[i * d + j] * xv[i * d + j];
    const double norm = std::sqrt(s);
    (*norms)[i] = norm;
    for (std::size_t j = 0; j < d; ++j) out[i * d + j] = xv[i * d + j] / (norm + eps);
  }
  return tape.record1("l2_normalize_rows", {x}, std::move(out), [x, norms, n, d, eps](const BackwardContext& ctx) {
    const Tensor& g = ctx.grads[0];
    const Tensor& xv = x.value();
    Tensor gx(xv.shape());
    for (std::size_t i = 0; i < n; ++i) {
      const double norm = (*norms)[i], den = norm + eps;
      double dot = 0.0;
      for (std::size_t j = 0; j < d; ++j) dot += xv[i * d + j] * g[i * d + j];
      const double corr = norm > 0.0 ? dot / (den * den * norm) : 0.0;
      for (std::size_t j = 0; j < d; ++j) gx[i * d + j] = g[i * d + j] / den - xv[i * d + j] * corr;
    }
    return std::vector<Tensor>{std::move(gx)};
  });
}

CVar cl2_normalize(CVar z, double eps) { return {l2_normalize_rows(z.re, eps), l2_normalize_rows(z.im, eps)}; }

}  // namespace cvnn
