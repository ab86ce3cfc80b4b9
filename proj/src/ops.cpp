#include "diffaug/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <Eigen/Core>
#include <fmt/format.h>

namespace diffaug {

namespace {

using MatRM = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRM = Eigen::Map<MatRM>;
using CMapRM = Eigen::Map<const MatRM>;

void check_finite(const char* op, std::initializer_list<const Tensor*> inputs) {
  if (!check_finite_enabled()) return;
  for (const Tensor* t : inputs) {
    if (!t->defined()) continue;
    for (float v : t->data()) {
      if (!std::isfinite(v)) throw TensorError(fmt::format("{}: non-finite input value", op));
    }
  }
}

// How operand `b` maps onto an output with `a`'s shape.
enum class Broadcast { kSame, kBatch, kScalar };

Broadcast broadcast_kind(const char* op, const Shape& big, const Shape& small) {
  if (big == small) return Broadcast::kSame;
  if (shape_numel(small) == 1) return Broadcast::kScalar;
  if (!big.empty() && Shape(big.begin() + 1, big.end()) == small) return Broadcast::kBatch;
  throw ShapeError(op, big, small);
}

enum class BinaryKind { kAdd, kSub, kMul };

Tensor binary(const char* op, BinaryKind kind, const Tensor& a, const Tensor& b) {
  check_finite(op, {&a, &b});
  // Orient so `big` carries the output shape.
  bool swapped = a.numel() < b.numel();
  const Tensor& big = swapped ? b : a;
  const Tensor& small = swapped ? a : b;
  broadcast_kind(op, big.shape(), small.shape());
  const auto n = big.numel();
  const auto period = small.numel();
  auto av = a.data();
  auto bv = b.data();
  std::vector<float> out(n);
  const auto a_period = swapped ? period : n;
  const auto b_period = swapped ? n : period;
  for (std::int64_t i = 0; i < n; ++i) {
    float x = av[i % a_period];
    float y = bv[i % b_period];
    switch (kind) {
      case BinaryKind::kAdd: out[i] = x + y; break;
      case BinaryKind::kSub: out[i] = x - y; break;
      case BinaryKind::kMul: out[i] = x * y; break;
    }
  }
  return Tensor::make_result(
      big.shape(), std::move(out), {a, b}, op,
      [kind, n, a_period, b_period](std::span<const float> g, std::span<const Tensor> p) {
        const Tensor& pa = p[0];
        const Tensor& pb = p[1];
        if (pa.requires_grad()) {
          auto ga = pa.grad_buffer();
          auto bv = pb.data();
          for (std::int64_t i = 0; i < n; ++i) {
            float d = kind == BinaryKind::kMul ? g[i] * bv[i % b_period] : g[i];
            ga[i % a_period] += d;
          }
        }
        if (pb.requires_grad()) {
          auto gb = pb.grad_buffer();
          auto av = pa.data();
          for (std::int64_t i = 0; i < n; ++i) {
            float d = kind == BinaryKind::kMul ? g[i] * av[i % a_period]
                      : kind == BinaryKind::kSub ? -g[i]
                                                 : g[i];
            gb[i % b_period] += d;
          }
        }
      });
}

// Unary op whose derivative depends on the input value.
template <typename F, typename DF>
Tensor unary_from_input(const char* op, const Tensor& x, F f, DF df) {
  check_finite(op, {&x});
  auto xv = x.data();
  std::vector<float> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = f(xv[i]);
  return Tensor::make_result(x.shape(), std::move(out), {x}, op,
                             [df](std::span<const float> g, std::span<const Tensor> p) {
                               auto xv = p[0].data();
                               auto gx = p[0].grad_buffer();
                               for (std::size_t i = 0; i < xv.size(); ++i) gx[i] += g[i] * df(xv[i]);
                             });
}

// Unary op whose derivative is expressed through its output value.
template <typename F, typename DF>
Tensor unary_from_output(const char* op, const Tensor& x, F f, DF df) {
  check_finite(op, {&x});
  auto xv = x.data();
  std::vector<float> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = f(xv[i]);
  std::vector<float> saved = out;
  return Tensor::make_result(x.shape(), std::move(out), {x}, op,
                             [df, saved = std::move(saved)](std::span<const float> g, std::span<const Tensor> p) {
                               auto gx = p[0].grad_buffer();
                               for (std::size_t i = 0; i < saved.size(); ++i) gx[i] += g[i] * df(saved[i]);
                             });
}

struct ConvGeometry {
  std::int64_t n, cin, h, w, cout, k, ho, wo;
  int stride, pad;
  std::int64_t patch() const { return cin * k * k; }
  std::int64_t pixels_out() const { return ho * wo; }
};

ConvGeometry conv_geometry(const char* op, const Shape& x, const Shape& weight, Conv2dParams params) {
  if (x.size() != 4) throw ShapeError(op, fmt::format("input must be (N, C, H, W), got {}", shape_str(x)));
  if (weight.size() != 4 || weight[2] != weight[3]) {
    throw ShapeError(op, fmt::format("weight must be (Cout, Cin, k, k), got {}", shape_str(weight)));
  }
  if (weight[1] != x[1]) throw ShapeError(op, x, weight);
  if (params.stride < 1 || params.padding < 0) {
    throw ShapeError(op, fmt::format("invalid stride {} / padding {}", params.stride, params.padding));
  }
  ConvGeometry g{};
  g.n = x[0];
  g.cin = x[1];
  g.h = x[2];
  g.w = x[3];
  g.cout = weight[0];
  g.k = weight[2];
  g.stride = params.stride;
  g.pad = params.padding;
  g.ho = (g.h + 2 * g.pad - g.k) / g.stride + 1;
  g.wo = (g.w + 2 * g.pad - g.k) / g.stride + 1;
  if (g.ho <= 0 || g.wo <= 0) throw ShapeError(op, x, weight);
  return g;
}

// Output columns [lo, hi) whose input column ox*stride + kw - pad lies in
// [0, w).
std::pair<std::int64_t, std::int64_t> valid_range(std::int64_t kw, std::int64_t pad, std::int64_t stride,
                                                  std::int64_t w, std::int64_t wo) {
  const std::int64_t off = kw - pad;
  const std::int64_t lo = off >= 0 ? 0 : (-off + stride - 1) / stride;
  const std::int64_t hi = std::min(wo, w - 1 - off < 0 ? 0 : (w - 1 - off) / stride + 1);
  return {std::min(lo, wo), std::max<std::int64_t>(hi, 0)};
}

// Patch matrix of shape (Cin*k*k, N*Ho*Wo).
MatRM im2col(std::span<const float> x, const ConvGeometry& g) {
  const auto cols = g.n * g.pixels_out();
  MatRM m(g.patch(), cols);
  for (std::int64_t ci = 0; ci < g.cin; ++ci) {
    for (std::int64_t kh = 0; kh < g.k; ++kh) {
      for (std::int64_t kw = 0; kw < g.k; ++kw) {
        float* row = m.data() + ((ci * g.k + kh) * g.k + kw) * cols;
        const auto [lo, hi] = valid_range(kw, g.pad, g.stride, g.w, g.wo);
        for (std::int64_t n = 0; n < g.n; ++n) {
          const float* img = x.data() + (n * g.cin + ci) * g.h * g.w;
          float* dst = row + n * g.pixels_out();
          for (std::int64_t oy = 0; oy < g.ho; ++oy) {
            const std::int64_t iy = oy * g.stride + kh - g.pad;
            float* d = dst + oy * g.wo;
            if (iy < 0 || iy >= g.h || lo >= hi) {
              std::fill_n(d, g.wo, 0.0f);
              continue;
            }
            std::fill_n(d, lo, 0.0f);
            const float* src = img + iy * g.w + lo * g.stride + kw - g.pad;
            if (g.stride == 1) {
              std::copy_n(src, hi - lo, d + lo);
            } else {
              for (std::int64_t ox = lo; ox < hi; ++ox) d[ox] = src[(ox - lo) * g.stride];
            }
            std::fill_n(d + hi, g.wo - hi, 0.0f);
          }
        }
      }
    }
  }
  return m;
}

// Scatter-add of a patch matrix back into image layout.
void col2im(const MatRM& m, const ConvGeometry& g, std::span<float> x) {
  const auto cols = g.n * g.pixels_out();
  for (std::int64_t ci = 0; ci < g.cin; ++ci) {
    for (std::int64_t kh = 0; kh < g.k; ++kh) {
      for (std::int64_t kw = 0; kw < g.k; ++kw) {
        const float* row = m.data() + ((ci * g.k + kh) * g.k + kw) * cols;
        const auto [lo, hi] = valid_range(kw, g.pad, g.stride, g.w, g.wo);
        if (lo >= hi) continue;
        for (std::int64_t n = 0; n < g.n; ++n) {
          float* img = x.data() + (n * g.cin + ci) * g.h * g.w;
          const float* src = row + n * g.pixels_out();
          for (std::int64_t oy = 0; oy < g.ho; ++oy) {
            const std::int64_t iy = oy * g.stride + kh - g.pad;
            if (iy < 0 || iy >= g.h) continue;
            float* d = img + iy * g.w + lo * g.stride + kw - g.pad;
            const float* s = src + oy * g.wo;
            for (std::int64_t ox = lo; ox < hi; ++ox) d[(ox - lo) * g.stride] += s[ox];
          }
        }
      }
    }
  }
}

// (N, C, P) -> (C, N*P)
MatRM to_channel_major(std::span<const float> v, std::int64_t n, std::int64_t c, std::int64_t p) {
  MatRM m(c, n * p);
  for (std::int64_t i = 0; i < n; ++i) {
    for (std::int64_t ch = 0; ch < c; ++ch) {
      std::copy_n(v.data() + (i * c + ch) * p, p, m.data() + ch * n * p + i * p);
    }
  }
  return m;
}

// (C, N*P) -> (N, C, P), added into `out`.
void add_from_channel_major(const MatRM& m, std::int64_t n, std::int64_t c, std::int64_t p,
                            std::span<float> out) {
  for (std::int64_t i = 0; i < n; ++i) {
    for (std::int64_t ch = 0; ch < c; ++ch) {
      const float* src = m.data() + ch * n * p + i * p;
      float* dst = out.data() + (i * c + ch) * p;
      for (std::int64_t j = 0; j < p; ++j) dst[j] += src[j];
    }
  }
}

int normalize_axis(const char* op, const Tensor& x, int axis) {
  int nd = x.ndim();
  if (axis < 0) axis += nd;
  if (axis < 0 || axis >= nd) {
    throw ShapeError(op, fmt::format("axis {} out of range for {}", axis, shape_str(x.shape())));
  }
  return axis;
}

struct AxisSplit {
  std::int64_t outer, extent, inner;
};

AxisSplit split_axis(const Shape& s, int axis) {
  AxisSplit a{1, s[axis], 1};
  for (int i = 0; i < axis; ++i) a.outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) a.inner *= s[i];
  return a;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary("add", BinaryKind::kAdd, a, b); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary("sub", BinaryKind::kSub, a, b); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary("mul", BinaryKind::kMul, a, b); }

Tensor add(const Tensor& a, float b) {
  return unary_from_input("add_scalar", a, [b](float x) { return x + b; }, [](float) { return 1.0f; });
}

Tensor mul(const Tensor& a, float b) {
  return unary_from_input("mul_scalar", a, [b](float x) { return x * b; }, [b](float) { return b; });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  check_finite("matmul", {&a, &b});
  if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(0)) throw ShapeError("matmul", a.shape(), b.shape());
  const auto m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<float> out(m * n);
  MapRM(out.data(), m, n).noalias() = CMapRM(a.data().data(), m, k) * CMapRM(b.data().data(), k, n);
  return Tensor::make_result({m, n}, std::move(out), {a, b}, "matmul",
                             [m, k, n](std::span<const float> g, std::span<const Tensor> p) {
                               CMapRM gm(g.data(), m, n);
                               if (p[0].requires_grad()) {
                                 MapRM ga(p[0].grad_buffer().data(), m, k);
                                 ga.noalias() += gm * CMapRM(p[1].data().data(), k, n).transpose();
                               }
                               if (p[1].requires_grad()) {
                                 MapRM gb(p[1].grad_buffer().data(), k, n);
                                 gb.noalias() += CMapRM(p[0].data().data(), m, k).transpose() * gm;
                               }
                             });
}

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, Conv2dParams params) {
  check_finite("conv2d", {&x, &weight, &bias});
  const auto g = conv_geometry("conv2d", x.shape(), weight.shape(), params);
  if (bias.defined() && (bias.ndim() != 1 || bias.dim(0) != g.cout)) {
    throw ShapeError("conv2d", weight.shape(), bias.shape());
  }
  const auto P = g.pixels_out();
  MatRM cols = im2col(x.data(), g);
  CMapRM w(weight.data().data(), g.cout, g.patch());
  MatRM y = w * cols;
  std::vector<float> out(g.n * g.cout * P, 0.0f);
  add_from_channel_major(y, g.n, g.cout, P, out);
  if (bias.defined()) {
    auto bv = bias.data();
    for (std::int64_t i = 0; i < g.n; ++i) {
      for (std::int64_t c = 0; c < g.cout; ++c) {
        float* dst = out.data() + (i * g.cout + c) * P;
        for (std::int64_t j = 0; j < P; ++j) dst[j] += bv[c];
      }
    }
  }
  std::vector<Tensor> parents{x, weight};
  if (bias.defined()) parents.push_back(bias);
  return Tensor::make_result(
      {g.n, g.cout, g.ho, g.wo}, std::move(out), std::move(parents), "conv2d",
      [g, cols = std::move(cols)](std::span<const float> grad, std::span<const Tensor> p) {
        const auto P = g.pixels_out();
        MatRM gm = to_channel_major(grad, g.n, g.cout, P);
        if (p[1].requires_grad()) {
          MapRM gw(p[1].grad_buffer().data(), g.cout, g.patch());
          gw.noalias() += gm * cols.transpose();
        }
        if (p[0].requires_grad()) {
          CMapRM w(p[1].data().data(), g.cout, g.patch());
          MatRM dcols = w.transpose() * gm;
          col2im(dcols, g, p[0].grad_buffer());
        }
        if (p.size() > 2 && p[2].requires_grad()) {
          auto gb = p[2].grad_buffer();
          for (std::int64_t c = 0; c < g.cout; ++c) gb[c] += gm.row(c).sum();
        }
      });
}

Tensor conv2d_input_grad(const Tensor& grad_out, const Tensor& weight, const Shape& input_shape,
                         Conv2dParams params) {
  check_finite("conv2d_input_grad", {&grad_out, &weight});
  const auto g = conv_geometry("conv2d_input_grad", input_shape, weight.shape(), params);
  if (grad_out.shape() != Shape{g.n, g.cout, g.ho, g.wo}) {
    throw ShapeError("conv2d_input_grad", grad_out.shape(), Shape{g.n, g.cout, g.ho, g.wo});
  }
  const auto P = g.pixels_out();
  MatRM gm = to_channel_major(grad_out.data(), g.n, g.cout, P);
  CMapRM w(weight.data().data(), g.cout, g.patch());
  MatRM dcols = w.transpose() * gm;
  std::vector<float> out(shape_numel(input_shape), 0.0f);
  col2im(dcols, g, out);
  return Tensor::make_result(
      input_shape, std::move(out), {grad_out, weight}, "conv2d_input_grad",
      [g, gm = std::move(gm)](std::span<const float> up, std::span<const Tensor> p) {
        const auto P = g.pixels_out();
        MatRM ucols = im2col(up, g);
        if (p[0].requires_grad()) {
          CMapRM w(p[1].data().data(), g.cout, g.patch());
          MatRM y = w * ucols;
          add_from_channel_major(y, g.n, g.cout, P, p[0].grad_buffer());
        }
        if (p[1].requires_grad()) {
          MapRM gw(p[1].grad_buffer().data(), g.cout, g.patch());
          gw.noalias() += gm * ucols.transpose();
        }
      });
}

Tensor upsample_nearest2x(const Tensor& x) {
  check_finite("upsample_nearest2x", {&x});
  if (x.ndim() < 2) throw ShapeError("upsample_nearest2x", "need at least two dims");
  Shape s = x.shape();
  const auto h = s[s.size() - 2], w = s[s.size() - 1];
  const auto planes = x.numel() / (h * w);
  s[s.size() - 2] = 2 * h;
  s[s.size() - 1] = 2 * w;
  auto xv = x.data();
  std::vector<float> out(planes * 4 * h * w);
  for (std::int64_t pl = 0; pl < planes; ++pl) {
    const float* src = xv.data() + pl * h * w;
    float* dst = out.data() + pl * 4 * h * w;
    for (std::int64_t y = 0; y < 2 * h; ++y) {
      for (std::int64_t xx = 0; xx < 2 * w; ++xx) dst[y * 2 * w + xx] = src[(y / 2) * w + xx / 2];
    }
  }
  return Tensor::make_result(s, std::move(out), {x}, "upsample_nearest2x",
                             [planes, h, w](std::span<const float> g, std::span<const Tensor> p) {
                               auto gx = p[0].grad_buffer();
                               for (std::int64_t pl = 0; pl < planes; ++pl) {
                                 const float* src = g.data() + pl * 4 * h * w;
                                 float* dst = gx.data() + pl * h * w;
                                 for (std::int64_t y = 0; y < 2 * h; ++y) {
                                   for (std::int64_t xx = 0; xx < 2 * w; ++xx) {
                                     dst[(y / 2) * w + xx / 2] += src[y * 2 * w + xx];
                                   }
                                 }
                               }
                             });
}

Tensor pad_zero(const Tensor& x, int pad) {
  check_finite("pad_zero", {&x});
  if (x.ndim() < 2 || pad < 0) throw ShapeError("pad_zero", fmt::format("bad input {} / pad {}", shape_str(x.shape()), pad));
  Shape s = x.shape();
  const auto h = s[s.size() - 2], w = s[s.size() - 1];
  const auto planes = x.numel() / (h * w);
  const auto ho = h + 2 * pad, wo = w + 2 * pad;
  s[s.size() - 2] = ho;
  s[s.size() - 1] = wo;
  auto xv = x.data();
  std::vector<float> out(planes * ho * wo, 0.0f);
  for (std::int64_t pl = 0; pl < planes; ++pl) {
    for (std::int64_t y = 0; y < h; ++y) {
      std::copy_n(xv.data() + (pl * h + y) * w, w, out.data() + (pl * ho + y + pad) * wo + pad);
    }
  }
  return Tensor::make_result(s, std::move(out), {x}, "pad_zero",
                             [planes, h, w, ho, wo, pad](std::span<const float> g, std::span<const Tensor> p) {
                               auto gx = p[0].grad_buffer();
                               for (std::int64_t pl = 0; pl < planes; ++pl) {
                                 for (std::int64_t y = 0; y < h; ++y) {
                                   const float* src = g.data() + (pl * ho + y + pad) * wo + pad;
                                   float* dst = gx.data() + (pl * h + y) * w;
                                   for (std::int64_t xx = 0; xx < w; ++xx) dst[xx] += src[xx];
                                 }
                               }
                             });
}

Tensor leaky_relu(const Tensor& x, float alpha) {
  return unary_from_input(
      "leaky_relu", x, [alpha](float v) { return v > 0.0f ? v : alpha * v; },
      [alpha](float v) { return v > 0.0f ? 1.0f : alpha; });
}

Tensor leaky_relu_slope(const Tensor& x, float alpha) {
  auto xv = x.data();
  std::vector<float> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = xv[i] > 0.0f ? 1.0f : alpha;
  return Tensor::from_data(x.shape(), std::move(out));
}

Tensor relu(const Tensor& x) { return maximum(x, 0.0f); }

Tensor tanh(const Tensor& x) {
  return unary_from_output("tanh", x, [](float v) { return std::tanh(v); }, [](float y) { return 1.0f - y * y; });
}

Tensor sigmoid(const Tensor& x) {
  return unary_from_output(
      "sigmoid", x, [](float v) { return 1.0f / (1.0f + std::exp(-v)); }, [](float y) { return y * (1.0f - y); });
}

Tensor softplus(const Tensor& x) {
  return unary_from_input(
      "softplus", x, [](float v) { return std::max(v, 0.0f) + std::log1p(std::exp(-std::abs(v))); },
      [](float v) { return 1.0f / (1.0f + std::exp(-v)); });
}

Tensor log(const Tensor& x) {
  return unary_from_input("log", x, [](float v) { return std::log(v); }, [](float v) { return 1.0f / v; });
}

Tensor exp(const Tensor& x) {
  return unary_from_output("exp", x, [](float v) { return std::exp(v); }, [](float y) { return y; });
}

Tensor square(const Tensor& x) {
  return unary_from_input("square", x, [](float v) { return v * v; }, [](float v) { return 2.0f * v; });
}

Tensor maximum(const Tensor& x, float value) {
  return unary_from_input(
      "maximum", x, [value](float v) { return v > value ? v : value; },
      [value](float v) { return v > value ? 1.0f : 0.0f; });
}

Tensor reshape(const Tensor& x, const Shape& shape) {
  if (shape_numel(shape) != x.numel()) throw ShapeError("reshape", x.shape(), shape);
  std::vector<float> out(x.data().begin(), x.data().end());
  return Tensor::make_result(shape, std::move(out), {x}, "reshape",
                             [](std::span<const float> g, std::span<const Tensor> p) { p[0].accumulate_grad(g); });
}

Tensor sum(const Tensor& x) {
  check_finite("sum", {&x});
  double acc = 0.0;
  for (float v : x.data()) acc += v;
  return Tensor::make_result({}, {static_cast<float>(acc)}, {x}, "sum",
                             [](std::span<const float> g, std::span<const Tensor> p) {
                               for (auto& v : p[0].grad_buffer()) v += g[0];
                             });
}

Tensor mean(const Tensor& x) {
  check_finite("mean", {&x});
  if (x.numel() == 0) throw ShapeError("mean", "empty tensor");
  double acc = 0.0;
  for (float v : x.data()) acc += v;
  const float inv = 1.0f / static_cast<float>(x.numel());
  return Tensor::make_result({}, {static_cast<float>(acc / static_cast<double>(x.numel()))}, {x}, "mean",
                             [inv](std::span<const float> g, std::span<const Tensor> p) {
                               for (auto& v : p[0].grad_buffer()) v += g[0] * inv;
                             });
}

namespace {

Tensor reduce_axis(const char* op, const Tensor& x, int axis, bool average) {
  check_finite(op, {&x});
  axis = normalize_axis(op, x, axis);
  const auto sp = split_axis(x.shape(), axis);
  if (average && sp.extent == 0) throw ShapeError(op, "cannot average an empty axis");
  Shape s = x.shape();
  s.erase(s.begin() + axis);
  const float scale = average ? 1.0f / static_cast<float>(sp.extent) : 1.0f;
  auto xv = x.data();
  std::vector<float> out(sp.outer * sp.inner);
  for (std::int64_t o = 0; o < sp.outer; ++o) {
    for (std::int64_t i = 0; i < sp.inner; ++i) {
      double acc = 0.0;
      for (std::int64_t e = 0; e < sp.extent; ++e) acc += xv[(o * sp.extent + e) * sp.inner + i];
      out[o * sp.inner + i] = average ? static_cast<float>(acc / static_cast<double>(sp.extent))
                                      : static_cast<float>(acc);
    }
  }
  return Tensor::make_result(s, std::move(out), {x}, op,
                             [sp, scale](std::span<const float> g, std::span<const Tensor> p) {
                               auto gx = p[0].grad_buffer();
                               for (std::int64_t o = 0; o < sp.outer; ++o) {
                                 for (std::int64_t e = 0; e < sp.extent; ++e) {
                                   for (std::int64_t i = 0; i < sp.inner; ++i) {
                                     gx[(o * sp.extent + e) * sp.inner + i] += g[o * sp.inner + i] * scale;
                                   }
                                 }
                               }
                             });
}

}  // namespace

Tensor sum(const Tensor& x, int axis) { return reduce_axis("sum_axis", x, axis, false); }
Tensor mean(const Tensor& x, int axis) { return reduce_axis("mean_axis", x, axis, true); }

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw ShapeError("concat", "no inputs");
  axis = normalize_axis("concat", parts[0], axis);
  Shape s = parts[0].shape();
  std::int64_t total = 0;
  for (const auto& t : parts) {
    check_finite("concat", {&t});
    Shape a = t.shape();
    Shape b = s;
    if (a.size() != b.size()) throw ShapeError("concat", s, t.shape());
    a[axis] = b[axis] = 0;
    if (a != b) throw ShapeError("concat", s, t.shape());
    total += t.dim(axis);
  }
  s[axis] = total;
  const auto sp = split_axis(s, axis);
  std::vector<float> out(shape_numel(s));
  std::vector<std::int64_t> offsets;
  std::int64_t off = 0;
  for (const auto& t : parts) {
    offsets.push_back(off);
    const auto ext = t.dim(axis);
    auto tv = t.data();
    for (std::int64_t o = 0; o < sp.outer; ++o) {
      std::copy_n(tv.data() + o * ext * sp.inner, ext * sp.inner, out.data() + (o * total + off) * sp.inner);
    }
    off += ext;
  }
  return Tensor::make_result(s, std::move(out), parts, "concat",
                             [sp, total, offsets, axis](std::span<const float> g, std::span<const Tensor> p) {
                               for (std::size_t k = 0; k < p.size(); ++k) {
                                 if (!p[k].requires_grad()) continue;
                                 const auto ext = p[k].dim(axis);
                                 auto gk = p[k].grad_buffer();
                                 for (std::int64_t o = 0; o < sp.outer; ++o) {
                                   const float* src = g.data() + (o * total + offsets[k]) * sp.inner;
                                   float* dst = gk.data() + o * ext * sp.inner;
                                   for (std::int64_t i = 0; i < ext * sp.inner; ++i) dst[i] += src[i];
                                 }
                               }
                             });
}

Tensor slice(const Tensor& x, int axis, std::int64_t begin, std::int64_t end) {
  check_finite("slice", {&x});
  axis = normalize_axis("slice", x, axis);
  const auto sp = split_axis(x.shape(), axis);
  if (begin < 0 || end > sp.extent || begin > end) {
    throw ShapeError("slice", fmt::format("range [{}, {}) outside axis {} of {}", begin, end, axis, shape_str(x.shape())));
  }
  Shape s = x.shape();
  const auto ext = end - begin;
  s[axis] = ext;
  auto xv = x.data();
  std::vector<float> out(shape_numel(s));
  for (std::int64_t o = 0; o < sp.outer; ++o) {
    std::copy_n(xv.data() + (o * sp.extent + begin) * sp.inner, ext * sp.inner, out.data() + o * ext * sp.inner);
  }
  return Tensor::make_result(s, std::move(out), {x}, "slice",
                             [sp, begin, ext](std::span<const float> g, std::span<const Tensor> p) {
                               auto gx = p[0].grad_buffer();
                               for (std::int64_t o = 0; o < sp.outer; ++o) {
                                 const float* src = g.data() + o * ext * sp.inner;
                                 float* dst = gx.data() + (o * sp.extent + begin) * sp.inner;
                                 for (std::int64_t i = 0; i < ext * sp.inner; ++i) dst[i] += src[i];
                               }
                             });
}

}  // namespace diffaug
