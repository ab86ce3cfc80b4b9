#pragma once

#include <vector>

#include "diffaug/tensor.hpp"

namespace diffaug {

// Elementwise arithmetic. Operands must have equal shapes, or one operand's
// shape must equal the other's without its leading (batch) dimension, or one
// operand must hold a single element.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, float b);
Tensor mul(const Tensor& a, float b);

/// (M, K) x (K, N) -> (M, N).
Tensor matmul(const Tensor& a, const Tensor& b);

struct Conv2dParams {
  int stride = 1;
  int padding = 1;
};

/// x: (N, Cin, H, W), weight: (Cout, Cin, k, k), bias: (Cout) or undefined.
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, Conv2dParams params = {});

/// Adjoint of conv2d with respect to its input: maps a (N, Cout, Ho, Wo)
/// gradient back to `input_shape`. Differentiable in both `grad_out` and
/// `weight`, which is what the R1 penalty needs.
Tensor conv2d_input_grad(const Tensor& grad_out, const Tensor& weight, const Shape& input_shape,
                         Conv2dParams params = {});

/// Nearest-neighbour 2x upsampling of the last two dims.
Tensor upsample_nearest2x(const Tensor& x);
/// Zero padding of the last two dims by `pad` on every side.
Tensor pad_zero(const Tensor& x, int pad);

Tensor leaky_relu(const Tensor& x, float alpha);
Tensor relu(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor sigmoid(const Tensor& x);
/// log(1 + e^x), evaluated stably.
Tensor softplus(const Tensor& x);
Tensor log(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor square(const Tensor& x);
/// max(x, value) elementwise.
Tensor maximum(const Tensor& x, float value);

/// Derivative of leaky_relu at x, as a constant (graph-free) tensor.
Tensor leaky_relu_slope(const Tensor& x, float alpha);

Tensor reshape(const Tensor& x, const Shape& shape);
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
/// Reduces along `axis`, dropping it from the shape.
Tensor sum(const Tensor& x, int axis);
Tensor mean(const Tensor& x, int axis);

Tensor concat(const std::vector<Tensor>& parts, int axis = 0);
/// Half-open range [begin, end) along `axis`.
Tensor slice(const Tensor& x, int axis, std::int64_t begin, std::int64_t end);

}  // namespace diffaug
