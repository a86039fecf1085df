#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "datr/autodiff/tensor.hpp"

// Differentiable primitives. Every op checks its shapes (DimensionError) and
// the finiteness of its output (NumericError). A result records history only
// when one of its inputs requires grad and a Tape is active on this thread.
namespace datr::ad {

Tensor matmul(const Tensor& a, const Tensor& b);
// a · bᵀ without materializing the transpose.
Tensor matmul_nt(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& x);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
// x[m×n] + bias broadcast over rows; bias has n elements.
Tensor add_row(const Tensor& x, const Tensor& bias);
Tensor scale(const Tensor& x, Scalar c);
Tensor add_scalar(const Tensor& x, Scalar c);
// x * s and x / s where s is a single-element tensor.
Tensor mul_by_scalar(const Tensor& x, const Tensor& s);
Tensor div_by_scalar(const Tensor& x, const Tensor& s);

Tensor relu(const Tensor& x);
Tensor exp(const Tensor& x);
// Gradient is passed through only where lo < x < hi.
Tensor clamp(const Tensor& x, Scalar lo, Scalar hi);

// Row-wise softmax with max subtraction.
Tensor softmax_rows(const Tensor& x);
Tensor log_softmax_rows(const Tensor& x);
Tensor layer_norm_rows(const Tensor& x, const Tensor& gain, const Tensor& bias,
                       Scalar eps = 1e-5);
// Throws ZeroNormError if any row norm is below min_norm.
Tensor l2_normalize_rows(const Tensor& x, Scalar min_norm = 1e-12);

Tensor concat_last_dim(std::span<const Tensor> parts);
Tensor concat_rows(std::span<const Tensor> parts);
Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t end);
// Rows of x picked by index (repeats allowed); backward scatter-adds.
Tensor gather_rows(const Tensor& x, std::span<const std::size_t> indices);
// Main diagonal of a square matrix as an n×1 column.
Tensor diagonal(const Tensor& x);

// axis 0 -> 1×n, axis 1 -> m×1.
Tensor mean_over_axis(const Tensor& x, std::size_t axis);
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

// Output length floor((T + 2·pad − k)/stride) + 1, or 0 if that is < 1.
std::size_t conv1d_output_length(std::size_t length, std::size_t kernel, std::size_t stride,
                                 std::size_t pad);
// x[T×d_in] convolved over time with kernels[k×d_in×d_out], zero padding.
Tensor conv1d(const Tensor& x, const Tensor& kernels, std::size_t stride, std::size_t pad);

}  // namespace datr::ad
