#pragma once

#include "ptqlab/matrix.hpp"

namespace ptqlab::kernels {

// Data-parallel kernels. Each OpenMP kernel has a serial twin with the
// same accumulation order, so the parallel result is bit-identical to the
// serial one for any thread count; the test suite asserts this and the
// bench target compares their throughput.

Matrix matmul(const Matrix& x, const Matrix& y);
Matrix matmul_serial(const Matrix& x, const Matrix& y);

/// 2 * A * A^T, the (undamped) layer Hessian.
Matrix gram2(const Matrix& a);
Matrix gram2_serial(const Matrix& a);

/// Squared Frobenius norm of x - y. Per-column partial sums are folded in
/// column order.
double sumsq_diff(const Matrix& x, const Matrix& y);
double sumsq_diff_serial(const Matrix& x, const Matrix& y);

Matrix transpose(const Matrix& x);

/// Deterministic round-half-to-even, independent of the FP environment.
double round_half_even(double x);

} // namespace ptqlab::kernels
