#include "ptqlab/kernels.hpp"

#include <cmath>
#include <cstdint>

namespace ptqlab::kernels {

namespace {

void check_mul_dims(const Matrix& x, const Matrix& y) {
    if (x.cols() != y.rows())
        throw DimensionMismatch("matmul: " + std::to_string(x.rows()) + "x" +
                                std::to_string(x.cols()) + " * " + std::to_string(y.rows()) +
                                "x" + std::to_string(y.cols()));
}

void check_same_shape(const Matrix& x, const Matrix& y) {
    if (x.rows() != y.rows() || x.cols() != y.cols())
        throw DimensionMismatch("shape mismatch: " + std::to_string(x.rows()) + "x" +
                                std::to_string(x.cols()) + " vs " + std::to_string(y.rows()) +
                                "x" + std::to_string(y.cols()));
}

inline double dot_row_col(const Matrix& x, const Matrix& y, std::size_t i, std::size_t j) {
    const std::size_t k = x.cols();
    const double* xr = x.data() + i * k;
    double acc = 0.0;
    for (std::size_t t = 0; t < k; ++t) acc += xr[t] * y.at(t, j);
    return acc;
}

} // namespace

Matrix matmul(const Matrix& x, const Matrix& y) {
    check_mul_dims(x, y);
    Matrix out(x.rows(), y.cols());
    const std::int64_t rows = static_cast<std::int64_t>(x.rows());
    const std::int64_t cols = static_cast<std::int64_t>(y.cols());
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < rows; ++i)
        for (std::int64_t j = 0; j < cols; ++j)
            out.at(static_cast<std::size_t>(i), static_cast<std::size_t>(j)) =
                dot_row_col(x, y, static_cast<std::size_t>(i), static_cast<std::size_t>(j));
    return out;
}

Matrix matmul_serial(const Matrix& x, const Matrix& y) {
    check_mul_dims(x, y);
    Matrix out(x.rows(), y.cols());
    for (std::size_t i = 0; i < x.rows(); ++i)
        for (std::size_t j = 0; j < y.cols(); ++j)
            out.at(i, j) = dot_row_col(x, y, i, j);
    return out;
}

namespace {

inline double gram_entry(const Matrix& a, std::size_t i, std::size_t j) {
    const std::size_t n = a.cols();
    const double* ri = a.data() + i * n;
    const double* rj = a.data() + j * n;
    double acc = 0.0;
    for (std::size_t t = 0; t < n; ++t) acc += ri[t] * rj[t];
    return 2.0 * acc;
}

} // namespace

Matrix gram2(const Matrix& a) {
    const std::int64_t d = static_cast<std::int64_t>(a.rows());
    Matrix h(a.rows(), a.rows());
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < d; ++i)
        for (std::int64_t j = i; j < d; ++j) {
            double v = gram_entry(a, static_cast<std::size_t>(i), static_cast<std::size_t>(j));
            h.at(static_cast<std::size_t>(i), static_cast<std::size_t>(j)) = v;
            h.at(static_cast<std::size_t>(j), static_cast<std::size_t>(i)) = v;
        }
    return h;
}

Matrix gram2_serial(const Matrix& a) {
    const std::size_t d = a.rows();
    Matrix h(d, d);
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = i; j < d; ++j) {
            double v = gram_entry(a, i, j);
            h.at(i, j) = v;
            h.at(j, i) = v;
        }
    return h;
}

namespace {

inline double column_sumsq(const Matrix& x, const Matrix& y, std::size_t c) {
    double acc = 0.0;
    for (std::size_t r = 0; r < x.rows(); ++r) {
        double d = x.at(r, c) - y.at(r, c);
        acc += d * d;
    }
    return acc;
}

} // namespace

double sumsq_diff(const Matrix& x, const Matrix& y) {
    check_same_shape(x, y);
    const std::int64_t cols = static_cast<std::int64_t>(x.cols());
    std::vector<double> partial(x.cols(), 0.0);
#pragma omp parallel for schedule(static)
    for (std::int64_t c = 0; c < cols; ++c)
        partial[static_cast<std::size_t>(c)] = column_sumsq(x, y, static_cast<std::size_t>(c));
    double total = 0.0;
    for (double p : partial) total += p;
    return total;
}

double sumsq_diff_serial(const Matrix& x, const Matrix& y) {
    check_same_shape(x, y);
    std::vector<double> partial(x.cols(), 0.0);
    for (std::size_t c = 0; c < x.cols(); ++c) partial[c] = column_sumsq(x, y, c);
    double total = 0.0;
    for (double p : partial) total += p;
    return total;
}

Matrix transpose(const Matrix& x) {
    Matrix out(x.cols(), x.rows());
    for (std::size_t i = 0; i < x.rows(); ++i)
        for (std::size_t j = 0; j < x.cols(); ++j) out.at(j, i) = x.at(i, j);
    return out;
}

double round_half_even(double x) {
    double f = std::floor(x);
    double diff = x - f;
    if (diff > 0.5) return f + 1.0;
    if (diff < 0.5) return f;
    // Exactly halfway: pick the even neighbour.
    return std::fmod(f, 2.0) == 0.0 ? f : f + 1.0;
}

} // namespace ptqlab::kernels
