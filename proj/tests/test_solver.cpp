#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>

#include "ptqlab/kernels.hpp"
#include "ptqlab/rng.hpp"
#include "ptqlab/solver.hpp"

using namespace ptqlab;

namespace {

Matrix gaussian(std::size_t r, std::size_t c, std::uint64_t seed, double scale = 1.0) {
    CounterRng rng(seed);
    Matrix m(r, c);
    for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] = rng.next_normal() * scale;
    return m;
}

Matrix identity(std::size_t d, double v = 1.0) {
    Matrix m(d, d);
    for (std::size_t i = 0; i < d; ++i) m.at(i, i) = v;
    return m;
}

// Straight-line scalar objective ||dq*a - w*a_ref||^2, independent of the
// library matmul/sumsq kernels.
double scalar_objective(const Matrix& w, const QuantizedTensor& q, const Matrix& a,
                        const Matrix& a_ref) {
    double total = 0.0;
    for (std::size_t i = 0; i < w.rows(); ++i)
        for (std::size_t t = 0; t < a.cols(); ++t) {
            double left = 0.0, right = 0.0;
            for (std::size_t j = 0; j < w.cols(); ++j) {
                left += q.dequant_at(i, j) * a.at(j, t);
                right += w.at(i, j) * a_ref.at(j, t);
            }
            double d = left - right;
            total += d * d;
        }
    return total;
}

} // namespace

TEST_CASE("compute_hessian: 2x2 identity with percdamp 0.01 gives 2.02*I") {
    HessianState st = compute_hessian(identity(2), 0.01);
    // Scalar reference: 2*A*A^T = 2I, trace 4, mean diag 2, lambda 0.02.
    double lambda = 0.01 * ((2.0 + 2.0) / 2.0);
    CHECK(st.damping == lambda);
    CHECK(st.h.at(0, 0) == 2.0 + lambda);
    CHECK(st.h.at(1, 1) == 2.0 + lambda);
    CHECK(st.h.at(0, 1) == 0.0);
    CHECK(st.h.at(0, 0) == doctest::Approx(2.02).epsilon(1e-15));
}

TEST_CASE("compute_hessian: damping rescues rank deficiency") {
    Matrix a = gaussian(4, 8, 3);
    for (std::size_t c = 0; c < a.cols(); ++c) a.at(2, c) = 0.0; // dead feature row
    HessianState st = compute_hessian(a, 0.01);
    CHECK(st.chol_inv.rows() == 4); // Cholesky succeeded
}

TEST_CASE("compute_hessian: invariant to sample order") {
    Matrix a = gaussian(4, 6, 5);
    Matrix perm(4, 6);
    std::size_t order[6] = {5, 3, 0, 4, 1, 2};
    for (std::size_t r = 0; r < 4; ++r)
        for (std::size_t c = 0; c < 6; ++c) perm.at(r, c) = a.at(r, order[c]);
    HessianState s1 = compute_hessian(a, 0.01);
    HessianState s2 = compute_hessian(perm, 0.01);
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < 4; ++j)
            CHECK(s1.h.at(i, j) == doctest::Approx(s2.h.at(i, j)).epsilon(1e-12));
}

TEST_CASE("compute_hessian: chol_inv reconstructs the inverse") {
    Matrix a = gaussian(6, 12, 11);
    HessianState st = compute_hessian(a, 0.01);
    // U^T U * H should be the identity.
    Matrix hinv = kernels::matmul(kernels::transpose(st.chol_inv), st.chol_inv);
    Matrix eye = kernels::matmul(hinv, st.h);
    for (std::size_t i = 0; i < 6; ++i)
        for (std::size_t j = 0; j < 6; ++j)
            CHECK(eye.at(i, j) == doctest::Approx(i == j ? 1.0 : 0.0).epsilon(1e-8));
}

TEST_CASE("gptq with diagonal hessian collapses to rtn bit-exactly") {
    Matrix w = gaussian(8, 8, 17);
    SolverConfig cfg;
    cfg.quant = QuantConfig{4, QuantConfig::kPerTensor, Scheme::asymmetric};
    HessianState hess = compute_hessian(identity(8, 2.5), 0.01);
    SolveResult solved = gptq_quantize(w, hess, cfg);
    QuantizedTensor rtn = rtn_quantize(w, cfg.quant);
    CHECK(solved.q.codes == rtn.codes);
    CHECK(solved.q.scales == rtn.scales);
    CHECK(solved.q.zero_points == rtn.zero_points);
}

TEST_CASE("gptq on grid-representable weights has zero objective") {
    Matrix w = Matrix::from_data(2, 2, {0.0, 0.5, 1.0, 1.5});
    SolverConfig cfg;
    cfg.quant = QuantConfig{2, QuantConfig::kPerTensor, Scheme::asymmetric};
    HessianState hess = compute_hessian(gaussian(2, 8, 23), 0.01);
    SolveResult solved = gptq_quantize(w, hess, cfg);
    CHECK(solved.objective == 0.0);
    Matrix back = dequantize(solved.q);
    for (std::size_t i = 0; i < w.size(); ++i) CHECK(back.data()[i] == w.data()[i]);
}

TEST_CASE("gptq beats rtn and respects the oracle on the 1x2 correlated instance") {
    Matrix w = Matrix::from_data(1, 2, {0.4, 0.4});
    Matrix a = Matrix::from_data(2, 2, {1.0, 1.0, 1.0, 1.0});
    SolverConfig cfg;
    cfg.quant = QuantConfig{2, QuantConfig::kPerTensor, Scheme::symmetric};

    HessianState hess = compute_hessian(a, 0.01);
    SolveResult solved = gptq_quantize(w, hess, cfg);
    QuantizedTensor rtn = rtn_quantize(w, cfg.quant);
    double rtn_obj = layer_objective(w, rtn, a, a);
    double gptq_obj = layer_objective(w, solved.q, a, a);
    SolveResult oracle = oracle_quantize(w, a, a, cfg.quant);

    CHECK(gptq_obj <= rtn_obj + 1e-12);
    CHECK(oracle.objective <= gptq_obj + 1e-9);
    CHECK(solved.objective == doctest::Approx(gptq_obj).epsilon(1e-8));
}

TEST_CASE("gptaq with a_ref == a is bit-identical to gptq") {
    Matrix w = gaussian(8, 12, 31);
    Matrix a = gaussian(12, 24, 32);
    SolverConfig cfg;
    cfg.quant = QuantConfig{4, 4, Scheme::asymmetric};

    SolveResult asym = gptaq_quantize(w, a, a, cfg);
    SolveResult sym = gptq_quantize(w, compute_hessian(a, cfg.percdamp), cfg);
    CHECK(asym.q == sym.q);
    CHECK(asym.objective == sym.objective);
}

TEST_CASE("gptaq objective matches layer_objective on its own output") {
    Matrix w = gaussian(4, 8, 41);
    Matrix a = gaussian(8, 16, 42);
    Matrix a_ref = gaussian(8, 16, 42);
    // Perturb the reference so the asymmetric path is exercised.
    for (std::size_t i = 0; i < a_ref.size(); ++i) a_ref.data()[i] += 0.01 * (i % 3);
    SolverConfig cfg;
    cfg.quant = QuantConfig{4, QuantConfig::kPerTensor, Scheme::asymmetric};
    SolveResult solved = gptaq_quantize(w, a, a_ref, cfg);
    double recomputed = layer_objective(w, solved.q, a, a_ref);
    CHECK(solved.objective == doctest::Approx(recomputed).epsilon(1e-8));
}

TEST_CASE("gptaq on a 1x2 instance dominates no assignment the oracle finds") {
    CounterRng rng(404);
    Matrix w = Matrix::from_data(1, 2, {rng.next_normal(), rng.next_normal()});
    Matrix a = gaussian(2, 6, 405);
    Matrix a_ref = gaussian(2, 6, 406);
    QuantConfig qc{2, QuantConfig::kPerTensor, Scheme::symmetric};
    SolverConfig cfg;
    cfg.quant = qc;
    SolveResult solved = gptaq_quantize(w, a, a_ref, cfg);
    SolveResult oracle = oracle_quantize(w, a, a_ref, qc);
    CHECK(oracle.objective <= solved.objective + 1e-9);
}

TEST_CASE("layer_objective: trivial and derived cases") {
    Matrix a = gaussian(4, 8, 52);

    // Weights exactly on the 2-bit asymmetric grid quantize losslessly, so
    // the objective vanishes exactly.
    Matrix grid = Matrix::from_data(2, 4, {0.0, 0.5, 1.0, 1.5, 0.5, 0.0, 1.5, 1.0});
    QuantizedTensor qgrid =
        rtn_quantize(grid, QuantConfig{2, QuantConfig::kPerTensor, Scheme::asymmetric});
    CHECK(layer_objective(grid, qgrid, a, a) == 0.0);

    // All-ones 2x2 difference has squared Frobenius norm 4.
    Matrix w1 = identity(2);
    QuantizedTensor q1 = rtn_quantize(identity(2), QuantConfig{8, QuantConfig::kPerTensor,
                                                               Scheme::symmetric});
    Matrix a_same = identity(2);
    Matrix a_shift(2, 2);
    // dq * a - w * a_ref = I - (I + ones) = -ones
    Matrix a_ref = Matrix::from_data(2, 2, {2.0, 1.0, 1.0, 2.0});
    CHECK(layer_objective(w1, q1, a_same, a_ref) == doctest::Approx(4.0).epsilon(1e-12));

    // Random seeded instance against the scalar triple loop.
    Matrix wr = gaussian(5, 7, 61);
    Matrix ar = gaussian(7, 9, 62);
    Matrix ar_ref = gaussian(7, 9, 63);
    QuantizedTensor qr = rtn_quantize(wr, QuantConfig{4, 7, Scheme::asymmetric});
    double lib = layer_objective(wr, qr, ar, ar_ref);
    double ref = scalar_objective(wr, qr, ar, ar_ref);
    CHECK(lib == doctest::Approx(ref).epsilon(1e-10));
}

TEST_CASE("oracle: diagonal A with on-grid weights reproduces rtn at zero loss") {
    Matrix w = Matrix::from_data(1, 2, {-1.0, 1.0});
    QuantConfig qc{2, QuantConfig::kPerTensor, Scheme::symmetric};
    Matrix a = identity(2);
    SolveResult oracle = oracle_quantize(w, a, a, qc);
    QuantizedTensor rtn = rtn_quantize(w, qc);
    CHECK(oracle.objective == 0.0);
    CHECK(oracle.q.codes == rtn.codes);
}

TEST_CASE("oracle value agrees with an independent reverse-order enumeration") {
    CounterRng rng(777);
    Matrix w = Matrix::from_data(1, 2, {rng.next_normal(), rng.next_normal()});
    // Correlated activations.
    Matrix a(2, 5);
    for (std::size_t t = 0; t < 5; ++t) {
        double base = rng.next_normal();
        a.at(0, t) = base;
        a.at(1, t) = 0.8 * base + 0.2 * rng.next_normal();
    }
    QuantConfig qc{2, QuantConfig::kPerTensor, Scheme::symmetric};
    SolveResult oracle = oracle_quantize(w, a, a, qc);

    // Reverse lexicographic odometer, scalar arithmetic.
    auto params = compute_params(w, qc, Granularity::per_tensor);
    double best = std::numeric_limits<double>::infinity();
    for (int c1 = qc.qmax(); c1 >= qc.qmin(); --c1)
        for (int c0 = qc.qmax(); c0 >= qc.qmin(); --c0) {
            double d0 = params[0].scale * c0;
            double d1 = params[0].scale * c1;
            double loss = 0.0;
            for (std::size_t t = 0; t < 5; ++t) {
                double left = d0 * a.at(0, t) + d1 * a.at(1, t);
                double right = w.at(0, 0) * a.at(0, t) + w.at(0, 1) * a.at(1, t);
                loss += (left - right) * (left - right);
            }
            best = std::min(best, loss);
        }
    CHECK(oracle.objective == doctest::Approx(best).epsilon(1e-10));
}

TEST_CASE("oracle rejects oversized search spaces") {
    Matrix w = gaussian(1, 9, 88);
    Matrix a = gaussian(9, 2, 89);
    CHECK_THROWS_AS(oracle_quantize(w, a, a, QuantConfig{3, QuantConfig::kPerTensor,
                                                         Scheme::symmetric}),
                    SearchSpaceTooLarge);
}

TEST_CASE("oracle tie-break picks the lexicographically smallest codes") {
    // Zero activations make every assignment score zero.
    Matrix w = Matrix::from_data(1, 2, {0.3, -0.3});
    Matrix a(2, 2, 0.0);
    QuantConfig qc{2, QuantConfig::kPerTensor, Scheme::symmetric};
    SolveResult oracle = oracle_quantize(w, a, a, qc);
    CHECK(oracle.q.codes == std::vector<std::int32_t>{qc.qmin(), qc.qmin()});
}

TEST_CASE("statistical dominance of gptq over rtn across seeded layers") {
    int wins = 0;
    const int trials = 100;
    for (int trial = 0; trial < trials; ++trial) {
        Matrix w = gaussian(32, 32, 9000 + static_cast<std::uint64_t>(trial));
        Matrix a = gaussian(32, 128, 9500 + static_cast<std::uint64_t>(trial));
        SolverConfig cfg;
        cfg.quant = QuantConfig{4, QuantConfig::kPerTensor, Scheme::asymmetric};
        HessianState hess = compute_hessian(a, cfg.percdamp);
        SolveResult solved = gptq_quantize(w, hess, cfg);
        QuantizedTensor rtn = rtn_quantize(w, cfg.quant);
        if (layer_objective(w, solved.q, a, a) <= layer_objective(w, rtn, a, a)) ++wins;
    }
    CHECK(wins >= 95);
}

TEST_CASE("gptq objective is layer_objective-consistent on a full-size layer") {
    Matrix w = gaussian(32, 32, 71);
    Matrix a = gaussian(32, 128, 72);
    SolverConfig cfg;
    cfg.quant = QuantConfig{4, 16, Scheme::asymmetric};
    SolveResult solved = gptq_quantize(w, compute_hessian(a, cfg.percdamp), cfg);
    double recomputed = layer_objective(w, solved.q, a, a);
    CHECK(solved.objective == doctest::Approx(recomputed).epsilon(1e-8));
}

TEST_CASE("objective reports round-trip through the text record") {
    ObjectiveReport r{3, "gptq-eq1", ReferenceSide::full_precision, 0.12345678901234567};
    std::string line = serialize_report(r);
    ObjectiveReport back = parse_report(line);
    CHECK(back.layer == r.layer);
    CHECK(back.method == r.method);
    CHECK(back.reference_side == r.reference_side);
    CHECK(back.value == r.value);
    CHECK(serialize_report(back) == line);
}

TEST_CASE("dimension mismatches are rejected") {
    Matrix w = gaussian(2, 3, 1);
    Matrix a = gaussian(4, 2, 2);
    SolverConfig cfg;
    cfg.quant = QuantConfig{4, QuantConfig::kPerTensor, Scheme::asymmetric};
    CHECK_THROWS_AS(gptq_quantize(w, compute_hessian(a, 0.01), cfg), DimensionMismatch);
    CHECK_THROWS_AS(gptaq_quantize(w, a, gaussian(4, 3, 3), cfg), DimensionMismatch);
}
