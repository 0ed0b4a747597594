#pragma once

#include <string>
#include <vector>

#include "ptqlab/matrix.hpp"
#include "ptqlab/quant.hpp"

namespace ptqlab {

/// Damped layer Hessian H = 2*A*A^T + lambda*I together with the upper
/// Cholesky factor U of H^{-1} (H^{-1} = U^T U), the quantity the greedy
/// column sweep consumes.
struct HessianState {
    Matrix h;
    double damping = 0.0;
    Matrix chol_inv;
};

struct SolverConfig {
    QuantConfig quant;
    double percdamp = 0.01;
    int block_size = 128;

    void validate() const {
        quant.validate();
        if (!(percdamp > 0.0 && percdamp <= 1.0))
            throw InvalidGroupSize("percdamp must lie in (0, 1]");
        if (block_size < 1) throw InvalidGroupSize("block_size must be >= 1");
    }
};

/// Which activations the squared-Frobenius objective is measured against.
enum class ReferenceSide { same_a, full_precision, faq_full };

std::string to_string(ReferenceSide side);
ReferenceSide reference_side_from_string(const std::string& s);

struct ObjectiveReport {
    int layer = 0;
    std::string method;
    ReferenceSide reference_side = ReferenceSide::same_a;
    double value = 0.0;
};

/// Line format: "<layer> <method> <side> <value>" with 17 significant
/// digits on the value.
std::string serialize_report(const ObjectiveReport& r);
ObjectiveReport parse_report(const std::string& line);
void save_reports(const std::string& path, const std::vector<ObjectiveReport>& reports);
std::vector<ObjectiveReport> load_reports(const std::string& path);

struct SolveResult {
    QuantizedTensor q;
    double objective = 0.0;
};

HessianState compute_hessian(const ActivationBatch& a, double percdamp);

/// Greedy column-by-column quantization with Cholesky error compensation,
/// minimizing ||Q(W)A - WA||_F^2. Group scales come from the original W,
/// computed once before the sweep.
SolveResult gptq_quantize(const WeightMatrix& w, const HessianState& hess,
                          const SolverConfig& cfg);

/// Asymmetric-objective variant minimizing ||Q(W)A - W*a_ref||_F^2. The
/// residual target is folded into the sweep by shifting W to
/// W + 2*(W*a_ref - W*A)*A^T*H^{-1}, which reduces bit-exactly to
/// gptq_quantize when a_ref == a.
SolveResult gptaq_quantize(const WeightMatrix& w, const ActivationBatch& a,
                           const ActivationBatch& a_ref, const SolverConfig& cfg);

/// ||dequant(q)*a - w*a_ref||_F^2.
double layer_objective(const WeightMatrix& w, const QuantizedTensor& q,
                       const ActivationBatch& a, const ActivationBatch& a_ref);

/// Exhaustive global minimizer for single-row instances with a tiny code
/// space ((2^bits)^cols <= 8^8). Ties break to the lexicographically
/// smallest code vector.
SolveResult oracle_quantize(const WeightMatrix& w_row, const ActivationBatch& a,
                            const ActivationBatch& a_ref, const QuantConfig& cfg);

} // namespace ptqlab
