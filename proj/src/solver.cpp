#include "ptqlab/solver.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "ptqlab/kernels.hpp"

namespace ptqlab {

std::string to_string(ReferenceSide side) {
    switch (side) {
        case ReferenceSide::same_a: return "same-A";
        case ReferenceSide::full_precision: return "full-precision";
        case ReferenceSide::faq_full: return "faq";
    }
    return "same-A";
}

ReferenceSide reference_side_from_string(const std::string& s) {
    if (s == "same-A") return ReferenceSide::same_a;
    if (s == "full-precision") return ReferenceSide::full_precision;
    if (s == "faq") return ReferenceSide::faq_full;
    throw ParseError("unknown reference side: " + s);
}

std::string serialize_report(const ObjectiveReport& r) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", r.value);
    std::ostringstream os;
    os << r.layer << " " << r.method << " " << to_string(r.reference_side) << " " << buf;
    return os.str();
}

ObjectiveReport parse_report(const std::string& line) {
    std::istringstream is(line);
    ObjectiveReport r;
    std::string side, value;
    if (!(is >> r.layer >> r.method >> side >> value))
        throw ParseError("bad objective report line: " + line);
    r.reference_side = reference_side_from_string(side);
    char* end = nullptr;
    r.value = std::strtod(value.c_str(), &end); // strtod keeps subnormals
    if (end == value.c_str() || *end != '\0')
        throw ParseError("bad objective value: " + value);
    return r;
}

void save_reports(const std::string& path, const std::vector<ObjectiveReport>& reports) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open for write: " + path);
    for (const auto& r : reports) f << serialize_report(r) << "\n";
    if (!f) throw IoError("write failed: " + path);
}

std::vector<ObjectiveReport> load_reports(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open: " + path);
    std::vector<ObjectiveReport> out;
    std::string line;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        out.push_back(parse_report(line));
    }
    return out;
}

namespace {

// In-place lower Cholesky: m <- L with m = L*L^T on input.
void cholesky_lower(Matrix& m) {
    const std::size_t d = m.rows();
    for (std::size_t i = 0; i < d; ++i) {
        for (std::size_t j = 0; j <= i; ++j) {
            double sum = 0.0;
            for (std::size_t k = 0; k < j; ++k) sum += m.at(i, k) * m.at(j, k);
            if (i == j) {
                double v = m.at(i, i) - sum;
                if (!(v > 0.0)) throw CholeskyFailure("matrix not positive definite");
                m.at(i, i) = std::sqrt(v);
            } else {
                m.at(i, j) = (m.at(i, j) - sum) / m.at(j, j);
            }
        }
    }
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = i + 1; j < d; ++j) m.at(i, j) = 0.0;
}

// Solve (L L^T) X = I column by column.
Matrix cholesky_inverse(const Matrix& l) {
    const std::size_t d = l.rows();
    Matrix inv(d, d);
    const std::int64_t n = static_cast<std::int64_t>(d);
#pragma omp parallel for schedule(static)
    for (std::int64_t col = 0; col < n; ++col) {
        std::vector<double> y(d, 0.0);
        // forward: L y = e_col
        for (std::size_t i = 0; i < d; ++i) {
            double rhs = (i == static_cast<std::size_t>(col)) ? 1.0 : 0.0;
            for (std::size_t k = 0; k < i; ++k) rhs -= l.at(i, k) * y[k];
            y[i] = rhs / l.at(i, i);
        }
        // backward: L^T x = y
        for (std::size_t ii = d; ii-- > 0;) {
            double rhs = y[ii];
            for (std::size_t k = ii + 1; k < d; ++k) rhs -= l.at(k, ii) * y[k];
            y[ii] = rhs / l.at(ii, ii);
        }
        for (std::size_t i = 0; i < d; ++i) inv.at(i, static_cast<std::size_t>(col)) = y[i];
    }
    return inv;
}

// Objective from the Hessian identity sum_r d_r * (A A^T) * d_r^T where
// A A^T is recovered as (h - lambda*I)/2. Partials folded in row order.
double objective_from_hessian(const Matrix& w, const QuantizedTensor& q,
                              const HessianState& hess) {
    const std::size_t d = w.cols();
    Matrix gram = hess.h;
    for (std::size_t i = 0; i < d; ++i) gram.at(i, i) -= hess.damping;

    std::vector<double> partial(w.rows(), 0.0);
    const std::int64_t rows = static_cast<std::int64_t>(w.rows());
#pragma omp parallel for schedule(static)
    for (std::int64_t r = 0; r < rows; ++r) {
        std::vector<double> diff(d);
        for (std::size_t c = 0; c < d; ++c)
            diff[c] = q.dequant_at(static_cast<std::size_t>(r), c) -
                      w.at(static_cast<std::size_t>(r), c);
        double acc = 0.0;
        for (std::size_t i = 0; i < d; ++i) {
            double tmp = 0.0;
            for (std::size_t j = 0; j < d; ++j) tmp += gram.at(i, j) * diff[j];
            acc += 0.5 * diff[i] * tmp;
        }
        partial[static_cast<std::size_t>(r)] = acc;
    }
    double total = 0.0;
    for (double p : partial) total += p;
    return total > 0.0 ? total : 0.0;
}

// Frobenius inner product with per-column partials folded in order.
double frob_dot(const Matrix& x, const Matrix& y) {
    std::vector<double> partial(x.cols(), 0.0);
    const std::int64_t cols = static_cast<std::int64_t>(x.cols());
#pragma omp parallel for schedule(static)
    for (std::int64_t c = 0; c < cols; ++c) {
        double acc = 0.0;
        for (std::size_t r = 0; r < x.rows(); ++r)
            acc += x.at(r, static_cast<std::size_t>(c)) * y.at(r, static_cast<std::size_t>(c));
        partial[static_cast<std::size_t>(c)] = acc;
    }
    double total = 0.0;
    for (double p : partial) total += p;
    return total;
}

// The shared greedy sweep. `w_target` supplies the rounding targets (it
// already carries any asymmetric residual shift); scales come from
// `w_scales` so the grid never depends on the shift.
QuantizedTensor greedy_sweep(const Matrix& w_target, const Matrix& w_scales,
                             const HessianState& hess, const SolverConfig& cfg) {
    const std::size_t rows = w_target.rows();
    const std::size_t cols = w_target.cols();
    if (cols != hess.h.rows())
        throw DimensionMismatch("weight columns do not match hessian dimension");

    Granularity gran = cfg.quant.group_size == QuantConfig::kPerTensor
                           ? Granularity::per_tensor
                           : Granularity::weight_groups;
    auto params = compute_params(w_scales, cfg.quant, gran);

    QuantizedTensor q;
    q.rows = rows;
    q.cols = cols;
    q.config = cfg.quant;
    q.granularity = gran;
    q.codes.resize(rows * cols);
    q.scales.resize(params.size());
    q.zero_points.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
        q.scales[i] = params[i].scale;
        q.zero_points[i] = params[i].zero_point;
    }

    const Matrix& u = hess.chol_inv; // upper triangular
    const double lo = cfg.quant.qmin();
    const double hi = cfg.quant.qmax();
    const std::size_t block = static_cast<std::size_t>(cfg.block_size);

    const std::int64_t nrows = static_cast<std::int64_t>(rows);
#pragma omp parallel for schedule(static)
    for (std::int64_t row = 0; row < nrows; ++row) {
        const std::size_t r = static_cast<std::size_t>(row);
        std::vector<double> work(cols);
        for (std::size_t c = 0; c < cols; ++c) work[c] = w_target.at(r, c);
        std::vector<double> err(cols, 0.0);

        for (std::size_t b0 = 0; b0 < cols; b0 += block) {
            const std::size_t b1 = std::min(b0 + block, cols);
            for (std::size_t j = b0; j < b1; ++j) {
                std::size_t g = q.group_of(r, j);
                double s = q.scales[g];
                std::int32_t zp = q.zero_points[g];
                double code = kernels::round_half_even(work[j] / s) + zp;
                code = std::clamp(code, lo, hi);
                q.codes[r * cols + j] = static_cast<std::int32_t>(code);
                double dq = s * (code - zp);
                double e = (work[j] - dq) / u.at(j, j);
                err[j] = e;
                for (std::size_t k = j + 1; k < b1; ++k) work[k] -= e * u.at(j, k);
            }
            // Propagate the block's accumulated error to the tail columns.
            for (std::size_t k = b1; k < cols; ++k) {
                double acc = 0.0;
                for (std::size_t j = b0; j < b1; ++j) acc += err[j] * u.at(j, k);
                work[k] -= acc;
            }
        }
    }
    return q;
}

} // namespace

HessianState compute_hessian(const ActivationBatch& a, double percdamp) {
    a.require_finite("compute_hessian input");
    if (a.cols() < 1) throw DimensionMismatch("activation batch needs at least one sample");
    if (!(percdamp > 0.0)) throw InvalidGroupSize("percdamp must be positive");

    HessianState st;
    st.h = kernels::gram2(a);
    const std::size_t d = st.h.rows();
    double trace = 0.0;
    for (std::size_t i = 0; i < d; ++i) trace += st.h.at(i, i);
    st.damping = percdamp * (trace / static_cast<double>(d));
    for (std::size_t i = 0; i < d; ++i) st.h.at(i, i) += st.damping;

    Matrix l = st.h;
    cholesky_lower(l);
    Matrix hinv = cholesky_inverse(l);
    cholesky_lower(hinv); // hinv <- lower factor of H^{-1}
    st.chol_inv = kernels::transpose(hinv);
    return st;
}

SolveResult gptq_quantize(const WeightMatrix& w, const HessianState& hess,
                          const SolverConfig& cfg) {
    cfg.validate();
    w.require_finite("gptq_quantize input");
    SolveResult res;
    res.q = greedy_sweep(w, w, hess, cfg);
    res.objective = objective_from_hessian(w, res.q, hess);
    return res;
}

SolveResult gptaq_quantize(const WeightMatrix& w, const ActivationBatch& a,
                           const ActivationBatch& a_ref, const SolverConfig& cfg) {
    cfg.validate();
    w.require_finite("gptaq_quantize input");
    a.require_finite("gptaq_quantize activations");
    a_ref.require_finite("gptaq_quantize reference activations");
    if (a.rows() != a_ref.rows() || a.cols() != a_ref.cols())
        throw DimensionMismatch("calibration and reference batches differ in shape");
    if (w.cols() != a.rows())
        throw DimensionMismatch("weight columns do not match activation features");

    HessianState hess = compute_hessian(a, cfg.percdamp);

    // Residual R = W*a_ref - W*a. The unconstrained minimizer of the
    // asymmetric loss is W + 2*R*A^T*H^{-1}; sweeping toward it with the
    // Hessian of A minimizes ||Q(W)A - W*a_ref||^2 up to a constant.
    Matrix target_ref = kernels::matmul(w, a_ref);
    Matrix target_same = kernels::matmul(w, a);
    Matrix residual(w.rows(), a.cols());
    for (std::size_t i = 0; i < residual.rows(); ++i)
        for (std::size_t j = 0; j < residual.cols(); ++j)
            residual.at(i, j) = target_ref.at(i, j) - target_same.at(i, j);

    Matrix x = kernels::matmul(residual, kernels::transpose(a)); // R*A^T, d_out x d
    // X*H^{-1} = (X*U^T)*U with H^{-1} = U^T U.
    Matrix xu = kernels::matmul(x, kernels::transpose(hess.chol_inv));
    Matrix shift = kernels::matmul(xu, hess.chol_inv);

    Matrix w_shifted = w;
    for (std::size_t i = 0; i < w.rows(); ++i)
        for (std::size_t j = 0; j < w.cols(); ++j)
            w_shifted.at(i, j) += 2.0 * shift.at(i, j);

    SolveResult res;
    res.q = greedy_sweep(w_shifted, w, hess, cfg);

    // ||QA - W*a_ref||^2 = ||DA||^2 - 2<DA, R> + ||R||^2 with D = Q - W.
    // The first term reuses the symmetric route, so the a_ref == a case
    // collapses to gptq_quantize bit-for-bit, objective included.
    Matrix diff(w.rows(), w.cols());
    for (std::size_t i = 0; i < w.rows(); ++i)
        for (std::size_t j = 0; j < w.cols(); ++j)
            diff.at(i, j) = res.q.dequant_at(i, j) - w.at(i, j);
    Matrix da = kernels::matmul(diff, a);
    res.objective = objective_from_hessian(w, res.q, hess) - 2.0 * frob_dot(da, residual) +
                    frob_dot(residual, residual);
    if (!(res.objective > 0.0)) res.objective = 0.0;
    return res;
}

double layer_objective(const WeightMatrix& w, const QuantizedTensor& q,
                       const ActivationBatch& a, const ActivationBatch& a_ref) {
    if (q.rows != w.rows() || q.cols != w.cols())
        throw DimensionMismatch("quantized tensor shape does not match weights");
    if (w.cols() != a.rows() || a.rows() != a_ref.rows() || a.cols() != a_ref.cols())
        throw DimensionMismatch("activation shapes incompatible with weights");
    Matrix left = kernels::matmul(dequantize(q), a);
    Matrix right = kernels::matmul(w, a_ref);
    return kernels::sumsq_diff(left, right);
}

SolveResult oracle_quantize(const WeightMatrix& w_row, const ActivationBatch& a,
                            const ActivationBatch& a_ref, const QuantConfig& cfg) {
    cfg.validate();
    if (w_row.rows() != 1) throw DimensionMismatch("oracle expects a single weight row");
    if (w_row.cols() != a.rows())
        throw DimensionMismatch("weight columns do not match activation features");
    if (a.rows() != a_ref.rows() || a.cols() != a_ref.cols())
        throw DimensionMismatch("calibration and reference batches differ in shape");

    const std::size_t cols = w_row.cols();
    const int n_codes = cfg.qmax() - cfg.qmin() + 1;
    double space = std::pow(2.0, cfg.bits * static_cast<double>(cols));
    if (cols > 8 || space > std::pow(8.0, 8.0))
        throw SearchSpaceTooLarge("oracle search space exceeds 8^8 assignments");

    Granularity gran = cfg.group_size == QuantConfig::kPerTensor ? Granularity::per_tensor
                                                                 : Granularity::weight_groups;
    auto params = compute_params(w_row, cfg, gran);

    QuantizedTensor proto;
    proto.rows = 1;
    proto.cols = cols;
    proto.config = cfg;
    proto.granularity = gran;
    proto.codes.assign(cols, 0);
    proto.scales.resize(params.size());
    proto.zero_points.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
        proto.scales[i] = params[i].scale;
        proto.zero_points[i] = params[i].zero_point;
    }

    const std::size_t n = a.cols();
    std::vector<double> target(n, 0.0);
    for (std::size_t t = 0; t < n; ++t) {
        double acc = 0.0;
        for (std::size_t j = 0; j < cols; ++j) acc += w_row.at(0, j) * a_ref.at(j, t);
        target[t] = acc;
    }

    // Dequantized value per (column, code index).
    std::vector<double> levels(cols * static_cast<std::size_t>(n_codes));
    for (std::size_t j = 0; j < cols; ++j) {
        std::size_t g = proto.group_of(0, j);
        for (int ci = 0; ci < n_codes; ++ci)
            levels[j * static_cast<std::size_t>(n_codes) + static_cast<std::size_t>(ci)] =
                proto.scales[g] * ((cfg.qmin() + ci) - proto.zero_points[g]);
    }

    struct Best {
        double value;
        std::vector<int> codes; // code indices (0-based)
        bool found = false;
    };

    // Depth-first over code assignments in lexicographic order, carrying
    // the partial output row. Parallel chunks over the leading digit are
    // folded in digit order, preserving the first-minimum tie-break.
    auto search_branch = [&](int first_code) {
        Best best;
        std::vector<double> y(n);
        for (std::size_t t = 0; t < n; ++t)
            y[t] = levels[static_cast<std::size_t>(first_code)] * a.at(0, t);
        std::vector<int> codes(cols, 0);
        codes[0] = first_code;

        auto dfs = [&](auto&& self, std::size_t depth, std::vector<double>& acc) -> void {
            if (depth == cols) {
                double loss = 0.0;
                for (std::size_t t = 0; t < n; ++t) {
                    double d = acc[t] - target[t];
                    loss += d * d;
                }
                if (!best.found || loss < best.value) {
                    best.found = true;
                    best.value = loss;
                    best.codes = codes;
                }
                return;
            }
            std::vector<double> next(n);
            for (int ci = 0; ci < n_codes; ++ci) {
                double lv = levels[depth * static_cast<std::size_t>(n_codes) +
                                   static_cast<std::size_t>(ci)];
                for (std::size_t t = 0; t < n; ++t) next[t] = acc[t] + lv * a.at(depth, t);
                codes[depth] = ci;
                self(self, depth + 1, next);
            }
        };
        if (cols == 1) {
            double loss = 0.0;
            for (std::size_t t = 0; t < n; ++t) {
                double d = y[t] - target[t];
                loss += d * d;
            }
            best.found = true;
            best.value = loss;
            best.codes = codes;
        } else {
            dfs(dfs, 1, y);
        }
        return best;
    };

    std::vector<Best> branch_best(static_cast<std::size_t>(n_codes));
#pragma omp parallel for schedule(dynamic)
    for (int ci = 0; ci < n_codes; ++ci)
        branch_best[static_cast<std::size_t>(ci)] = search_branch(ci);

    Best best;
    for (const auto& b : branch_best) {
        if (!b.found) continue;
        if (!best.found || b.value < best.value) best = b;
    }

    SolveResult res;
    res.q = proto;
    for (std::size_t j = 0; j < cols; ++j)
        res.q.codes[j] = cfg.qmin() + best.codes[j];
    res.objective = layer_objective(w_row, res.q, a, a_ref);
    return res;
}

} // namespace ptqlab
