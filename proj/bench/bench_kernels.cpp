// Timing harness comparing the OpenMP kernels against their serial
// reference twins, and checking on the way that both produce identical
// bits. Run: ./ptqlab_bench [size]

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <string>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "ptqlab/kernels.hpp"
#include "ptqlab/quant.hpp"
#include "ptqlab/rng.hpp"
#include "ptqlab/solver.hpp"
#include "ptqlab/stats.hpp"

using namespace ptqlab;

namespace {

Matrix gaussian(std::size_t r, std::size_t c, std::uint64_t seed) {
    CounterRng rng(seed);
    Matrix m(r, c);
    for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] = rng.next_normal();
    return m;
}

template <typename Fn>
double time_best_of(int reps, Fn&& fn) {
    double best = 1e300;
    for (int i = 0; i < reps; ++i) {
        auto t0 = std::chrono::steady_clock::now();
        fn();
        double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        if (s < best) best = s;
    }
    return best;
}

void report(const char* name, double serial_s, double parallel_s, bool bits_equal) {
    std::printf("%-24s serial %8.2f ms   parallel %8.2f ms   speedup %5.2fx   %s\n", name,
                serial_s * 1e3, parallel_s * 1e3, serial_s / parallel_s,
                bits_equal ? "bit-identical" : "MISMATCH");
}

} // namespace

int main(int argc, char** argv) {
    std::size_t n = argc > 1 ? static_cast<std::size_t>(std::atoll(argv[1])) : 384;
#ifdef _OPENMP
    std::printf("openmp threads: %d\n", omp_get_max_threads());
#else
    std::printf("openmp: disabled at build time\n");
#endif
    std::printf("problem size: %zu\n\n", n);

    Matrix x = gaussian(n, n, 1);
    Matrix y = gaussian(n, n, 2);

    {
        Matrix rs, rp;
        double ts = time_best_of(3, [&] { rs = kernels::matmul_serial(x, y); });
        double tp = time_best_of(3, [&] { rp = kernels::matmul(x, y); });
        report("matmul", ts, tp, rs == rp);
    }
    {
        Matrix rs, rp;
        double ts = time_best_of(3, [&] { rs = kernels::gram2_serial(x); });
        double tp = time_best_of(3, [&] { rp = kernels::gram2(x); });
        report("gram2 (2AA^T)", ts, tp, rs == rp);
    }
    {
        double vs = 0, vp = 0;
        double ts = time_best_of(5, [&] { vs = kernels::sumsq_diff_serial(x, y); });
        double tp = time_best_of(5, [&] { vp = kernels::sumsq_diff(x, y); });
        report("sumsq_diff", ts, tp, vs == vp);
    }
    {
        // rtn quantization is elementwise over groups.
        QuantConfig cfg{4, 128, Scheme::asymmetric};
        Matrix w = gaussian(n, (n / 128 + 1) * 128, 3);
        QuantizedTensor q;
        double tp = time_best_of(3, [&] { q = rtn_quantize(w, cfg); });
        std::printf("%-24s parallel %8.2f ms (no serial twin; codes checked in tests)\n",
                    "rtn_quantize", tp * 1e3);
    }
    {
        Matrix big = gaussian(64, n * 64, 4);
        ActivationStats ss, sp;
        double ts = time_best_of(3, [&] { ss = capture_stats_serial(big, 3.0); });
        double tp = time_best_of(3, [&] { sp = capture_stats(big, 3.0); });
        bool close = ss.histogram.counts == sp.histogram.counts &&
                     ss.outlier_count == sp.outlier_count;
        report("capture_stats", ts, tp, close);
    }
    {
        // Full gptq solve; rows are swept in parallel.
        Matrix w = gaussian(n, 256, 5);
        Matrix a = gaussian(256, 512, 6);
        SolverConfig cfg;
        cfg.quant = QuantConfig{4, 128, Scheme::asymmetric};
        HessianState hess = compute_hessian(a, cfg.percdamp);
        SolveResult r;
        double tp = time_best_of(3, [&] { r = gptq_quantize(w, hess, cfg); });
        std::printf("%-24s parallel %8.2f ms (objective %.6g)\n", "gptq_quantize", tp * 1e3,
                    r.objective);
    }
    return 0;
}
