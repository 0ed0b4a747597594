#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "ptqlab/matrix.hpp"
#include "ptqlab/quant.hpp"
#include "ptqlab/solver.hpp"

namespace ptqlab {

enum class Nonlinearity { none, relu, gelu };

std::string to_string(Nonlinearity n);
Nonlinearity nonlinearity_from_string(const std::string& s);

struct LayerSpec {
    std::string name;
    std::size_t d_in = 0;
    std::size_t d_out = 0;
    WeightMatrix weight; // d_out x d_in
    std::optional<std::vector<double>> bias;
    Nonlinearity nonlinearity = Nonlinearity::none;
    bool residual = false;

    void validate() const;
};

struct ModelSpec {
    int version = 1;
    std::vector<LayerSpec> layers;

    void validate() const;
};

/// GELU with the exact Gaussian-CDF form, x * Phi(x).
double gelu_exact(double x);

/// Full-precision forward pass; returns the post-layer activations in
/// order (element k is the output of layer k).
std::vector<ActivationBatch> forward(const ModelSpec& model, const ActivationBatch& a0);

/// The paired activation trajectories: a_quant follows the quantized
/// weights, a_full the original ones, from the shared anchor a0.
struct PropagationState {
    std::size_t layer_index = 0;
    ActivationBatch a_quant;
    ActivationBatch a_full;
};

/// Per-layer quantization strategy; returning nullopt means passthrough
/// (the layer keeps its full-precision weight).
using LayerQuantizer =
    std::function<std::optional<QuantizedTensor>(std::size_t, const LayerSpec&)>;

/// Dual recursion a_quant[n+1] = layer_n(dequant(Q(W_n)), a_quant[n]),
/// a_full[n+1] = layer_n(W_n, a_full[n]); nonlinearity and residual apply
/// identically on both paths. state[0] holds a0 twice.
std::vector<PropagationState> propagate_dual(const ModelSpec& model, const ActivationBatch& a0,
                                             const LayerQuantizer& quantizer);

enum class CalibrationMode { eq1_symmetric, eq2_asymmetric, eq3_faq, eq4_faq_asymmetric };
enum class SolveMethod { rtn, gptq, gptaq };

std::string to_string(CalibrationMode m);
CalibrationMode calibration_mode_from_string(const std::string& s);

struct CalibratedModel {
    ModelSpec model; // weights replaced by their dequantized counterparts
    std::vector<QuantizedTensor> layers;
    std::vector<ObjectiveReport> reports;
};

/// Quantize layers in order. The hessian for layer n is built from the
/// quantized-path activations of the calibration batch; eq2/eq4 measure
/// against the full-precision path, eq1/eq3 against the same batch.
CalibratedModel calibrate_model(const ModelSpec& model, const ActivationBatch& calib,
                                const SolverConfig& cfg, CalibrationMode mode,
                                SolveMethod method = SolveMethod::gptq);

struct GapReport {
    std::vector<double> per_layer; // ||A_n - Ahat_n||_F after each layer
    double final_mse = 0.0;
};

GapReport end_to_end_gap(const ModelSpec& model, const ModelSpec& quantized,
                         const ActivationBatch& data);

/// FTM v1 model files: a text manifest at `path` and a companion binary
/// at `path + ".bin"` holding little-endian float64 tensors in manifest
/// order (weight row-major, then bias when present).
void save_model(const std::string& path, const ModelSpec& model);
ModelSpec load_model(const std::string& path);
std::string serialize_model_manifest(const ModelSpec& model);
std::vector<std::uint8_t> serialize_model_tensors(const ModelSpec& model);

/// Seeded random model: Gaussian weights scaled by 1/sqrt(d_in).
ModelSpec generate_model(std::size_t layers, std::size_t dim, std::uint64_t seed,
                         Nonlinearity nonlinearity, bool residual, bool with_bias);

/// Activation batch container: text header (fab v1, rows, cols), blank
/// line, then float64 little-endian row-major data.
void save_batch(const std::string& path, const ActivationBatch& a);
ActivationBatch load_batch(const std::string& path);

} // namespace ptqlab
