#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "ptqlab/matrix.hpp"

namespace ptqlab {

enum class Scheme { symmetric, asymmetric };

std::string to_string(Scheme s);
Scheme scheme_from_string(const std::string& s);

/// Integer grid description. The symmetric grid drops the most-negative
/// code so it is sign-symmetric: [-(2^(b-1)-1), 2^(b-1)-1]. The asymmetric
/// grid is [0, 2^b-1]. group_size == kPerTensor means one group for the
/// whole tensor.
struct QuantConfig {
    static constexpr int kPerTensor = 0;

    int bits = 4;
    int group_size = 128;
    Scheme scheme = Scheme::asymmetric;

    int qmin() const {
        return scheme == Scheme::symmetric ? -((1 << (bits - 1)) - 1) : 0;
    }
    int qmax() const {
        return scheme == Scheme::symmetric ? (1 << (bits - 1)) - 1 : (1 << bits) - 1;
    }

    void validate() const;
};

/// How elements map to (scale, zero_point) groups.
///   weight_groups: contiguous runs of group_size along each row (the
///                  input-feature axis of a weight matrix).
///   per_tensor:    one group.
///   per_column:    one group per sample column (per-token activations).
enum class Granularity { weight_groups, per_tensor, per_column };

struct GroupParams {
    double scale = 1.0;
    std::int32_t zero_point = 0;
};

struct QuantizedTensor {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<std::int32_t> codes; // row-major, same shape as the source
    std::vector<double> scales;      // one per group
    std::vector<std::int32_t> zero_points;
    QuantConfig config;
    Granularity granularity = Granularity::weight_groups;

    std::size_t group_count() const;
    std::size_t group_of(std::size_t r, std::size_t c) const;

    double dequant_at(std::size_t r, std::size_t c) const {
        std::size_t g = group_of(r, c);
        return scales[g] * (codes[r * cols + c] - zero_points[g]);
    }

    bool operator==(const QuantizedTensor& o) const;
};

/// Min/max (asymmetric) or absmax (symmetric) calibration per group.
/// A zero-range group degenerates to scale 1 so division stays defined.
std::vector<GroupParams> compute_params(const Matrix& tensor, const QuantConfig& config,
                                        Granularity granularity);

/// Round-to-nearest (half-even) quantization of a weight matrix, grouped
/// along the input-feature axis.
QuantizedTensor rtn_quantize(const WeightMatrix& w, const QuantConfig& config);

Matrix dequantize(const QuantizedTensor& q);

/// Quantize an activation batch per-tensor or per-column and report the
/// mean squared dequantization error.
std::pair<QuantizedTensor, double> quantize_activations(const ActivationBatch& a,
                                                        const QuantConfig& config,
                                                        Granularity granularity);

/// Container format: text manifest (key=value lines, blank-line
/// terminated) followed by three little-endian sections in order: codes
/// (int32, row-major), scales (float64), zero_points (int32).
void save_quantized_tensor(const std::string& path, const QuantizedTensor& q);
QuantizedTensor load_quantized_tensor(const std::string& path);

std::vector<std::uint8_t> serialize_quantized_tensor(const QuantizedTensor& q);
QuantizedTensor parse_quantized_tensor(const std::vector<std::uint8_t>& bytes);

} // namespace ptqlab
