#include "ptqlab/quant.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "ptqlab/kernels.hpp"

static_assert(std::endian::native == std::endian::little,
              "container formats assume a little-endian host");

namespace ptqlab {

std::string to_string(Scheme s) {
    return s == Scheme::symmetric ? "symmetric" : "asymmetric";
}

Scheme scheme_from_string(const std::string& s) {
    if (s == "symmetric") return Scheme::symmetric;
    if (s == "asymmetric") return Scheme::asymmetric;
    throw ParseError("unknown scheme: " + s);
}

void QuantConfig::validate() const {
    if (bits < 2 || bits > 8)
        throw InvalidGroupSize("bits must be in [2, 8], got " + std::to_string(bits));
    if (group_size < 0)
        throw InvalidGroupSize("group_size must be positive or per-tensor");
}

namespace {

// Effective run length of one group along the grouped axis.
std::size_t effective_group(const QuantConfig& cfg, std::size_t axis_len) {
    if (cfg.group_size == QuantConfig::kPerTensor) return axis_len;
    return static_cast<std::size_t>(cfg.group_size);
}

void check_group_divides(const QuantConfig& cfg, std::size_t axis_len) {
    if (cfg.group_size == QuantConfig::kPerTensor) return;
    std::size_t g = static_cast<std::size_t>(cfg.group_size);
    if (g == 0 || axis_len % g != 0)
        throw InvalidGroupSize("group_size " + std::to_string(cfg.group_size) +
                               " does not divide axis length " + std::to_string(axis_len));
}

GroupParams params_from_range(double lo, double hi, double absmax, const QuantConfig& cfg) {
    GroupParams p;
    if (cfg.scheme == Scheme::symmetric) {
        if (absmax == 0.0) return p; // degenerate group: scale 1, zp 0
        p.scale = absmax / cfg.qmax();
        p.zero_point = 0;
    } else {
        // The range always includes zero so the zero-point stays in the
        // code range and re-quantizing a dequantized group is stable.
        lo = std::min(lo, 0.0);
        hi = std::max(hi, 0.0);
        if (hi == lo) {
            p.scale = 1.0; // all-zero group
        } else {
            p.scale = (hi - lo) / ((1 << cfg.bits) - 1);
        }
        double zp = kernels::round_half_even(-lo / p.scale);
        zp = std::clamp(zp, 0.0, static_cast<double>((1 << cfg.bits) - 1));
        p.zero_point = static_cast<std::int32_t>(zp);
    }
    return p;
}

GroupParams params_over(const Matrix& t, std::size_t r0, std::size_t r1, std::size_t c0,
                        std::size_t c1, const QuantConfig& cfg) {
    double lo = t.at(r0, c0);
    double hi = lo;
    double absmax = std::abs(lo);
    for (std::size_t r = r0; r < r1; ++r)
        for (std::size_t c = c0; c < c1; ++c) {
            double v = t.at(r, c);
            lo = std::min(lo, v);
            hi = std::max(hi, v);
            absmax = std::max(absmax, std::abs(v));
        }
    return params_from_range(lo, hi, absmax, cfg);
}

std::size_t group_count_for(const QuantConfig& cfg, Granularity gran, std::size_t rows,
                            std::size_t cols) {
    switch (gran) {
        case Granularity::per_tensor: return 1;
        case Granularity::per_column: return cols;
        case Granularity::weight_groups: return rows * (cols / effective_group(cfg, cols));
    }
    return 1;
}

} // namespace

std::size_t QuantizedTensor::group_count() const {
    return group_count_for(config, granularity, rows, cols);
}

std::size_t QuantizedTensor::group_of(std::size_t r, std::size_t c) const {
    switch (granularity) {
        case Granularity::per_tensor: return 0;
        case Granularity::per_column: return c;
        case Granularity::weight_groups: {
            std::size_t g = effective_group(config, cols);
            return r * (cols / g) + c / g;
        }
    }
    return 0;
}

bool QuantizedTensor::operator==(const QuantizedTensor& o) const {
    return rows == o.rows && cols == o.cols && codes == o.codes && scales == o.scales &&
           zero_points == o.zero_points && config.bits == o.config.bits &&
           config.group_size == o.config.group_size && config.scheme == o.config.scheme &&
           granularity == o.granularity;
}

std::vector<GroupParams> compute_params(const Matrix& tensor, const QuantConfig& config,
                                        Granularity granularity) {
    config.validate();
    tensor.require_finite("compute_params input");
    if (tensor.empty()) throw DimensionMismatch("compute_params: empty tensor");

    const std::size_t rows = tensor.rows();
    const std::size_t cols = tensor.cols();
    std::vector<GroupParams> out(group_count_for(config, granularity, rows, cols));

    switch (granularity) {
        case Granularity::per_tensor:
            out[0] = params_over(tensor, 0, rows, 0, cols, config);
            break;
        case Granularity::per_column: {
            const std::int64_t n = static_cast<std::int64_t>(cols);
#pragma omp parallel for schedule(static)
            for (std::int64_t c = 0; c < n; ++c)
                out[static_cast<std::size_t>(c)] =
                    params_over(tensor, 0, rows, static_cast<std::size_t>(c),
                                static_cast<std::size_t>(c) + 1, config);
            break;
        }
        case Granularity::weight_groups: {
            check_group_divides(config, cols);
            const std::size_t g = effective_group(config, cols);
            const std::size_t per_row = cols / g;
            const std::int64_t total = static_cast<std::int64_t>(rows * per_row);
#pragma omp parallel for schedule(static)
            for (std::int64_t i = 0; i < total; ++i) {
                std::size_t r = static_cast<std::size_t>(i) / per_row;
                std::size_t b = static_cast<std::size_t>(i) % per_row;
                out[static_cast<std::size_t>(i)] =
                    params_over(tensor, r, r + 1, b * g, (b + 1) * g, config);
            }
            break;
        }
    }
    return out;
}

namespace {

QuantizedTensor quantize_with_params(const Matrix& t, const QuantConfig& cfg, Granularity gran,
                                     std::vector<GroupParams> params) {
    QuantizedTensor q;
    q.rows = t.rows();
    q.cols = t.cols();
    q.config = cfg;
    q.granularity = gran;
    q.codes.resize(t.size());
    q.scales.resize(params.size());
    q.zero_points.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
        q.scales[i] = params[i].scale;
        q.zero_points[i] = params[i].zero_point;
    }

    const double lo = cfg.qmin();
    const double hi = cfg.qmax();
    const std::int64_t total = static_cast<std::int64_t>(t.size());
    const std::size_t cols = t.cols();
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < total; ++i) {
        std::size_t r = static_cast<std::size_t>(i) / cols;
        std::size_t c = static_cast<std::size_t>(i) % cols;
        std::size_t g = q.group_of(r, c);
        double code = kernels::round_half_even(t.at(r, c) / q.scales[g]) + q.zero_points[g];
        code = std::clamp(code, lo, hi);
        q.codes[static_cast<std::size_t>(i)] = static_cast<std::int32_t>(code);
    }
    return q;
}

} // namespace

QuantizedTensor rtn_quantize(const WeightMatrix& w, const QuantConfig& config) {
    w.require_finite("rtn_quantize input");
    Granularity gran = config.group_size == QuantConfig::kPerTensor ? Granularity::per_tensor
                                                                    : Granularity::weight_groups;
    return quantize_with_params(w, config, gran, compute_params(w, config, gran));
}

Matrix dequantize(const QuantizedTensor& q) {
    Matrix out(q.rows, q.cols);
    const std::int64_t total = static_cast<std::int64_t>(q.codes.size());
    const std::size_t cols = q.cols;
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < total; ++i) {
        std::size_t r = static_cast<std::size_t>(i) / cols;
        std::size_t c = static_cast<std::size_t>(i) % cols;
        out.at(r, c) = q.dequant_at(r, c);
    }
    return out;
}

std::pair<QuantizedTensor, double> quantize_activations(const ActivationBatch& a,
                                                        const QuantConfig& config,
                                                        Granularity granularity) {
    a.require_finite("quantize_activations input");
    if (granularity == Granularity::weight_groups)
        throw InvalidGroupSize("activation quantization is per-tensor or per-column");
    QuantizedTensor q =
        quantize_with_params(a, config, granularity, compute_params(a, config, granularity));

    // MSE via per-column partials folded in column order (thread-count
    // independent).
    std::vector<double> partial(a.cols(), 0.0);
    const std::int64_t n = static_cast<std::int64_t>(a.cols());
#pragma omp parallel for schedule(static)
    for (std::int64_t c = 0; c < n; ++c) {
        double acc = 0.0;
        for (std::size_t r = 0; r < a.rows(); ++r) {
            double d = q.dequant_at(r, static_cast<std::size_t>(c)) -
                       a.at(r, static_cast<std::size_t>(c));
            acc += d * d;
        }
        partial[static_cast<std::size_t>(c)] = acc;
    }
    double total = 0.0;
    for (double p : partial) total += p;
    return {std::move(q), total / static_cast<double>(a.size())};
}

// --- container ---

namespace {

template <typename T>
void append_raw(std::vector<std::uint8_t>& out, const std::vector<T>& v) {
    std::size_t at = out.size();
    out.resize(at + v.size() * sizeof(T));
    std::memcpy(out.data() + at, v.data(), v.size() * sizeof(T));
}

template <typename T>
std::vector<T> read_raw(const std::vector<std::uint8_t>& in, std::size_t& off, std::size_t n) {
    if (off + n * sizeof(T) > in.size())
        throw ParseError("quantized tensor container truncated");
    std::vector<T> v(n);
    std::memcpy(v.data(), in.data() + off, n * sizeof(T));
    off += n * sizeof(T);
    return v;
}

std::string granularity_key(Granularity g) {
    switch (g) {
        case Granularity::weight_groups: return "weight_groups";
        case Granularity::per_tensor: return "per_tensor";
        case Granularity::per_column: return "per_column";
    }
    return "weight_groups";
}

} // namespace

std::vector<std::uint8_t> serialize_quantized_tensor(const QuantizedTensor& q) {
    std::ostringstream manifest;
    manifest << "version=1\n";
    manifest << "bits=" << q.config.bits << "\n";
    if (q.config.group_size == QuantConfig::kPerTensor)
        manifest << "group_size=per-tensor\n";
    else
        manifest << "group_size=" << q.config.group_size << "\n";
    manifest << "scheme=" << to_string(q.config.scheme) << "\n";
    manifest << "rows=" << q.rows << "\n";
    manifest << "cols=" << q.cols << "\n";
    if (q.granularity != Granularity::weight_groups)
        manifest << "granularity=" << granularity_key(q.granularity) << "\n";
    manifest << "\n";

    std::string head = manifest.str();
    std::vector<std::uint8_t> out(head.begin(), head.end());
    append_raw(out, q.codes);
    append_raw(out, q.scales);
    append_raw(out, q.zero_points);
    return out;
}

QuantizedTensor parse_quantized_tensor(const std::vector<std::uint8_t>& bytes) {
    // Manifest runs up to the first blank line.
    std::size_t off = 0;
    QuantizedTensor q;
    bool saw_version = false;
    while (true) {
        std::size_t eol = off;
        while (eol < bytes.size() && bytes[eol] != '\n') ++eol;
        if (eol >= bytes.size()) throw ParseError("quantized tensor manifest unterminated");
        std::string line(bytes.begin() + static_cast<std::ptrdiff_t>(off),
                         bytes.begin() + static_cast<std::ptrdiff_t>(eol));
        off = eol + 1;
        if (line.empty()) break;
        std::size_t eq = line.find('=');
        if (eq == std::string::npos) throw ParseError("bad manifest line: " + line);
        std::string key = line.substr(0, eq);
        std::string val = line.substr(eq + 1);
        if (key == "version") {
            if (val != "1") throw ParseError("unsupported container version: " + val);
            saw_version = true;
        } else if (key == "bits") {
            q.config.bits = std::stoi(val);
        } else if (key == "group_size") {
            q.config.group_size =
                val == "per-tensor" ? QuantConfig::kPerTensor : std::stoi(val);
        } else if (key == "scheme") {
            q.config.scheme = scheme_from_string(val);
        } else if (key == "rows") {
            q.rows = static_cast<std::size_t>(std::stoull(val));
        } else if (key == "cols") {
            q.cols = static_cast<std::size_t>(std::stoull(val));
        } else if (key == "granularity") {
            if (val == "per_tensor") q.granularity = Granularity::per_tensor;
            else if (val == "per_column") q.granularity = Granularity::per_column;
            else if (val == "weight_groups") q.granularity = Granularity::weight_groups;
            else throw ParseError("unknown granularity: " + val);
        } else {
            throw ParseError("unknown manifest key: " + key);
        }
    }
    if (!saw_version) throw ParseError("container manifest missing version");
    if (q.granularity == Granularity::weight_groups &&
        q.config.group_size == QuantConfig::kPerTensor)
        q.granularity = Granularity::per_tensor;

    std::size_t groups = q.group_count();
    q.codes = read_raw<std::int32_t>(bytes, off, q.rows * q.cols);
    q.scales = read_raw<double>(bytes, off, groups);
    q.zero_points = read_raw<std::int32_t>(bytes, off, groups);
    if (off != bytes.size()) throw ParseError("trailing bytes in quantized tensor container");
    return q;
}

void save_quantized_tensor(const std::string& path, const QuantizedTensor& q) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open for write: " + path);
    auto bytes = serialize_quantized_tensor(q);
    f.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
    if (!f) throw IoError("write failed: " + path);
}

QuantizedTensor load_quantized_tensor(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open: " + path);
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                                    std::istreambuf_iterator<char>());
    return parse_quantized_tensor(bytes);
}

} // namespace ptqlab
