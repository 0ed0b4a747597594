#include "ptqlab/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "ptqlab/kernels.hpp"
#include "ptqlab/rng.hpp"

namespace ptqlab {

std::string to_string(Nonlinearity n) {
    switch (n) {
        case Nonlinearity::none: return "none";
        case Nonlinearity::relu: return "relu";
        case Nonlinearity::gelu: return "gelu";
    }
    return "none";
}

Nonlinearity nonlinearity_from_string(const std::string& s) {
    if (s == "none") return Nonlinearity::none;
    if (s == "relu") return Nonlinearity::relu;
    if (s == "gelu") return Nonlinearity::gelu;
    throw ParseError("unknown nonlinearity: " + s);
}

std::string to_string(CalibrationMode m) {
    switch (m) {
        case CalibrationMode::eq1_symmetric: return "eq1";
        case CalibrationMode::eq2_asymmetric: return "eq2";
        case CalibrationMode::eq3_faq: return "eq3";
        case CalibrationMode::eq4_faq_asymmetric: return "eq4";
    }
    return "eq1";
}

CalibrationMode calibration_mode_from_string(const std::string& s) {
    if (s == "eq1") return CalibrationMode::eq1_symmetric;
    if (s == "eq2") return CalibrationMode::eq2_asymmetric;
    if (s == "eq3") return CalibrationMode::eq3_faq;
    if (s == "eq4") return CalibrationMode::eq4_faq_asymmetric;
    throw ParseError("unknown calibration mode: " + s);
}

void LayerSpec::validate() const {
    if (weight.rows() != d_out || weight.cols() != d_in)
        throw DimensionMismatch("layer " + name + ": weight shape does not match (d_out, d_in)");
    if (residual && d_in != d_out)
        throw DimensionMismatch("layer " + name + ": residual requires d_in == d_out");
    if (bias && bias->size() != d_out)
        throw DimensionMismatch("layer " + name + ": bias length does not match d_out");
    weight.require_finite("layer " + name + " weight");
}

void ModelSpec::validate() const {
    for (std::size_t i = 0; i < layers.size(); ++i) {
        layers[i].validate();
        if (i + 1 < layers.size() && layers[i + 1].d_in != layers[i].d_out)
            throw DimensionMismatch("layer dimensions do not chain at index " +
                                    std::to_string(i));
    }
}

double gelu_exact(double x) {
    return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0)));
}

namespace {

// One layer on one input batch: nonlin(W x + b) (+ x when residual).
ActivationBatch apply_layer(const LayerSpec& layer, const Matrix& weight,
                            const ActivationBatch& x) {
    if (x.rows() != layer.d_in)
        throw DimensionMismatch("layer " + layer.name + ": input features " +
                                std::to_string(x.rows()) + " != d_in " +
                                std::to_string(layer.d_in));
    Matrix y = kernels::matmul(weight, x);
    const std::int64_t total = static_cast<std::int64_t>(y.size());
    const std::size_t cols = y.cols();
    const double* bias = layer.bias ? layer.bias->data() : nullptr;
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < total; ++i) {
        std::size_t r = static_cast<std::size_t>(i) / cols;
        std::size_t c = static_cast<std::size_t>(i) % cols;
        double v = y.at(r, c);
        if (bias) v += bias[r];
        switch (layer.nonlinearity) {
            case Nonlinearity::none: break;
            case Nonlinearity::relu: v = v > 0.0 ? v : 0.0; break;
            case Nonlinearity::gelu: v = gelu_exact(v); break;
        }
        if (layer.residual) v += x.at(r, c);
        y.at(r, c) = v;
    }
    return y;
}

} // namespace

std::vector<ActivationBatch> forward(const ModelSpec& model, const ActivationBatch& a0) {
    model.validate();
    a0.require_finite("forward input");
    std::vector<ActivationBatch> out;
    out.reserve(model.layers.size());
    const ActivationBatch* cur = &a0;
    for (std::size_t k = 0; k < model.layers.size(); ++k) {
        ActivationBatch next = apply_layer(model.layers[k], model.layers[k].weight, *cur);
        if (!next.all_finite())
            throw NonFiniteError("non-finite activations after layer " + std::to_string(k));
        out.push_back(std::move(next));
        cur = &out.back();
    }
    return out;
}

std::vector<PropagationState> propagate_dual(const ModelSpec& model, const ActivationBatch& a0,
                                             const LayerQuantizer& quantizer) {
    model.validate();
    a0.require_finite("propagate_dual input");
    std::vector<PropagationState> states;
    states.reserve(model.layers.size() + 1);
    states.push_back({0, a0, a0});
    for (std::size_t n = 0; n < model.layers.size(); ++n) {
        const LayerSpec& layer = model.layers[n];
        std::optional<QuantizedTensor> q = quantizer(n, layer);
        ActivationBatch aq =
            q ? apply_layer(layer, dequantize(*q), states.back().a_quant)
              : apply_layer(layer, layer.weight, states.back().a_quant);
        ActivationBatch af = apply_layer(layer, layer.weight, states.back().a_full);
        states.push_back({n + 1, std::move(aq), std::move(af)});
    }
    return states;
}

CalibratedModel calibrate_model(const ModelSpec& model, const ActivationBatch& calib,
                                const SolverConfig& cfg, CalibrationMode mode,
                                SolveMethod method) {
    model.validate();
    cfg.validate();
    calib.require_finite("calibration batch");
    if (!model.layers.empty() && calib.rows() != model.layers.front().d_in)
        throw DimensionMismatch("calibration features do not match model input");

    const bool asymmetric =
        mode == CalibrationMode::eq2_asymmetric || mode == CalibrationMode::eq4_faq_asymmetric;
    if (method == SolveMethod::gptq && asymmetric)
        throw InvalidGroupSize("gptq solves the symmetric objective; use gptaq for eq2/eq4");
    if (method == SolveMethod::gptaq && !asymmetric)
        throw InvalidGroupSize("gptaq solves the asymmetric objective; use gptq for eq1/eq3");

    ReferenceSide side = ReferenceSide::same_a;
    if (mode == CalibrationMode::eq2_asymmetric) side = ReferenceSide::full_precision;
    if (mode == CalibrationMode::eq4_faq_asymmetric) side = ReferenceSide::faq_full;

    std::string label;
    switch (method) {
        case SolveMethod::rtn: label = "rtn"; break;
        case SolveMethod::gptq: label = "gptq-" + to_string(mode); break;
        case SolveMethod::gptaq: label = "gptaq-" + to_string(mode); break;
    }

    CalibratedModel out;
    out.model = model;
    ActivationBatch a_quant = calib; // quantized-path activations A_n
    ActivationBatch a_full = calib;  // full-precision path

    for (std::size_t n = 0; n < model.layers.size(); ++n) {
        const LayerSpec& layer = model.layers[n];
        SolveResult solved;
        switch (method) {
            case SolveMethod::rtn: {
                solved.q = rtn_quantize(layer.weight, cfg.quant);
                solved.objective = layer_objective(layer.weight, solved.q, a_quant,
                                                   asymmetric ? a_full : a_quant);
                break;
            }
            case SolveMethod::gptq: {
                HessianState hess = compute_hessian(a_quant, cfg.percdamp);
                solved = gptq_quantize(layer.weight, hess, cfg);
                break;
            }
            case SolveMethod::gptaq: {
                solved = gptaq_quantize(layer.weight, a_quant, a_full, cfg);
                break;
            }
        }
        out.reports.push_back(
            {static_cast<int>(n), label, side, solved.objective});
        out.model.layers[n].weight = dequantize(solved.q);
        out.layers.push_back(std::move(solved.q));

        a_quant = apply_layer(layer, out.model.layers[n].weight, a_quant);
        a_full = apply_layer(layer, layer.weight, a_full);
    }
    return out;
}

GapReport end_to_end_gap(const ModelSpec& model, const ModelSpec& quantized,
                         const ActivationBatch& data) {
    model.validate();
    quantized.validate();
    if (model.layers.size() != quantized.layers.size())
        throw DimensionMismatch("models differ in layer count");

    GapReport rep;
    ActivationBatch aq = data;
    ActivationBatch af = data;
    for (std::size_t n = 0; n < model.layers.size(); ++n) {
        aq = apply_layer(quantized.layers[n], quantized.layers[n].weight, aq);
        af = apply_layer(model.layers[n], model.layers[n].weight, af);
        rep.per_layer.push_back(std::sqrt(kernels::sumsq_diff(aq, af)));
    }
    rep.final_mse = aq.empty() ? 0.0
                               : kernels::sumsq_diff(aq, af) / static_cast<double>(aq.size());
    return rep;
}

// --- FTM v1 ---

std::string serialize_model_manifest(const ModelSpec& model) {
    std::ostringstream os;
    os << "ftm v" << model.version << "\n";
    os << "layers " << model.layers.size() << "\n";
    for (const auto& l : model.layers) {
        os << "layer name=" << l.name << " d_in=" << l.d_in << " d_out=" << l.d_out
           << " nonlinearity=" << to_string(l.nonlinearity) << " residual=" << (l.residual ? 1 : 0)
           << " has_bias=" << (l.bias ? 1 : 0) << "\n";
    }
    return os.str();
}

std::vector<std::uint8_t> serialize_model_tensors(const ModelSpec& model) {
    std::vector<std::uint8_t> out;
    auto push = [&out](const double* p, std::size_t n) {
        std::size_t at = out.size();
        out.resize(at + n * sizeof(double));
        std::memcpy(out.data() + at, p, n * sizeof(double));
    };
    for (const auto& l : model.layers) {
        push(l.weight.data(), l.weight.size());
        if (l.bias) push(l.bias->data(), l.bias->size());
    }
    return out;
}

void save_model(const std::string& path, const ModelSpec& model) {
    model.validate();
    std::ofstream mf(path, std::ios::binary);
    if (!mf) throw IoError("cannot open for write: " + path);
    mf << serialize_model_manifest(model);
    if (!mf) throw IoError("write failed: " + path);
    mf.close();

    std::ofstream bf(path + ".bin", std::ios::binary);
    if (!bf) throw IoError("cannot open for write: " + path + ".bin");
    auto bytes = serialize_model_tensors(model);
    bf.write(reinterpret_cast<const char*>(bytes.data()),
             static_cast<std::streamsize>(bytes.size()));
    if (!bf) throw IoError("write failed: " + path + ".bin");
}

namespace {

std::string take_field(std::istringstream& is, const std::string& key, const std::string& line) {
    std::string tok;
    if (!(is >> tok) || tok.rfind(key + "=", 0) != 0)
        throw ParseError("ftm manifest: expected " + key + "= in line: " + line);
    return tok.substr(key.size() + 1);
}

} // namespace

ModelSpec load_model(const std::string& path) {
    std::ifstream mf(path);
    if (!mf) throw IoError("cannot open: " + path);

    ModelSpec model;
    std::string line;
    if (!std::getline(mf, line) || line.rfind("ftm v", 0) != 0)
        throw ParseError("not an ftm manifest: " + path);
    model.version = std::stoi(line.substr(5));
    if (model.version != 1) throw ParseError("unsupported ftm version");

    if (!std::getline(mf, line) || line.rfind("layers ", 0) != 0)
        throw ParseError("ftm manifest missing layer count");
    std::size_t count = static_cast<std::size_t>(std::stoull(line.substr(7)));

    for (std::size_t i = 0; i < count; ++i) {
        if (!std::getline(mf, line))
            throw ParseError("ftm manifest truncated at layer " + std::to_string(i));
        std::istringstream is(line);
        std::string head;
        is >> head;
        if (head != "layer") throw ParseError("bad layer record: " + line);
        LayerSpec l;
        l.name = take_field(is, "name", line);
        l.d_in = static_cast<std::size_t>(std::stoull(take_field(is, "d_in", line)));
        l.d_out = static_cast<std::size_t>(std::stoull(take_field(is, "d_out", line)));
        l.nonlinearity = nonlinearity_from_string(take_field(is, "nonlinearity", line));
        l.residual = take_field(is, "residual", line) == "1";
        bool has_bias = take_field(is, "has_bias", line) == "1";
        if (has_bias) l.bias = std::vector<double>(l.d_out, 0.0);
        model.layers.push_back(std::move(l));
    }

    std::ifstream bf(path + ".bin", std::ios::binary);
    if (!bf) throw IoError("cannot open: " + path + ".bin");
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(bf)),
                                    std::istreambuf_iterator<char>());
    std::size_t off = 0;
    auto pull = [&](double* dst, std::size_t n) {
        if (off + n * sizeof(double) > bytes.size())
            throw ParseError("ftm tensor file truncated: " + path + ".bin");
        std::memcpy(dst, bytes.data() + off, n * sizeof(double));
        off += n * sizeof(double);
    };
    for (auto& l : model.layers) {
        l.weight = Matrix(l.d_out, l.d_in);
        pull(l.weight.data(), l.weight.size());
        if (l.bias) pull(l.bias->data(), l.bias->size());
    }
    if (off != bytes.size()) throw ParseError("trailing bytes in ftm tensor file");
    model.validate();
    return model;
}

ModelSpec generate_model(std::size_t layers, std::size_t dim, std::uint64_t seed,
                         Nonlinearity nonlinearity, bool residual, bool with_bias) {
    if (layers == 0 || dim == 0)
        throw DimensionMismatch("model needs at least one layer and one dimension");
    ModelSpec model;
    double scale = 1.0 / std::sqrt(static_cast<double>(dim));
    for (std::size_t k = 0; k < layers; ++k) {
        CounterRng rng(seed, k);
        LayerSpec l;
        l.name = "fc" + std::to_string(k);
        l.d_in = dim;
        l.d_out = dim;
        l.nonlinearity = nonlinearity;
        l.residual = residual;
        l.weight = Matrix(dim, dim);
        for (std::size_t i = 0; i < dim; ++i)
            for (std::size_t j = 0; j < dim; ++j) l.weight.at(i, j) = rng.next_normal() * scale;
        if (with_bias) {
            std::vector<double> b(dim);
            for (std::size_t i = 0; i < dim; ++i) b[i] = rng.next_normal() * scale;
            l.bias = std::move(b);
        }
        model.layers.push_back(std::move(l));
    }
    return model;
}

// --- activation batch container ---

void save_batch(const std::string& path, const ActivationBatch& a) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open for write: " + path);
    f << "fab v1\n"
      << "rows " << a.rows() << "\n"
      << "cols " << a.cols() << "\n\n";
    f.write(reinterpret_cast<const char*>(a.data()),
            static_cast<std::streamsize>(a.size() * sizeof(double)));
    if (!f) throw IoError("write failed: " + path);
}

ActivationBatch load_batch(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open: " + path);
    std::string line;
    if (!std::getline(f, line) || line != "fab v1") throw ParseError("not a fab file: " + path);
    if (!std::getline(f, line) || line.rfind("rows ", 0) != 0)
        throw ParseError("fab header missing rows");
    std::size_t rows = static_cast<std::size_t>(std::stoull(line.substr(5)));
    if (!std::getline(f, line) || line.rfind("cols ", 0) != 0)
        throw ParseError("fab header missing cols");
    std::size_t cols = static_cast<std::size_t>(std::stoull(line.substr(5)));
    if (!std::getline(f, line) || !line.empty()) throw ParseError("fab header unterminated");

    std::vector<double> data(rows * cols);
    f.read(reinterpret_cast<char*>(data.data()),
           static_cast<std::streamsize>(data.size() * sizeof(double)));
    if (f.gcount() != static_cast<std::streamsize>(data.size() * sizeof(double)))
        throw ParseError("fab data truncated: " + path);
    return Matrix::from_data(rows, cols, std::move(data));
}

} // namespace ptqlab
