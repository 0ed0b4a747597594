// ptqlab: quantization laboratory for small layered models plus the
// calibration-data regeneration pipeline. See README.md for the exit-code
// contract and file formats.

#include <chrono>
#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "ptqlab/model.hpp"
#include "ptqlab/pipeline.hpp"
#include "ptqlab/quant.hpp"
#include "ptqlab/rng.hpp"
#include "ptqlab/solver.hpp"
#include "ptqlab/stats.hpp"

namespace {

using namespace ptqlab;
using ordered_json = nlohmann::ordered_json;

// Exit codes, also documented in --help and README.md.
constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitIo = 3;
constexpr int kExitFormat = 4;
constexpr int kExitDimension = 5;
constexpr int kExitNumeric = 6;
constexpr int kExitEndpoint = 7;

constexpr const char* kExitDoc =
    "Exit codes: 0 success, 2 flag/usage error, 3 I/O error, 4 file-format error,\n"
    "5 dimension/config error, 6 numerical failure, 7 endpoint error.";

std::string read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open: " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

void write_file(const std::string& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open for write: " + path);
    f << text;
    if (!f) throw IoError("write failed: " + path);
}

std::string file_digest(const std::string& path) { return content_digest(read_file(path)); }

// Every command drops a <prefix>.manifest.json echoing its configuration
// and the digests of everything it read and wrote.
struct ManifestBuilder {
    ordered_json j;
    std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();

    explicit ManifestBuilder(const std::string& command) {
        j["command"] = command;
        j["inputs"] = ordered_json::object();
        j["outputs"] = ordered_json::object();
        j["config"] = ordered_json::object();
    }
    void input(const std::string& path) { j["inputs"][path] = file_digest(path); }
    void output(const std::string& path) { j["outputs"][path] = file_digest(path); }
    template <typename T>
    void config(const std::string& key, const T& v) {
        j["config"][key] = v;
    }
    void save(const std::string& path) {
        j["wall_clock_ms"] =
            std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
                .count();
        write_file(path, j.dump(2) + "\n");
    }
};

int group_size_flag_to_config(const std::string& s) {
    if (s == "per-tensor") return QuantConfig::kPerTensor;
    return std::stoi(s);
}

ClientConfig client_config_from_flags(const std::string& base_url, const std::string& model,
                                      const std::string& api_key, int n, double temperature,
                                      double top_p, int top_k, int max_tokens, int max_retries,
                                      int max_in_flight, int timeout_s) {
    ClientConfig c;
    c.base_url = base_url;
    if (c.base_url.empty())
        if (const char* env = std::getenv("PTQLAB_BASE_URL")) c.base_url = env;
    c.model = model;
    c.api_key = api_key;
    if (c.api_key.empty())
        if (const char* env = std::getenv("PTQLAB_API_KEY")) c.api_key = env;
    c.n_candidates = n;
    c.temperature = temperature;
    c.top_p = top_p;
    c.top_k = top_k;
    c.max_tokens = max_tokens;
    c.max_retries = max_retries;
    c.max_in_flight = max_in_flight;
    c.request_timeout_s = timeout_s;
    return c;
}

PromptTemplate template_from_file_or(const std::string& path, const PromptTemplate& fallback) {
    if (path.empty()) return fallback;
    return PromptTemplate(read_file(path), path);
}

// --- subcommand bodies ---

int cmd_genmodel(const std::string& out, std::size_t layers, std::size_t dim,
                 std::uint64_t seed, const std::string& nonlin, bool residual, bool bias) {
    ModelSpec model =
        generate_model(layers, dim, seed, nonlinearity_from_string(nonlin), residual, bias);
    save_model(out, model);
    ManifestBuilder mb("genmodel");
    mb.config("layers", layers);
    mb.config("dim", dim);
    mb.config("seed", seed);
    mb.config("nonlinearity", nonlin);
    mb.config("residual", residual);
    mb.config("bias", bias);
    mb.output(out);
    mb.output(out + ".bin");
    mb.save(out + ".manifest.json");
    std::cout << "wrote " << out << " (" << layers << " layers, dim " << dim << ")\n";
    return kExitOk;
}

int cmd_gendata(const std::string& out, std::size_t rows, std::size_t cols,
                const std::string& dist, std::uint64_t seed) {
    CounterRng rng(seed);
    Matrix a(rows, cols);
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (dist == "gaussian")
            a.data()[i] = rng.next_normal();
        else if (dist == "student-t3")
            a.data()[i] = rng.next_student_t3_unit();
        else if (dist == "laplace")
            a.data()[i] = rng.next_laplace_unit();
        else
            throw ParseError("unknown distribution: " + dist);
    }
    save_batch(out, a);
    ManifestBuilder mb("gendata");
    mb.config("rows", rows);
    mb.config("cols", cols);
    mb.config("dist", dist);
    mb.config("seed", seed);
    mb.output(out);
    mb.save(out + ".manifest.json");
    std::cout << "wrote " << out << " (" << rows << "x" << cols << " " << dist << ")\n";
    return kExitOk;
}

int cmd_quantize(const std::string& model_path, const std::string& calib_path,
                 const std::string& out, const std::string& method_s, const std::string& mode_s,
                 int bits, const std::string& group_size_s, const std::string& scheme_s,
                 double percdamp, int block_size) {
    ModelSpec model = load_model(model_path);
    ActivationBatch calib = load_batch(calib_path);

    SolverConfig cfg;
    cfg.quant.bits = bits;
    cfg.quant.group_size = group_size_flag_to_config(group_size_s);
    cfg.quant.scheme = scheme_from_string(scheme_s);
    cfg.percdamp = percdamp;
    cfg.block_size = block_size;

    SolveMethod method;
    CalibrationMode mode = calibration_mode_from_string(mode_s);
    bool mode_asym = mode == CalibrationMode::eq2_asymmetric ||
                     mode == CalibrationMode::eq4_faq_asymmetric;
    if (method_s == "rtn") {
        method = SolveMethod::rtn;
    } else if (method_s == "gptq") {
        if (mode_asym)
            throw InvalidGroupSize("--method gptq pairs with --mode eq1 or eq3");
        method = SolveMethod::gptq;
    } else if (method_s == "gptaq") {
        if (!mode_asym)
            throw InvalidGroupSize("--method gptaq pairs with --mode eq2 or eq4");
        method = SolveMethod::gptaq;
    } else {
        throw ParseError("unknown method: " + method_s);
    }

    CalibratedModel result = calibrate_model(model, calib, cfg, mode, method);

    save_model(out + ".ftm", result.model);
    for (std::size_t n = 0; n < result.layers.size(); ++n)
        save_quantized_tensor(out + ".layer" + std::to_string(n) + ".qt", result.layers[n]);
    save_reports(out + ".objectives.txt", result.reports);

    double total = 0.0;
    for (const auto& r : result.reports) total += r.value;

    ManifestBuilder mb("quantize");
    mb.config("method", method_s);
    mb.config("mode", mode_s);
    mb.config("bits", bits);
    mb.config("group_size", group_size_s);
    mb.config("scheme", scheme_s);
    mb.config("percdamp", percdamp);
    mb.config("block_size", block_size);
    mb.config("total_objective", total);
    mb.input(model_path);
    mb.input(calib_path);
    mb.output(out + ".ftm");
    mb.output(out + ".ftm.bin");
    for (std::size_t n = 0; n < result.layers.size(); ++n)
        mb.output(out + ".layer" + std::to_string(n) + ".qt");
    mb.output(out + ".objectives.txt");
    mb.save(out + ".manifest.json");

    std::cout << "quantized " << result.layers.size() << " layers, total objective " << total
              << "\n";
    return kExitOk;
}

int cmd_stats(const std::string& model_path, const std::string& data_path,
              const std::string& out, double k) {
    ActivationBatch data = load_batch(data_path);
    std::vector<ActivationStats> stats;
    // Tap 0 is the raw batch; tap n+1 is the output of layer n.
    stats.push_back(capture_stats(data, k, 0));
    if (!model_path.empty()) {
        ModelSpec model = load_model(model_path);
        auto acts = forward(model, data);
        for (std::size_t n = 0; n < acts.size(); ++n)
            stats.push_back(capture_stats(acts[n], k, n + 1));
    }
    save_stats(out + ".stats.jsonl", stats);
    for (const auto& s : stats)
        export_histogram(s, out + ".layer" + std::to_string(s.layer) + ".hist.csv");

    ManifestBuilder mb("stats");
    mb.config("k", k);
    if (!model_path.empty()) mb.input(model_path);
    mb.input(data_path);
    mb.output(out + ".stats.jsonl");
    for (const auto& s : stats)
        mb.output(out + ".layer" + std::to_string(s.layer) + ".hist.csv");
    mb.save(out + ".manifest.json");
    std::cout << "captured stats for " << stats.size() << " activation taps\n";
    return kExitOk;
}

int cmd_compare(const std::string& a_prefix, const std::string& b_prefix,
                const std::string& out, bool force) {
    ordered_json rep;
    std::string a_manifest = a_prefix + ".manifest.json";
    std::string b_manifest = b_prefix + ".manifest.json";
    rep["a_manifest_digest"] = file_digest(a_manifest);
    rep["b_manifest_digest"] = file_digest(b_manifest);

    ordered_json a_j = ordered_json::parse(read_file(a_manifest));
    ordered_json b_j = ordered_json::parse(read_file(b_manifest));
    if (!force) {
        for (const char* key : {"bits", "group_size"}) {
            if (a_j["config"].contains(key) && b_j["config"].contains(key) &&
                a_j["config"][key] != b_j["config"][key])
                throw InvalidGroupSize(std::string("runs differ in ") + key +
                                       "; pass --force to compare anyway");
        }
    }

    // Objective deltas when both runs carry solver reports.
    std::string a_obj = a_prefix + ".objectives.txt";
    std::string b_obj = b_prefix + ".objectives.txt";
    std::ifstream a_f(a_obj), b_f(b_obj);
    if (a_f && b_f) {
        auto ra = load_reports(a_obj);
        auto rb = load_reports(b_obj);
        if (ra.size() != rb.size())
            throw LayerCountMismatch("objective reports differ in layer count");
        ordered_json deltas = ordered_json::array();
        double total = 0.0;
        for (std::size_t i = 0; i < ra.size(); ++i) {
            double d = ra[i].value - rb[i].value;
            total += d;
            ordered_json dj;
            dj["layer"] = ra[i].layer;
            dj["a_method"] = ra[i].method;
            dj["b_method"] = rb[i].method;
            dj["delta"] = d;
            deltas.push_back(std::move(dj));
        }
        rep["objective_deltas"] = std::move(deltas);
        rep["total_objective_delta"] = total;
        rep["lower_objective"] = total < 0.0 ? "a" : (total > 0.0 ? "b" : "tie");
    }

    // Stats deltas when both runs carry stats documents.
    std::string a_stats = a_prefix + ".stats.jsonl";
    std::string b_stats = b_prefix + ".stats.jsonl";
    std::ifstream a_s(a_stats), b_s(b_stats);
    if (a_s && b_s) {
        auto sa = load_stats(a_stats);
        auto sb = load_stats(b_stats);
        ComparisonReport cr = compare_stats(sa, sb, a_prefix, b_prefix);
        rep["stats_comparison"] = ordered_json::parse(serialize_comparison(cr));
    }

    write_file(out, rep.dump(2) + "\n");
    ManifestBuilder mb("compare");
    mb.config("a", a_prefix);
    mb.config("b", b_prefix);
    mb.config("force", force);
    mb.input(a_manifest);
    mb.input(b_manifest);
    mb.output(out);
    mb.save(out + ".manifest.json");
    std::cout << "wrote comparison " << out << "\n";
    return kExitOk;
}

void log_line(const std::string& msg) { std::cerr << "[ptqlab] " << msg << "\n"; }

int cmd_regen(const std::string& seeds_path, const std::string& out, const ClientConfig& cfg,
              const std::string& cot_path) {
    auto seeds = ingest_seeds(seeds_path);
    PromptTemplate cot = template_from_file_or(cot_path, default_cot_template());
    RegenOutcome outcome = regenerate(seeds, cfg, cot, log_line);
    if (!seeds.empty() && outcome.sets.empty())
        throw EndpointUnreachable("all " + std::to_string(seeds.size()) +
                                  " seeds failed: " + outcome.failed.front().reason);

    std::string body;
    for (const auto& s : outcome.sets) body += serialize_candidate_set(s) + "\n";
    write_file(out, body);

    ManifestBuilder mb("regen");
    mb.config("model", cfg.model);
    mb.config("n_candidates", cfg.n_candidates);
    mb.config("seeds_in", seeds.size());
    mb.config("failed", outcome.failed.size());
    mb.config("cot_template", cot.id());
    mb.input(seeds_path);
    mb.output(out);
    mb.save(out + ".manifest.json");
    std::cout << "regenerated " << outcome.sets.size() << "/" << seeds.size() << " seeds\n";
    return kExitOk;
}

int cmd_judge(const std::string& cands_path, const std::string& out, const ClientConfig& cfg,
              const std::string& rubric_path) {
    PromptTemplate rubric = template_from_file_or(rubric_path, default_judge_rubric());
    std::vector<CandidateSet> sets;
    {
        std::istringstream is(read_file(cands_path));
        std::string line;
        while (std::getline(is, line))
            if (!line.empty()) sets.push_back(parse_candidate_set(line));
    }
    std::string body;
    std::size_t failed = 0;
    for (const auto& set : sets) {
        try {
            body += serialize_selected(judge_select(set, cfg, rubric)) + "\n";
        } catch (const EndpointError& e) {
            log_line("seed " + set.id + " failed in judge: " + e.what());
            ++failed;
        }
    }
    write_file(out, body);

    ManifestBuilder mb("judge");
    mb.config("model", cfg.model);
    mb.config("rubric", rubric.id());
    mb.config("failed", failed);
    mb.input(cands_path);
    mb.output(out);
    mb.save(out + ".manifest.json");
    std::cout << "judged " << sets.size() - failed << "/" << sets.size() << " candidate sets\n";
    return kExitOk;
}

int cmd_assemble(const std::string& selected_path, const std::string& out,
                 const std::string& template_path) {
    PromptTemplate tmpl(read_file(template_path), template_path);
    std::string body;
    std::size_t count = 0;
    {
        std::istringstream is(read_file(selected_path));
        std::string line;
        while (std::getline(is, line)) {
            if (line.empty()) continue;
            body += serialize_assembled(assemble(parse_selected(line), tmpl)) + "\n";
            ++count;
        }
    }
    write_file(out, body);

    ManifestBuilder mb("assemble");
    mb.config("template", template_path);
    mb.input(selected_path);
    mb.input(template_path);
    mb.output(out);
    mb.save(out + ".manifest.json");
    std::cout << "assembled " << count << " samples\n";
    return kExitOk;
}

int cmd_pipeline(const std::string& seeds_path, const std::string& out_prefix,
                 const ClientConfig& cfg, const ClientConfig& judge_cfg,
                 const std::string& template_path, const std::string& cot_path,
                 const std::string& rubric_path) {
    auto seeds = ingest_seeds(seeds_path);
    PromptTemplate tmpl(read_file(template_path), template_path);
    PromptTemplate cot = template_from_file_or(cot_path, default_cot_template());
    PromptTemplate rubric = template_from_file_or(rubric_path, default_judge_rubric());

    PipelineResult result = run_pipeline(seeds, cfg, judge_cfg, tmpl, cot, rubric, log_line);
    if (!seeds.empty() && result.corpus.empty())
        throw EndpointUnreachable("all " + std::to_string(seeds.size()) +
                                  " seeds failed: " + result.failed.front().reason);

    std::string corpus;
    for (const auto& a : result.corpus) corpus += serialize_assembled(a) + "\n";
    write_file(out_prefix + ".corpus.jsonl", corpus);
    std::string selected;
    for (const auto& s : result.selected) selected += serialize_selected(s) + "\n";
    write_file(out_prefix + ".selected.jsonl", selected);
    std::string cands;
    for (const auto& c : result.candidates) cands += serialize_candidate_set(c) + "\n";
    write_file(out_prefix + ".candidates.jsonl", cands);
    write_file(out_prefix + ".manifest.json", serialize_manifest(result.manifest));

    std::cout << "pipeline: " << result.manifest.assembled_out << " assembled, "
              << result.manifest.failed << " failed, corpus digest "
              << result.manifest.corpus_digest << "\n";
    return kExitOk;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"ptqlab: post-training quantization laboratory"};
    app.footer(kExitDoc);
    app.require_subcommand(1);

    // genmodel
    auto* gm = app.add_subcommand("genmodel", "Generate a seeded random FTM model");
    std::string gm_out;
    std::size_t gm_layers = 4, gm_dim = 128;
    std::uint64_t gm_seed = 0;
    std::string gm_nonlin = "gelu";
    bool gm_residual = false, gm_bias = false;
    gm->add_option("--out", gm_out, "Output model path (writes <out> and <out>.bin)")
        ->required();
    gm->add_option("--layers", gm_layers, "Layer count")->check(CLI::PositiveNumber);
    gm->add_option("--dim", gm_dim, "Feature dimension")->check(CLI::PositiveNumber);
    gm->add_option("--seed", gm_seed, "RNG seed");
    gm->add_option("--nonlinearity", gm_nonlin, "none|relu|gelu");
    gm->add_flag("--residual", gm_residual, "Add residual connections");
    gm->add_flag("--bias", gm_bias, "Add bias vectors");

    // gendata
    auto* gd = app.add_subcommand("gendata", "Generate a seeded random activation batch");
    std::string gd_out, gd_dist = "gaussian";
    std::size_t gd_rows = 128, gd_cols = 256;
    std::uint64_t gd_seed = 0;
    gd->add_option("--out", gd_out, "Output batch path")->required();
    gd->add_option("--rows", gd_rows, "Feature rows")->check(CLI::PositiveNumber);
    gd->add_option("--cols", gd_cols, "Sample columns")->check(CLI::PositiveNumber);
    gd->add_option("--dist", gd_dist, "gaussian|student-t3|laplace");
    gd->add_option("--seed", gd_seed, "RNG seed");

    // quantize
    auto* qz = app.add_subcommand("quantize", "Quantize an FTM model against a calibration batch");
    std::string qz_model, qz_calib, qz_out, qz_method = "gptq", qz_mode = "eq1";
    std::string qz_group = "128", qz_scheme = "asymmetric";
    int qz_bits = 4, qz_block = 128;
    double qz_percdamp = 0.01;
    qz->add_option("--model", qz_model, "FTM model path")->required();
    qz->add_option("--calib", qz_calib, "Calibration batch path")->required();
    qz->add_option("--out", qz_out, "Output prefix")->required();
    qz->add_option("--method", qz_method, "rtn|gptq|gptaq");
    auto* qz_mode_opt = qz->add_option("--mode", qz_mode, "eq1|eq2|eq3|eq4 (default eq1, or eq2 for gptaq)");
    qz->add_option("--bits", qz_bits, "Bit width (2..8)");
    qz->add_option("--group-size", qz_group, "Group size or 'per-tensor'");
    qz->add_option("--scheme", qz_scheme, "symmetric|asymmetric");
    qz->add_option("--percdamp", qz_percdamp, "Hessian damping fraction");
    qz->add_option("--block-size", qz_block, "Sweep block size");

    // stats
    auto* st = app.add_subcommand("stats", "Capture activation statistics");
    std::string st_model, st_data, st_out;
    double st_k = 3.0;
    st->add_option("--model", st_model, "FTM model path (optional: tap every layer)");
    st->add_option("--data", st_data, "Activation batch path")->required();
    st->add_option("--out", st_out, "Output prefix")->required();
    st->add_option("--k", st_k, "Outlier threshold in standard deviations");

    // compare
    auto* cp = app.add_subcommand("compare", "Compare two run prefixes (A/B report)");
    std::string cp_a, cp_b, cp_out;
    bool cp_force = false;
    cp->add_option("--a", cp_a, "Run prefix A")->required();
    cp->add_option("--b", cp_b, "Run prefix B")->required();
    cp->add_option("--out", cp_out, "Output report path")->required();
    cp->add_flag("--force", cp_force, "Compare even when bits/group-size differ");

    // shared client flags
    struct ClientFlags {
        std::string base_url, model, api_key, judge_base_url, judge_model, judge_api_key;
        int n = 3, max_tokens = 1024, max_retries = 3, max_in_flight = 8, timeout = 60;
        double temperature = 0.6, top_p = 0.95;
        int top_k = 20;
    } cf;
    auto add_client_flags = [&cf](CLI::App* cmd, bool with_judge) {
        cmd->add_option("--base-url", cf.base_url,
                        "Endpoint base URL (or env PTQLAB_BASE_URL)");
        cmd->add_option("--model", cf.model, "Generator model name");
        cmd->add_option("--api-key", cf.api_key, "API key (or env PTQLAB_API_KEY)");
        cmd->add_option("--n", cf.n, "Candidates per seed");
        cmd->add_option("--temperature", cf.temperature, "Sampling temperature");
        cmd->add_option("--top-p", cf.top_p, "Nucleus sampling mass");
        cmd->add_option("--top-k", cf.top_k, "Top-k cutoff (0 omits the field)");
        cmd->add_option("--max-tokens", cf.max_tokens, "Generation token budget");
        cmd->add_option("--max-retries", cf.max_retries, "Retries per request");
        cmd->add_option("--max-in-flight", cf.max_in_flight, "Concurrent request bound");
        cmd->add_option("--timeout", cf.timeout, "Request timeout (seconds)");
        if (with_judge) {
            cmd->add_option("--judge-base-url", cf.judge_base_url,
                            "Judge endpoint (defaults to --base-url)");
            cmd->add_option("--judge-model", cf.judge_model, "Judge model name");
            cmd->add_option("--judge-api-key", cf.judge_api_key, "Judge API key");
        }
    };
    auto make_gen_cfg = [&cf]() {
        return client_config_from_flags(cf.base_url, cf.model, cf.api_key, cf.n, cf.temperature,
                                        cf.top_p, cf.top_k, cf.max_tokens, cf.max_retries,
                                        cf.max_in_flight, cf.timeout);
    };
    auto make_judge_cfg = [&cf]() {
        ClientConfig c = client_config_from_flags(
            cf.judge_base_url.empty() ? cf.base_url : cf.judge_base_url,
            cf.judge_model.empty() ? cf.model : cf.judge_model,
            cf.judge_api_key.empty() ? cf.api_key : cf.judge_api_key, 1, cf.temperature,
            cf.top_p, cf.top_k, cf.max_tokens, cf.max_retries, cf.max_in_flight, cf.timeout);
        return c;
    };

    // regen
    auto* rg = app.add_subcommand("regen", "Regenerate candidate responses for a seed corpus");
    std::string rg_seeds, rg_out, rg_cot;
    rg->add_option("--seeds", rg_seeds, "Seed JSONL path")->required();
    rg->add_option("--out", rg_out, "Output candidates JSONL path")->required();
    rg->add_option("--cot-template", rg_cot, "CoT instruction template file");
    add_client_flags(rg, false);

    // judge
    auto* jd = app.add_subcommand("judge", "Score candidates and select per-seed winners");
    std::string jd_cands, jd_out, jd_rubric;
    jd->add_option("--candidates", jd_cands, "Candidates JSONL path")->required();
    jd->add_option("--out", jd_out, "Output selected JSONL path")->required();
    jd->add_option("--rubric", jd_rubric, "Judge rubric template file");
    add_client_flags(jd, false);

    // assemble
    auto* as = app.add_subcommand("assemble", "Expand selected samples through a chat template");
    std::string as_sel, as_out, as_tmpl;
    as->add_option("--selected", as_sel, "Selected JSONL path")->required();
    as->add_option("--out", as_out, "Output assembled JSONL path")->required();
    as->add_option("--template", as_tmpl, "Chat template file with {prompt} and {response}")
        ->required();

    // pipeline
    auto* pl = app.add_subcommand("pipeline", "Full regenerate -> judge -> assemble run");
    std::string pl_seeds, pl_out, pl_tmpl, pl_cot, pl_rubric;
    pl->add_option("--seeds", pl_seeds, "Seed JSONL path")->required();
    pl->add_option("--out", pl_out, "Output prefix")->required();
    pl->add_option("--template", pl_tmpl, "Chat template file")->required();
    pl->add_option("--cot-template", pl_cot, "CoT instruction template file");
    pl->add_option("--rubric", pl_rubric, "Judge rubric template file");
    add_client_flags(pl, true);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (gm->parsed())
            return cmd_genmodel(gm_out, gm_layers, gm_dim, gm_seed, gm_nonlin, gm_residual,
                                gm_bias);
        if (gd->parsed()) return cmd_gendata(gd_out, gd_rows, gd_cols, gd_dist, gd_seed);
        if (qz->parsed()) {
            if (qz_method == "gptaq" && qz_mode_opt->count() == 0) qz_mode = "eq2";
            return cmd_quantize(qz_model, qz_calib, qz_out, qz_method, qz_mode, qz_bits,
                                qz_group, qz_scheme, qz_percdamp, qz_block);
        }
        if (st->parsed()) return cmd_stats(st_model, st_data, st_out, st_k);
        if (cp->parsed()) return cmd_compare(cp_a, cp_b, cp_out, cp_force);
        if (rg->parsed()) return cmd_regen(rg_seeds, rg_out, make_gen_cfg(), rg_cot);
        if (jd->parsed()) return cmd_judge(jd_cands, jd_out, make_judge_cfg(), jd_rubric);
        if (as->parsed()) return cmd_assemble(as_sel, as_out, as_tmpl);
        if (pl->parsed())
            return cmd_pipeline(pl_seeds, pl_out, make_gen_cfg(), make_judge_cfg(), pl_tmpl,
                                pl_cot, pl_rubric);
    } catch (const EndpointError& e) {
        std::cerr << "endpoint error: " << e.what() << "\n";
        return kExitEndpoint;
    } catch (const CholeskyFailure& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const NonFiniteError& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const SearchSpaceTooLarge& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const DimensionMismatch& e) {
        std::cerr << "dimension error: " << e.what() << "\n";
        return kExitDimension;
    } catch (const InvalidGroupSize& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitDimension;
    } catch (const LayerCountMismatch& e) {
        std::cerr << "dimension error: " << e.what() << "\n";
        return kExitDimension;
    } catch (const MissingSlot& e) {
        std::cerr << "format error: " << e.what() << "\n";
        return kExitFormat;
    } catch (const ParseError& e) {
        std::cerr << "format error: " << e.what() << "\n";
        return kExitFormat;
    } catch (const IoError& e) {
        std::cerr << "io error: " << e.what() << "\n";
        return kExitIo;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const nlohmann::json::exception& e) {
        std::cerr << "format error: " << e.what() << "\n";
        return kExitFormat;
    }
    return kExitOk;
}
