#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "ptqlab/client.hpp"
#include "ptqlab/template.hpp"

namespace ptqlab {

struct SeedSample {
    std::string id;
    std::string prompt;
};

struct Candidate {
    std::string text;
    std::string finish_reason;
};

struct GenerationParams {
    double temperature = 0.6;
    double top_p = 0.95;
    int top_k = 20;
    int max_tokens = 1024;
};

struct CandidateSet {
    std::string id;
    std::string prompt;
    std::vector<Candidate> candidates;
    std::string generator_model;
    GenerationParams generation_params;
};

struct SelectedSample {
    std::string id;
    std::string prompt;
    std::string response;
    std::vector<double> judge_scores; // one per candidate, generation order
    int selected_index = 0;
    std::string judge_model;
    bool all_scores_unparseable = false;
};

struct AssembledSample {
    std::string id;
    std::string text;
    std::string template_id;
};

struct FailedSeed {
    std::string id;
    std::string stage; // "regenerate" or "judge"
    std::string reason;
};

using LogFn = std::function<void(const std::string&)>;

/// Default prompt texts, also shipped as replaceable template files.
PromptTemplate default_cot_template();
PromptTemplate default_judge_rubric();

/// One JSONL record per nonempty line with fields {id, prompt}.
std::vector<SeedSample> ingest_seeds(const std::string& path);
std::vector<SeedSample> parse_seeds(const std::string& text);

struct RegenOutcome {
    std::vector<CandidateSet> sets; // seed input order, failures excluded
    std::vector<FailedSeed> failed;
};

/// Fan out regeneration requests over at most cfg.max_in_flight worker
/// threads. Each seed yields exactly cfg.n_candidates candidates; servers
/// that return fewer choices than requested are topped up with sequential
/// n=1 requests.
RegenOutcome regenerate(const std::vector<SeedSample>& seeds, const ClientConfig& cfg,
                        const PromptTemplate& cot_prompt, const LogFn& log = nullptr);

/// First number in the judge reply, or nullopt.
std::optional<double> parse_judge_score(const std::string& reply);

/// One judge call per candidate; argmax with lowest-index tie-break.
/// Unparseable replies score 0; if every reply is unparseable the first
/// candidate wins and the sample is flagged.
SelectedSample judge_select(const CandidateSet& cands, const ClientConfig& judge_cfg,
                            const PromptTemplate& rubric);

AssembledSample assemble(const SelectedSample& sel, const ChatTemplate& tmpl);

struct RunManifest {
    std::uint64_t seeds_in = 0;
    std::uint64_t failed = 0;
    std::uint64_t assembled_out = 0;
    ClientConfig generator;
    ClientConfig judge;
    std::string cot_template_id;
    std::string rubric_id;
    std::string chat_template_id;
    double wall_clock_ms = 0.0;
    std::string corpus_digest;
    std::vector<std::string> warnings;
};

struct PipelineResult {
    std::vector<AssembledSample> corpus;
    std::vector<SelectedSample> selected;
    std::vector<CandidateSet> candidates;
    std::vector<FailedSeed> failed;
    RunManifest manifest;
};

/// regenerate -> judge_select -> assemble per seed; a failing seed is
/// dropped with a logged reason and the run continues.
PipelineResult run_pipeline(const std::vector<SeedSample>& seeds, const ClientConfig& cfg,
                            const ClientConfig& judge_cfg, const ChatTemplate& tmpl,
                            const PromptTemplate& cot_prompt = default_cot_template(),
                            const PromptTemplate& rubric = default_judge_rubric(),
                            const LogFn& log = nullptr);

// JSONL record serialization, stable field order.
std::string serialize_seed(const SeedSample& s);
SeedSample parse_seed(const std::string& line);
std::string serialize_candidate_set(const CandidateSet& s);
CandidateSet parse_candidate_set(const std::string& line);
std::string serialize_selected(const SelectedSample& s);
SelectedSample parse_selected(const std::string& line);
std::string serialize_assembled(const AssembledSample& s);
AssembledSample parse_assembled(const std::string& line);

std::string serialize_manifest(const RunManifest& m);

/// FNV-1a 64-bit content digest, printed as 16 hex digits.
std::string content_digest(const std::string& bytes);

} // namespace ptqlab
