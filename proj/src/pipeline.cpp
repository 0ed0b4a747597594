#include "ptqlab/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <chrono>
#include <fstream>
#include <sstream>
#include <thread>
#include <unordered_set>

#include <json.hpp>

namespace ptqlab {

namespace {

using ordered_json = nlohmann::ordered_json;
using nlohmann::json;

constexpr const char* kDefaultCot =
    "You are regenerating a training prompt's answer. Think step by step, show your "
    "intermediate reasoning, then give the final answer.\n\nTask: {prompt}";

constexpr const char* kDefaultRubric =
    "Rate the following response to a task on a 1-10 scale for correctness, coherence and "
    "reasoning depth. Reply with the numeric score only.\n\nTask: {prompt}\n\nResponse: "
    "{response}\n\nScore:";

} // namespace

PromptTemplate default_cot_template() { return PromptTemplate(kDefaultCot, "builtin-cot-v1"); }

PromptTemplate default_judge_rubric() {
    return PromptTemplate(kDefaultRubric, "builtin-rubric-v1");
}

std::vector<SeedSample> parse_seeds(const std::string& text) {
    std::vector<SeedSample> out;
    std::unordered_set<std::string> seen;
    std::istringstream is(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        json j = json::parse(line, nullptr, false);
        if (j.is_discarded() || !j.is_object() || !j.contains("id") || !j.contains("prompt") ||
            !j["id"].is_string() || !j["prompt"].is_string())
            throw ParseError("seed file: malformed record at line " + std::to_string(lineno));
        SeedSample s{j["id"].get<std::string>(), j["prompt"].get<std::string>()};
        if (s.id.empty() || s.prompt.empty())
            throw ParseError("seed file: empty id or prompt at line " + std::to_string(lineno));
        if (!seen.insert(s.id).second)
            throw DuplicateIdError("seed file: duplicate id '" + s.id + "' at line " +
                                   std::to_string(lineno));
        out.push_back(std::move(s));
    }
    return out;
}

std::vector<SeedSample> ingest_seeds(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open seeds file: " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    return parse_seeds(ss.str());
}

namespace {

CandidateSet regenerate_one(const SeedSample& seed, const ClientConfig& cfg,
                            const PromptTemplate& cot_prompt) {
    CandidateSet set;
    set.id = seed.id;
    set.prompt = seed.prompt;
    set.generator_model = cfg.model;
    set.generation_params = {cfg.temperature, cfg.top_p, cfg.top_k, cfg.max_tokens};

    std::string content = cot_prompt.render({{"prompt", seed.prompt}});
    ChatResult first = chat_complete(cfg, content, cfg.n_candidates);
    for (auto& c : first.choices) {
        if (static_cast<int>(set.candidates.size()) >= cfg.n_candidates) break;
        set.candidates.push_back({std::move(c.text), std::move(c.finish_reason)});
    }
    // Server ignored n: top up one candidate at a time.
    while (static_cast<int>(set.candidates.size()) < cfg.n_candidates) {
        ChatResult extra = chat_complete(cfg, content, 1);
        set.candidates.push_back(
            {std::move(extra.choices[0].text), std::move(extra.choices[0].finish_reason)});
    }
    return set;
}

} // namespace

RegenOutcome regenerate(const std::vector<SeedSample>& seeds, const ClientConfig& cfg,
                        const PromptTemplate& cot_prompt, const LogFn& log) {
    cfg.validate();
    cot_prompt.require_slots({"prompt"});

    std::vector<std::optional<CandidateSet>> slots(seeds.size());
    std::vector<std::optional<FailedSeed>> fails(seeds.size());
    std::atomic<std::size_t> next{0};

    auto worker = [&]() {
        while (true) {
            std::size_t i = next.fetch_add(1);
            if (i >= seeds.size()) return;
            try {
                slots[i] = regenerate_one(seeds[i], cfg, cot_prompt);
            } catch (const Error& e) {
                fails[i] = FailedSeed{seeds[i].id, "regenerate", e.what()};
            }
        }
    };

    std::size_t n_workers =
        std::min<std::size_t>(static_cast<std::size_t>(cfg.max_in_flight), seeds.size());
    std::vector<std::thread> pool;
    for (std::size_t i = 0; i < n_workers; ++i) pool.emplace_back(worker);
    for (auto& t : pool) t.join();

    RegenOutcome out;
    for (std::size_t i = 0; i < seeds.size(); ++i) {
        if (slots[i]) {
            out.sets.push_back(std::move(*slots[i]));
        } else if (fails[i]) {
            if (log) log("seed " + fails[i]->id + " failed in regenerate: " + fails[i]->reason);
            out.failed.push_back(std::move(*fails[i]));
        }
    }
    return out;
}

std::optional<double> parse_judge_score(const std::string& reply) {
    auto digit = [&](std::size_t k) {
        return k < reply.size() && std::isdigit(static_cast<unsigned char>(reply[k]));
    };
    std::size_t i = 0;
    const std::size_t n = reply.size();
    while (i < n) {
        char c = reply[i];
        bool sign = (c == '+' || c == '-') && digit(i + 1);
        if (digit(i) || sign) {
            std::size_t start = i;
            if (sign) ++i;
            while (digit(i)) ++i;
            if (i < n && reply[i] == '.' && digit(i + 1)) {
                ++i;
                while (digit(i)) ++i;
            }
            return std::stod(reply.substr(start, i - start));
        }
        ++i;
    }
    return std::nullopt;
}

SelectedSample judge_select(const CandidateSet& cands, const ClientConfig& judge_cfg,
                            const PromptTemplate& rubric) {
    judge_cfg.validate();
    if (cands.candidates.empty())
        throw DimensionMismatch("judge_select: candidate set for '" + cands.id + "' is empty");
    rubric.require_slots({"prompt", "response"});

    SelectedSample sel;
    sel.id = cands.id;
    sel.prompt = cands.prompt;
    sel.judge_model = judge_cfg.model;

    bool any_parsed = false;
    for (const auto& cand : cands.candidates) {
        std::string content =
            rubric.render({{"prompt", cands.prompt}, {"response", cand.text}});
        ChatResult res = chat_complete(judge_cfg, content, 1);
        std::optional<double> score = parse_judge_score(res.choices[0].text);
        any_parsed = any_parsed || score.has_value();
        sel.judge_scores.push_back(score.value_or(0.0));
    }

    int best = 0;
    for (int i = 1; i < static_cast<int>(sel.judge_scores.size()); ++i)
        if (sel.judge_scores[static_cast<std::size_t>(i)] >
            sel.judge_scores[static_cast<std::size_t>(best)])
            best = i;
    sel.selected_index = best;
    sel.all_scores_unparseable = !any_parsed;
    sel.response = cands.candidates[static_cast<std::size_t>(best)].text;
    return sel;
}

AssembledSample assemble(const SelectedSample& sel, const ChatTemplate& tmpl) {
    tmpl.require_slots({"prompt", "response"});
    AssembledSample out;
    out.id = sel.id;
    out.template_id = tmpl.id();
    out.text = tmpl.render({{"prompt", sel.prompt}, {"response", sel.response}});
    return out;
}

PipelineResult run_pipeline(const std::vector<SeedSample>& seeds, const ClientConfig& cfg,
                            const ClientConfig& judge_cfg, const ChatTemplate& tmpl,
                            const PromptTemplate& cot_prompt, const PromptTemplate& rubric,
                            const LogFn& log) {
    auto t0 = std::chrono::steady_clock::now();
    tmpl.require_slots({"prompt", "response"});
    rubric.require_slots({"prompt", "response"});

    PipelineResult result;
    result.manifest.seeds_in = seeds.size();
    result.manifest.generator = cfg;
    result.manifest.judge = judge_cfg;
    result.manifest.cot_template_id = cot_prompt.id();
    result.manifest.rubric_id = rubric.id();
    result.manifest.chat_template_id = tmpl.id();

    RegenOutcome regen = regenerate(seeds, cfg, cot_prompt, log);
    result.failed = std::move(regen.failed);
    result.candidates = std::move(regen.sets);

    // Judge stage fans out over candidate sets with the judge's own
    // in-flight bound; each set is scored sequentially inside.
    std::vector<std::optional<SelectedSample>> sel_slots(result.candidates.size());
    std::vector<std::optional<FailedSeed>> sel_fails(result.candidates.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&]() {
        while (true) {
            std::size_t i = next.fetch_add(1);
            if (i >= result.candidates.size()) return;
            try {
                sel_slots[i] = judge_select(result.candidates[i], judge_cfg, rubric);
            } catch (const Error& e) {
                sel_fails[i] = FailedSeed{result.candidates[i].id, "judge", e.what()};
            }
        }
    };
    std::size_t n_workers = std::min<std::size_t>(
        static_cast<std::size_t>(judge_cfg.max_in_flight), result.candidates.size());
    std::vector<std::thread> pool;
    for (std::size_t i = 0; i < n_workers; ++i) pool.emplace_back(worker);
    for (auto& t : pool) t.join();

    for (std::size_t i = 0; i < result.candidates.size(); ++i) {
        if (sel_slots[i]) {
            if (sel_slots[i]->all_scores_unparseable)
                result.manifest.warnings.push_back("seed " + sel_slots[i]->id +
                                                   ": no judge score parsed, kept candidate 0");
            result.selected.push_back(std::move(*sel_slots[i]));
        } else if (sel_fails[i]) {
            if (log)
                log("seed " + sel_fails[i]->id + " failed in judge: " + sel_fails[i]->reason);
            result.failed.push_back(std::move(*sel_fails[i]));
        }
    }

    for (const auto& sel : result.selected) result.corpus.push_back(assemble(sel, tmpl));

    std::string corpus_bytes;
    for (const auto& a : result.corpus) corpus_bytes += serialize_assembled(a) + "\n";
    result.manifest.corpus_digest = content_digest(corpus_bytes);
    result.manifest.failed = result.failed.size();
    result.manifest.assembled_out = result.corpus.size();
    result.manifest.wall_clock_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    return result;
}

// --- record serialization ---

namespace {

ordered_json client_config_json(const ClientConfig& c) {
    ordered_json j;
    j["base_url"] = c.base_url;
    j["model"] = c.model;
    j["api_key_set"] = !c.api_key.empty();
    j["n_candidates"] = c.n_candidates;
    j["temperature"] = c.temperature;
    j["top_p"] = c.top_p;
    j["top_k"] = c.top_k;
    j["max_tokens"] = c.max_tokens;
    j["max_retries"] = c.max_retries;
    j["max_in_flight"] = c.max_in_flight;
    j["request_timeout_s"] = c.request_timeout_s;
    return j;
}

json parse_line(const std::string& line, const char* what) {
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object())
        throw ParseError(std::string(what) + ": malformed JSON record");
    return j;
}

} // namespace

std::string serialize_seed(const SeedSample& s) {
    ordered_json j;
    j["id"] = s.id;
    j["prompt"] = s.prompt;
    return j.dump();
}

SeedSample parse_seed(const std::string& line) {
    json j = parse_line(line, "seed record");
    return {j.at("id").get<std::string>(), j.at("prompt").get<std::string>()};
}

std::string serialize_candidate_set(const CandidateSet& s) {
    ordered_json j;
    j["id"] = s.id;
    j["prompt"] = s.prompt;
    ordered_json cands = ordered_json::array();
    for (const auto& c : s.candidates) {
        ordered_json cj;
        cj["text"] = c.text;
        cj["finish_reason"] = c.finish_reason;
        cands.push_back(std::move(cj));
    }
    j["candidates"] = std::move(cands);
    j["generator_model"] = s.generator_model;
    ordered_json gp;
    gp["temperature"] = s.generation_params.temperature;
    gp["top_p"] = s.generation_params.top_p;
    gp["top_k"] = s.generation_params.top_k;
    gp["max_tokens"] = s.generation_params.max_tokens;
    j["generation_params"] = std::move(gp);
    return j.dump();
}

CandidateSet parse_candidate_set(const std::string& line) {
    json j = parse_line(line, "candidate record");
    CandidateSet s;
    s.id = j.at("id").get<std::string>();
    s.prompt = j.at("prompt").get<std::string>();
    for (const auto& cj : j.at("candidates"))
        s.candidates.push_back({cj.at("text").get<std::string>(),
                                cj.at("finish_reason").get<std::string>()});
    s.generator_model = j.at("generator_model").get<std::string>();
    const auto& gp = j.at("generation_params");
    s.generation_params.temperature = gp.at("temperature").get<double>();
    s.generation_params.top_p = gp.at("top_p").get<double>();
    s.generation_params.top_k = gp.at("top_k").get<int>();
    s.generation_params.max_tokens = gp.at("max_tokens").get<int>();
    return s;
}

std::string serialize_selected(const SelectedSample& s) {
    ordered_json j;
    j["id"] = s.id;
    j["prompt"] = s.prompt;
    j["response"] = s.response;
    j["judge_scores"] = s.judge_scores;
    j["selected_index"] = s.selected_index;
    j["judge_model"] = s.judge_model;
    if (s.all_scores_unparseable) j["all_scores_unparseable"] = true;
    return j.dump();
}

SelectedSample parse_selected(const std::string& line) {
    json j = parse_line(line, "selected record");
    SelectedSample s;
    s.id = j.at("id").get<std::string>();
    s.prompt = j.at("prompt").get<std::string>();
    s.response = j.at("response").get<std::string>();
    s.judge_scores = j.at("judge_scores").get<std::vector<double>>();
    s.selected_index = j.at("selected_index").get<int>();
    s.judge_model = j.at("judge_model").get<std::string>();
    s.all_scores_unparseable = j.value("all_scores_unparseable", false);
    return s;
}

std::string serialize_assembled(const AssembledSample& s) {
    ordered_json j;
    j["id"] = s.id;
    j["text"] = s.text;
    j["template_id"] = s.template_id;
    return j.dump();
}

AssembledSample parse_assembled(const std::string& line) {
    json j = parse_line(line, "assembled record");
    return {j.at("id").get<std::string>(), j.at("text").get<std::string>(),
            j.at("template_id").get<std::string>()};
}

std::string serialize_manifest(const RunManifest& m) {
    ordered_json j;
    j["seeds_in"] = m.seeds_in;
    j["failed"] = m.failed;
    j["assembled_out"] = m.assembled_out;
    j["generator"] = client_config_json(m.generator);
    j["judge"] = client_config_json(m.judge);
    j["cot_template_id"] = m.cot_template_id;
    j["rubric_id"] = m.rubric_id;
    j["chat_template_id"] = m.chat_template_id;
    j["wall_clock_ms"] = m.wall_clock_ms;
    j["corpus_digest"] = m.corpus_digest;
    j["warnings"] = m.warnings;
    return j.dump(2) + "\n";
}

std::string content_digest(const std::string& bytes) {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001B3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return std::string(buf);
}

} // namespace ptqlab
