#include "ptqlab/client.hpp"

#include <chrono>
#include <thread>

#include <httplib.h>
#include <json.hpp>

namespace ptqlab {

namespace {

using nlohmann::json;

std::string request_body(const ClientConfig& cfg, const std::string& user_content, int n) {
    json body;
    body["model"] = cfg.model;
    body["messages"] = json::array({json{{"role", "user"}, {"content", user_content}}});
    body["temperature"] = cfg.temperature;
    body["top_p"] = cfg.top_p;
    if (cfg.top_k != 0) body["top_k"] = cfg.top_k;
    body["max_tokens"] = cfg.max_tokens;
    body["n"] = n;
    return body.dump();
}

std::vector<ChatChoice> parse_choices(const std::string& body) {
    json j = json::parse(body, nullptr, false);
    if (j.is_discarded() || !j.contains("choices") || !j["choices"].is_array() ||
        j["choices"].empty())
        throw MalformedResponse("chat response lacks a choices array");
    std::vector<ChatChoice> out;
    for (const auto& c : j["choices"]) {
        if (!c.contains("message") || !c["message"].contains("content"))
            throw MalformedResponse("chat choice lacks message.content");
        ChatChoice ch;
        ch.text = c["message"]["content"].get<std::string>();
        ch.finish_reason = c.value("finish_reason", "stop");
        out.push_back(std::move(ch));
    }
    return out;
}

} // namespace

ChatResult chat_complete(const ClientConfig& cfg, const std::string& user_content, int n) {
    cfg.validate();
    const std::string path = "/v1/chat/completions";
    const std::string body = request_body(cfg, user_content, n);

    std::string last_error = "request never attempted";
    bool last_malformed = false;
    ChatResult result;

    for (int attempt = 0; attempt <= cfg.max_retries; ++attempt) {
        if (attempt > 0) {
            int delay_ms = 50 << (attempt - 1);
            std::this_thread::sleep_for(std::chrono::milliseconds(delay_ms));
        }
        ++result.attempts;

        httplib::Client client(cfg.base_url);
        client.set_connection_timeout(cfg.request_timeout_s, 0);
        client.set_read_timeout(cfg.request_timeout_s, 0);
        httplib::Headers headers;
        if (!cfg.api_key.empty())
            headers.emplace("Authorization", "Bearer " + cfg.api_key);

        auto res = client.Post(path, headers, body, "application/json");
        if (!res) {
            last_error = "connection failed: " + httplib::to_string(res.error());
            last_malformed = false;
            continue;
        }
        if (res->status == 401 || res->status == 403)
            throw AuthFailure("endpoint rejected credentials (HTTP " +
                              std::to_string(res->status) + ")");
        if (res->status < 200 || res->status >= 300) {
            last_error = "HTTP " + std::to_string(res->status);
            last_malformed = false;
            continue;
        }
        try {
            result.choices = parse_choices(res->body);
            return result;
        } catch (const MalformedResponse& e) {
            last_error = e.what();
            last_malformed = true;
        }
    }

    if (last_malformed) throw MalformedResponse(last_error + " after " +
                                                std::to_string(result.attempts) + " attempts");
    throw EndpointUnreachable(last_error + " after " + std::to_string(result.attempts) +
                              " attempts");
}

} // namespace ptqlab
