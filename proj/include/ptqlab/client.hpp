#pragma once

#include <string>
#include <vector>

#include "ptqlab/errors.hpp"

namespace ptqlab {

/// Connection and sampling settings for an OpenAI-compatible
/// chat-completions endpoint.
struct ClientConfig {
    std::string base_url;
    std::string model;
    std::string api_key; // optional; sent as a bearer token when set
    int n_candidates = 3;
    double temperature = 0.6;
    double top_p = 0.95;
    int top_k = 20; // omitted from the request body when 0
    int max_tokens = 1024;
    int max_retries = 3;
    int max_in_flight = 8;
    int request_timeout_s = 60;

    void validate() const {
        if (base_url.empty()) throw EndpointUnreachable("base_url is empty");
        if (n_candidates < 1) throw InvalidGroupSize("n_candidates must be >= 1");
        if (max_retries < 0) throw InvalidGroupSize("max_retries must be >= 0");
        if (max_in_flight < 1) throw InvalidGroupSize("max_in_flight must be >= 1");
    }
};

struct ChatChoice {
    std::string text;
    std::string finish_reason;
};

struct ChatResult {
    std::vector<ChatChoice> choices;
    int attempts = 0;
};

/// POST {base_url}/v1/chat/completions with a single user turn. Non-2xx
/// statuses and malformed bodies are retried up to max_retries with
/// exponential backoff (50 ms doubling); 401/403 fail immediately as
/// AuthFailure.
ChatResult chat_complete(const ClientConfig& cfg, const std::string& user_content, int n);

} // namespace ptqlab
