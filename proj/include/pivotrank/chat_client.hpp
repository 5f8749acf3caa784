#pragma once

#include <chrono>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace pivotrank {

struct ChatMessage {
    std::string role;
    std::string content;
};

/// Endpoint settings for an OpenAI-style chat-completions server.
///
/// The bearer token is read from the environment variable named by
/// `api_key_env` at call time (default PIVOTRANK_API_KEY); no header is sent
/// when it is unset.
struct ChatConfig {
    std::string url = "http://127.0.0.1:8000/v1/chat/completions";
    std::string model;
    std::string api_key_env = "PIVOTRANK_API_KEY";
    int max_tokens = 512;
    double temperature = 0.7;
    double top_p = 0.9;
    std::optional<std::int64_t> seed;
    int max_retries = 3;
    std::chrono::milliseconds timeout{60000};
    std::chrono::milliseconds backoff{500};
};

class TransportError : public std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Request body for one completion; exposed for tests and --dry-run output.
std::string chat_request_body(const ChatConfig& cfg, const std::vector<ChatMessage>& messages,
                              std::optional<int> max_tokens = std::nullopt,
                              std::optional<std::int64_t> seed = std::nullopt);

/// Pull choices[0].message.content out of a response body.
std::string parse_chat_response(const std::string& body);

/// Blocking client. Retries transport failures, 429 and 5xx with exponential
/// backoff (backoff, 2*backoff, ...); other HTTP errors fail immediately.
/// Safe to call from several threads: each call opens its own connection.
class ChatClient {
   public:
    explicit ChatClient(ChatConfig cfg);

    std::string complete(const std::vector<ChatMessage>& messages,
                         std::optional<int> max_tokens = std::nullopt,
                         std::optional<std::int64_t> seed = std::nullopt) const;

    const ChatConfig& config() const noexcept { return cfg_; }

   private:
    ChatConfig cfg_;
    std::string base_;
    std::string path_;
};

}  // namespace pivotrank
