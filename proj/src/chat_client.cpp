#include "pivotrank/chat_client.hpp"

#include <cstdlib>
#include <thread>

#include <httplib.h>
#include <json.hpp>

namespace pivotrank {

namespace {

// "http://host:port/path" → ("http://host:port", "/path")
std::pair<std::string, std::string> split_url(const std::string& url)
{
    auto scheme = url.find("://");
    if (scheme == std::string::npos) {
        throw std::invalid_argument("endpoint URL needs a scheme: " + url);
    }
    auto slash = url.find('/', scheme + 3);
    if (slash == std::string::npos) {
        return {url, "/"};
    }
    return {url.substr(0, slash), url.substr(slash)};
}

bool retryable(int status) { return status == 429 || status >= 500; }

}  // namespace

std::string chat_request_body(const ChatConfig& cfg, const std::vector<ChatMessage>& messages,
                              std::optional<int> max_tokens, std::optional<std::int64_t> seed)
{
    nlohmann::json msgs = nlohmann::json::array();
    for (const auto& m : messages) {
        msgs.push_back({{"role", m.role}, {"content", m.content}});
    }
    nlohmann::json body{{"model", cfg.model},
                        {"messages", std::move(msgs)},
                        {"max_tokens", max_tokens.value_or(cfg.max_tokens)},
                        {"temperature", cfg.temperature},
                        {"top_p", cfg.top_p}};
    if (auto s = seed ? seed : cfg.seed) {
        body["seed"] = *s;
    }
    return body.dump();
}

std::string parse_chat_response(const std::string& body)
{
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(body);
        return j.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
        throw TransportError(std::string("unexpected chat-completions response: ") + e.what());
    }
}

ChatClient::ChatClient(ChatConfig cfg) : cfg_(std::move(cfg))
{
    std::tie(base_, path_) = split_url(cfg_.url);
}

std::string ChatClient::complete(const std::vector<ChatMessage>& messages,
                                 std::optional<int> max_tokens,
                                 std::optional<std::int64_t> seed) const
{
    const auto body = chat_request_body(cfg_, messages, max_tokens, seed);
    httplib::Headers headers;
    if (const char* key = std::getenv(cfg_.api_key_env.c_str()); key && *key) {
        headers.emplace("Authorization", std::string("Bearer ") + key);
    }

    std::string last_error;
    for (int attempt = 0; attempt <= cfg_.max_retries; ++attempt) {
        if (attempt > 0) {
            std::this_thread::sleep_for(cfg_.backoff * (1LL << (attempt - 1)));
        }
        httplib::Client cli(base_);
        const auto secs = cfg_.timeout.count() / 1000;
        const auto usecs = (cfg_.timeout.count() % 1000) * 1000;
        cli.set_connection_timeout(secs, usecs);
        cli.set_read_timeout(secs, usecs);
        cli.set_write_timeout(secs, usecs);
        auto res = cli.Post(path_, headers, body, "application/json");
        if (!res) {
            last_error = "transport error: " + httplib::to_string(res.error());
            continue;
        }
        if (res->status == 200) {
            return parse_chat_response(res->body);
        }
        last_error = "HTTP " + std::to_string(res->status) + ": " + res->body.substr(0, 200);
        if (!retryable(res->status)) {
            break;
        }
    }
    throw TransportError("chat completion failed (" + last_error + ")");
}

}  // namespace pivotrank
