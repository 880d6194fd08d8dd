#pragma once

#include <chrono>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "ctxbench/corpus.hpp"
#include "ctxbench/pipeline.hpp"

namespace ctxbench {

struct EndpointConfig {
    /// scheme://host[:port]
    std::string base_url = "http://127.0.0.1:8080";
    std::string path = "/v1/chat/completions";
    std::string model = "gpt-3.5-turbo";
    /// Name of the environment variable holding the bearer token. The token
    /// itself never appears in configs, logs or transcripts.
    std::string auth_env = "CTXBENCH_API_KEY";
    double timeout_seconds = 30.0;
    std::size_t max_retries = 3;
    std::size_t max_concurrency = 4;
    /// Requests allowed per rate window; 0 disables the limiter.
    std::size_t rate_per_minute = 60;
    double rate_window_seconds = 60.0;
    double backoff_initial_seconds = 0.5;
    double backoff_max_seconds = 8.0;
    double temperature = 0.0;

    void validate() const;
};

// ---------------------------------------------------------------------------
// Source selection

inline constexpr std::size_t kMinSourceChars = 100;
inline constexpr std::size_t kMinQueryChars = 40;

/// 5-star rating and at least 100 characters of review text.
bool is_eligible_source(const Review& r);

/// Eligible reviews (optionally restricted to the test split of `bounds`),
/// then a seeded uniform sample of min(n, eligible) of them, kept in input
/// order.
std::vector<Review> select_sources(std::span<const Review> reviews, std::size_t n, std::uint64_t seed,
                                   const std::optional<SplitBoundaries>& test_only = std::nullopt);

// ---------------------------------------------------------------------------
// Prompt

inline constexpr std::string_view kPromptVersion = "first-person-need/v1";

/// The bundled template. "{title}" and "{review}" are substituted.
std::string_view prompt_template();
/// sha256 over version and template text.
std::string prompt_hash();
std::string render_prompt(const Review& review, const ItemMeta& meta);

struct ChatRequest {
    std::string body;         ///< JSON chat-completion request
    std::string request_hash; ///< sha256 of body
};

ChatRequest make_chat_request(const EndpointConfig& cfg, const Review& review, const ItemMeta& meta);

struct ChatResponse {
    /// HTTP status; 0 when the request never completed (retried), negative
    /// for a local failure that retrying cannot fix.
    int status = 0;
    std::string body;
    std::string error;
};

/// Pulls choices[0].message.content out of a chat-completion response.
std::optional<std::string> parse_chat_content(std::string_view body);

// ---------------------------------------------------------------------------
// Time

class Clock {
public:
    using Duration = std::chrono::nanoseconds;
    virtual ~Clock() = default;
    virtual Duration now() = 0;
    virtual void sleep_for(Duration d) = 0;
};

class SteadyClock final : public Clock {
public:
    Duration now() override;
    void sleep_for(Duration d) override;
};

/// Time only moves when someone sleeps.
class FakeClock final : public Clock {
public:
    Duration now() override;
    void sleep_for(Duration d) override;
    Duration slept() const;

private:
    mutable std::mutex mu_;
    Duration t_{0};
    Duration slept_{0};
};

/// Sliding-window limiter. A slot is held from acquire() until release()
/// and then for one more window, so requests observed by the server (between
/// the two calls) never exceed `cap` in any window.
class RateLimiter {
public:
    RateLimiter(std::size_t cap, Clock::Duration window, Clock& clock);

    std::size_t acquire();
    void release(std::size_t slot);

private:
    std::size_t cap_;
    Clock::Duration window_;
    Clock& clock_;
    std::mutex mu_;
    std::size_t next_slot_ = 0;
    std::map<std::size_t, std::optional<Clock::Duration>> slots_;
};

// ---------------------------------------------------------------------------
// Transports

/// Must be safe to call from several threads.
class ChatTransport {
public:
    virtual ~ChatTransport() = default;
    virtual ChatResponse send(const ChatRequest& request) = 0;
};

class HttpTransport final : public ChatTransport {
public:
    explicit HttpTransport(EndpointConfig cfg);
    ChatResponse send(const ChatRequest& request) override;

private:
    EndpointConfig cfg_;
    std::optional<std::string> token_;
};

/// Transcript line: {"request_hash", "status", "body"}. Responses for a
/// repeated hash are handed out in recorded order. A missing entry is a
/// non-retryable failure.
class ReplayTransport final : public ChatTransport {
public:
    explicit ReplayTransport(const std::filesystem::path& transcript);
    ChatResponse send(const ChatRequest& request) override;
    std::size_t misses() const;

private:
    mutable std::mutex mu_;
    std::unordered_map<std::string, std::deque<ChatResponse>> responses_;
    std::size_t misses_ = 0;
};

/// Forwards to `inner` and keeps every exchange; flush() writes them grouped
/// by request hash so the transcript does not depend on thread timing.
class RecordingTransport final : public ChatTransport {
public:
    explicit RecordingTransport(ChatTransport& inner);
    ChatResponse send(const ChatRequest& request) override;
    void flush(const std::filesystem::path& transcript) const;

private:
    ChatTransport& inner_;
    mutable std::mutex mu_;
    std::map<std::string, std::vector<ChatResponse>> log_;
};

/// Deterministic stand-in for a chat model: rewrites the review in the first
/// person and scrubs the product title.
std::string mock_rewrite(std::string_view title, std::string_view review_text);

/// Offline transport answering with mock_rewrite.
class MockResponder final : public ChatTransport {
public:
    ChatResponse send(const ChatRequest& request) override;
};

/// Small HTTP chat-completion server for tests and demos. Answers with
/// mock_rewrite unless a scripted status is queued. Logs arrival times.
class MockChatServer {
public:
    MockChatServer();
    ~MockChatServer();
    MockChatServer(const MockChatServer&) = delete;
    MockChatServer& operator=(const MockChatServer&) = delete;

    int port() const { return port_; }
    std::string base_url() const;

    /// Statuses to return (with an error body) before answering normally.
    void script_failures(std::vector<int> statuses);
    /// Overrides the answer content.
    void set_content(std::function<std::string(const std::string& request_body)> fn);
    void set_required_token(std::string token);

    std::vector<std::chrono::steady_clock::time_point> arrivals() const;
    std::size_t requests() const;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
    int port_ = 0;
};

// ---------------------------------------------------------------------------
// Synthesis

enum class QueryStatus { ok, failed };

struct SynthesizedQuery {
    std::string query;
    std::string review_id;
    std::string item_id;
    std::string domain;
    QueryStatus status = QueryStatus::failed;
    /// Empty when ok; otherwise transport, http_<code>, bad_response, empty,
    /// too_short, leak or no_metadata.
    std::string reason;
    std::size_t attempts = 0;
};

/// Empty string when the query passes, else the failure reason.
std::string validate_query(std::string_view query, const ItemMeta& meta);

struct SynthesisContext {
    ChatTransport& transport;
    Clock& clock;
    /// Shared across threads; null disables rate limiting.
    RateLimiter* limiter = nullptr;
};

SynthesizedQuery synthesize_query(const Review& review, const ItemMeta& meta, const EndpointConfig& cfg,
                                  SynthesisContext ctx);

/// Runs up to max_concurrency requests at once. Output is ordered by source
/// review id.
std::vector<SynthesizedQuery> synthesize_batch(std::span<const Review> sources,
                                               const std::unordered_map<std::string, const ItemMeta*>& metadata,
                                               const EndpointConfig& cfg, ChatTransport& transport, Clock& clock);

/// {"qid","query","item_id","ori_rating":5,"domain","prompt_hash"}
std::string to_jsonl(const SynthesizedQuery& q, std::string_view prompt_hash);
std::string query_id_for(std::string_view review_id);

} // namespace ctxbench
