#include <cctype>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "ctxbench/error.hpp"
#include "ctxbench/querygen.hpp"
#include "ctxbench/text.hpp"

namespace ctxbench {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

std::size_t find_ignore_case(std::string_view hay, std::string_view needle, std::size_t from) {
    if (needle.empty() || hay.size() < needle.size()) {
        return std::string_view::npos;
    }
    for (std::size_t i = from; i + needle.size() <= hay.size(); ++i) {
        bool match = true;
        for (std::size_t j = 0; j < needle.size(); ++j) {
            if (std::tolower(static_cast<unsigned char>(hay[i + j])) !=
                std::tolower(static_cast<unsigned char>(needle[j]))) {
                match = false;
                break;
            }
        }
        if (match) {
            return i;
        }
    }
    return std::string_view::npos;
}

constexpr std::string_view kTitleMarker = "Product title (do not mention): ";
constexpr std::string_view kReviewMarker = "\nReview: ";

// Title and review back out of a rendered prompt.
std::pair<std::string, std::string> unpack_prompt(const std::string& request_body) {
    auto j = json::parse(request_body, nullptr, false);
    if (j.is_discarded() || !j.contains("messages") || !j["messages"].is_array() || j["messages"].empty()) {
        return {};
    }
    const auto& last = j["messages"].back();
    if (!last.contains("content") || !last["content"].is_string()) {
        return {};
    }
    const auto content = last["content"].get<std::string>();
    const auto t = content.find(kTitleMarker);
    const auto r = content.find(kReviewMarker, t == std::string::npos ? 0 : t);
    if (t == std::string::npos || r == std::string::npos) {
        return {{}, content};
    }
    const auto title_start = t + kTitleMarker.size();
    return {content.substr(title_start, r - title_start), content.substr(r + kReviewMarker.size())};
}

std::string completion_body(const std::string& content) {
    ordered_json j = {{"id", "mock-completion"},
                      {"object", "chat.completion"},
                      {"model", "mock"},
                      {"choices",
                       {{{"index", 0},
                         {"message", {{"role", "assistant"}, {"content", content}}},
                         {"finish_reason", "stop"}}}}};
    return j.dump();
}

std::string mock_answer(const std::string& request_body) {
    auto [title, review] = unpack_prompt(request_body);
    return completion_body(mock_rewrite(title, review));
}

} // namespace

std::string mock_rewrite(std::string_view title, std::string_view review_text) {
    std::string body(trim(review_text));
    const auto t = trim(title);
    // Scrubbing can splice a new occurrence together, so repeat until clean.
    for (auto pos = find_ignore_case(body, t, 0); pos != std::string::npos; pos = find_ignore_case(body, t, 0)) {
        body.replace(pos, t.size(), "it");
    }
    std::istringstream words(body);
    std::string word;
    std::string out = "I am looking for something for this situation:";
    for (std::size_t n = 0; n < 60 && words >> word; ++n) {
        out += ' ';
        out += word;
    }
    return out;
}

ChatResponse MockResponder::send(const ChatRequest& request) {
    return {200, mock_answer(request.body), {}};
}

// ---------------------------------------------------------------------------

HttpTransport::HttpTransport(EndpointConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    if (!cfg_.auth_env.empty()) {
        if (const char* v = std::getenv(cfg_.auth_env.c_str()); v != nullptr && *v != '\0') {
            token_ = v;
        }
    }
}

ChatResponse HttpTransport::send(const ChatRequest& request) {
    // One client per call keeps send() reentrant.
    httplib::Client cli(cfg_.base_url);
    const auto secs = static_cast<time_t>(cfg_.timeout_seconds);
    const auto usecs = static_cast<time_t>((cfg_.timeout_seconds - static_cast<double>(secs)) * 1e6);
    cli.set_connection_timeout(secs, usecs);
    cli.set_read_timeout(secs, usecs);
    cli.set_write_timeout(secs, usecs);
    httplib::Headers headers;
    if (token_) {
        headers.emplace("Authorization", "Bearer " + *token_);
    }
    auto res = cli.Post(cfg_.path, headers, request.body, "application/json");
    if (!res) {
        return {0, {}, httplib::to_string(res.error())};
    }
    return {res->status, res->body, {}};
}

// ---------------------------------------------------------------------------

ReplayTransport::ReplayTransport(const std::filesystem::path& transcript) {
    std::ifstream in(transcript);
    if (!in) {
        throw IoError("cannot read transcript " + transcript.string());
    }
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (trim(line).empty()) {
            continue;
        }
        try {
            auto j = json::parse(line);
            ChatResponse r;
            r.status = j.at("status").get<int>();
            r.body = j.at("body").get<std::string>();
            r.error = j.value("error", std::string());
            responses_[j.at("request_hash").get<std::string>()].push_back(std::move(r));
        } catch (const json::exception& e) {
            throw DataError("transcript " + transcript.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
}

ChatResponse ReplayTransport::send(const ChatRequest& request) {
    std::lock_guard lock(mu_);
    auto it = responses_.find(request.request_hash);
    if (it == responses_.end() || it->second.empty()) {
        ++misses_;
        return {-1, {}, "replay_miss"};
    }
    auto r = std::move(it->second.front());
    it->second.pop_front();
    return r;
}

std::size_t ReplayTransport::misses() const {
    std::lock_guard lock(mu_);
    return misses_;
}

RecordingTransport::RecordingTransport(ChatTransport& inner) : inner_(inner) {}

ChatResponse RecordingTransport::send(const ChatRequest& request) {
    auto r = inner_.send(request);
    std::lock_guard lock(mu_);
    log_[request.request_hash].push_back(r);
    return r;
}

void RecordingTransport::flush(const std::filesystem::path& transcript) const {
    std::ofstream out(transcript, std::ios::trunc);
    if (!out) {
        throw IoError("cannot write transcript " + transcript.string());
    }
    std::lock_guard lock(mu_);
    for (const auto& [hash, responses] : log_) {
        for (const auto& r : responses) {
            ordered_json j = {{"request_hash", hash}, {"status", r.status}, {"body", r.body}};
            if (!r.error.empty()) {
                j["error"] = r.error;
            }
            out << j.dump() << '\n';
        }
    }
    if (!out) {
        throw IoError("write failed: " + transcript.string());
    }
}

// ---------------------------------------------------------------------------

struct MockChatServer::Impl {
    httplib::Server server;
    std::thread thread;
    mutable std::mutex mu;
    std::deque<int> failures;
    std::function<std::string(const std::string&)> content;
    std::string token;
    std::vector<std::chrono::steady_clock::time_point> arrivals;
};

MockChatServer::MockChatServer() : impl_(std::make_unique<Impl>()) {
    auto* impl = impl_.get();
    impl->server.Post("/v1/chat/completions", [impl](const httplib::Request& req, httplib::Response& res) {
        std::optional<int> fail;
        std::function<std::string(const std::string&)> content;
        std::string token;
        {
            std::lock_guard lock(impl->mu);
            impl->arrivals.push_back(std::chrono::steady_clock::now());
            if (!impl->failures.empty()) {
                fail = impl->failures.front();
                impl->failures.pop_front();
            }
            content = impl->content;
            token = impl->token;
        }
        if (!token.empty() && req.get_header_value("Authorization") != "Bearer " + token) {
            res.status = 401;
            res.set_content(R"({"error":{"message":"unauthorized"}})", "application/json");
            return;
        }
        if (fail) {
            res.status = *fail;
            res.set_content(R"({"error":{"message":"scripted failure"}})", "application/json");
            return;
        }
        res.status = 200;
        if (content) {
            res.set_content(completion_body(content(req.body)), "application/json");
        } else {
            res.set_content(mock_answer(req.body), "application/json");
        }
    });
    port_ = impl->server.bind_to_any_port("127.0.0.1");
    if (port_ <= 0) {
        throw RuntimeFailure("mock chat server could not bind a port");
    }
    impl->thread = std::thread([impl] { impl->server.listen_after_bind(); });
    impl->server.wait_until_ready();
}

MockChatServer::~MockChatServer() {
    impl_->server.stop();
    if (impl_->thread.joinable()) {
        impl_->thread.join();
    }
}

std::string MockChatServer::base_url() const {
    return "http://127.0.0.1:" + std::to_string(port_);
}

void MockChatServer::script_failures(std::vector<int> statuses) {
    std::lock_guard lock(impl_->mu);
    impl_->failures.assign(statuses.begin(), statuses.end());
}

void MockChatServer::set_content(std::function<std::string(const std::string&)> fn) {
    std::lock_guard lock(impl_->mu);
    impl_->content = std::move(fn);
}

void MockChatServer::set_required_token(std::string token) {
    std::lock_guard lock(impl_->mu);
    impl_->token = std::move(token);
}

std::vector<std::chrono::steady_clock::time_point> MockChatServer::arrivals() const {
    std::lock_guard lock(impl_->mu);
    return impl_->arrivals;
}

std::size_t MockChatServer::requests() const {
    std::lock_guard lock(impl_->mu);
    return impl_->arrivals.size();
}

} // namespace ctxbench
