#include "ctxbench/querygen.hpp"

#include <algorithm>
#include <cmath>
#include <thread>

#include <json.hpp>

#include "ctxbench/error.hpp"
#include "ctxbench/hashing.hpp"
#include "ctxbench/random.hpp"
#include "ctxbench/text.hpp"
#include "parallel.hpp"

namespace ctxbench {

using nlohmann::json;
using nlohmann::ordered_json;

void EndpointConfig::validate() const {
    if (!base_url.starts_with("http://") && !base_url.starts_with("https://")) {
        throw UsageError("endpoint base_url must start with http:// or https://");
    }
    if (!(timeout_seconds > 0.0)) {
        throw UsageError("endpoint timeout must be positive");
    }
    if (max_concurrency < 1) {
        throw UsageError("endpoint max_concurrency must be >= 1");
    }
    if (!(rate_window_seconds > 0.0)) {
        throw UsageError("endpoint rate window must be positive");
    }
    if (backoff_initial_seconds < 0.0 || backoff_max_seconds < backoff_initial_seconds) {
        throw UsageError("endpoint backoff must satisfy 0 <= initial <= max");
    }
}

bool is_eligible_source(const Review& r) {
    return r.rating == 5.0 && utf8_length(r.text) >= kMinSourceChars;
}

std::vector<Review> select_sources(std::span<const Review> reviews, std::size_t n, std::uint64_t seed,
                                   const std::optional<SplitBoundaries>& test_only) {
    std::vector<std::size_t> eligible;
    for (std::size_t i = 0; i < reviews.size(); ++i) {
        if (test_only && assign_split(reviews[i], *test_only) != Split::test) {
            continue;
        }
        if (is_eligible_source(reviews[i])) {
            eligible.push_back(i);
        }
    }
    Rng rng(mix64(seed));
    auto picked = sample_indices(eligible.size(), std::min(n, eligible.size()), rng);
    std::vector<Review> out;
    out.reserve(picked.size());
    for (auto p : picked) {
        out.push_back(reviews[eligible[p]]);
    }
    return out;
}

// ---------------------------------------------------------------------------

namespace {

constexpr std::string_view kSystemMessage =
    "You help build a product search benchmark. You turn customer reviews into the "
    "requests a shopper would type before buying.";

constexpr std::string_view kTemplate =
    "Rewrite the customer review below as a request the same customer might type into a "
    "shopping assistant before buying. Write in the first person and describe the need, "
    "the situation and any preferences. Do not name the product, its brand or its title. "
    "Reply with the request only.\n"
    "\n"
    "Product title (do not mention): {title}\n"
    "Review: {review}";

} // namespace

std::string_view prompt_template() {
    return kTemplate;
}

std::string prompt_hash() {
    std::string material(kPromptVersion);
    material += '\n';
    material += kSystemMessage;
    material += '\n';
    material += kTemplate;
    return sha256_hex(material);
}

std::string render_prompt(const Review& review, const ItemMeta& meta) {
    // Review goes last so user text can never displace the title line.
    std::string out(kTemplate);
    const auto title_pos = out.find("{title}");
    out.replace(title_pos, 7, meta.title);
    const auto review_pos = out.find("{review}", title_pos + meta.title.size());
    out.replace(review_pos, 8, review.text);
    return out;
}

ChatRequest make_chat_request(const EndpointConfig& cfg, const Review& review, const ItemMeta& meta) {
    ordered_json body = {{"model", cfg.model},
                         {"messages",
                          {{{"role", "system"}, {"content", kSystemMessage}},
                           {{"role", "user"}, {"content", render_prompt(review, meta)}}}},
                         {"temperature", cfg.temperature}};
    ChatRequest req;
    req.body = body.dump();
    req.request_hash = sha256_hex(req.body);
    return req;
}

std::optional<std::string> parse_chat_content(std::string_view body) {
    auto j = json::parse(body, nullptr, false);
    if (j.is_discarded() || !j.is_object()) {
        return std::nullopt;
    }
    auto choices = j.find("choices");
    if (choices == j.end() || !choices->is_array() || choices->empty()) {
        return std::nullopt;
    }
    const auto& first = choices->front();
    if (!first.is_object() || !first.contains("message")) {
        return std::nullopt;
    }
    const auto& msg = first.at("message");
    if (!msg.is_object() || !msg.contains("content") || !msg.at("content").is_string()) {
        return std::nullopt;
    }
    return msg.at("content").get<std::string>();
}

// ---------------------------------------------------------------------------

Clock::Duration SteadyClock::now() {
    return std::chrono::duration_cast<Duration>(std::chrono::steady_clock::now().time_since_epoch());
}

void SteadyClock::sleep_for(Duration d) {
    if (d > Duration::zero()) {
        std::this_thread::sleep_for(d);
    }
}

Clock::Duration FakeClock::now() {
    std::lock_guard lock(mu_);
    return t_;
}

void FakeClock::sleep_for(Duration d) {
    std::lock_guard lock(mu_);
    if (d > Duration::zero()) {
        t_ += d;
        slept_ += d;
    }
}

Clock::Duration FakeClock::slept() const {
    std::lock_guard lock(mu_);
    return slept_;
}

RateLimiter::RateLimiter(std::size_t cap, Clock::Duration window, Clock& clock)
    : cap_(cap), window_(window), clock_(clock) {
    if (cap_ == 0) {
        throw UsageError("rate limiter cap must be >= 1");
    }
    if (window_ <= Clock::Duration::zero()) {
        throw UsageError("rate limiter window must be positive");
    }
}

std::size_t RateLimiter::acquire() {
    std::unique_lock lock(mu_);
    for (;;) {
        const auto now = clock_.now();
        std::optional<Clock::Duration> earliest;
        for (auto it = slots_.begin(); it != slots_.end();) {
            if (it->second && *it->second + window_ <= now) {
                it = slots_.erase(it);
                continue;
            }
            if (it->second && (!earliest || *it->second + window_ < *earliest)) {
                earliest = *it->second + window_;
            }
            ++it;
        }
        if (slots_.size() < cap_) {
            const auto id = next_slot_++;
            slots_.emplace(id, std::nullopt);
            return id;
        }
        // Every slot still in flight: poll.
        const auto wait = earliest ? *earliest - now : Clock::Duration(std::chrono::milliseconds(1));
        lock.unlock();
        clock_.sleep_for(wait);
        lock.lock();
    }
}

void RateLimiter::release(std::size_t slot) {
    std::lock_guard lock(mu_);
    auto it = slots_.find(slot);
    if (it != slots_.end()) {
        it->second = clock_.now();
    }
}

// ---------------------------------------------------------------------------

std::string validate_query(std::string_view query, const ItemMeta& meta) {
    const auto q = trim(query);
    if (q.empty()) {
        return "empty";
    }
    if (utf8_length(q) < kMinQueryChars) {
        return "too_short";
    }
    const auto title = trim(meta.title);
    if (!title.empty() && contains_ignore_case(q, title)) {
        return "leak";
    }
    return {};
}

namespace {

std::string clean_content(std::string_view content) {
    auto s = trim(content);
    if (s.size() >= 2 && s.front() == '"' && s.back() == '"') {
        s = trim(s.substr(1, s.size() - 2));
    }
    return std::string(s);
}

bool transient(const ChatResponse& r) {
    return r.status == 0 || r.status == 429 || (r.status >= 500 && r.status <= 599);
}

Clock::Duration backoff(const EndpointConfig& cfg, std::size_t retry) {
    const double secs = std::min(cfg.backoff_max_seconds,
                                 cfg.backoff_initial_seconds * std::pow(2.0, static_cast<double>(retry)));
    return std::chrono::duration_cast<Clock::Duration>(std::chrono::duration<double>(secs));
}

} // namespace

SynthesizedQuery synthesize_query(const Review& review, const ItemMeta& meta, const EndpointConfig& cfg,
                                  SynthesisContext ctx) {
    SynthesizedQuery out;
    out.review_id = review.review_id();
    out.item_id = review.item_id;
    out.domain = review.domain;
    const auto req = make_chat_request(cfg, review, meta);

    for (std::size_t attempt = 0; attempt <= cfg.max_retries; ++attempt) {
        if (attempt > 0) {
            ctx.clock.sleep_for(backoff(cfg, attempt - 1));
        }
        std::optional<std::size_t> slot;
        if (ctx.limiter != nullptr) {
            slot = ctx.limiter->acquire();
        }
        ChatResponse resp;
        try {
            resp = ctx.transport.send(req);
        } catch (...) {
            if (slot) {
                ctx.limiter->release(*slot);
            }
            throw;
        }
        if (slot) {
            ctx.limiter->release(*slot);
        }
        ++out.attempts;

        if (resp.status == 200) {
            auto content = parse_chat_content(resp.body);
            if (!content) {
                out.reason = "bad_response";
                return out;
            }
            out.query = clean_content(*content);
            out.reason = validate_query(out.query, meta);
            out.status = out.reason.empty() ? QueryStatus::ok : QueryStatus::failed;
            return out;
        }
        if (resp.status < 0) {
            out.reason = resp.error.empty() ? "transport" : resp.error;
            return out;
        }
        if (!transient(resp)) {
            out.reason = "http_" + std::to_string(resp.status);
            return out;
        }
    }
    out.reason = "transport";
    return out;
}

std::vector<SynthesizedQuery> synthesize_batch(std::span<const Review> sources,
                                               const std::unordered_map<std::string, const ItemMeta*>& metadata,
                                               const EndpointConfig& cfg, ChatTransport& transport, Clock& clock) {
    cfg.validate();
    std::optional<RateLimiter> limiter;
    if (cfg.rate_per_minute > 0) {
        limiter.emplace(cfg.rate_per_minute,
                        std::chrono::duration_cast<Clock::Duration>(std::chrono::duration<double>(cfg.rate_window_seconds)),
                        clock);
    }
    std::vector<SynthesizedQuery> out(sources.size());
    SynthesisContext ctx{transport, clock, limiter ? &*limiter : nullptr};
    detail::parallel_for(sources.size(), cfg.max_concurrency, [&](std::size_t i) {
        const auto& r = sources[i];
        auto it = metadata.find(r.item_id);
        if (it == metadata.end()) {
            out[i].review_id = r.review_id();
            out[i].item_id = r.item_id;
            out[i].domain = r.domain;
            out[i].reason = "no_metadata";
            return;
        }
        out[i] = synthesize_query(r, *it->second, cfg, ctx);
    });
    std::stable_sort(out.begin(), out.end(),
                     [](const SynthesizedQuery& a, const SynthesizedQuery& b) { return a.review_id < b.review_id; });
    return out;
}

std::string query_id_for(std::string_view review_id) {
    return "q" + sha256_hex(review_id).substr(0, 16);
}

std::string to_jsonl(const SynthesizedQuery& q, std::string_view prompt_hash) {
    ordered_json j = {{"qid", query_id_for(q.review_id)},
                      {"query", q.query},
                      {"item_id", q.item_id},
                      {"ori_rating", 5},
                      {"domain", q.domain},
                      {"prompt_hash", prompt_hash}};
    return j.dump();
}

} // namespace ctxbench
