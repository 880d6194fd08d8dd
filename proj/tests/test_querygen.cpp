#include <cstdlib>
#include <set>

#include <gtest/gtest.h>
#include <json.hpp>

#include "ctxbench/error.hpp"
#include "ctxbench/querygen.hpp"
#include "test_util.hpp"

using namespace ctxbench;

namespace {

Review review(std::string user, std::string item, double rating, std::string text, Timestamp t = 1) {
    Review r;
    r.user_id = std::move(user);
    r.item_id = std::move(item);
    r.rating = rating;
    r.text = std::move(text);
    r.timestamp = t;
    r.domain = "Garden";
    return r;
}

ItemMeta bug_a_salt() {
    return {"B0BUG", "Garden", "BUG-A-SALT 3.0 Black Fly Edition", {"salt gun"}, {"kills flies"}};
}

const std::string kLongText =
    "I have used this in my garden every evening and the flies are finally gone, which makes weeding far "
    "more pleasant than before.";

EndpointConfig fast_config(const std::string& base_url = "http://127.0.0.1:1") {
    EndpointConfig c;
    c.base_url = base_url;
    c.timeout_seconds = 2.0;
    c.rate_per_minute = 0;
    c.max_concurrency = 2;
    return c;
}

} // namespace

TEST(Sources, Eligibility) {
    EXPECT_TRUE(is_eligible_source(review("u", "i", 5, std::string(100, 'x'))));
    EXPECT_FALSE(is_eligible_source(review("u", "i", 5, std::string(99, 'x'))));
    EXPECT_FALSE(is_eligible_source(review("u", "i", 4, std::string(300, 'x'))));
    // characters, not bytes
    std::string accents;
    for (int i = 0; i < 99; ++i) {
        accents += "\xc3\xa9";
    }
    EXPECT_FALSE(is_eligible_source(review("u", "i", 5, accents)));
}

TEST(Sources, SeededSampleInInputOrder) {
    std::vector<Review> rs;
    for (int i = 0; i < 50; ++i) {
        rs.push_back(review("u" + std::to_string(i), "i", i % 5 == 0 ? 4 : 5, kLongText, 100 + i));
    }
    auto a = select_sources(rs, 10, 7);
    EXPECT_EQ(a.size(), 10u);
    EXPECT_EQ(a, select_sources(rs, 10, 7));
    for (std::size_t i = 1; i < a.size(); ++i) {
        EXPECT_LT(a[i - 1].timestamp, a[i].timestamp);
    }
    for (const auto& r : a) {
        EXPECT_EQ(r.rating, 5.0);
    }
    EXPECT_EQ(select_sources(rs, 1000, 7).size(), 40u);
    SplitBoundaries b{120, 140};
    for (const auto& r : select_sources(rs, 1000, 7, b)) {
        EXPECT_GE(r.timestamp, 140);
    }
}

TEST(Validate, LengthAndLeak) {
    const auto meta = bug_a_salt();
    EXPECT_EQ(validate_query("", meta), "empty");
    EXPECT_EQ(validate_query(std::string(39, 'a'), meta), "too_short");
    EXPECT_EQ(validate_query(std::string(40, 'a'), meta), "");
    EXPECT_EQ(validate_query("I need something like the bug-a-salt 3.0 black fly edition for my yard", meta), "leak");
    EXPECT_EQ(validate_query("I want a gun that I can use while gardening to get rid of the flies bothering me",
                             meta),
              "");
}

TEST(Prompt, RequestIsDeterministic) {
    auto r = review("u", "B0BUG", 5, kLongText);
    const auto meta = bug_a_salt();
    EndpointConfig cfg;
    const auto a = make_chat_request(cfg, r, meta);
    EXPECT_EQ(a.request_hash, make_chat_request(cfg, r, meta).request_hash);
    auto body = nlohmann::json::parse(a.body);
    EXPECT_EQ(body.at("model"), cfg.model);
    const auto prompt = render_prompt(r, meta);
    EXPECT_NE(prompt.find(meta.title), std::string::npos);
    EXPECT_NE(prompt.find(kLongText), std::string::npos);
    EXPECT_EQ(prompt_hash().size(), 64u);
    cfg.model = "other";
    EXPECT_NE(make_chat_request(cfg, r, meta).request_hash, a.request_hash);
}

TEST(Prompt, ParseContent) {
    EXPECT_EQ(parse_chat_content(R"({"choices":[{"message":{"content":"hi"}}]})"), std::optional<std::string>("hi"));
    EXPECT_FALSE(parse_chat_content("not json"));
    EXPECT_FALSE(parse_chat_content(R"({"choices":[]})"));
}

TEST(Mock, RewriteScrubsTitle) {
    const auto meta = bug_a_salt();
    const auto q = mock_rewrite(meta.title, "The BUG-A-SALT 3.0 Black Fly Edition is great for " + kLongText);
    EXPECT_EQ(validate_query(q, meta), "");
    EXPECT_EQ(mock_rewrite(meta.title, kLongText), mock_rewrite(meta.title, kLongText));
}

TEST(Synthesis, RetriesThroughServerErrors) {
    MockChatServer server;
    server.script_failures({500, 500});
    auto cfg = fast_config(server.base_url());
    HttpTransport http(cfg);
    FakeClock clock;
    auto q = synthesize_query(review("u", "B0BUG", 5, kLongText), bug_a_salt(), cfg, {http, clock, nullptr});
    EXPECT_EQ(q.status, QueryStatus::ok) << q.reason;
    EXPECT_EQ(q.attempts, 3u);
    EXPECT_EQ(server.requests(), 3u);
    // 0.5 s then 1.0 s of backoff
    EXPECT_EQ(clock.slept(), std::chrono::milliseconds(1500));
}

TEST(Synthesis, GivesUpAfterMaxRetries) {
    MockChatServer server;
    server.script_failures({503, 429, 500, 502, 500});
    auto cfg = fast_config(server.base_url());
    HttpTransport http(cfg);
    FakeClock clock;
    auto q = synthesize_query(review("u", "B0BUG", 5, kLongText), bug_a_salt(), cfg, {http, clock, nullptr});
    EXPECT_EQ(q.status, QueryStatus::failed);
    EXPECT_EQ(q.attempts, cfg.max_retries + 1);
    // backoff doubles: 0.5 + 1 + 2
    EXPECT_EQ(clock.slept(), std::chrono::milliseconds(3500));
}

TEST(Synthesis, ClientErrorIsNotRetried) {
    MockChatServer server;
    server.script_failures({400});
    auto cfg = fast_config(server.base_url());
    HttpTransport http(cfg);
    FakeClock clock;
    auto q = synthesize_query(review("u", "B0BUG", 5, kLongText), bug_a_salt(), cfg, {http, clock, nullptr});
    EXPECT_EQ(q.reason, "http_400");
    EXPECT_EQ(q.attempts, 1u);
}

TEST(Synthesis, TitleEchoIsLeak) {
    MockChatServer server;
    const auto meta = bug_a_salt();
    server.set_content([&](const std::string&) { return "I keep thinking about the " + meta.title + " for my garden"; });
    auto cfg = fast_config(server.base_url());
    HttpTransport http(cfg);
    FakeClock clock;
    auto q = synthesize_query(review("u", "B0BUG", 5, kLongText), meta, cfg, {http, clock, nullptr});
    EXPECT_EQ(q.status, QueryStatus::failed);
    EXPECT_EQ(q.reason, "leak");
}

TEST(Synthesis, UnreachableEndpointIsTransport) {
    int dead_port = 0;
    {
        MockChatServer s;
        dead_port = s.port();
    }
    auto cfg = fast_config("http://127.0.0.1:" + std::to_string(dead_port));
    cfg.max_retries = 1;
    HttpTransport http(cfg);
    FakeClock clock;
    auto q = synthesize_query(review("u", "B0BUG", 5, kLongText), bug_a_salt(), cfg, {http, clock, nullptr});
    EXPECT_EQ(q.reason, "transport");
    EXPECT_EQ(q.attempts, 2u);
}

TEST(Synthesis, BearerTokenFromEnvironment) {
    MockChatServer server;
    server.set_required_token("s3cret");
    auto cfg = fast_config(server.base_url());
    cfg.auth_env = "CTXBENCH_TEST_TOKEN";
    FakeClock clock;
    ::unsetenv("CTXBENCH_TEST_TOKEN");
    {
        HttpTransport http(cfg);
        auto q = synthesize_query(review("u", "B0BUG", 5, kLongText), bug_a_salt(), cfg, {http, clock, nullptr});
        EXPECT_EQ(q.reason, "http_401");
    }
    ::setenv("CTXBENCH_TEST_TOKEN", "s3cret", 1);
    HttpTransport http(cfg);
    auto q = synthesize_query(review("u", "B0BUG", 5, kLongText), bug_a_salt(), cfg, {http, clock, nullptr});
    ::unsetenv("CTXBENCH_TEST_TOKEN");
    EXPECT_EQ(q.status, QueryStatus::ok) << q.reason;
}

TEST(RateLimit, CapHoldsInEveryWindowAtTheServer) {
    MockChatServer server;
    auto cfg = fast_config(server.base_url());
    cfg.rate_per_minute = 3;
    cfg.rate_window_seconds = 0.25;
    cfg.max_concurrency = 6;
    HttpTransport http(cfg);
    SteadyClock clock;
    std::vector<Review> rs;
    for (int i = 0; i < 10; ++i) {
        rs.push_back(review("u" + std::to_string(i), "B0BUG", 5, kLongText, i));
    }
    const auto meta = bug_a_salt();
    std::unordered_map<std::string, const ItemMeta*> by_id{{meta.item_id, &meta}};
    auto out = synthesize_batch(rs, by_id, cfg, http, clock);
    for (const auto& q : out) {
        EXPECT_EQ(q.status, QueryStatus::ok) << q.reason;
    }
    auto arrivals = server.arrivals();
    ASSERT_EQ(arrivals.size(), 10u);
    std::sort(arrivals.begin(), arrivals.end());
    const auto window = std::chrono::milliseconds(250);
    for (std::size_t i = 0; i < arrivals.size(); ++i) {
        std::size_t in_window = 0;
        for (std::size_t j = i; j < arrivals.size() && arrivals[j] - arrivals[i] < window; ++j) {
            ++in_window;
        }
        EXPECT_LE(in_window, 3u) << "window starting at arrival " << i;
    }
}

TEST(RateLimit, FakeClockWaitsOutTheWindow) {
    FakeClock clock;
    RateLimiter lim(2, std::chrono::seconds(10), clock);
    auto a = lim.acquire();
    auto b = lim.acquire();
    lim.release(a);
    lim.release(b);
    EXPECT_EQ(clock.slept(), Clock::Duration::zero());
    lim.release(lim.acquire());
    EXPECT_EQ(clock.slept(), std::chrono::seconds(10));
    EXPECT_THROW(RateLimiter(0, std::chrono::seconds(1), clock), UsageError);
}

TEST(Replay, RecordThenReplayIsIdentical) {
    ctxbench::testing::TempDir dir;
    std::vector<Review> rs;
    for (int i = 0; i < 6; ++i) {
        rs.push_back(review("u" + std::to_string(i), "B0BUG", 5, kLongText + " day " + std::to_string(i), i));
    }
    const auto meta = bug_a_salt();
    std::unordered_map<std::string, const ItemMeta*> by_id{{meta.item_id, &meta}};
    auto cfg = fast_config();
    cfg.max_concurrency = 3;
    FakeClock clock;
    MockResponder mock;
    RecordingTransport rec(mock);
    auto live = synthesize_batch(rs, by_id, cfg, rec, clock);
    rec.flush(dir / "t.jsonl");
    ReplayTransport replay(dir / "t.jsonl");
    auto again = synthesize_batch(rs, by_id, cfg, replay, clock);
    ASSERT_EQ(live.size(), again.size());
    for (std::size_t i = 0; i < live.size(); ++i) {
        EXPECT_EQ(to_jsonl(live[i], prompt_hash()), to_jsonl(again[i], prompt_hash()));
    }
    EXPECT_EQ(replay.misses(), 0u);
    // second recording of the same run is byte-identical
    RecordingTransport rec2(mock);
    synthesize_batch(rs, by_id, cfg, rec2, clock);
    rec2.flush(dir / "t2.jsonl");
    EXPECT_EQ(ctxbench::testing::read_file(dir / "t.jsonl"), ctxbench::testing::read_file(dir / "t2.jsonl"));
}

TEST(Replay, MissIsNotRetried) {
    ctxbench::testing::TempDir dir;
    ctxbench::testing::write_file(dir / "empty.jsonl", "");
    ReplayTransport replay(dir / "empty.jsonl");
    FakeClock clock;
    auto q = synthesize_query(review("u", "B0BUG", 5, kLongText), bug_a_salt(), fast_config(),
                              {replay, clock, nullptr});
    EXPECT_EQ(q.status, QueryStatus::failed);
    EXPECT_EQ(q.attempts, 1u);
    EXPECT_EQ(replay.misses(), 1u);
    EXPECT_EQ(clock.slept(), Clock::Duration::zero());
    EXPECT_THROW(ReplayTransport(dir / "nope.jsonl"), IoError);
}

TEST(Synthesis, OutputShape) {
    SynthesizedQuery q;
    q.query = "I need a quiet desk lamp for late reading sessions";
    q.review_id = "u|i|1";
    q.item_id = "i";
    q.domain = "Office";
    q.status = QueryStatus::ok;
    auto j = nlohmann::json::parse(to_jsonl(q, "abc"));
    EXPECT_EQ(j.at("qid"), query_id_for("u|i|1"));
    EXPECT_EQ(j.at("ori_rating"), 5);
    EXPECT_EQ(j.at("prompt_hash"), "abc");
    EXPECT_EQ(j.at("item_id"), "i");
}

TEST(Endpoint, Validation) {
    EndpointConfig c;
    c.validate();
    c.max_concurrency = 0;
    EXPECT_THROW(c.validate(), UsageError);
    c = {};
    c.backoff_max_seconds = 0.1;
    EXPECT_THROW(c.validate(), UsageError);
}
