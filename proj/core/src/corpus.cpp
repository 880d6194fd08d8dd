#include "ctxbench/corpus.hpp"

#include <algorithm>
#include <limits>

#include <json.hpp>

#include "ctxbench/error.hpp"
#include "ctxbench/text.hpp"

namespace ctxbench {

using nlohmann::json;

namespace {

std::string alternate_key(const std::string& key) {
    if (key == "parent_asin") {
        return "asin";
    }
    if (key == "asin") {
        return "parent_asin";
    }
    return {};
}

const json* find_item_key(const json& obj, const IngestOptions& opts) {
    auto it = obj.find(opts.item_key);
    if (it != obj.end() && it->is_string() && !it->get_ref<const std::string&>().empty()) {
        return &*it;
    }
    auto alt = alternate_key(opts.item_key);
    if (alt.empty()) {
        return nullptr;
    }
    it = obj.find(alt);
    if (it != obj.end() && it->is_string() && !it->get_ref<const std::string&>().empty()) {
        return &*it;
    }
    return nullptr;
}

std::optional<json> parse_object(std::string_view line) {
    auto j = json::parse(line.begin(), line.end(), nullptr, /*allow_exceptions=*/false);
    if (j.is_discarded() || !j.is_object()) {
        return std::nullopt;
    }
    return j;
}

// Missing is fine, wrong type is not.
bool read_optional_string(const json& obj, const char* key, std::string& out) {
    auto it = obj.find(key);
    if (it == obj.end() || it->is_null()) {
        return true;
    }
    if (!it->is_string()) {
        return false;
    }
    out = it->get<std::string>();
    return true;
}

bool read_string_list(const json& obj, const char* key, std::vector<std::string>& out) {
    auto it = obj.find(key);
    if (it == obj.end() || it->is_null()) {
        return true;
    }
    if (it->is_string()) {
        out.push_back(it->get<std::string>());
        return true;
    }
    if (!it->is_array()) {
        return false;
    }
    for (const auto& v : *it) {
        if (v.is_string()) {
            out.push_back(v.get<std::string>());
        }
    }
    return true;
}

} // namespace

std::string Review::review_id() const {
    return user_id + "|" + item_id + "|" + std::to_string(timestamp);
}

std::optional<Review> parse_review(std::string_view line, const IngestOptions& opts) {
    auto parsed = parse_object(line);
    if (!parsed) {
        return std::nullopt;
    }
    const json& obj = *parsed;

    Review r;
    auto user = obj.find("user_id");
    if (user == obj.end() || !user->is_string() || user->get_ref<const std::string&>().empty()) {
        return std::nullopt;
    }
    r.user_id = user->get<std::string>();

    const json* item = find_item_key(obj, opts);
    if (item == nullptr) {
        return std::nullopt;
    }
    r.item_id = item->get<std::string>();

    auto rating = obj.find("rating");
    if (rating == obj.end() || !rating->is_number()) {
        return std::nullopt;
    }
    r.rating = rating->get<double>();
    if (!(r.rating >= 1.0 && r.rating <= 5.0)) {
        return std::nullopt;
    }

    auto text = obj.find("text");
    if (text == obj.end() || !text->is_string()) {
        return std::nullopt;
    }
    r.text = text->get<std::string>();
    if (!read_optional_string(obj, "title", r.title)) {
        return std::nullopt;
    }

    auto ts = obj.find("timestamp");
    if (ts == obj.end()) {
        return std::nullopt;
    }
    if (ts->is_number_unsigned()) {
        auto v = ts->get<std::uint64_t>();
        if (v > static_cast<std::uint64_t>(std::numeric_limits<Timestamp>::max())) {
            return std::nullopt;
        }
        r.timestamp = static_cast<Timestamp>(v);
    } else if (ts->is_number_integer()) {
        r.timestamp = ts->get<Timestamp>();
    } else {
        return std::nullopt;
    }
    if (r.timestamp < 0) {
        return std::nullopt;
    }

    for (const char* key : {"verified_purchase", "verified"}) {
        auto v = obj.find(key);
        if (v != obj.end() && v->is_boolean()) {
            r.verified = v->get<bool>();
            break;
        }
    }
    r.domain = opts.domain;
    return r;
}

std::optional<ItemMeta> parse_item_meta(std::string_view line, const IngestOptions& opts) {
    auto parsed = parse_object(line);
    if (!parsed) {
        return std::nullopt;
    }
    const json& obj = *parsed;

    ItemMeta m;
    const json* item = find_item_key(obj, opts);
    if (item == nullptr) {
        return std::nullopt;
    }
    m.item_id = item->get<std::string>();

    auto title = obj.find("title");
    if (title == obj.end() || !title->is_string()) {
        return std::nullopt;
    }
    m.title = title->get<std::string>();
    if (!read_string_list(obj, "features", m.features) ||
        !read_string_list(obj, "description", m.description)) {
        return std::nullopt;
    }
    m.domain = opts.domain;
    return m;
}

std::string to_jsonl(const Review& r) {
    json j = {{"user_id", r.user_id},     {"parent_asin", r.item_id}, {"rating", r.rating},
              {"title", r.title},         {"text", r.text},           {"timestamp", r.timestamp},
              {"domain", r.domain}};
    if (r.verified) {
        j["verified_purchase"] = *r.verified;
    }
    return j.dump();
}

std::string to_jsonl(const ItemMeta& m) {
    json j = {{"parent_asin", m.item_id},
              {"domain", m.domain},
              {"title", m.title},
              {"features", m.features},
              {"description", m.description}};
    return j.dump();
}

template <typename Record>
RecordStream<Record>::RecordStream(const std::filesystem::path& path, IngestOptions opts)
    : in_(path), opts_(std::move(opts)) {
    if (!in_) {
        throw IoError("cannot read " + path.string());
    }
    if (!opts_.allowed_domains.empty() &&
        std::find(opts_.allowed_domains.begin(), opts_.allowed_domains.end(), opts_.domain) ==
            opts_.allowed_domains.end()) {
        throw UsageError("domain '" + opts_.domain + "' is not a configured category");
    }
}

template <typename Record>
std::optional<Record> RecordStream<Record>::next() {
    while (std::getline(in_, line_)) {
        ++lines_;
        if (trim(line_).empty()) {
            continue;
        }
        std::optional<Record> rec;
        if constexpr (std::is_same_v<Record, Review>) {
            rec = parse_review(line_, opts_);
        } else {
            rec = parse_item_meta(line_, opts_);
        }
        if (rec) {
            return rec;
        }
        ++skipped_;
    }
    return std::nullopt;
}

template class RecordStream<Review>;
template class RecordStream<ItemMeta>;

Loaded<Review> load_reviews(const std::filesystem::path& path, const IngestOptions& opts) {
    ReviewStream stream(path, opts);
    Loaded<Review> out;
    while (auto r = stream.next()) {
        out.records.push_back(std::move(*r));
    }
    out.skipped = stream.skipped();
    return out;
}

Loaded<ItemMeta> load_metadata(const std::filesystem::path& path, const IngestOptions& opts) {
    MetaStream stream(path, opts);
    Loaded<ItemMeta> out;
    while (auto m = stream.next()) {
        out.records.push_back(std::move(*m));
    }
    out.skipped = stream.skipped();
    return out;
}

void StatsAccumulator::add(const Review& r) {
    if (stats_.n_reviews == 0) {
        stats_.min_time = r.timestamp;
        stats_.max_time = r.timestamp;
    } else {
        stats_.min_time = std::min(stats_.min_time, r.timestamp);
        stats_.max_time = std::max(stats_.max_time, r.timestamp);
    }
    ++stats_.n_reviews;
    users_.insert(r.user_id);
    items_.insert(r.item_id);
    stats_.approx_tokens += count_whitespace_tokens(r.title) + count_whitespace_tokens(r.text);
}

void StatsAccumulator::add(const ItemMeta& m) {
    ++stats_.n_meta;
    items_.insert(m.item_id);
    stats_.approx_tokens += count_whitespace_tokens(m.title);
    for (const auto& f : m.features) {
        stats_.approx_tokens += count_whitespace_tokens(f);
    }
    for (const auto& d : m.description) {
        stats_.approx_tokens += count_whitespace_tokens(d);
    }
}

CorpusStats StatsAccumulator::finish() const {
    CorpusStats out = stats_;
    out.n_users = users_.size();
    out.n_items = items_.size();
    return out;
}

CorpusStats compute_stats(std::span<const Review> reviews, std::span<const ItemMeta> metadata) {
    StatsAccumulator acc;
    for (const auto& r : reviews) {
        acc.add(r);
    }
    for (const auto& m : metadata) {
        acc.add(m);
    }
    return acc.finish();
}

} // namespace ctxbench
