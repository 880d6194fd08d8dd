#include <algorithm>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

#include <json.hpp>

#include "ctxbench/error.hpp"
#include "ctxbench/random.hpp"
#include "ctxbench/retrieval.hpp"
#include "ctxbench/text.hpp"

namespace ctxbench {

using nlohmann::json;

std::string_view to_string(PoolMode m) {
    return m == PoolMode::shared ? "shared" : "per_query";
}

PoolMode parse_pool_mode(std::string_view s) {
    if (s == "shared") {
        return PoolMode::shared;
    }
    if (s == "per_query") {
        return PoolMode::per_query;
    }
    throw UsageError("pool mode must be shared or per_query, got '" + std::string(s) + "'");
}

bool CandidatePool::contains(std::string_view item) const {
    return std::binary_search(items.begin(), items.end(), item,
                              [](const auto& a, const auto& b) { return std::string_view(a) < std::string_view(b); });
}

CandidatePool build_candidate_pool(std::span<const EvalPair> pairs,
                                   const std::map<std::string, std::vector<std::string>>& universe,
                                   std::size_t n_per_query, std::uint64_t seed, PoolMode mode) {
    // Sorted, de-duplicated copies so the sample does not depend on input order.
    std::map<std::string, std::vector<std::string>> domains;
    for (const auto& [domain, items] : universe) {
        auto& sorted = domains[domain];
        sorted = items;
        std::sort(sorted.begin(), sorted.end());
        sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
    }

    Rng rng(seed);
    CandidatePool pool;
    pool.mode = mode;
    std::set<std::string> members;
    static const std::vector<std::string> kEmpty;
    for (const auto& q : pairs) {
        auto it = domains.find(q.domain);
        const auto& items = it == domains.end() ? kEmpty : it->second;
        auto gt_pos = std::lower_bound(items.begin(), items.end(), q.gt_item);
        const bool gt_listed = gt_pos != items.end() && *gt_pos == q.gt_item;
        const auto gt_index = static_cast<std::size_t>(gt_pos - items.begin());
        const std::size_t others = items.size() - (gt_listed ? 1 : 0);

        std::vector<std::string> sample;
        for (auto idx : sample_indices(others, n_per_query, rng)) {
            if (gt_listed && idx >= gt_index) {
                ++idx;
            }
            sample.push_back(items[idx]);
        }

        PoolQuery pq{q.query_id, q.gt_item, q.domain, {}};
        if (mode == PoolMode::per_query) {
            pq.private_items = sample;
            pq.private_items.push_back(q.gt_item);
            std::sort(pq.private_items.begin(), pq.private_items.end());
        }
        members.insert(sample.begin(), sample.end());
        members.insert(q.gt_item);
        pool.queries.push_back(std::move(pq));
    }
    pool.items.assign(members.begin(), members.end());
    return pool;
}

namespace {

std::filesystem::path with_suffix(const std::filesystem::path& prefix, const char* suffix) {
    auto p = prefix;
    p += suffix;
    return p;
}

} // namespace

void save_pool(const std::filesystem::path& prefix, const CandidatePool& pool) {
    auto qpath = with_suffix(prefix, ".jsonl");
    std::ofstream q(qpath, std::ios::trunc);
    if (!q) {
        throw IoError("cannot write " + qpath.string());
    }
    for (const auto& pq : pool.queries) {
        json j = {{"query_id", pq.query_id}, {"gt_item", pq.gt_item}, {"domain", pq.domain}};
        if (pool.mode == PoolMode::per_query) {
            j["items"] = pq.private_items;
        }
        q << j.dump() << '\n';
    }
    auto ipath = with_suffix(prefix, ".ids");
    std::ofstream ids(ipath, std::ios::trunc);
    if (!ids) {
        throw IoError("cannot write " + ipath.string());
    }
    for (const auto& id : pool.items) {
        ids << id << '\n';
    }
    if (!q || !ids) {
        throw IoError("write failed for pool " + prefix.string());
    }
}

CandidatePool load_pool(const std::filesystem::path& prefix) {
    CandidatePool pool;
    auto ipath = with_suffix(prefix, ".ids");
    std::ifstream ids(ipath);
    if (!ids) {
        throw IoError("cannot read " + ipath.string());
    }
    std::string line;
    while (std::getline(ids, line)) {
        if (!trim(line).empty()) {
            pool.items.emplace_back(trim(line));
        }
    }
    std::sort(pool.items.begin(), pool.items.end());
    pool.items.erase(std::unique(pool.items.begin(), pool.items.end()), pool.items.end());

    auto qpath = with_suffix(prefix, ".jsonl");
    std::ifstream q(qpath);
    if (!q) {
        throw IoError("cannot read " + qpath.string());
    }
    std::size_t line_no = 0;
    bool any_private = false;
    while (std::getline(q, line)) {
        ++line_no;
        if (trim(line).empty()) {
            continue;
        }
        try {
            auto j = json::parse(line);
            PoolQuery pq;
            pq.query_id = j.at("query_id").get<std::string>();
            pq.gt_item = j.at("gt_item").get<std::string>();
            pq.domain = j.at("domain").get<std::string>();
            if (j.contains("items")) {
                pq.private_items = j.at("items").get<std::vector<std::string>>();
                any_private = true;
            }
            pool.queries.push_back(std::move(pq));
        } catch (const json::exception& e) {
            throw DataError(qpath.string() + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    pool.mode = any_private ? PoolMode::per_query : PoolMode::shared;
    return pool;
}

std::string ranked_to_tsv(std::string_view query_id, const RankedList& ranked) {
    std::ostringstream os;
    os << std::setprecision(9);
    for (std::size_t r = 0; r < ranked.size(); ++r) {
        os << query_id << '\t' << (r + 1) << '\t' << ranked[r].item_id << '\t' << ranked[r].score << '\n';
    }
    return os.str();
}

} // namespace ctxbench
