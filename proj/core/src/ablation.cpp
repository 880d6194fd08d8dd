#include <iomanip>
#include <set>
#include <sstream>
#include <unordered_map>

#include <json.hpp>

#include "ctxbench/error.hpp"
#include "ctxbench/evalbench.hpp"

namespace ctxbench {

using nlohmann::json;

std::vector<AblationConfig> standard_ablation_configs(const TrainConfig& base, const std::string& target_domain) {
    if (target_domain.empty()) {
        throw UsageError("ablation needs a target domain");
    }
    std::vector<AblationConfig> out;
    for (bool single : {false, true}) {
        for (InitMode init : {InitMode::scratch, InitMode::from_aux_pretrained}) {
            AblationConfig c;
            c.config = base;
            c.config.init_mode = init;
            c.config.domain_filter.clear();
            if (single) {
                c.config.domain_filter.push_back(target_domain);
            }
            c.label = (single ? target_domain + "-only" : std::string("all-domains")) + "/" +
                      std::string(to_string(init));
            out.push_back(std::move(c));
        }
    }
    return out;
}

namespace {

AblationRow run_one(const AblationConfig& cfg, std::span<const AblationTask> tasks,
                    std::span<const TrainingPair> pairs,
                    const std::unordered_map<std::string, const ItemMeta*>& by_id,
                    const SearchEvalOptions& opts) {
    AblationRow row;
    row.label = cfg.label;
    try {
        auto trained = train(cfg.config, pairs);
        auto params = std::make_shared<const ToyEncoderParams>(std::move(trained.params));
        for (const auto& t : tasks) {
            std::vector<ItemMeta> items;
            for (const auto& id : t.pool.items) {
                auto it = by_id.find(id);
                if (it != by_id.end()) {
                    items.push_back(*it->second);
                }
            }
            auto embedded = embed_corpus(*params, items);
            DenseRetriever retriever(cfg.label, DenseIndex::from_store(embedded.store, embedded.store.ids()),
                                     encoder_query_embedder(params));
            auto report = evaluate_search(t.task, retriever, t.pool, opts);
            report.task = t.name;
            row.reports.emplace(t.name, std::move(report));
        }
        row.ok = true;
    } catch (const Error& e) {
        row.ok = false;
        row.error = e.what();
        row.reports.clear();
    }
    return row;
}

} // namespace

AblationTable run_ablation_matrix(std::span<const AblationConfig> configs,
                                  std::span<const AblationTask> tasks,
                                  std::span<const TrainingPair> pairs,
                                  std::span<const ItemMeta> metadata,
                                  const SearchEvalOptions& opts, const AblationCache* cache) {
    std::unordered_map<std::string, const ItemMeta*> by_id;
    for (const auto& m : metadata) {
        by_id[m.item_id] = &m;
    }
    AblationTable table;
    for (const auto& t : tasks) {
        table.tasks.push_back(t.name);
    }
    std::set<std::string> metrics;
    for (const auto& cfg : configs) {
        std::optional<AblationRow> row;
        if (cache != nullptr && cache->lookup) {
            row = cache->lookup(cfg);
        }
        if (!row) {
            row = run_one(cfg, tasks, pairs, by_id, opts);
            if (cache != nullptr && cache->store) {
                cache->store(cfg, *row);
            }
        }
        for (const auto& [name, report] : row->reports) {
            for (const auto& [metric, v] : report.all) {
                metrics.insert(metric);
            }
        }
        table.rows.push_back(std::move(*row));
    }
    table.metrics.assign(metrics.begin(), metrics.end());
    return table;
}

std::optional<double> AblationTable::value(std::string_view label, std::string_view task,
                                           std::string_view metric) const {
    for (const auto& row : rows) {
        if (row.label != label || !row.ok) {
            continue;
        }
        auto r = row.reports.find(std::string(task));
        if (r == row.reports.end()) {
            return std::nullopt;
        }
        auto m = r->second.all.find(std::string(metric));
        if (m == r->second.all.end()) {
            return std::nullopt;
        }
        return m->second;
    }
    return std::nullopt;
}

std::string to_json(const AblationRow& row) {
    json reports = json::object();
    for (const auto& [name, r] : row.reports) {
        reports[name] = json::parse(r.to_json());
    }
    json j = {{"label", row.label}, {"ok", row.ok}, {"error", row.error}, {"reports", std::move(reports)}};
    return j.dump();
}

AblationRow ablation_row_from_json(std::string_view text) {
    AblationRow row;
    try {
        auto j = json::parse(text);
        row.label = j.at("label").get<std::string>();
        row.ok = j.at("ok").get<bool>();
        row.error = j.at("error").get<std::string>();
        for (const auto& [name, r] : j.at("reports").items()) {
            row.reports.emplace(name, MetricReport::from_json(r.dump()));
        }
    } catch (const json::exception& e) {
        throw DataError(std::string("bad ablation row: ") + e.what());
    }
    return row;
}

std::string AblationTable::to_json() const {
    json rows_j = json::array();
    for (const auto& row : rows) {
        json cells = json::object();
        for (const auto& t : tasks) {
            json per_metric = json::object();
            for (const auto& m : metrics) {
                auto v = value(row.label, t, m);
                per_metric[m] = v ? json(*v) : json(nullptr);
            }
            cells[t] = std::move(per_metric);
        }
        json r = {{"label", row.label}, {"ok", row.ok}, {"values", std::move(cells)}};
        if (!row.ok) {
            r["error"] = row.error;
        }
        rows_j.push_back(std::move(r));
    }
    json j = {{"tasks", tasks}, {"metrics", metrics}, {"rows", std::move(rows_j)}};
    return j.dump(2);
}

std::string AblationTable::to_csv() const {
    std::ostringstream os;
    os << std::setprecision(17);
    os << "config,task,metric,value\n";
    for (const auto& row : rows) {
        for (const auto& t : tasks) {
            for (const auto& m : metrics) {
                auto v = value(row.label, t, m);
                os << row.label << ',' << t << ',' << m << ',';
                if (v) {
                    os << *v;
                } else {
                    os << "failed";
                }
                os << '\n';
            }
        }
    }
    return os.str();
}

std::string AblationTable::to_text() const {
    std::ostringstream os;
    std::size_t label_w = 8;
    for (const auto& row : rows) {
        label_w = std::max(label_w, row.label.size() + 2);
    }
    std::size_t col_w = 10;
    for (const auto& t : tasks) {
        for (const auto& m : metrics) {
            col_w = std::max(col_w, t.size() + m.size() + 3);
        }
    }
    const int cw = static_cast<int>(col_w);
    os << std::left << std::setw(static_cast<int>(label_w)) << "config";
    for (const auto& t : tasks) {
        for (const auto& m : metrics) {
            os << std::right << std::setw(cw) << (t + ":" + m);
        }
    }
    os << "\n" << std::fixed << std::setprecision(4);
    for (const auto& row : rows) {
        os << std::left << std::setw(static_cast<int>(label_w)) << row.label;
        for (const auto& t : tasks) {
            for (const auto& m : metrics) {
                auto v = value(row.label, t, m);
                os << std::right << std::setw(cw);
                if (v) {
                    os << *v;
                } else {
                    os << "failed";
                }
            }
        }
        os << "\n";
    }
    for (const auto& row : rows) {
        if (!row.ok) {
            os << row.label << ": " << row.error << "\n";
        }
    }
    return os.str();
}

} // namespace ctxbench
