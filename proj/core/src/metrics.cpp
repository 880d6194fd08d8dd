#include <cmath>
#include <iomanip>
#include <sstream>

#include <json.hpp>

#include "ctxbench/error.hpp"
#include "ctxbench/evalbench.hpp"

namespace ctxbench {

using nlohmann::json;

std::optional<std::size_t> rank_of(const RankedList& ranked, std::string_view gt) {
    for (std::size_t i = 0; i < ranked.size(); ++i) {
        if (ranked[i].item_id == gt) {
            return i + 1;
        }
    }
    return std::nullopt;
}

double ndcg_for_rank(std::size_t rank, std::size_t k) {
    if (rank == 0 || rank > k) {
        return 0.0;
    }
    return 1.0 / std::log2(static_cast<double>(rank) + 1.0);
}

double ndcg_at_k(const RankedList& ranked, std::string_view gt, std::size_t k) {
    if (k == 0) {
        throw UsageError("ndcg@k needs k >= 1");
    }
    auto r = rank_of(ranked, gt);
    return r ? ndcg_for_rank(*r, k) : 0.0;
}

double recall_at_k(const RankedList& ranked, std::string_view gt, std::size_t k) {
    if (k == 0) {
        throw UsageError("recall@k needs k >= 1");
    }
    auto r = rank_of(ranked, gt);
    return r && *r <= k ? 1.0 : 0.0;
}

void MetricAccumulator::add(const std::string& domain, const std::map<std::string, double>& values) {
    auto& s = sums[domain];
    for (const auto& [name, v] : values) {
        s[name] += v;
    }
    ++counts[domain];
}

void MetricAccumulator::finish(MetricReport& report) const {
    report.per_domain.clear();
    report.all.clear();
    report.micro.clear();
    report.examples_per_domain = counts;
    std::map<std::string, double> total;
    std::size_t n_total = 0;
    for (const auto& [domain, s] : sums) {
        const auto n = static_cast<double>(counts.at(domain));
        auto& out = report.per_domain[domain];
        for (const auto& [name, v] : s) {
            out[name] = v / n;
            total[name] += v;
        }
        n_total += counts.at(domain);
    }
    if (report.per_domain.empty()) {
        return;
    }
    std::map<std::string, double> macro;
    for (const auto& [domain, values] : report.per_domain) {
        for (const auto& [name, v] : values) {
            macro[name] += v;
        }
    }
    const auto n_domains = static_cast<double>(report.per_domain.size());
    for (auto& [name, v] : macro) {
        report.all[name] = v / n_domains;
    }
    for (const auto& [name, v] : total) {
        report.micro[name] = v / static_cast<double>(n_total);
    }
}

std::string MetricReport::to_json() const {
    json per = json::object();
    for (const auto& [domain, values] : per_domain) {
        per[domain] = values;
    }
    json j = {{"task", task},
              {"model", model},
              {"primary_metric", primary_metric},
              {"per_domain", std::move(per)},
              {"All", all.contains(primary_metric) ? json(all.at(primary_metric)) : json(nullptr)},
              {"All_metrics", all},
              {"micro", micro},
              {"examples_per_domain", examples_per_domain},
              {"evaluated", evaluated},
              {"excluded", excluded}};
    if (!note.empty()) {
        j["note"] = note;
    }
    return j.dump(2);
}

MetricReport MetricReport::from_json(std::string_view text) {
    MetricReport r;
    try {
        auto j = json::parse(text);
        r.task = j.at("task").get<std::string>();
        r.model = j.at("model").get<std::string>();
        r.primary_metric = j.at("primary_metric").get<std::string>();
        r.per_domain = j.at("per_domain").get<std::map<std::string, std::map<std::string, double>>>();
        r.all = j.at("All_metrics").get<std::map<std::string, double>>();
        r.micro = j.at("micro").get<std::map<std::string, double>>();
        r.examples_per_domain = j.at("examples_per_domain").get<std::map<std::string, std::size_t>>();
        r.evaluated = j.at("evaluated").get<std::size_t>();
        r.excluded = j.at("excluded").get<std::size_t>();
        r.note = j.value("note", std::string());
    } catch (const json::exception& e) {
        throw DataError(std::string("bad metric report: ") + e.what());
    }
    return r;
}

std::string MetricReport::to_table() const {
    std::vector<std::string> metrics;
    for (const auto& [name, v] : all) {
        metrics.push_back(name);
    }
    std::ostringstream os;
    os << "task: " << task << "  model: " << model;
    if (!note.empty()) {
        os << "  (" << note << ")";
    }
    os << "\n";
    os << std::left << std::setw(24) << "domain" << std::right << std::setw(8) << "n";
    for (const auto& m : metrics) {
        os << std::setw(12) << m;
    }
    os << "\n" << std::fixed << std::setprecision(4);
    for (const auto& [domain, values] : per_domain) {
        os << std::left << std::setw(24) << domain << std::right << std::setw(8)
           << examples_per_domain.at(domain);
        for (const auto& m : metrics) {
            auto it = values.find(m);
            os << std::setw(12) << (it == values.end() ? 0.0 : it->second);
        }
        os << "\n";
    }
    os << std::left << std::setw(24) << "All" << std::right << std::setw(8) << evaluated;
    for (const auto& m : metrics) {
        os << std::setw(12) << all.at(m);
    }
    os << "\n";
    if (excluded > 0) {
        os << "excluded: " << excluded << "\n";
    }
    return os.str();
}

std::string MetricReport::to_csv(bool header) const {
    std::ostringstream os;
    os << std::setprecision(17);
    if (header) {
        os << "task,model,domain,metric,value\n";
    }
    for (const auto& [domain, values] : per_domain) {
        for (const auto& [name, v] : values) {
            os << task << ',' << model << ',' << domain << ',' << name << ',' << v << '\n';
        }
    }
    for (const auto& [name, v] : all) {
        os << task << ',' << model << ",All," << name << ',' << v << '\n';
    }
    return os.str();
}

} // namespace ctxbench
