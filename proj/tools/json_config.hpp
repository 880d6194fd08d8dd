#pragma once

#include <istream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

namespace ctxbench::cli {

/// CLI11 config reader/writer for a single JSON document. Nested objects
/// address subcommands: {"train": {"epochs": 5}}.
class JsonConfig : public CLI::Config {
public:
    std::string to_config(const CLI::App* app, bool default_also, bool, std::string) const override {
        return to_json(app, default_also).dump(2);
    }

    std::vector<CLI::ConfigItem> from_config(std::istream& input) const override {
        nlohmann::json j;
        try {
            input >> j;
        } catch (const nlohmann::json::exception& e) {
            throw CLI::ConfigError(std::string("config is not valid JSON: ") + e.what());
        }
        if (!j.is_object()) {
            throw CLI::ConfigError("config must be a JSON object");
        }
        std::vector<CLI::ConfigItem> items;
        collect(j, {}, items);
        return items;
    }

    /// Resolved option values of `app` (defaults included), keyed by long
    /// option name. The config option itself is left out.
    static nlohmann::json to_json(const CLI::App* app, bool default_also) {
        nlohmann::json j = nlohmann::json::object();
        for (const CLI::Option* opt : app->get_options({})) {
            if (opt->get_lnames().empty() || !opt->get_configurable()) {
                continue;
            }
            const std::string name = opt->get_lnames()[0];
            if (name == "help" || name == "config") {
                continue;
            }
            if (opt->get_type_size() != 0) {
                const bool multi = opt->get_expected_max() > 1;
                if (opt->count() > 0) {
                    j[name] = multi ? nlohmann::json(opt->results()) : nlohmann::json(opt->results().at(0));
                } else if (default_also && !opt->get_default_str().empty()) {
                    j[name] = multi ? split_default(opt->get_default_str()) : nlohmann::json(opt->get_default_str());
                }
            } else {
                j[name] = opt->count() > 0;
            }
        }
        return j;
    }

private:
    // CLI11 renders vector defaults as "{}" or "[a,b]".
    static nlohmann::json split_default(const std::string& text) {
        nlohmann::json arr = nlohmann::json::array();
        std::string body = text;
        if (body.size() >= 2 && (body.front() == '[' || body.front() == '{')) {
            body = body.substr(1, body.size() - 2);
        }
        std::size_t start = 0;
        while (!body.empty() && start <= body.size()) {
            const auto comma = body.find(',', start);
            arr.push_back(body.substr(start, comma == std::string::npos ? std::string::npos : comma - start));
            if (comma == std::string::npos) {
                break;
            }
            start = comma + 1;
        }
        return arr;
    }

    static void collect(const nlohmann::json& j, std::vector<std::string> parents,
                        std::vector<CLI::ConfigItem>& out) {
        for (const auto& [key, value] : j.items()) {
            if (value.is_object()) {
                auto p = parents;
                p.push_back(key);
                collect(value, p, out);
                continue;
            }
            if (value.is_array() && value.empty()) {
                continue; // same as leaving the option unset
            }
            CLI::ConfigItem item;
            item.parents = parents;
            item.name = key;
            if (value.is_array()) {
                for (const auto& v : value) {
                    item.inputs.push_back(scalar(v));
                }
            } else {
                item.inputs.push_back(scalar(value));
            }
            out.push_back(std::move(item));
        }
    }

    static std::string scalar(const nlohmann::json& v) {
        if (v.is_string()) {
            return v.get<std::string>();
        }
        if (v.is_boolean()) {
            return v.get<bool>() ? "true" : "false";
        }
        if (v.is_null() || v.is_object() || v.is_array()) {
            throw CLI::ConfigError("config values must be scalars or arrays of scalars");
        }
        return v.dump();
    }
};

} // namespace ctxbench::cli
