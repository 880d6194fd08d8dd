#include "ctxbench/manifest.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

#include "ctxbench/error.hpp"
#include "ctxbench/hashing.hpp"

namespace ctxbench {

using nlohmann::ordered_json;

void Manifest::set_config(std::string canonical_json) {
    config_hash = sha256_hex(canonical_json);
    config = std::move(canonical_json);
}

void Manifest::add_input(const std::filesystem::path& path) {
    inputs.push_back({path.string(), sha256_file_hex(path)});
}

void Manifest::add_output(const std::filesystem::path& path) {
    outputs.push_back({path.string(), sha256_file_hex(path)});
}

namespace {

ordered_json files_json(const std::vector<ManifestFile>& files) {
    ordered_json a = ordered_json::array();
    for (const auto& f : files) {
        a.push_back({{"path", f.path}, {"sha256", f.sha256}});
    }
    return a;
}

std::vector<ManifestFile> files_from(const ordered_json& a) {
    std::vector<ManifestFile> out;
    for (const auto& f : a) {
        out.push_back({f.at("path").get<std::string>(), f.at("sha256").get<std::string>()});
    }
    return out;
}

} // namespace

std::string Manifest::to_json() const {
    ordered_json j = {{"command", command},
                      {"tool_version", tool_version},
                      {"config_hash", config_hash},
                      {"config", ordered_json::parse(config.empty() ? "{}" : config)},
                      {"inputs", files_json(inputs)},
                      {"outputs", files_json(outputs)}};
    return j.dump(2) + "\n";
}

Manifest Manifest::from_json(std::string_view text) {
    Manifest m;
    try {
        auto j = ordered_json::parse(text);
        m.command = j.at("command").get<std::string>();
        m.tool_version = j.at("tool_version").get<std::string>();
        m.config_hash = j.at("config_hash").get<std::string>();
        m.config = j.at("config").dump();
        m.inputs = files_from(j.at("inputs"));
        m.outputs = files_from(j.at("outputs"));
    } catch (const ordered_json::exception& e) {
        throw DataError(std::string("bad manifest: ") + e.what());
    }
    return m;
}

void Manifest::save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::trunc);
    if (!out) {
        throw IoError("cannot write " + path.string());
    }
    out << to_json();
    if (!out) {
        throw IoError("write failed: " + path.string());
    }
}

Manifest Manifest::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot read " + path.string());
    }
    std::ostringstream buf;
    buf << in.rdbuf();
    return from_json(buf.str());
}

std::filesystem::path manifest_path_for(const std::filesystem::path& artifact) {
    auto p = artifact;
    p += ".manifest.json";
    return p;
}

} // namespace ctxbench
