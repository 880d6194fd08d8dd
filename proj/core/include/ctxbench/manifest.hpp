#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace ctxbench {

struct ManifestFile {
    std::string path;
    std::string sha256;

    bool operator==(const ManifestFile&) const = default;
};

/// Provenance record written next to every artifact. Holds no wall-clock
/// data, so identical runs produce identical manifests.
struct Manifest {
    std::string command;
    std::string tool_version;
    /// Fully resolved configuration (canonical JSON) and its sha256.
    std::string config;
    std::string config_hash;
    std::vector<ManifestFile> inputs;
    std::vector<ManifestFile> outputs;

    void set_config(std::string canonical_json);
    void add_input(const std::filesystem::path& path);
    void add_output(const std::filesystem::path& path);

    std::string to_json() const;
    static Manifest from_json(std::string_view text);
    void save(const std::filesystem::path& path) const;
    static Manifest load(const std::filesystem::path& path);

    bool operator==(const Manifest&) const = default;
};

/// `<artifact>.manifest.json`
std::filesystem::path manifest_path_for(const std::filesystem::path& artifact);

} // namespace ctxbench
