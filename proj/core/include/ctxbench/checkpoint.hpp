#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "ctxbench/encoder.hpp"
#include "ctxbench/trainer.hpp"

namespace ctxbench {

/// Encoder checkpoint: a binary parameter file plus a JSON sidecar
/// (`<path>.json`) holding the hash configuration, the TrainConfig and the
/// per-epoch loss history.
///
/// Binary layout (little-endian):
///   char[4] "CCKP", u32 version, u32 buckets, u32 hidden, u32 dim,
///   buckets*hidden float64 table (row-major), hidden*dim float64 projection.
struct Checkpoint {
    ToyEncoderParams params;
    TrainConfig config;
    std::vector<EpochReport> history;
};

std::filesystem::path sidecar_path(const std::filesystem::path& path);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

std::string train_config_to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(std::string_view text);

} // namespace ctxbench
