#pragma once

#include <cstdint>
#include <filesystem>

#include <json.hpp>

#include "modmeta/nn.hpp"

namespace modmeta {

using Json = nlohmann::json;

Json to_json(const MlpSpec& spec);
MlpSpec mlp_spec_from_json(const Json& j);

// {"spec": ..., "params": [flat row-major values]}
Json to_json(const MlpParams<double>& p);
MlpParams<double> mlp_params_from_json(const Json& j);

Json to_json(const AdamState<double>& s);
AdamState<double> adam_state_from_json(const Json& j, const MlpParams<double>& like);

// Standalone parameter checkpoint with format tag, version and seed metadata.
struct MlpCheckpoint {
    MlpParams<double> params;
    std::uint64_t seed = 0;
};

inline constexpr int kMlpCheckpointVersion = 1;

void save_mlp_checkpoint(const std::filesystem::path& path, const MlpCheckpoint& ckpt);
MlpCheckpoint load_mlp_checkpoint(const std::filesystem::path& path);

// Writes to a sibling temporary file and renames it over `path`.
void write_file_atomic(const std::filesystem::path& path, const std::string& contents);
std::string read_file(const std::filesystem::path& path);

}  // namespace modmeta
