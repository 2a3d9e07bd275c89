#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "dnr/nn/mlp.hpp"

namespace dnr::nn {

/// Named networks plus free-form JSON metadata.
///
/// Binary layout (little endian):
///   "DNRCKPT\0" | u32 version | u64 meta_len | meta (UTF-8 JSON)
///   | u32 net_count | per net: u32 name_len | name | u32 layer_count
///   | per layer: u64 in | u64 out | in*out f64 weights (row-major) | out f64 biases
struct Checkpoint {
    static constexpr std::uint32_t kVersion = 1;

    nlohmann::json meta = nlohmann::json::object();
    std::vector<std::pair<std::string, Mlp>> nets;

    const Mlp& net(const std::string& name) const;
    void put(const std::string& name, const Mlp& net);
};

std::string serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint deserialize_checkpoint(const std::string& bytes);

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::filesystem::path& path);

}  // namespace dnr::nn
