#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "plip/nn.hpp"

namespace plip::ckpt {

inline constexpr int kFormatVersion = 1;

/// FNV-1a of a canonical config text.
std::uint64_t config_hash(const std::string& canonical);
std::string hash_hex(std::uint64_t h);

struct Checkpoint {
    std::string kind;  // "plip" or "spac"
    std::string config_text;
    std::int64_t global_step = 0;
    std::int64_t epoch = 0;
    std::vector<std::string> vocab;
    std::vector<std::pair<std::string, Tensor>> tensors;
    nlohmann::json extra = nlohmann::json::object();

    const Tensor* find(const std::string& name) const;
};

/// Layout: 8-byte magic, u64 header length, JSON header, then raw little-endian
/// doubles for every tensor in header order. Written to a temp file and renamed.
void save(const std::filesystem::path& path, const Checkpoint& ck);
Checkpoint load(const std::filesystem::path& path);

/// Appends every parameter of `store` as "<prefix><name>".
void add_params(Checkpoint& ck, const nn::ParamStore& store, const std::string& prefix = "");
/// Copies tensors into the store; every store entry must be present with the same shape.
void restore_params(const Checkpoint& ck, nn::ParamStore& store, const std::string& prefix = "");

}  // namespace plip::ckpt
