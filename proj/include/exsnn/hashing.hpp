#pragma once

#include <json.hpp>

#include <cstdint>
#include <string>
#include <string_view>

namespace exsnn {

/// 64-bit FNV-1a.
std::uint64_t fnv1a(std::string_view bytes, std::uint64_t seed = 0xcbf29ce484222325ULL);

/// Hash of the canonical (sorted-key, compact) serialization of a document.
std::uint64_t hash_json(const nlohmann::json& doc);

std::string hex64(std::uint64_t value);

}  // namespace exsnn
