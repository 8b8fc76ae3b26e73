#include <exsnn/hashing.hpp>

#include <fmt/format.h>

namespace exsnn {

std::uint64_t fnv1a(std::string_view bytes, std::uint64_t seed)
{
    std::uint64_t h = seed;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::uint64_t hash_json(const nlohmann::json& doc)
{
    // nlohmann::json keeps object keys sorted, so dump() is canonical.
    return fnv1a(doc.dump());
}

std::string hex64(std::uint64_t value) { return fmt::format("{:016x}", value); }

}  // namespace exsnn
