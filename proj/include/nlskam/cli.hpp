#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

namespace nlskam::cli {

inline constexpr const char* tool_version = "0.1.0";
inline constexpr int schema_version = 1;

/// Exit codes of every subcommand.
enum Exit : int { ok = 0, domain_failure = 1, usage_error = 2 };

/// Invalid configuration or override; the message names the offending field or line.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// A required upstream artifact is absent.
struct MissingArtifact : std::runtime_error {
    explicit MissingArtifact(const std::filesystem::path& p)
        : std::runtime_error("missing upstream artifact: " + p.string()), path(p) {}
    std::filesystem::path path;
};

/// Every accepted key with its default value. A null default accepts any value.
nlohmann::json default_config();

/// Merges a document over the defaults, rejecting unknown keys and mismatched kinds.
nlohmann::json merge_config(const nlohmann::json& user);

/// Reads a config file, applies key=value overrides in order and validates the result.
nlohmann::json load_config(const std::filesystem::path& path, const std::vector<std::string>& overrides);

/// FNV-1a over the canonical dump of the config without its output directory.
std::uint64_t config_hash(const nlohmann::json& cfg);
std::string hash_hex(std::uint64_t h);

/// Entry point shared by the executable and the tests; argv excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace nlskam::cli
