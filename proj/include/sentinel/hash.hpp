#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace sentinel {

inline constexpr std::string_view kDigestAlgorithm = "sha256";

/// Lower-case hex SHA-256 of a byte string.
std::string sha256_hex(std::string_view bytes);

/// Lower-case hex SHA-256 of a file's bytes. Throws Error("unreadable") on I/O failure.
std::string sha256_file_hex(const std::filesystem::path& path);

}  // namespace sentinel
