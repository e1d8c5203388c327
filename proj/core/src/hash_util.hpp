#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace dreamprm::detail {

std::string sha256_hex(std::string_view bytes);
/// Throws MissingArtifactError if the file cannot be read.
std::string sha256_file(const std::filesystem::path& path);

}  // namespace dreamprm::detail
