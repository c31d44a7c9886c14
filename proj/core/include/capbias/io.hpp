#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace capbias {

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, std::string_view content);

/// Non-empty lines of a JSON Lines document.
std::vector<std::string_view> jsonl_lines(std::string_view text);

} // namespace capbias
