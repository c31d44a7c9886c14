#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace capbias {

/// Lowercase tokens with punctuation removed. Never holds empty tokens.
using TokenSeq = std::vector<std::string>;

/// Lowercases ASCII letters, strips the characters .,!?;:'"()[] and splits on
/// whitespace (ASCII plus the common UTF-8 space code points).
TokenSeq tokenize(std::string_view text);

/// Joins tokens with single spaces.
std::string join(const TokenSeq& tokens);

/// Porter (1980) suffix-stripping stemmer, original algorithm.
std::string stem(std::string_view token);

} // namespace capbias
