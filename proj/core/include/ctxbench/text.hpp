#pragma once

#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace ctxbench {

inline constexpr std::size_t kNoTokenLimit = std::numeric_limits<std::size_t>::max();

/// Number of Unicode scalar values in a UTF-8 string. Continuation bytes are
/// not counted, so malformed sequences degrade to a byte-ish count instead of
/// failing.
std::size_t utf8_length(std::string_view s);

/// Strips ASCII whitespace from both ends.
std::string_view trim(std::string_view s);

/// Word tokenizer shared by the hashing encoder and BM25. ASCII letters are
/// lowercased; any ASCII byte that is not a letter or digit separates tokens.
/// Bytes >= 0x80 are kept inside tokens so UTF-8 words survive intact.
std::vector<std::string> tokenize(std::string_view s, std::size_t max_tokens = kNoTokenLimit);

/// Count of maximal runs of non-whitespace bytes.
std::size_t count_whitespace_tokens(std::string_view s);

/// ASCII case-insensitive substring test. An empty needle never matches.
bool contains_ignore_case(std::string_view haystack, std::string_view needle);

std::string join(std::span<const std::string> parts, std::string_view sep);

/// Joins the trimmed, non-empty parts with a single space.
std::string join_nonempty(std::span<const std::string_view> parts);

} // namespace ctxbench
