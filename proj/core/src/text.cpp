#include "ctxbench/text.hpp"

#include <algorithm>
#include <cctype>

namespace ctxbench {

namespace {

bool is_space(unsigned char c) {
    return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

bool is_word_byte(unsigned char c) {
    return c >= 0x80 || std::isalnum(c) != 0;
}

unsigned char fold(unsigned char c) {
    return (c >= 'A' && c <= 'Z') ? static_cast<unsigned char>(c - 'A' + 'a') : c;
}

} // namespace

std::size_t utf8_length(std::string_view s) {
    std::size_t n = 0;
    for (unsigned char c : s) {
        if ((c & 0xC0) != 0x80) {
            ++n;
        }
    }
    return n;
}

std::string_view trim(std::string_view s) {
    std::size_t begin = 0;
    std::size_t end = s.size();
    while (begin < end && is_space(static_cast<unsigned char>(s[begin]))) {
        ++begin;
    }
    while (end > begin && is_space(static_cast<unsigned char>(s[end - 1]))) {
        --end;
    }
    return s.substr(begin, end - begin);
}

std::vector<std::string> tokenize(std::string_view s, std::size_t max_tokens) {
    std::vector<std::string> tokens;
    std::string current;
    for (char ch : s) {
        auto c = static_cast<unsigned char>(ch);
        if (is_word_byte(c)) {
            current.push_back(static_cast<char>(fold(c)));
            continue;
        }
        if (!current.empty()) {
            if (tokens.size() == max_tokens) {
                return tokens;
            }
            tokens.push_back(std::move(current));
            current.clear();
        }
    }
    if (!current.empty() && tokens.size() < max_tokens) {
        tokens.push_back(std::move(current));
    }
    return tokens;
}

std::size_t count_whitespace_tokens(std::string_view s) {
    std::size_t n = 0;
    bool in_token = false;
    for (char ch : s) {
        bool space = is_space(static_cast<unsigned char>(ch));
        if (!space && !in_token) {
            ++n;
        }
        in_token = !space;
    }
    return n;
}

bool contains_ignore_case(std::string_view haystack, std::string_view needle) {
    if (needle.empty() || needle.size() > haystack.size()) {
        return false;
    }
    auto it = std::search(haystack.begin(), haystack.end(), needle.begin(), needle.end(),
                          [](char a, char b) {
                              return fold(static_cast<unsigned char>(a)) ==
                                     fold(static_cast<unsigned char>(b));
                          });
    return it != haystack.end();
}

std::string join(std::span<const std::string> parts, std::string_view sep) {
    std::string out;
    for (std::size_t i = 0; i < parts.size(); ++i) {
        if (i > 0) {
            out.append(sep);
        }
        out.append(parts[i]);
    }
    return out;
}

std::string join_nonempty(std::span<const std::string_view> parts) {
    std::string out;
    for (auto part : parts) {
        auto t = trim(part);
        if (t.empty()) {
            continue;
        }
        if (!out.empty()) {
            out.push_back(' ');
        }
        out.append(t);
    }
    return out;
}

} // namespace ctxbench
