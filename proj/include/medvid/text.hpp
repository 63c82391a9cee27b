#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace medvid {

// Unicode whitespace (space separators plus ASCII controls). Used by trim
// and tokenize so transcript text, stub embeddings and the lookup table all
// agree on token boundaries.
bool is_unicode_space(char32_t cp);

// ASCII A-Z -> a-z; other bytes (including multi-byte UTF-8) pass through.
std::string to_lower_ascii(std::string_view s);

// Strip leading/trailing Unicode whitespace.
std::string trim(std::string_view s);

// Lowercase, then split on runs of Unicode whitespace. Empty tokens dropped.
std::vector<std::string> tokenize(std::string_view s);

// "[HH:]MM:SS[,mmm|.mmm]" -> seconds. Returns false on malformed input.
bool parse_clock(std::string_view text, double& seconds);

// Fixed-decimal formatting (locale-independent, '.' separator).
std::string format_fixed(double value, int decimals);

// Up to 3 decimals with trailing zeros (and a bare '.') trimmed: 12 -> "12",
// 12.5 -> "12.5", 12.3456 -> "12.346".
std::string format_seconds_trim(double value);

}  // namespace medvid
