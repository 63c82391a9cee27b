#include "medvid/text.hpp"

#include <cmath>
#include <cstdio>

namespace medvid {

bool is_unicode_space(char32_t cp) {
    switch (cp) {
        case U'\t':
        case U'\n':
        case U'\v':
        case U'\f':
        case U'\r':
        case U' ':
        case 0x0085:  // NEL
        case 0x00A0:  // NBSP
        case 0x1680:
        case 0x2028:
        case 0x2029:
        case 0x202F:
        case 0x205F:
        case 0x3000:
            return true;
        default:
            return cp >= 0x2000 && cp <= 0x200A;
    }
}

namespace {

// Decodes one UTF-8 code point at s[i]; invalid sequences are treated as a
// single opaque byte (never whitespace). Returns the byte length consumed.
std::size_t decode_utf8(std::string_view s, std::size_t i, char32_t& cp) {
    const auto b0 = static_cast<unsigned char>(s[i]);
    if (b0 < 0x80) {
        cp = b0;
        return 1;
    }
    std::size_t len = 0;
    char32_t first = 0;
    if ((b0 & 0xE0) == 0xC0) {
        len = 2;
        first = b0 & 0x1F;
    } else if ((b0 & 0xF0) == 0xE0) {
        len = 3;
        first = b0 & 0x0F;
    } else if ((b0 & 0xF8) == 0xF0) {
        len = 4;
        first = b0 & 0x07;
    } else {
        cp = 0xFFFD;
        return 1;
    }
    if (i + len > s.size()) {
        cp = 0xFFFD;
        return 1;
    }
    char32_t acc = first;
    for (std::size_t k = 1; k < len; ++k) {
        const auto b = static_cast<unsigned char>(s[i + k]);
        if ((b & 0xC0) != 0x80) {
            cp = 0xFFFD;
            return 1;
        }
        acc = (acc << 6) | (b & 0x3F);
    }
    cp = acc;
    return len;
}

}  // namespace

std::string to_lower_ascii(std::string_view s) {
    std::string out(s);
    for (char& c : out)
        if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
    return out;
}

std::string trim(std::string_view s) {
    std::size_t begin = 0;
    while (begin < s.size()) {
        char32_t cp;
        const std::size_t len = decode_utf8(s, begin, cp);
        if (!is_unicode_space(cp)) break;
        begin += len;
    }
    // scan forward to find the last non-space boundary (UTF-8 is not
    // reverse-decodable without care)
    std::size_t end = begin;
    std::size_t i = begin;
    while (i < s.size()) {
        char32_t cp;
        const std::size_t len = decode_utf8(s, i, cp);
        i += len;
        if (!is_unicode_space(cp)) end = i;
    }
    return std::string(s.substr(begin, end - begin));
}

std::vector<std::string> tokenize(std::string_view s) {
    const std::string lowered = to_lower_ascii(s);
    std::vector<std::string> tokens;
    std::string current;
    std::size_t i = 0;
    while (i < lowered.size()) {
        char32_t cp;
        const std::size_t len = decode_utf8(lowered, i, cp);
        if (is_unicode_space(cp)) {
            if (!current.empty()) {
                tokens.push_back(std::move(current));
                current.clear();
            }
        } else {
            current.append(lowered, i, len);
        }
        i += len;
    }
    if (!current.empty()) tokens.push_back(std::move(current));
    return tokens;
}

bool parse_clock(std::string_view text, double& seconds) {
    std::vector<std::string_view> parts;
    std::size_t begin = 0;
    for (std::size_t i = 0; i <= text.size(); ++i) {
        if (i == text.size() || text[i] == ':') {
            parts.push_back(text.substr(begin, i - begin));
            begin = i + 1;
        }
    }
    if (parts.size() < 2 || parts.size() > 3) return false;

    std::string_view sec_part = parts.back();
    std::string_view ms_part;
    if (auto pos = sec_part.find_first_of(",."); pos != std::string_view::npos) {
        ms_part = sec_part.substr(pos + 1);
        sec_part = sec_part.substr(0, pos);
        if (ms_part.empty() || ms_part.size() > 3) return false;
    }

    auto parse_uint = [](std::string_view s, long& v) {
        if (s.empty()) return false;
        v = 0;
        for (char c : s) {
            if (c < '0' || c > '9') return false;
            v = v * 10 + (c - '0');
        }
        return true;
    };

    long hours = 0, minutes = 0, secs = 0, millis = 0;
    std::size_t idx = 0;
    if (parts.size() == 3 && !parse_uint(parts[idx++], hours)) return false;
    if (!parse_uint(parts[idx], minutes)) return false;
    if (!parse_uint(sec_part, secs)) return false;
    if (!ms_part.empty()) {
        if (!parse_uint(ms_part, millis)) return false;
        for (std::size_t i = ms_part.size(); i < 3; ++i) millis *= 10;  // ".5" == 500 ms
    }
    if (minutes > 59 || secs > 59) return false;

    seconds = static_cast<double>(((hours * 60 + minutes) * 60 + secs) * 1000 + millis) / 1000.0;
    return true;
}

std::string format_fixed(double value, int decimals) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.*f", decimals, value);
    return buf;
}

std::string format_seconds_trim(double value) {
    std::string s = format_fixed(value, 3);
    while (!s.empty() && s.back() == '0') s.pop_back();
    if (!s.empty() && s.back() == '.') s.pop_back();
    return s;
}

}  // namespace medvid
