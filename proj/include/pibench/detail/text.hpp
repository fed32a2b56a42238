#pragma once

#include <cstddef>
#include <string>
#include <string_view>

namespace pibench::detail {

inline bool is_space_byte(char c) {
    return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

/// Detection normalization: optional ASCII case-fold, whitespace runs
/// collapsed to single spaces, leading/trailing whitespace trimmed.
inline std::string fold_for_match(std::string_view s, bool case_fold = true) {
    std::string out;
    out.reserve(s.size());
    bool pending_space = false;
    for (char c : s) {
        if (is_space_byte(c)) {
            pending_space = true;
            continue;
        }
        if (pending_space && !out.empty()) out.push_back(' ');
        pending_space = false;
        if (case_fold && c >= 'A' && c <= 'Z') {
            out.push_back(static_cast<char>(c - 'A' + 'a'));
        } else {
            out.push_back(c);
        }
    }
    return out;
}

inline std::string repeat_string(std::string_view unit, int times) {
    std::string out;
    if (times <= 0 || unit.empty()) return out;
    out.reserve(unit.size() * static_cast<std::size_t>(times));
    for (int i = 0; i < times; ++i) out += unit;
    return out;
}

} // namespace pibench::detail
