// Test-only reference implementations, written independently of the library
// code paths they check. Anything asserted against these was computed here
// first and frozen afterwards.
#pragma once

#include <pibench/chat.hpp>
#include <pibench/corpus.hpp>

#include <cctype>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace oracles {

// SplitMix64 transcribed from the published reference, kept separate from
// pibench::detail::SplitMix64.
inline std::uint64_t splitmix64_next(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9E3779B97F4A7C15ull);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

// The documented separation draw: length from {0..9}, then one bit per char.
inline std::string separation_run(std::uint64_t seed) {
    std::uint64_t state = seed;
    const std::uint64_t len = splitmix64_next(state) % 10;
    std::string out;
    for (std::uint64_t i = 0; i < len; ++i) {
        out += (splitmix64_next(state) & 1u) ? '\n' : '\t';
    }
    return out;
}

// Detection normalization done the slow way: explicit token split + rejoin.
inline std::string normalize(std::string_view s, bool case_fold = true) {
    std::vector<std::string> words;
    std::string word;
    auto flush = [&] {
        if (!word.empty()) {
            words.push_back(word);
            word.clear();
        }
    };
    for (char c : s) {
        if (c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v') {
            flush();
        } else {
            word.push_back(case_fold ? static_cast<char>(std::tolower(static_cast<unsigned char>(c)))
                                     : c);
        }
    }
    flush();
    std::string out;
    for (std::size_t i = 0; i < words.size(); ++i) {
        if (i > 0) out += ' ';
        out += words[i];
    }
    return out;
}

inline bool detect(std::string_view response, std::string_view witness, bool case_fold = true) {
    return normalize(response, case_fold).find(normalize(witness, case_fold)) != std::string::npos;
}

// Brute-force middle boundary: minimize |boundary - len/2| over positions
// just after each whitespace byte, earliest position on ties, end of data
// when no whitespace exists.
inline std::size_t middle_boundary(std::string_view data) {
    double half = static_cast<double>(data.size()) / 2.0;
    std::size_t best = data.size();
    double best_dist = 1e300;
    for (std::size_t i = 0; i < data.size(); ++i) {
        const char c = data[i];
        if (c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v') {
            const double dist =
                (static_cast<double>(i + 1) > half) ? static_cast<double>(i + 1) - half
                                                    : half - static_cast<double>(i + 1);
            if (dist < best_dist) {
                best_dist = dist;
                best = i + 1;
            }
        }
    }
    return best;
}

// Repeated single-removal sanitization: delete the first occurrence of any
// token, restart from scratch, stop at a fixpoint. Slow but obviously
// correct; the library does longest-first batched passes.
inline std::string sanitize_to_fixpoint(std::string_view text,
                                        const std::vector<std::string>& tokens) {
    std::string out(text);
    bool changed = true;
    while (changed) {
        changed = false;
        std::size_t best_pos = std::string::npos;
        std::size_t best_len = 0;
        for (const std::string& token : tokens) {
            if (token.empty()) continue;
            const std::size_t pos = out.find(token);
            if (pos == std::string::npos) continue;
            // Longest-first tie break mirrors the documented removal order.
            if (pos < best_pos || (pos == best_pos && token.size() > best_len)) {
                best_pos = pos;
                best_len = token.size();
            }
        }
        if (best_pos != std::string::npos) {
            out.erase(best_pos, best_len);
            changed = true;
        }
    }
    return out;
}

// Position-scan predictor for the mock model: walk every block in plan
// order, collect instruction-bearing texts, answer per policy using the
// sample's two known instruction strings.
struct ScanPrediction {
    bool ok = true;
    std::string response;
};

inline ScanPrediction predict_mock(const pibench::PromptPlan& plan,
                                   const pibench::InjectionSample& sample,
                                   std::string_view policy) {
    const std::string golden =
        sample.golden_answers.empty() ? std::string{} : sample.golden_answers.front();
    if (policy == "immune") {
        return {true, golden};
    }
    std::vector<std::string> answers;
    for (const auto& turn : plan.turns) {
        for (const auto& block : turn.blocks) {
            const auto tag = block.tag();
            if (tag != pibench::Tag::original_instruction &&
                tag != pibench::Tag::injected_instruction &&
                tag != pibench::Tag::repeated_instruction) {
                continue;
            }
            if (block.text() == sample.instruction) {
                answers.push_back(golden);
            } else if (!sample.injected_instruction.empty() &&
                       block.text() == sample.injected_instruction) {
                answers.push_back(sample.witness);
            } else {
                return {false, {}};
            }
        }
    }
    if (answers.empty()) return {false, {}};
    if (policy == "obey_last") return {true, answers.back()};
    if (policy == "obey_first") return {true, answers.front()};
    if (policy == "obey_all") {
        std::string joined;
        for (std::size_t i = 0; i < answers.size(); ++i) {
            if (i > 0) joined += '\n';
            joined += answers[i];
        }
        return {true, joined};
    }
    return {false, {}};
}

} // namespace oracles
