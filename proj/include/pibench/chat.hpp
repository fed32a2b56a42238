#pragma once

#include "pibench/error.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cstddef>
#include <fstream>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace pibench {

enum class Role { system, user, assistant };

/// Provenance of a text span inside a prompt. Tags drive both the mock
/// model's obedience policies and the annotated prompt dumps.
enum class Tag {
    original_instruction,
    data,
    attack_prompt,
    injected_instruction,
    shield_prompt,
    repeated_instruction,
    layout,
};

inline const char* to_string(Role r) {
    switch (r) {
        case Role::system: return "system";
        case Role::user: return "user";
        case Role::assistant: return "assistant";
    }
    return "?";
}

inline const char* to_string(Tag t) {
    switch (t) {
        case Tag::original_instruction: return "original_instruction";
        case Tag::data: return "data";
        case Tag::attack_prompt: return "attack_prompt";
        case Tag::injected_instruction: return "injected_instruction";
        case Tag::shield_prompt: return "shield_prompt";
        case Tag::repeated_instruction: return "repeated_instruction";
        case Tag::layout: return "layout";
    }
    return "?";
}

/// A provenance-tagged text span. Tag and text are fixed at construction;
/// all composition steps copy blocks rather than mutating them, so text is
/// preserved byte-exactly (no trimming, no normalization, control characters
/// included).
class Block {
public:
    Block(Tag tag, std::string text) : tag_(tag), text_(std::move(text)) {}

    Tag tag() const noexcept { return tag_; }
    const std::string& text() const noexcept { return text_; }

    bool operator==(const Block&) const = default;

private:
    Tag tag_;
    std::string text_;
};

struct Turn {
    Role role = Role::user;
    std::vector<Block> blocks;

    bool operator==(const Turn&) const = default;
};

enum class Scenario { direct, indirect };

inline const char* to_string(Scenario s) {
    return s == Scenario::direct ? "direct" : "indirect";
}

/// A full prompt under construction: role-attributed turns of tagged blocks.
struct PromptPlan {
    std::vector<Turn> turns;
    Scenario scenario = Scenario::direct;
    std::string sample_id;

    bool operator==(const PromptPlan&) const = default;
};

/// Role markers and separators that define how a turn list renders to a
/// flat string. Rendering is deterministic; the token set is derived from
/// the non-empty markers.
struct ChatTemplate {
    std::string name;
    std::string system_prefix;
    std::string system_suffix;
    std::string user_prefix;
    std::string user_suffix;
    std::string assistant_prefix;
    std::string assistant_suffix;

    const std::string& prefix_for(Role r) const {
        switch (r) {
            case Role::system: return system_prefix;
            case Role::user: return user_prefix;
            case Role::assistant: return assistant_prefix;
        }
        return user_prefix;
    }

    const std::string& suffix_for(Role r) const {
        switch (r) {
            case Role::system: return system_suffix;
            case Role::user: return user_suffix;
            case Role::assistant: return assistant_suffix;
        }
        return user_suffix;
    }

    /// Unique non-empty markers, longest first (removal order for
    /// sanitize_content when markers overlap).
    std::vector<std::string> role_token_set() const {
        std::vector<std::string> tokens;
        for (const std::string* s : {&system_prefix, &system_suffix, &user_prefix,
                                     &user_suffix, &assistant_prefix, &assistant_suffix}) {
            if (!s->empty() && std::find(tokens.begin(), tokens.end(), *s) == tokens.end()) {
                tokens.push_back(*s);
            }
        }
        std::sort(tokens.begin(), tokens.end(), [](const std::string& a, const std::string& b) {
            if (a.size() != b.size()) return a.size() > b.size();
            return a < b;
        });
        return tokens;
    }

    bool operator==(const ChatTemplate&) const = default;
};

/// Renders turns to a flat string: per turn, role prefix + concatenated
/// block texts + role suffix, in order. With add_generation_prefix the
/// assistant prefix is appended at the end.
inline std::string render_turns(const ChatTemplate& tmpl, std::span<const Turn> turns,
                                bool add_generation_prefix) {
    if (turns.empty()) {
        throw Error("empty-conversation");
    }
    std::string out;
    for (const Turn& turn : turns) {
        if (turn.blocks.empty()) {
            throw Error("empty-conversation", "turn has no blocks");
        }
        out += tmpl.prefix_for(turn.role);
        for (const Block& block : turn.blocks) {
            out += block.text();
        }
        out += tmpl.suffix_for(turn.role);
    }
    if (add_generation_prefix) {
        out += tmpl.assistant_prefix;
    }
    return out;
}

inline std::string render_turns(const ChatTemplate& tmpl, const std::vector<Turn>& turns,
                                bool add_generation_prefix) {
    return render_turns(tmpl, std::span<const Turn>(turns), add_generation_prefix);
}

/// Renders turns to a single data-embeddable block. The result is tagged
/// attack_prompt when any input block is an injected instruction (forged
/// attacker turns), shield_prompt otherwise (forged defender turns).
inline Block render_inline(const ChatTemplate& tmpl, std::span<const Turn> turns) {
    bool has_injected = false;
    for (const Turn& turn : turns) {
        for (const Block& block : turn.blocks) {
            if (block.tag() == Tag::injected_instruction) {
                has_injected = true;
            }
        }
    }
    std::string text = render_turns(tmpl, turns, false);
    return Block(has_injected ? Tag::attack_prompt : Tag::shield_prompt, std::move(text));
}

inline Block render_inline(const ChatTemplate& tmpl, const std::vector<Turn>& turns) {
    return render_inline(tmpl, std::span<const Turn>(turns));
}

/// Removes every occurrence of every role token from text. Overlapping
/// markers are removed longest-first; passes repeat until a fixpoint so the
/// result never contains a role token (removal can splice new occurrences
/// together, e.g. "<A<A>>" with token "<A>").
inline std::string sanitize_content(std::string_view text, const ChatTemplate& tmpl) {
    const std::vector<std::string> tokens = tmpl.role_token_set();
    std::string out(text);
    if (tokens.empty()) {
        return out;
    }
    bool removed = true;
    while (removed) {
        removed = false;
        for (const std::string& token : tokens) {
            std::size_t pos = 0;
            while ((pos = out.find(token, pos)) != std::string::npos) {
                out.erase(pos, token.size());
                removed = true;
            }
        }
    }
    return out;
}

/// Structural checks on a template. Warnings, never errors: an all-empty
/// marker set renders roles ambiguously; a marker that is a substring of
/// another makes sanitization order-sensitive.
inline std::vector<std::string> validate_template(const ChatTemplate& tmpl) {
    std::vector<std::string> warnings;
    const std::vector<std::string> tokens = tmpl.role_token_set();
    if (tokens.empty()) {
        warnings.push_back("ambiguous-roles");
    }
    bool overlap = false;
    for (std::size_t i = 0; i < tokens.size() && !overlap; ++i) {
        for (std::size_t j = 0; j < tokens.size() && !overlap; ++j) {
            if (i != j && tokens[i].find(tokens[j]) != std::string::npos) {
                overlap = true;
            }
        }
    }
    if (overlap) {
        warnings.push_back("overlapping-markers");
    }
    return warnings;
}

/// Alpaca-convention markers.
inline ChatTemplate generic_template() {
    ChatTemplate t;
    t.name = "generic";
    t.system_prefix = "### System:\n";
    t.system_suffix = "\n\n";
    t.user_prefix = "### Instruction:\n";
    t.user_suffix = "\n\n";
    t.assistant_prefix = "### Response:\n";
    t.assistant_suffix = "\n\n";
    return t;
}

/// Angle-bracket identifiers ("<Instruction>" as the instruction marker).
inline ChatTemplate tagged_template() {
    ChatTemplate t;
    t.name = "tagged";
    t.system_prefix = "<System>";
    t.system_suffix = "</System>\n";
    t.user_prefix = "<Instruction>";
    t.user_suffix = "</Instruction>\n";
    t.assistant_prefix = "<Response>";
    t.assistant_suffix = "</Response>\n";
    return t;
}

inline ChatTemplate builtin_template(std::string_view name) {
    if (name == "generic") return generic_template();
    if (name == "tagged") return tagged_template();
    throw Error("unknown-template", std::string(name));
}

/// Template from a JSON object; missing fields default to empty strings.
inline ChatTemplate template_from_json(const nlohmann::json& j) {
    auto field = [&j](const char* key) -> std::string {
        if (j.contains(key) && j.at(key).is_string()) {
            return j.at(key).get<std::string>();
        }
        return {};
    };
    ChatTemplate t;
    t.name = field("name");
    t.system_prefix = field("system_prefix");
    t.system_suffix = field("system_suffix");
    t.user_prefix = field("user_prefix");
    t.user_suffix = field("user_suffix");
    t.assistant_prefix = field("assistant_prefix");
    t.assistant_suffix = field("assistant_suffix");
    return t;
}

inline ChatTemplate load_template_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Error("template-io", path);
    }
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw Error("template-parse", std::string(path) + ": " + e.what());
    }
    return template_from_json(j);
}

/// Resolves a --template argument: a builtin name or a JSON file path.
inline ChatTemplate resolve_template(const std::string& name_or_path) {
    if (name_or_path == "generic" || name_or_path == "tagged") {
        return builtin_template(name_or_path);
    }
    return load_template_file(name_or_path);
}

// Plan helpers used across modules.

inline std::size_t count_tag(const PromptPlan& plan, Tag tag) {
    std::size_t n = 0;
    for (const Turn& turn : plan.turns) {
        for (const Block& block : turn.blocks) {
            if (block.tag() == tag) ++n;
        }
    }
    return n;
}

inline const Block* find_first(const PromptPlan& plan, Tag tag) {
    for (const Turn& turn : plan.turns) {
        for (const Block& block : turn.blocks) {
            if (block.tag() == tag) return &block;
        }
    }
    return nullptr;
}

} // namespace pibench
