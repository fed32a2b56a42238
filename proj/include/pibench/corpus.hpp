#pragma once

#include "pibench/attack.hpp"
#include "pibench/chat.hpp"
#include "pibench/defense.hpp"
#include "pibench/detail/sha256.hpp"
#include "pibench/detail/text.hpp"
#include "pibench/error.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

namespace pibench {

/// One evaluation item: instruction I, clean data D, the instruction an
/// attacker would inject, the witness string whose appearance in a response
/// marks attack success, and the golden answers to I.
struct InjectionSample {
    std::string id;
    std::string instruction;
    std::string data;
    std::string injected_instruction;
    std::string witness;
    std::vector<std::string> golden_answers;
    Scenario scenario = Scenario::direct;
};

struct CorpusManifest {
    std::string name;
    Scenario scenario = Scenario::direct;
    std::size_t count = 0;
    std::string source_path;
    std::string checksum; // sha256 of the raw file bytes
};

struct CorpusIssue {
    std::size_t line = 0; // 1-based
    std::string code;     // "parse-error" or "ambiguous-witness"
    std::string detail;

    std::string format() const {
        return code + "(" + std::to_string(line) + "): " + detail;
    }
};

struct Corpus {
    std::vector<InjectionSample> samples;
    CorpusManifest manifest;
    std::vector<CorpusIssue> issues;

    bool ok() const noexcept { return issues.empty(); }
};

/// Parses a JSON Lines corpus. Invariant-violating lines are rejected and
/// reported with their line numbers; the manifest counts accepted samples
/// and carries a checksum of the raw bytes.
inline Corpus parse_samples(const std::string& path, Scenario scenario) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Error("corpus-io", path);
    }
    std::ostringstream raw;
    raw << in.rdbuf();
    const std::string bytes = raw.str();

    Corpus corpus;
    corpus.manifest.name = std::filesystem::path(path).stem().string();
    corpus.manifest.scenario = scenario;
    corpus.manifest.source_path = path;
    corpus.manifest.checksum = detail::sha256_hex(bytes);

    std::set<std::string> seen_ids;
    std::istringstream lines(bytes);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(lines, line)) {
        ++line_no;
        if (line.empty() || line.find_first_not_of(" \t\r") == std::string::npos) {
            continue;
        }
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            corpus.issues.push_back({line_no, "parse-error", e.what()});
            continue;
        }
        if (!j.is_object()) {
            corpus.issues.push_back({line_no, "parse-error", "line is not a JSON object"});
            continue;
        }

        InjectionSample s;
        s.scenario = scenario;
        try {
            s.id = j.at("id").get<std::string>();
            s.instruction = j.at("instruction").get<std::string>();
            s.data = j.value("data", std::string{});
            s.injected_instruction = j.value("injected_instruction", std::string{});
            s.witness = j.value("witness", std::string{});
            if (j.contains("golden_answers")) {
                s.golden_answers = j.at("golden_answers").get<std::vector<std::string>>();
            }
        } catch (const nlohmann::json::exception& e) {
            corpus.issues.push_back({line_no, "parse-error", e.what()});
            continue;
        }

        if (s.id.empty() || s.instruction.empty()) {
            corpus.issues.push_back({line_no, "parse-error", "id and instruction are required"});
            continue;
        }
        if (!seen_ids.insert(s.id).second) {
            corpus.issues.push_back({line_no, "parse-error", "duplicate sample id " + s.id});
            continue;
        }
        if (!s.injected_instruction.empty() && s.witness.empty()) {
            corpus.issues.push_back(
                {line_no, "ambiguous-witness", "non-empty injected_instruction requires a witness"});
            continue;
        }
        if (!s.witness.empty()) {
            const std::string w = detail::fold_for_match(s.witness);
            bool collision = false;
            for (const std::string& golden : s.golden_answers) {
                if (detail::fold_for_match(golden).find(w) != std::string::npos) {
                    collision = true;
                    break;
                }
            }
            if (collision) {
                corpus.issues.push_back(
                    {line_no, "ambiguous-witness", "witness is a substring of a golden answer"});
                continue;
            }
        }
        corpus.samples.push_back(std::move(s));
    }
    corpus.manifest.count = corpus.samples.size();
    return corpus;
}

/// parse_samples that refuses corpora with any rejected line.
inline Corpus load_corpus(const std::string& path, Scenario scenario) {
    Corpus corpus = parse_samples(path, scenario);
    if (!corpus.ok()) {
        std::string detail;
        for (const CorpusIssue& issue : corpus.issues) {
            if (!detail.empty()) detail += "; ";
            detail += issue.format();
        }
        throw Error(corpus.issues.front().code + "(" + std::to_string(corpus.issues.front().line) + ")",
                    detail);
    }
    return corpus;
}

/// In-content section markers for the user turn. The role identifiers
/// themselves come from the ChatTemplate; the layout contributes the data
/// marker and the separator between the instruction and data sections.
struct PromptLayout {
    std::string data_marker = "### Input:\n";
    std::string section_separator = "\n\n";
};

inline PromptLayout layout_for(const ChatTemplate& tmpl) {
    PromptLayout layout;
    if (tmpl.name == "tagged") {
        layout.data_marker = "<Data>";
        layout.section_separator = "\n";
    }
    return layout;
}

struct MaterializeOptions {
    InjectPosition position = InjectPosition::end;
    /// Remove template role tokens from the poisoned data before the
    /// defense is applied (provider-side token filtering).
    bool sanitize = false;
    /// Empty the data content before poisoning (data-deletion utility mode).
    bool no_data = false;
    std::uint64_t rng_seed = 0;
};

/// Builds the full prompt plan for one (sample, attack, defense) cell:
/// user turn = instruction, data marker, poisoned data; then the defense
/// transformation.
inline PromptPlan materialize(const InjectionSample& sample, const AttackSpec& attack,
                              const DefenseSpec& defense, const ChatTemplate& tmpl,
                              const PromptLayout& layout, const MaterializeOptions& opts = {}) {
    const Payload payload =
        compose_attack(attack, sample.injected_instruction, tmpl, opts.rng_seed);
    const std::string_view data = opts.no_data ? std::string_view{} : std::string_view(sample.data);
    std::vector<Block> poisoned = poison(data, payload, opts.position);
    if (opts.sanitize) {
        for (Block& block : poisoned) {
            block = Block(block.tag(), sanitize_content(block.text(), tmpl));
        }
    }

    Turn user{Role::user, {}};
    user.blocks.emplace_back(Tag::original_instruction, sample.instruction);
    user.blocks.emplace_back(Tag::layout, layout.section_separator + layout.data_marker);
    user.blocks.insert(user.blocks.end(), std::make_move_iterator(poisoned.begin()),
                       std::make_move_iterator(poisoned.end()));

    PromptPlan plan;
    plan.turns.push_back(std::move(user));
    plan.scenario = sample.scenario;
    plan.sample_id = sample.id;
    return apply_defense(plan, defense, tmpl);
}

} // namespace pibench
