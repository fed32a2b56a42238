#pragma once

#include "pibench/chat.hpp"
#include "pibench/error.hpp"
#include "pibench/eval.hpp"

#include <nlohmann/json.hpp>

#include <cstdio>
#include <istream>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

namespace pibench {

enum class TableFormat { csv, markdown };

namespace detail {

inline std::string undefined_cell(TableFormat format) {
    return format == TableFormat::markdown ? "—" : "";
}

} // namespace detail

/// Deterministic serialization of a metrics table: rows are defenses,
/// columns attacks, cells two-decimal percentages; a trailing accuracy
/// column appears when any clean cells were evaluated. Markdown columns are
/// width-aligned; undefined cells render as an em dash (empty field in CSV).
inline std::string emit_table(const MetricsTable& table, TableFormat format) {
    const bool with_accuracy =
        std::any_of(table.accuracy.begin(), table.accuracy.end(),
                    [](const MetricsTable::Cell& c) { return c.defined(); });

    std::vector<std::vector<std::string>> grid;
    std::vector<std::string> header;
    header.push_back("defense");
    for (AttackKind a : table.attacks) header.push_back(to_string(a));
    if (with_accuracy) header.push_back("clean_accuracy");
    grid.push_back(std::move(header));

    for (std::size_t d = 0; d < table.defenses.size(); ++d) {
        std::vector<std::string> row;
        row.push_back(to_string(table.defenses[d]));
        for (std::size_t a = 0; a < table.attacks.size(); ++a) {
            const auto& cell = table.asr[d][a];
            row.push_back(cell.defined() ? cell.percent() : detail::undefined_cell(format));
        }
        if (with_accuracy) {
            const auto& cell = table.accuracy[d];
            row.push_back(cell.defined() ? cell.percent() : detail::undefined_cell(format));
        }
        grid.push_back(std::move(row));
    }

    std::string out;
    if (format == TableFormat::csv) {
        for (const auto& row : grid) {
            for (std::size_t i = 0; i < row.size(); ++i) {
                if (i > 0) out += ",";
                out += row[i];
            }
            out += "\n";
        }
        return out;
    }

    std::vector<std::size_t> widths(grid.front().size(), 0);
    for (const auto& row : grid) {
        for (std::size_t i = 0; i < row.size(); ++i) {
            // The em dash is three UTF-8 bytes but one display column.
            const std::size_t display =
                row[i] == detail::undefined_cell(TableFormat::markdown) ? 1 : row[i].size();
            widths[i] = std::max(widths[i], display);
        }
    }
    auto pad = [&](const std::string& cell, std::size_t i) {
        const std::size_t display =
            cell == detail::undefined_cell(TableFormat::markdown) ? 1 : cell.size();
        return cell + std::string(widths[i] - display, ' ');
    };
    for (std::size_t r = 0; r < grid.size(); ++r) {
        out += "|";
        for (std::size_t i = 0; i < grid[r].size(); ++i) {
            out += " " + pad(grid[r][i], i) + " |";
        }
        out += "\n";
        if (r == 0) {
            out += "|";
            for (std::size_t i = 0; i < widths.size(); ++i) {
                out += std::string(widths[i] + 2, '-') + "|";
            }
            out += "\n";
        }
    }
    return out;
}

/// Escapes a byte string so control bytes are visible: printable ASCII is
/// kept, backslash doubles, everything else becomes \xNN. Round-trips
/// exactly through unescape_bytes.
inline std::string escape_bytes(std::string_view bytes) {
    std::string out;
    out.reserve(bytes.size());
    static constexpr char hex[] = "0123456789abcdef";
    for (unsigned char c : bytes) {
        if (c == '\\') {
            out += "\\\\";
        } else if (c >= 0x20 && c <= 0x7e) {
            out.push_back(static_cast<char>(c));
        } else {
            out += "\\x";
            out.push_back(hex[c >> 4]);
            out.push_back(hex[c & 0x0f]);
        }
    }
    return out;
}

inline std::string unescape_bytes(std::string_view escaped) {
    auto hex_value = [](char c) -> int {
        if (c >= '0' && c <= '9') return c - '0';
        if (c >= 'a' && c <= 'f') return c - 'a' + 10;
        if (c >= 'A' && c <= 'F') return c - 'A' + 10;
        return -1;
    };
    std::string out;
    out.reserve(escaped.size());
    for (std::size_t i = 0; i < escaped.size(); ++i) {
        if (escaped[i] != '\\') {
            out.push_back(escaped[i]);
            continue;
        }
        if (i + 1 < escaped.size() && escaped[i + 1] == '\\') {
            out.push_back('\\');
            ++i;
            continue;
        }
        if (i + 3 < escaped.size() && escaped[i + 1] == 'x') {
            const int hi = hex_value(escaped[i + 2]);
            const int lo = hex_value(escaped[i + 3]);
            if (hi >= 0 && lo >= 0) {
                out.push_back(static_cast<char>((hi << 4) | lo));
                i += 3;
                continue;
            }
        }
        throw Error("bad-escape", "invalid escape at offset " + std::to_string(i));
    }
    return out;
}

/// Tag-annotated view of a plan: per-turn, per-block tag comments on their
/// own lines (never inside the prompt bytes), each block's text escaped.
inline std::string annotate_plan(const PromptPlan& plan) {
    std::string out;
    for (std::size_t t = 0; t < plan.turns.size(); ++t) {
        const Turn& turn = plan.turns[t];
        out += "# turn " + std::to_string(t + 1) + " role=" + to_string(turn.role) + "\n";
        for (const Block& block : turn.blocks) {
            out += "#   [";
            out += to_string(block.tag());
            out += "] ";
            out += escape_bytes(block.text());
            out += "\n";
        }
    }
    return out;
}

inline nlohmann::json record_to_json(const EvalRecord& r) {
    nlohmann::json j{
        {"sample_id", r.sample_id},
        {"attack", to_string(r.attack_kind)},
        {"defense", to_string(r.defense_kind)},
        {"response", r.response},
        {"latency_us", r.latency.count()},
        {"cached", r.cached},
    };
    j["attack_success"] = r.attack_success.has_value() ? nlohmann::json(*r.attack_success)
                                                       : nlohmann::json(nullptr);
    j["utility_success"] = r.utility_success.has_value() ? nlohmann::json(*r.utility_success)
                                                         : nlohmann::json(nullptr);
    return j;
}

inline AttackKind attack_kind_from_string(std::string_view s);
inline DefenseKind defense_kind_from_string(std::string_view s);

inline std::string records_to_jsonl(std::span<const EvalRecord> records) {
    std::string out;
    for (const EvalRecord& r : records) {
        out += record_to_json(r).dump();
        out += "\n";
    }
    return out;
}

inline std::vector<EvalRecord> records_from_jsonl(std::istream& in) {
    std::vector<EvalRecord> records;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw Error("parse-error(" + std::to_string(line_no) + ")", e.what());
        }
        EvalRecord r;
        r.sample_id = j.at("sample_id").get<std::string>();
        r.attack_kind = attack_kind_from_string(j.at("attack").get<std::string>());
        r.defense_kind = defense_kind_from_string(j.at("defense").get<std::string>());
        r.response = j.value("response", std::string{});
        if (j.contains("attack_success") && !j.at("attack_success").is_null()) {
            r.attack_success = j.at("attack_success").get<bool>();
        }
        if (j.contains("utility_success") && !j.at("utility_success").is_null()) {
            r.utility_success = j.at("utility_success").get<bool>();
        }
        r.latency = std::chrono::microseconds(j.value("latency_us", 0LL));
        r.cached = j.value("cached", false);
        records.push_back(std::move(r));
    }
    return records;
}

// Name parsing for CLI flags, config files, and records round-trips. The
// hyphenated paper-style spellings are accepted as aliases.

inline AttackKind attack_kind_from_string(std::string_view s) {
    std::string k(s);
    for (char& c : k) {
        if (c == '-') c = '_';
    }
    if (k == "none") return AttackKind::none;
    if (k == "naive") return AttackKind::naive;
    if (k == "escape_deletion") return AttackKind::escape_deletion;
    if (k == "escape_separation" || k == "escape") return AttackKind::escape_separation;
    if (k == "ignore") return AttackKind::ignore;
    if (k == "fakecom") return AttackKind::fakecom;
    if (k == "fakecom_template" || k == "fakecom_t") return AttackKind::fakecom_template;
    if (k == "combined") return AttackKind::combined;
    if (k == "suffix") return AttackKind::suffix;
    throw Error("unknown-attack", std::string(s) +
                                      " (valid: none naive escape_deletion escape_separation "
                                      "ignore fakecom fakecom_template combined suffix)");
}

inline DefenseKind defense_kind_from_string(std::string_view s) {
    std::string k(s);
    for (char& c : k) {
        if (c == '-') c = '_';
    }
    if (k == "none") return DefenseKind::none;
    if (k == "ours_ignore") return DefenseKind::ours_ignore;
    if (k == "ours_escape") return DefenseKind::ours_escape;
    if (k == "ours_fakecom") return DefenseKind::ours_fakecom;
    if (k == "ours_fakecom_template" || k == "ours_fakecom_t") {
        return DefenseKind::ours_fakecom_template;
    }
    if (k == "sandwich") return DefenseKind::sandwich;
    if (k == "instructional") return DefenseKind::instructional;
    if (k == "reminder") return DefenseKind::reminder;
    if (k == "isolation") return DefenseKind::isolation;
    if (k == "spotlight") return DefenseKind::spotlight;
    throw Error("unknown-defense", std::string(s) +
                                       " (valid: none ours_ignore ours_escape ours_fakecom "
                                       "ours_fakecom_template sandwich instructional reminder "
                                       "isolation spotlight)");
}

inline InjectPosition position_from_string(std::string_view s) {
    if (s == "end") return InjectPosition::end;
    if (s == "start") return InjectPosition::start;
    if (s == "middle") return InjectPosition::middle;
    throw Error("unknown-position", std::string(s) + " (valid: end start middle)");
}

inline Scenario scenario_from_string(std::string_view s) {
    if (s == "direct") return Scenario::direct;
    if (s == "indirect") return Scenario::indirect;
    throw Error("unknown-scenario", std::string(s) + " (valid: direct indirect)");
}

} // namespace pibench
