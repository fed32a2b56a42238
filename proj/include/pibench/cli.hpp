#pragma once

#include "pibench/attack.hpp"
#include "pibench/chat.hpp"
#include "pibench/corpus.hpp"
#include "pibench/defense.hpp"
#include "pibench/error.hpp"
#include "pibench/eval.hpp"
#include "pibench/model.hpp"
#include "pibench/report.hpp"
#include "pibench/version.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace pibench {

struct RunConfig {
    std::vector<std::string> corpus_paths;
    Scenario scenario = Scenario::direct;
    std::string template_ref = "generic"; // builtin name or JSON file path
    std::vector<AttackSpec> attacks;
    std::vector<DefenseSpec> defenses;
    std::optional<MockPolicy> mock;
    std::optional<ModelEndpoint> endpoint;
    GenerationSettings settings;
    RunOptions options;
    std::string out_dir = "out";
    std::optional<std::string> cache_dir;
};

// --- spec <-> JSON -------------------------------------------------------

inline AttackSpec attack_spec_from_json(const nlohmann::json& j) {
    if (j.is_string()) {
        AttackSpec spec;
        spec.kind = attack_kind_from_string(j.get<std::string>());
        if (spec.kind == AttackKind::suffix) {
            throw Error("missing-suffix", "suffix attack needs an object with suffix_file or suffix_text");
        }
        return spec;
    }
    if (!j.is_object()) {
        throw Error("config-error", "attack entry must be a name or an object");
    }
    AttackSpec spec;
    if (j.contains("suffix_file")) {
        spec = load_adversarial_suffix(j.at("suffix_file").get<std::string>());
    }
    spec.kind = attack_kind_from_string(j.at("kind").get<std::string>());
    if (j.contains("ignore_prompt")) spec.ignore_prompt = j.at("ignore_prompt").get<std::string>();
    if (j.contains("fake_response")) spec.fake_response = j.at("fake_response").get<std::string>();
    if (j.contains("escape_deletion_chars")) {
        spec.escape_deletion_chars = j.at("escape_deletion_chars").get<std::string>();
    }
    if (j.contains("escape_repeat")) spec.escape_repeat = j.at("escape_repeat").get<int>();
    if (j.contains("separation_seed")) {
        spec.separation_seed = j.at("separation_seed").get<std::uint64_t>();
    }
    if (j.contains("suffix_text")) spec.suffix_text = j.at("suffix_text").get<std::string>();
    if (j.contains("suffix_after_instruction")) {
        spec.suffix_after_instruction = j.at("suffix_after_instruction").get<bool>();
    }
    if (j.contains("combined_order")) {
        spec.combined_order.clear();
        for (const auto& part : j.at("combined_order")) {
            spec.combined_order.push_back(attack_kind_from_string(part.get<std::string>()));
        }
    }
    if (spec.kind == AttackKind::suffix && !spec.suffix_text.has_value()) {
        throw Error("missing-suffix", "kind=suffix requires suffix_text or suffix_file");
    }
    if (spec.escape_repeat < 0) {
        throw Error("config-error", "escape_repeat must be >= 0");
    }
    return spec;
}

inline nlohmann::json attack_spec_to_json(const AttackSpec& spec) {
    nlohmann::json j{
        {"kind", to_string(spec.kind)},
        {"ignore_prompt", spec.ignore_prompt},
        {"fake_response", spec.fake_response},
        {"escape_deletion_chars", spec.escape_deletion_chars},
        {"escape_repeat", spec.escape_repeat},
        {"separation_seed", spec.separation_seed},
        {"suffix_after_instruction", spec.suffix_after_instruction},
    };
    if (spec.suffix_text.has_value()) j["suffix_text"] = *spec.suffix_text;
    nlohmann::json order = nlohmann::json::array();
    for (AttackKind part : spec.combined_order) order.push_back(to_string(part));
    j["combined_order"] = order;
    return j;
}

inline DefenseSpec defense_spec_from_json(const nlohmann::json& j) {
    if (j.is_string()) {
        DefenseSpec spec;
        spec.kind = defense_kind_from_string(j.get<std::string>());
        return spec;
    }
    if (!j.is_object()) {
        throw Error("config-error", "defense entry must be a name or an object");
    }
    DefenseSpec spec;
    spec.kind = defense_kind_from_string(j.at("kind").get<std::string>());
    if (j.contains("shield_text")) spec.shield_text = j.at("shield_text").get<std::string>();
    if (j.contains("escape_defense_chars")) {
        spec.escape_defense_chars = j.at("escape_defense_chars").get<std::string>();
    }
    if (j.contains("escape_repeat")) spec.escape_repeat = j.at("escape_repeat").get<int>();
    if (j.contains("drop_leading_instruction")) {
        spec.drop_leading_instruction = j.at("drop_leading_instruction").get<bool>();
    }
    if (j.contains("structured_turns")) spec.structured_turns = j.at("structured_turns").get<bool>();
    if (j.contains("isolation_fence")) spec.isolation_fence = j.at("isolation_fence").get<std::string>();
    if (j.contains("spotlight_marker")) {
        spec.spotlight_marker = j.at("spotlight_marker").get<std::string>();
    }
    if (spec.kind == DefenseKind::none && spec.shield_text.has_value()) {
        throw Error("config-error", "defense none forbids shield_text");
    }
    return spec;
}

inline nlohmann::json defense_spec_to_json(const DefenseSpec& spec) {
    nlohmann::json j{
        {"kind", to_string(spec.kind)},
        {"escape_defense_chars", spec.escape_defense_chars},
        {"escape_repeat", spec.escape_repeat},
        {"drop_leading_instruction", spec.drop_leading_instruction},
        {"structured_turns", spec.structured_turns},
        {"isolation_fence", spec.isolation_fence},
        {"spotlight_marker", spec.spotlight_marker},
    };
    if (spec.shield_text.has_value()) j["shield_text"] = *spec.shield_text;
    return j;
}

inline nlohmann::json template_to_json(const ChatTemplate& t) {
    return nlohmann::json{
        {"name", t.name},
        {"system_prefix", t.system_prefix},   {"system_suffix", t.system_suffix},
        {"user_prefix", t.user_prefix},       {"user_suffix", t.user_suffix},
        {"assistant_prefix", t.assistant_prefix}, {"assistant_suffix", t.assistant_suffix},
    };
}

/// Applies a JSON config file onto a RunConfig. Flags parsed afterwards win
/// over file values.
inline void apply_config_file(RunConfig& config, const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Error("config-error", "cannot open config file " + path);
    }
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw Error("config-error", std::string(path) + ": " + e.what());
    }
    if (j.contains("corpus")) {
        config.corpus_paths.clear();
        if (j.at("corpus").is_string()) {
            config.corpus_paths.push_back(j.at("corpus").get<std::string>());
        } else {
            for (const auto& p : j.at("corpus")) config.corpus_paths.push_back(p.get<std::string>());
        }
    }
    if (j.contains("scenario")) config.scenario = scenario_from_string(j.at("scenario").get<std::string>());
    if (j.contains("template")) config.template_ref = j.at("template").get<std::string>();
    if (j.contains("attacks")) {
        config.attacks.clear();
        for (const auto& a : j.at("attacks")) config.attacks.push_back(attack_spec_from_json(a));
    }
    if (j.contains("defenses")) {
        config.defenses.clear();
        for (const auto& d : j.at("defenses")) config.defenses.push_back(defense_spec_from_json(d));
    }
    if (j.contains("mock")) config.mock = mock_policy_from_string(j.at("mock").get<std::string>());
    if (j.contains("endpoint")) {
        const auto& e = j.at("endpoint");
        ModelEndpoint endpoint;
        endpoint.base_url = e.at("base_url").get<std::string>();
        endpoint.model_name = e.value("model", std::string{});
        endpoint.api_key_env = e.value("api_key_env", std::string{});
        endpoint.timeout = std::chrono::milliseconds(e.value("timeout_ms", 30000));
        endpoint.max_retries = e.value("max_retries", 3);
        config.endpoint = endpoint;
    }
    if (j.contains("settings")) {
        const auto& s = j.at("settings");
        config.settings.max_new_tokens = s.value("max_new_tokens", config.settings.max_new_tokens);
        config.settings.deterministic = s.value("deterministic", config.settings.deterministic);
        config.settings.max_context = s.value("max_context", config.settings.max_context);
        config.settings.chars_per_token = s.value("chars_per_token", config.settings.chars_per_token);
    }
    if (j.contains("options")) {
        const auto& o = j.at("options");
        if (o.contains("position")) {
            config.options.position = position_from_string(o.at("position").get<std::string>());
        }
        config.options.sanitize = o.value("sanitize", config.options.sanitize);
        config.options.no_data = o.value("no_data", config.options.no_data);
        config.options.seed = o.value("seed", config.options.seed);
        config.options.concurrency = o.value("concurrency", config.options.concurrency);
        if (o.contains("strict_match")) {
            config.options.detect.case_fold = !o.at("strict_match").get<bool>();
        }
    }
    if (j.contains("out")) config.out_dir = j.at("out").get<std::string>();
    if (j.contains("cache")) config.cache_dir = j.at("cache").get<std::string>();
}

inline void validate_run_config(const RunConfig& config) {
    if (config.corpus_paths.empty()) {
        throw Error("config-error", "no corpus path given (--corpus)");
    }
    if (config.attacks.empty()) {
        throw Error("config-error", "at least one attack must be listed (--attacks)");
    }
    if (config.defenses.empty()) {
        throw Error("config-error", "at least one defense must be listed (--defenses)");
    }
    if (config.mock.has_value() == config.endpoint.has_value()) {
        throw Error("config-error", "exactly one of --mock or --endpoint is required");
    }
    if (config.settings.max_new_tokens < 1) {
        throw Error("config-error", "max_new_tokens must be >= 1");
    }
    if (config.settings.max_context < config.settings.max_new_tokens) {
        throw Error("config-error", "max_context must be >= max_new_tokens");
    }
    for (const DefenseSpec& d : config.defenses) {
        if (d.kind == DefenseKind::none && d.shield_text.has_value()) {
            throw Error("config-error", "defense none forbids shield_text");
        }
    }
    for (const AttackSpec& a : config.attacks) {
        if (a.kind == AttackKind::suffix && !a.suffix_text.has_value()) {
            throw Error("config-error", "suffix attack requires suffix_text or suffix_file");
        }
    }
}

namespace detail {

inline std::vector<InjectionSample> load_all_corpora(const RunConfig& config,
                                                     std::vector<CorpusManifest>& manifests) {
    std::vector<InjectionSample> samples;
    std::set<std::string> ids;
    for (const std::string& path : config.corpus_paths) {
        Corpus corpus = load_corpus(path, config.scenario);
        for (InjectionSample& s : corpus.samples) {
            if (!ids.insert(s.id).second) {
                throw Error("config-error", "duplicate sample id across corpora: " + s.id);
            }
            samples.push_back(std::move(s));
        }
        manifests.push_back(corpus.manifest);
    }
    return samples;
}

inline void write_file(const std::filesystem::path& path, std::string_view contents) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw Error("io-error", "cannot write " + path.string());
    }
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
}

} // namespace detail

/// Runs the full attack x defense matrix and writes records.jsonl,
/// metrics.csv, metrics.md, and manifest.json to the output directory.
/// Exit codes: 0 success, 1 any cell errors, 2 config errors.
inline int cmd_eval(const RunConfig& config, std::ostream& log = std::cerr) {
    std::vector<CorpusManifest> manifests;
    std::vector<InjectionSample> samples;
    ChatTemplate tmpl;
    try {
        validate_run_config(config);
        tmpl = resolve_template(config.template_ref);
        samples = detail::load_all_corpora(config, manifests);
        if (samples.empty()) {
            throw Error("config-error", "corpus is empty");
        }
        std::filesystem::create_directories(config.out_dir);
    } catch (const Error& e) {
        log << "config error: " << e.what() << "\n";
        return 2;
    }

    ModelRef model = config.mock.has_value()
                         ? ModelRef(MockModel{*config.mock})
                         : ModelRef(RemoteModel(*config.endpoint,
                                                config.cache_dir.has_value()
                                                    ? std::optional<std::filesystem::path>(*config.cache_dir)
                                                    : std::nullopt));

    const PromptLayout layout = layout_for(tmpl);
    RunResult result;
    try {
        result = run_matrix(samples, config.attacks, config.defenses, model, tmpl,
                            config.settings, layout, config.options);
    } catch (const Error& e) {
        log << "config error: " << e.what() << "\n";
        return 2;
    }

    const std::filesystem::path out(config.out_dir);
    detail::write_file(out / "records.jsonl", records_to_jsonl(result.records));
    detail::write_file(out / "metrics.csv", emit_table(result.table, TableFormat::csv));
    detail::write_file(out / "metrics.md", emit_table(result.table, TableFormat::markdown));

    nlohmann::json manifest{
        {"version", kVersion},
        {"records_schema", kRecordsSchemaVersion},
        {"template", template_to_json(tmpl)},
        {"layout", {{"data_marker", layout.data_marker},
                    {"section_separator", layout.section_separator}}},
        {"scenario", to_string(config.scenario)},
        {"settings", {{"max_new_tokens", config.settings.max_new_tokens},
                      {"deterministic", config.settings.deterministic},
                      {"max_context", config.settings.max_context},
                      {"chars_per_token", config.settings.chars_per_token}}},
        {"options", {{"position", to_string(config.options.position)},
                     {"sanitize", config.options.sanitize},
                     {"no_data", config.options.no_data},
                     {"seed", config.options.seed},
                     {"concurrency", config.options.concurrency},
                     {"strict_match", !config.options.detect.case_fold}}},
        {"counts", {{"samples", samples.size()},
                    {"records", result.records.size()},
                    {"errors", result.errors.size()}}},
    };
    nlohmann::json corpora = nlohmann::json::array();
    for (const CorpusManifest& m : manifests) {
        corpora.push_back({{"name", m.name},
                           {"scenario", to_string(m.scenario)},
                           {"count", m.count},
                           {"source_path", m.source_path},
                           {"checksum", m.checksum}});
    }
    manifest["corpora"] = corpora;
    nlohmann::json attacks = nlohmann::json::array();
    for (const AttackSpec& a : config.attacks) attacks.push_back(attack_spec_to_json(a));
    manifest["attacks"] = attacks;
    nlohmann::json defenses = nlohmann::json::array();
    for (const DefenseSpec& d : config.defenses) defenses.push_back(defense_spec_to_json(d));
    manifest["defenses"] = defenses;
    if (config.mock.has_value()) {
        manifest["model"] = {{"mock", to_string(*config.mock)}};
    } else {
        manifest["model"] = {{"endpoint", config.endpoint->base_url},
                             {"name", config.endpoint->model_name},
                             {"api_key_env", config.endpoint->api_key_env},
                             {"timeout_ms", config.endpoint->timeout.count()},
                             {"max_retries", config.endpoint->max_retries}};
    }
    nlohmann::json errors = nlohmann::json::array();
    for (const CellError& e : result.errors) {
        errors.push_back({{"sample_id", e.sample_id},
                          {"attack", to_string(e.attack_kind)},
                          {"defense", to_string(e.defense_kind)},
                          {"code", e.code},
                          {"detail", e.detail}});
    }
    manifest["errors"] = errors;
    detail::write_file(out / "manifest.json", manifest.dump(2) + "\n");

    log << "evaluated " << result.records.size() << " cells ("
        << result.errors.size() << " errors) over " << samples.size() << " samples\n";
    return result.errors.empty() ? 0 : 1;
}

struct ShowPromptConfig {
    std::string corpus_path;
    Scenario scenario = Scenario::direct;
    std::string sample_id;
    AttackSpec attack;
    DefenseSpec defense;
    std::string template_ref = "generic";
    InjectPosition position = InjectPosition::end;
    bool sanitize = false;
    std::uint64_t seed = 0;
};

/// Prints the materialized prompt for one cell: block tags annotated on
/// comment lines, then the exact rendered bytes as an escaped dump.
inline int cmd_show_prompt(const ShowPromptConfig& config, std::ostream& out = std::cout,
                           std::ostream& log = std::cerr) {
    try {
        const ChatTemplate tmpl = resolve_template(config.template_ref);
        const Corpus corpus = load_corpus(config.corpus_path, config.scenario);
        const InjectionSample* sample = nullptr;
        for (const InjectionSample& s : corpus.samples) {
            if (s.id == config.sample_id) sample = &s;
        }
        if (sample == nullptr) {
            throw Error("unknown-sample", config.sample_id + " not in " + config.corpus_path);
        }
        MaterializeOptions mopts;
        mopts.position = config.position;
        mopts.sanitize = config.sanitize;
        mopts.rng_seed = detail::cell_seed(config.seed, sample->id);
        const PromptPlan plan =
            materialize(*sample, config.attack, config.defense, tmpl, layout_for(tmpl), mopts);

        out << "# sample=" << sample->id << " attack=" << to_string(config.attack.kind)
            << " defense=" << to_string(config.defense.kind) << " template=" << tmpl.name << "\n";
        out << annotate_plan(plan);
        out << "# rendered prompt (escaped bytes):\n";
        out << escape_bytes(render_turns(tmpl, plan.turns, true)) << "\n";
        return 0;
    } catch (const Error& e) {
        log << "error: " << e.what() << "\n";
        return 2;
    }
}

inline int cmd_corpus_validate(const std::string& path, Scenario scenario,
                               std::ostream& out = std::cout) {
    try {
        const Corpus corpus = parse_samples(path, scenario);
        out << "file: " << path << "\n";
        out << "checksum: " << corpus.manifest.checksum << "\n";
        out << "accepted: " << corpus.manifest.count << "\n";
        out << "rejected: " << corpus.issues.size() << "\n";
        for (const CorpusIssue& issue : corpus.issues) {
            out << "  " << issue.format() << "\n";
        }
        return corpus.ok() ? 0 : 1;
    } catch (const Error& e) {
        out << "error: " << e.what() << "\n";
        return 2;
    }
}

inline int cmd_corpus_stats(const std::string& path, Scenario scenario,
                            std::ostream& out = std::cout) {
    try {
        const Corpus corpus = parse_samples(path, scenario);
        std::size_t with_injection = 0;
        std::size_t with_golden = 0;
        std::size_t data_bytes = 0;
        for (const InjectionSample& s : corpus.samples) {
            if (!s.injected_instruction.empty()) ++with_injection;
            if (!s.golden_answers.empty()) ++with_golden;
            data_bytes += s.data.size();
        }
        out << "file: " << path << "\n";
        out << "scenario: " << to_string(scenario) << "\n";
        out << "samples: " << corpus.samples.size() << "\n";
        out << "with_injection: " << with_injection << "\n";
        out << "with_golden_answers: " << with_golden << "\n";
        out << "mean_data_bytes: "
            << (corpus.samples.empty() ? 0 : data_bytes / corpus.samples.size()) << "\n";
        out << "checksum: " << corpus.manifest.checksum << "\n";
        return 0;
    } catch (const Error& e) {
        out << "error: " << e.what() << "\n";
        return 2;
    }
}

/// Re-renders metrics tables from a records.jsonl file.
inline int cmd_report(const std::string& records_path, const std::string& out_dir,
                      std::ostream& out = std::cout, std::ostream& log = std::cerr) {
    try {
        std::ifstream in(records_path, std::ios::binary);
        if (!in) {
            throw Error("io-error", "cannot open " + records_path);
        }
        const std::vector<EvalRecord> records = records_from_jsonl(in);
        const MetricsTable table = aggregate(records);
        const std::string csv = emit_table(table, TableFormat::csv);
        const std::string md = emit_table(table, TableFormat::markdown);
        if (out_dir.empty()) {
            out << md;
        } else {
            std::filesystem::create_directories(out_dir);
            detail::write_file(std::filesystem::path(out_dir) / "metrics.csv", csv);
            detail::write_file(std::filesystem::path(out_dir) / "metrics.md", md);
        }
        return 0;
    } catch (const Error& e) {
        log << "error: " << e.what() << "\n";
        return 2;
    }
}

} // namespace pibench
