#pragma once

#include "pibench/chat.hpp"
#include "pibench/corpus.hpp"
#include "pibench/detail/sha256.hpp"
#include "pibench/error.hpp"

#include <httplib.h>
#include <nlohmann/json.hpp>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <thread>
#include <variant>
#include <vector>

namespace pibench {

struct GenerationSettings {
    int max_new_tokens = 256;
    bool deterministic = true; // greedy / temperature zero
    int max_context = 8192;
    /// Character-budget proxy for tokens; tokenizer-free by design.
    double chars_per_token = 4.0;
};

struct ModelEndpoint {
    std::string base_url;
    std::string model_name;
    std::string api_key_env; // name of the environment variable holding the key
    std::chrono::milliseconds timeout{30000};
    int max_retries = 3;
};

enum class MockPolicy { obey_last, obey_first, obey_all, immune };

inline const char* to_string(MockPolicy p) {
    switch (p) {
        case MockPolicy::obey_last: return "obey_last";
        case MockPolicy::obey_first: return "obey_first";
        case MockPolicy::obey_all: return "obey_all";
        case MockPolicy::immune: return "immune";
    }
    return "?";
}

inline MockPolicy mock_policy_from_string(std::string_view s) {
    if (s == "obey_last") return MockPolicy::obey_last;
    if (s == "obey_first") return MockPolicy::obey_first;
    if (s == "obey_all") return MockPolicy::obey_all;
    if (s == "immune") return MockPolicy::immune;
    throw Error("unknown-mock-policy", std::string(s));
}

/// Per-sample answer oracle for the mock models: maps the two instruction
/// texts of the active sample to their answers.
struct AnswerOracle {
    std::string original_text;
    std::string original_answer;
    std::string injected_text;
    std::string injected_answer;

    std::optional<std::string> answer_for(std::string_view instruction) const {
        if (instruction == original_text) return original_answer;
        if (!injected_text.empty() && instruction == injected_text) return injected_answer;
        return std::nullopt;
    }
};

inline AnswerOracle oracle_for(const InjectionSample& sample) {
    AnswerOracle oracle;
    oracle.original_text = sample.instruction;
    oracle.original_answer = sample.golden_answers.empty() ? std::string{}
                                                           : sample.golden_answers.front();
    oracle.injected_text = sample.injected_instruction;
    oracle.injected_answer = sample.witness;
    return oracle;
}

/// Deterministic mock completion: scans the plan's instruction-bearing
/// blocks (original_instruction, injected_instruction, repeated_instruction)
/// in order and answers per the obedience policy.
inline std::string mock_complete(MockPolicy policy, const PromptPlan& plan,
                                 const AnswerOracle& oracle) {
    if (policy == MockPolicy::immune) {
        return oracle.original_answer;
    }
    std::vector<const Block*> instructions;
    for (const Turn& turn : plan.turns) {
        for (const Block& block : turn.blocks) {
            switch (block.tag()) {
                case Tag::original_instruction:
                case Tag::injected_instruction:
                case Tag::repeated_instruction:
                    instructions.push_back(&block);
                    break;
                default:
                    break;
            }
        }
    }
    if (instructions.empty()) {
        throw Error("oracle-gap", "plan carries no instruction-bearing blocks");
    }
    auto answer = [&oracle](const Block* block) -> std::string {
        auto a = oracle.answer_for(block->text());
        if (!a.has_value()) {
            throw Error("oracle-gap", "no answer for block tagged " + std::string(to_string(block->tag())));
        }
        return *a;
    };
    switch (policy) {
        case MockPolicy::obey_last:
            return answer(instructions.back());
        case MockPolicy::obey_first:
            return answer(instructions.front());
        case MockPolicy::obey_all: {
            std::string out;
            for (std::size_t i = 0; i < instructions.size(); ++i) {
                if (i > 0) out += "\n";
                out += answer(instructions[i]);
            }
            return out;
        }
        case MockPolicy::immune:
            break;
    }
    return oracle.original_answer;
}

/// Rejects plans whose rendered length exceeds the context budget under the
/// character proxy.
inline void ensure_within_context(const PromptPlan& plan, const ChatTemplate& tmpl,
                                  const GenerationSettings& settings) {
    const std::string prompt = render_turns(tmpl, plan.turns, true);
    const double tokens = static_cast<double>(prompt.size()) /
                          (settings.chars_per_token > 0 ? settings.chars_per_token : 4.0);
    if (tokens > static_cast<double>(settings.max_context)) {
        throw Error("context-overflow",
                    "~" + std::to_string(static_cast<long long>(tokens)) + " tokens > max_context " +
                        std::to_string(settings.max_context));
    }
}

/// Digest over (rendered prompt, settings, model name). Identical inputs
/// produce identical keys; the rendered prompt folds the template in.
inline std::string cache_key(const PromptPlan& plan, const ChatTemplate& tmpl,
                             const GenerationSettings& settings, const std::string& model_name) {
    nlohmann::json j{
        {"prompt", render_turns(tmpl, plan.turns, true)},
        {"model", model_name},
        {"max_new_tokens", settings.max_new_tokens},
        {"deterministic", settings.deterministic},
        {"max_context", settings.max_context},
    };
    return detail::sha256_hex(j.dump());
}

/// Append-only directory of key -> response files ("<key>.txt"). Writes go
/// through a temp file and rename, so concurrent writers and interrupted
/// runs never leave a torn entry.
class ResponseCache {
public:
    explicit ResponseCache(std::filesystem::path dir) : dir_(std::move(dir)) {
        std::filesystem::create_directories(dir_);
    }

    std::optional<std::string> get(const std::string& key) const {
        std::ifstream in(path_for(key), std::ios::binary);
        if (!in) return std::nullopt;
        std::ostringstream buf;
        buf << in.rdbuf();
        return buf.str();
    }

    void put(const std::string& key, std::string_view response) const {
        const std::filesystem::path final_path = path_for(key);
        const std::filesystem::path tmp_path =
            final_path.string() + ".tmp." +
            std::to_string(std::hash<std::thread::id>{}(std::this_thread::get_id()));
        {
            std::ofstream out(tmp_path, std::ios::binary | std::ios::trunc);
            if (!out) throw Error("cache-io", tmp_path.string());
            out.write(response.data(), static_cast<std::streamsize>(response.size()));
        }
        std::filesystem::rename(tmp_path, final_path);
    }

    const std::filesystem::path& dir() const noexcept { return dir_; }

private:
    std::filesystem::path path_for(const std::string& key) const { return dir_ / (key + ".txt"); }

    std::filesystem::path dir_;
};

namespace detail {

struct ParsedUrl {
    std::string scheme_host_port; // "http://host:port"
    std::string path_prefix;      // "" or "/v1"
};

inline ParsedUrl split_base_url(const std::string& base_url) {
    ParsedUrl parsed;
    const std::size_t scheme_end = base_url.find("://");
    const std::size_t path_start =
        base_url.find('/', scheme_end == std::string::npos ? 0 : scheme_end + 3);
    if (path_start == std::string::npos) {
        parsed.scheme_host_port = base_url;
    } else {
        parsed.scheme_host_port = base_url.substr(0, path_start);
        parsed.path_prefix = base_url.substr(path_start);
        while (!parsed.path_prefix.empty() && parsed.path_prefix.back() == '/') {
            parsed.path_prefix.pop_back();
        }
    }
    return parsed;
}

} // namespace detail

/// Messages-array view of a plan for the chat-completions wire shape: one
/// {role, content} entry per turn, content being the turn's concatenated
/// block texts (role markers are the server's concern).
inline nlohmann::json plan_to_messages(const PromptPlan& plan) {
    nlohmann::json messages = nlohmann::json::array();
    for (const Turn& turn : plan.turns) {
        std::string content;
        for (const Block& block : turn.blocks) content += block.text();
        messages.push_back({{"role", to_string(turn.role)}, {"content", content}});
    }
    return messages;
}

/// Remote chat-completions client. POSTs {base_url}/chat/completions with
/// deterministic decoding and returns the first choice's message content.
/// Retries transport failures and 5xx/429 with exponential backoff starting
/// at one second.
class HttpChatClient {
public:
    explicit HttpChatClient(ModelEndpoint endpoint) : endpoint_(std::move(endpoint)) {}

    std::string complete(const PromptPlan& plan, const ChatTemplate& tmpl,
                         const GenerationSettings& settings) const {
        (void)tmpl;
        const detail::ParsedUrl url = detail::split_base_url(endpoint_.base_url);
        nlohmann::json body{
            {"model", endpoint_.model_name},
            {"messages", plan_to_messages(plan)},
            {"temperature", 0},
            {"max_tokens", settings.max_new_tokens},
        };
        const std::string payload = body.dump();

        httplib::Headers headers;
        if (!endpoint_.api_key_env.empty()) {
            if (const char* key = std::getenv(endpoint_.api_key_env.c_str());
                key != nullptr && key[0] != '\0') {
                headers.emplace("Authorization", std::string("Bearer ") + key);
            }
        }

        std::string last_failure;
        std::chrono::milliseconds backoff{1000};
        for (int attempt = 0; attempt <= endpoint_.max_retries; ++attempt) {
            if (attempt > 0) {
                std::this_thread::sleep_for(backoff);
                backoff *= 2;
            }
            httplib::Client client(url.scheme_host_port);
            client.set_connection_timeout(endpoint_.timeout);
            client.set_read_timeout(endpoint_.timeout);
            client.set_write_timeout(endpoint_.timeout);
            auto result = client.Post(url.path_prefix + "/chat/completions", headers, payload,
                                      "application/json");
            if (!result) {
                last_failure = "transport: " + httplib::to_string(result.error());
                continue;
            }
            if (result->status == 429 || result->status >= 500) {
                last_failure = "status " + std::to_string(result->status);
                continue;
            }
            if (result->status != 200) {
                throw Error("endpoint-unavailable",
                            "status " + std::to_string(result->status) + ": " + result->body);
            }
            try {
                const nlohmann::json reply = nlohmann::json::parse(result->body);
                return reply.at("choices").at(0).at("message").at("content").get<std::string>();
            } catch (const nlohmann::json::exception& e) {
                throw Error("endpoint-unavailable", std::string("malformed response: ") + e.what());
            }
        }
        throw Error("endpoint-unavailable", last_failure);
    }

    const ModelEndpoint& endpoint() const noexcept { return endpoint_; }

private:
    ModelEndpoint endpoint_;
};

struct MockModel {
    MockPolicy policy = MockPolicy::obey_last;
};

struct RemoteModel {
    HttpChatClient client;
    std::optional<ResponseCache> cache;

    explicit RemoteModel(ModelEndpoint endpoint, std::optional<std::filesystem::path> cache_dir = {})
        : client(std::move(endpoint)) {
        if (cache_dir.has_value()) cache.emplace(*cache_dir);
    }
};

/// A model the eval engine can drive: a deterministic mock or a remote
/// endpoint (optionally cached).
using ModelRef = std::variant<MockModel, RemoteModel>;

struct Completion {
    std::string text;
    bool cached = false;
};

/// Uniform completion entry point. The oracle is consulted by mock models
/// only; remote models receive the plan as role-attributed messages.
inline Completion complete(const ModelRef& model, const PromptPlan& plan, const ChatTemplate& tmpl,
                           const GenerationSettings& settings, const AnswerOracle& oracle) {
    ensure_within_context(plan, tmpl, settings);
    if (const auto* mock = std::get_if<MockModel>(&model)) {
        return Completion{mock_complete(mock->policy, plan, oracle), false};
    }
    const auto& remote = std::get<RemoteModel>(model);
    std::string key;
    if (remote.cache.has_value()) {
        key = cache_key(plan, tmpl, settings, remote.client.endpoint().model_name);
        if (auto hit = remote.cache->get(key)) {
            return Completion{std::move(*hit), true};
        }
    }
    std::string response = remote.client.complete(plan, tmpl, settings);
    if (remote.cache.has_value()) {
        remote.cache->put(key, response);
    }
    return Completion{std::move(response), false};
}

} // namespace pibench
