#include <pibench/chat.hpp>

#include "support/oracles.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <random>

using namespace pibench;

namespace {

ChatTemplate minimal_template() {
    ChatTemplate t;
    t.name = "mini";
    t.user_prefix = "<U>";
    t.user_suffix = "</U>";
    t.assistant_prefix = "<A>";
    return t;
}

Turn user(std::string text, Tag tag = Tag::data) {
    return Turn{Role::user, {Block(tag, std::move(text))}};
}

Turn assistant(std::string text, Tag tag = Tag::data) {
    return Turn{Role::assistant, {Block(tag, std::move(text))}};
}

} // namespace

TEST_CASE("render_turns concatenates role markers and block texts") {
    const ChatTemplate t = minimal_template();
    CHECK(render_turns(t, {user("hi")}, true) == "<U>hi</U><A>");
    CHECK(render_turns(t, {user("hi")}, false) == "<U>hi</U>");

    ChatTemplate empty_markers;
    CHECK(render_turns(empty_markers, {user("a"), assistant("b")}, false) == "ab");
}

TEST_CASE("render_turns rejects empty conversations") {
    const ChatTemplate t = minimal_template();
    try {
        render_turns(t, std::vector<Turn>{}, true);
        FAIL("expected empty-conversation");
    } catch (const Error& e) {
        CHECK(e.code() == "empty-conversation");
    }
    try {
        render_turns(t, {Turn{Role::user, {}}}, false);
        FAIL("expected empty-conversation");
    } catch (const Error& e) {
        CHECK(e.code() == "empty-conversation");
    }
}

TEST_CASE("render_turns is deterministic and length-additive") {
    std::mt19937_64 gen(1234);
    auto random_text = [&gen](std::size_t max_len) {
        std::uniform_int_distribution<int> len(0, static_cast<int>(max_len));
        std::uniform_int_distribution<int> byte(0, 255);
        std::string s;
        const int n = len(gen);
        for (int i = 0; i < n; ++i) s.push_back(static_cast<char>(byte(gen)));
        return s;
    };

    for (int round = 0; round < 50; ++round) {
        ChatTemplate t;
        t.system_prefix = random_text(6);
        t.system_suffix = random_text(6);
        t.user_prefix = random_text(6);
        t.user_suffix = random_text(6);
        t.assistant_prefix = random_text(6);
        t.assistant_suffix = random_text(6);

        std::vector<Turn> turns;
        std::uniform_int_distribution<int> n_turns(1, 5);
        std::uniform_int_distribution<int> n_blocks(1, 4);
        std::uniform_int_distribution<int> role(0, 2);
        std::size_t expected_len = 0;
        const int nt = n_turns(gen);
        for (int i = 0; i < nt; ++i) {
            Turn turn;
            turn.role = static_cast<Role>(role(gen));
            const int nb = n_blocks(gen);
            for (int b = 0; b < nb; ++b) {
                std::string text = random_text(24);
                expected_len += text.size();
                turn.blocks.emplace_back(Tag::data, std::move(text));
            }
            expected_len += t.prefix_for(turn.role).size() + t.suffix_for(turn.role).size();
            turns.push_back(std::move(turn));
        }

        const std::string first = render_turns(t, turns, false);
        CHECK(first.size() == expected_len);
        for (int rep = 0; rep < 20; ++rep) {
            CHECK(render_turns(t, turns, false) == first);
        }
    }
}

TEST_CASE("render_inline tags by the presence of an injected instruction") {
    ChatTemplate t;
    t.assistant_prefix = "<A>";
    t.assistant_suffix = "</A>";
    t.user_prefix = "<U>";
    t.user_suffix = "</U>";

    const Block forged = render_inline(
        t, {assistant("OK", Tag::attack_prompt), user("do it", Tag::injected_instruction)});
    CHECK(forged.tag() == Tag::attack_prompt);
    CHECK(forged.text() == "<A>OK</A><U>do it</U>");

    const Block shield = render_inline(
        t, {assistant("injection detected", Tag::shield_prompt),
            user("the instruction", Tag::repeated_instruction)});
    CHECK(shield.tag() == Tag::shield_prompt);

    try {
        render_inline(t, std::vector<Turn>{});
        FAIL("expected empty-conversation");
    } catch (const Error& e) {
        CHECK(e.code() == "empty-conversation");
    }
}

TEST_CASE("sanitize_content removes every role token") {
    ChatTemplate t;
    t.assistant_prefix = "<A>";
    CHECK(sanitize_content("abc<A>def", t) == "abcdef");
    CHECK(sanitize_content("plain text", t) == "plain text");
    CHECK(sanitize_content("<A><A>x", t) == "x");
    // Removal can splice a token back together; the fixpoint pass catches it.
    CHECK(sanitize_content("<A<A>>x", t) == "x");

    const ChatTemplate none;
    CHECK(sanitize_content("anything <A> goes", none) == "anything <A> goes");
}

TEST_CASE("sanitize_content matches the repeated-removal oracle and is idempotent") {
    for (const ChatTemplate& t : {generic_template(), tagged_template(), minimal_template()}) {
        const std::vector<std::string> tokens = t.role_token_set();
        std::mt19937_64 gen(99);
        std::uniform_int_distribution<int> pick(0, static_cast<int>(tokens.size()));
        std::uniform_int_distribution<int> word(0, 25);
        for (int round = 0; round < 200; ++round) {
            std::string text;
            for (int piece = 0; piece < 8; ++piece) {
                const int t_idx = pick(gen);
                if (t_idx < static_cast<int>(tokens.size())) {
                    text += tokens[static_cast<std::size_t>(t_idx)];
                } else {
                    text += static_cast<char>('a' + word(gen));
                }
            }
            const std::string once = sanitize_content(text, t);
            CHECK(once == oracles::sanitize_to_fixpoint(text, tokens));
            CHECK(sanitize_content(once, t) == once);
            for (const std::string& token : tokens) {
                CHECK(once.find(token) == std::string::npos);
            }
        }
    }
}

TEST_CASE("validate_template flags ambiguity and overlap") {
    ChatTemplate all_empty;
    CHECK(validate_template(all_empty) == std::vector<std::string>{"ambiguous-roles"});

    ChatTemplate overlapping;
    overlapping.user_prefix = "<A>";
    overlapping.assistant_prefix = "<A>x";
    CHECK(validate_template(overlapping) == std::vector<std::string>{"overlapping-markers"});

    ChatTemplate disjoint;
    disjoint.user_prefix = "<U>";
    disjoint.assistant_prefix = "<A>";
    CHECK(validate_template(disjoint).empty());

    CHECK(validate_template(generic_template()).empty());
    CHECK(validate_template(tagged_template()).empty());
}

TEST_CASE("role_token_set is the non-empty markers, longest first") {
    ChatTemplate t;
    t.user_prefix = "<U>";
    t.user_suffix = "<U>"; // duplicate collapses
    t.assistant_prefix = "<LONGER>";
    const auto tokens = t.role_token_set();
    REQUIRE(tokens.size() == 2);
    CHECK(tokens[0] == "<LONGER>");
    CHECK(tokens[1] == "<U>");
}

TEST_CASE("templates load from JSON with unicode escapes and defaults") {
    const auto j = nlohmann::json::parse(
        R"({"name":"custom","user_prefix":"<Q>","assistant_prefix":"\nA: "})");
    const ChatTemplate t = template_from_json(j);
    CHECK(t.name == "custom");
    CHECK(t.user_prefix == "<Q>");
    CHECK(t.assistant_prefix == "\nA: ");
    CHECK(t.user_suffix.empty());
    CHECK(t.system_prefix.empty());
}

TEST_CASE("builtin template lookup") {
    CHECK(builtin_template("generic").user_prefix == "### Instruction:\n");
    CHECK(builtin_template("tagged").user_prefix == "<Instruction>");
    try {
        builtin_template("nope");
        FAIL("expected unknown-template");
    } catch (const Error& e) {
        CHECK(e.code() == "unknown-template");
    }
}
