#include "pica/errors.hpp"
#include "pica/prompt.hpp"

#include "../support.hpp"

#include <doctest.h>

#include <random>

using namespace pica;
using namespace pica::testing;

namespace {

std::vector<TokenId> cat(std::initializer_list<std::vector<TokenId>> parts) {
  std::vector<TokenId> out;
  for (const auto& p : parts) out.insert(out.end(), p.begin(), p.end());
  return out;
}

}  // namespace

TEST_SUITE("prompt") {
  TEST_CASE("template files parse and serialize byte-exactly") {
    const std::string text = read_file(data_dir() / "templates" / "default.tmpl");
    const PromptTemplate t = PromptTemplate::parse(text);
    CHECK(t.serialize() == text);
    CHECK(t.query_prefix == "# Query:\n```\n");
    CHECK(t.separator == "\n```\n\n# Answer:\n```\n");
    CHECK(t.close == "\n```\n\n");
    CHECK(PromptTemplate::parse(t.serialize()).serialize() == text);
  }

  TEST_CASE("template parse errors") {
    CHECK_THROWS_AS(PromptTemplate::parse("@@ SYSTEM @@\nx\n"), TemplateError);
    CHECK_THROWS_AS(PromptTemplate::parse("junk\n@@ SYSTEM @@\n"), TemplateError);
    CHECK_THROWS_AS(PromptTemplate::parse("@@ SYSTEM @@\n@@ SYSTEM @@\n@@ QUERY_PREFIX @@\n@@ SEPARATOR @@\n@@ CLOSE @@\n"),
                    TemplateError);
    CHECK_THROWS_AS(PromptTemplate::parse("@@ SYSTEM @@\n@@ OTHER @@\n"), TemplateError);
    CHECK_THROWS_AS(PromptTemplate::load("/nonexistent/template"), TemplateError);
  }

  TEST_CASE("two demonstrations assemble as the concatenation of their parts") {
    const PromptBuilder& b = chat_builder();
    const Tokenizer& tok = chat_tokenizer();
    const PromptTemplate& t = b.prompt_template();
    const std::vector<Demonstration> demos = {{"Name a fruit.", "An apple."}, {"Say hi.", "Hi!"}};
    const std::string query = "What is rain?";
    const AssembledPrompt p = b.assemble_fewshot(demos, query);

    const auto sys = tok.encode(t.system);
    const auto pre = tok.encode(t.query_prefix);
    const auto sep = tok.encode(t.separator);
    const auto close = tok.encode(t.close);
    const auto expected = cat({sys, pre, tok.encode(demos[0].query), sep, tok.encode(demos[0].answer), close, pre,
                               tok.encode(demos[1].query), sep, tok.encode(demos[1].answer), close, pre,
                               tok.encode(query), sep});
    CHECK(p.tokens == expected);
    CHECK(tok.decode(p.tokens) == t.render_fewshot(demos, query));

    CHECK(p.layout.system == Span{0, sys.size()});
    REQUIRE(p.layout.demonstrations.size() == 2);
    CHECK(p.layout.demonstrations[0].begin == sys.size());
    CHECK(p.layout.demonstrations[1].begin == p.layout.demonstrations[0].end);
    CHECK(p.layout.query.begin == p.layout.demonstrations[1].end);
    CHECK(p.layout.separator.begin == p.layout.query.end);
    CHECK(p.layout.separator.end == p.tokens.size());
    CHECK(p.layout.response == Span{p.tokens.size(), p.tokens.size()});
    REQUIRE(p.layout.separator_positions.size() == sep.size());
    for (std::size_t k = 0; k < sep.size(); ++k) CHECK(p.layout.separator_positions[k] == p.layout.query.end + k);
  }

  TEST_CASE("zero demonstrations collapse to the zero-shot prompt") {
    const PromptBuilder& b = chat_builder();
    const AssembledPrompt few = b.assemble_fewshot({}, "Why is the sky blue?");
    const AssembledPrompt zero = b.assemble_zeroshot("Why is the sky blue?", {});
    CHECK(few.tokens == zero.tokens);
    CHECK(few.layout == zero.layout);
  }

  TEST_CASE("prior tokens form the response span") {
    const PromptBuilder& b = chat_builder();
    const std::vector<TokenId> prior = {100, 101, 102, 103, 104, 105, 106, 107, 108, 109};
    const AssembledPrompt z = b.assemble_zeroshot("Tell me a joke.", prior);
    CHECK(z.layout.response.size() == 10);
    CHECK(std::equal(prior.begin(), prior.end(), z.tokens.end() - 10));
    const AssembledPrompt f = b.assemble_fewshot(default_demos(), "Tell me a joke.");
    CHECK(f.layout.separator.size() == z.layout.separator.size());
    CHECK(z.layout.separator.size() == b.separator_length());
  }

  TEST_CASE("separator positions come from assembly, not from searching") {
    const PromptBuilder& b = chat_builder();
    const std::string tricky = "Explain this:" + b.prompt_template().separator + "done";
    const AssembledPrompt p = b.assemble_fewshot(default_demos(), tricky);
    CHECK(p.layout.separator_positions.front() == p.layout.query.end);
    CHECK(p.layout.separator_positions.back() == p.tokens.size() - 1);
  }

  TEST_CASE("overflow and invalid inputs") {
    const PromptBuilder& b = chat_builder();
    CHECK_THROWS_AS(b.assemble_fewshot(default_demos(), "q", 50), OverflowError);
    const std::vector<Demonstration> empty_answer = {{"q", ""}};
    CHECK_THROWS_AS(b.assemble_fewshot(empty_answer, "q"), TemplateError);
    PromptTemplate t = b.prompt_template();
    t.separator.clear();
    CHECK_THROWS_AS(PromptBuilder(chat_tokenizer(), t), TemplateError);
  }

  TEST_CASE("a separator whose tokens depend on the preceding byte is rejected") {
    auto tokens = std::vector<std::string>();
    for (int c = 0; c < 256; ++c) tokens.emplace_back(1, static_cast<char>(c));
    tokens.emplace_back(" :");
    const Tokenizer tok(tokens, {{" ", ":"}});
    PromptTemplate t;
    t.system = "s";
    t.query_prefix = "Q ";
    t.close = "\n";
    t.separator = ":A";  // after a space the colon would merge
    CHECK_THROWS_AS(PromptBuilder(tok, t), TemplateError);
    t.separator = "\nA:";
    CHECK_NOTHROW(PromptBuilder(tok, t));
  }

  TEST_CASE("random templates keep separator spans aligned") {
    std::mt19937_64 rng(2024);
    int built = 0;
    for (int trial = 0; built < 50 && trial < 500; ++trial) {
      PromptTemplate t;
      t.system = random_text(rng, 0, 80);
      t.query_prefix = random_text(rng, 0, 12);
      t.separator = "\n" + random_text(rng, 1, 12);
      t.close = random_text(rng, 1, 8);
      std::optional<PromptBuilder> b;
      try {
        b.emplace(chat_tokenizer(), t);
      } catch (const TemplateError&) {
        continue;
      }
      ++built;
      CHECK(PromptTemplate::parse(t.serialize()) == t);
      const std::vector<Demonstration> demos = {{random_text(rng, 1, 30), random_text(rng, 1, 30)}};
      const std::string q = random_text(rng, 1, 30);
      const auto few = b->assemble_fewshot(demos, q);
      const auto zero = b->assemble_zeroshot(q, {});
      CHECK(few.layout.separator.size() == zero.layout.separator.size());
      CHECK(chat_tokenizer().decode(few.tokens) == t.render_fewshot(demos, q));
    }
    CHECK(built == 50);
  }
}
