#ifndef PICA_PROMPT_HPP_
#define PICA_PROMPT_HPP_

#include "pica/tensor.hpp"
#include "pica/tokenizer.hpp"

#include <filesystem>
#include <limits>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace pica {

struct Demonstration {
  std::string query;
  std::string answer;
};

// Four text blocks. A demonstration renders as
//   query_prefix + query + separator + answer + close
// and a prompt as system + demonstrations + query_prefix + query + separator.
//
// File format: sections introduced by a line `@@ NAME @@` (NAME one of
// SYSTEM, QUERY_PREFIX, SEPARATOR, CLOSE). A section's text is every line
// after its header joined with '\n'; the newline ending the last line of a
// section belongs to the next header, so a trailing newline is written as
// an extra empty line.
struct PromptTemplate {
  std::string system;
  std::string query_prefix;
  std::string separator;
  std::string close;

  static PromptTemplate parse(std::string_view text);
  static PromptTemplate load(const std::filesystem::path& path);
  std::string serialize() const;

  // Text of the prompt the few-shot assembly produces.
  std::string render_fewshot(std::span<const Demonstration> demos, std::string_view query) const;

  bool operator==(const PromptTemplate&) const = default;
};

// Half-open token index range.
struct Span {
  std::size_t begin = 0;
  std::size_t end = 0;
  std::size_t size() const { return end - begin; }
  bool operator==(const Span&) const = default;
};

struct TranscriptLayout {
  Span system;
  std::vector<Span> demonstrations;
  Span query;
  Span separator;
  Span response;
  // Absolute indices of the separator that follows the test query.
  std::vector<std::size_t> separator_positions;

  std::size_t total() const { return response.end; }
  bool operator==(const TranscriptLayout&) const = default;
};

struct AssembledPrompt {
  std::vector<TokenId> tokens;
  TranscriptLayout layout;
};

inline constexpr std::size_t kNoLimit = std::numeric_limits<std::size_t>::max();

// Tokenises each template block once and assembles prompts by
// concatenating per-segment encodings, recording positions as it goes.
// Holds a reference to the tokenizer, which must outlive it.
class PromptBuilder {
 public:
  // Throws TemplateError if the separator is empty or its tokenization
  // changes when preceded by a one-byte pad.
  PromptBuilder(const Tokenizer& tokenizer, PromptTemplate tmpl);

  // Throws OverflowError if the prompt would be longer than max_length.
  AssembledPrompt assemble_fewshot(std::span<const Demonstration> demos, std::string_view query,
                                   std::size_t max_length = kNoLimit) const;
  AssembledPrompt assemble_zeroshot(std::string_view query, std::span<const TokenId> prior,
                                    std::size_t max_length = kNoLimit) const;

  // Tokens of the close delimiter without trailing whitespace; emitting
  // them ends a response.
  const std::vector<TokenId>& stop_sequence() const { return stop_; }
  std::size_t separator_length() const { return separator_.size(); }

  const Tokenizer& tokenizer() const { return *tokenizer_; }
  const PromptTemplate& prompt_template() const { return template_; }

 private:
  AssembledPrompt assemble(std::span<const Demonstration> demos, std::string_view query,
                           std::span<const TokenId> prior, std::size_t max_length) const;

  const Tokenizer* tokenizer_;
  PromptTemplate template_;
  std::vector<TokenId> system_;
  std::vector<TokenId> query_prefix_;
  std::vector<TokenId> separator_;
  std::vector<TokenId> close_;
  std::vector<TokenId> stop_;
};

}  // namespace pica

#endif  // PICA_PROMPT_HPP_
