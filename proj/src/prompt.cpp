#include "pica/prompt.hpp"

#include "pica/errors.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>

namespace pica {

namespace {

constexpr const char* kSections[] = {"SYSTEM", "QUERY_PREFIX", "SEPARATOR", "CLOSE"};

bool header_name(std::string_view line, std::string& name) {
  if (line.size() < 6 || !line.starts_with("@@ ") || !line.ends_with(" @@")) return false;
  name = std::string(line.substr(3, line.size() - 6));
  return true;
}

void append(std::vector<TokenId>& dst, const std::vector<TokenId>& src) { dst.insert(dst.end(), src.begin(), src.end()); }

}  // namespace

PromptTemplate PromptTemplate::parse(std::string_view text) {
  if (text.ends_with('\n')) text.remove_suffix(1);
  std::map<std::string, std::string> blocks;
  std::string current;
  std::string body;
  bool first_line = true;
  auto flush = [&] {
    if (current.empty()) return;
    if (!blocks.emplace(current, body).second) throw TemplateError("template section " + current + " appears twice");
  };

  std::size_t start = 0;
  while (start <= text.size()) {
    const std::size_t nl = text.find('\n', start);
    const std::string_view line = text.substr(start, nl == std::string_view::npos ? std::string_view::npos : nl - start);
    std::string name;
    if (header_name(line, name)) {
      flush();
      current = name;
      body.clear();
      first_line = true;
    } else if (current.empty()) {
      if (!line.empty()) throw TemplateError("template text before the first section header");
    } else {
      if (!first_line) body += '\n';
      body += line;
      first_line = false;
    }
    if (nl == std::string_view::npos) break;
    start = nl + 1;
  }
  flush();

  for (const auto& [name, _] : blocks) {
    if (std::find(std::begin(kSections), std::end(kSections), name) == std::end(kSections)) {
      throw TemplateError("unknown template section " + name);
    }
  }
  for (const char* name : kSections) {
    if (!blocks.contains(name)) throw TemplateError(std::string("template is missing section ") + name);
  }
  return {blocks["SYSTEM"], blocks["QUERY_PREFIX"], blocks["SEPARATOR"], blocks["CLOSE"]};
}

PromptTemplate PromptTemplate::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw TemplateError("cannot open template " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

std::string PromptTemplate::serialize() const {
  return "@@ SYSTEM @@\n" + system + "\n@@ QUERY_PREFIX @@\n" + query_prefix + "\n@@ SEPARATOR @@\n" + separator +
         "\n@@ CLOSE @@\n" + close + "\n";
}

std::string PromptTemplate::render_fewshot(std::span<const Demonstration> demos, std::string_view query) const {
  std::string out = system;
  for (const auto& d : demos) out += query_prefix + d.query + separator + d.answer + close;
  out += query_prefix;
  out += query;
  out += separator;
  return out;
}

PromptBuilder::PromptBuilder(const Tokenizer& tokenizer, PromptTemplate tmpl)
    : tokenizer_(&tokenizer), template_(std::move(tmpl)) {
  system_ = tokenizer.encode(template_.system);
  query_prefix_ = tokenizer.encode(template_.query_prefix);
  separator_ = tokenizer.encode(template_.separator);
  close_ = tokenizer.encode(template_.close);
  if (separator_.empty()) throw TemplateError("separator must tokenize to at least one token");

  // The separator must tokenize the same regardless of what precedes it.
  const std::string pad = " ";
  std::vector<TokenId> expected = tokenizer.encode(pad);
  append(expected, separator_);
  if (tokenizer.encode(pad + template_.separator) != expected) {
    throw TemplateError("separator tokenization depends on the preceding byte");
  }

  std::string stop_text = template_.close;
  while (!stop_text.empty() && (stop_text.back() == '\n' || stop_text.back() == ' ')) stop_text.pop_back();
  stop_ = tokenizer.encode(stop_text);
}

AssembledPrompt PromptBuilder::assemble(std::span<const Demonstration> demos, std::string_view query,
                                        std::span<const TokenId> prior, std::size_t max_length) const {
  AssembledPrompt out;
  auto& t = out.tokens;
  auto& layout = out.layout;

  append(t, system_);
  layout.system = {0, t.size()};
  for (const auto& d : demos) {
    if (d.query.empty() || d.answer.empty()) throw TemplateError("demonstration query and answer must be non-empty");
    const std::size_t begin = t.size();
    append(t, query_prefix_);
    append(t, tokenizer_->encode(d.query));
    append(t, separator_);
    append(t, tokenizer_->encode(d.answer));
    append(t, close_);
    layout.demonstrations.push_back({begin, t.size()});
  }
  const std::size_t query_begin = t.size();
  append(t, query_prefix_);
  append(t, tokenizer_->encode(query));
  layout.query = {query_begin, t.size()};
  const std::size_t sep_begin = t.size();
  append(t, separator_);
  layout.separator = {sep_begin, t.size()};
  for (std::size_t p = sep_begin; p < t.size(); ++p) layout.separator_positions.push_back(p);
  for (TokenId id : prior) {
    if (id < 0 || id >= tokenizer_->vocab_size()) throw TokenizerError("prior token id out of range");
  }
  t.insert(t.end(), prior.begin(), prior.end());
  layout.response = {layout.separator.end, t.size()};

  if (t.size() > max_length) {
    throw OverflowError("assembled prompt of " + std::to_string(t.size()) + " tokens exceeds the limit of " +
                        std::to_string(max_length));
  }
  return out;
}

AssembledPrompt PromptBuilder::assemble_fewshot(std::span<const Demonstration> demos, std::string_view query,
                                                std::size_t max_length) const {
  return assemble(demos, query, {}, max_length);
}

AssembledPrompt PromptBuilder::assemble_zeroshot(std::string_view query, std::span<const TokenId> prior,
                                                 std::size_t max_length) const {
  return assemble({}, query, prior, max_length);
}

}  // namespace pica
