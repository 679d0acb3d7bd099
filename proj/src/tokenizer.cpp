#include "pica/tokenizer.hpp"

#include "pica/errors.hpp"

#include <fstream>
#include <limits>

namespace pica {

namespace {

int hex_value(char c) {
  if (c >= '0' && c <= '9') return c - '0';
  if (c >= 'a' && c <= 'f') return c - 'a' + 10;
  if (c >= 'A' && c <= 'F') return c - 'A' + 10;
  return -1;
}

bool is_special_name(std::string_view s) { return s.size() > 4 && s.starts_with("<|") && s.ends_with("|>"); }

}  // namespace

std::string hex_escape(std::string_view bytes) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string out;
  out.reserve(bytes.size() * 4);
  for (unsigned char c : bytes) {
    out += "\\x";
    out += kDigits[c >> 4];
    out += kDigits[c & 0xF];
  }
  return out;
}

std::string parse_hex_escaped(std::string_view text) {
  if (text.size() % 4 != 0) throw TokenizerError("malformed hex-escaped token: " + std::string(text));
  std::string out;
  for (std::size_t i = 0; i < text.size(); i += 4) {
    const int hi = hex_value(text[i + 2]);
    const int lo = hex_value(text[i + 3]);
    if (text[i] != '\\' || text[i + 1] != 'x' || hi < 0 || lo < 0) {
      throw TokenizerError("malformed hex-escaped token: " + std::string(text));
    }
    out += static_cast<char>(hi * 16 + lo);
  }
  return out;
}

Tokenizer::Tokenizer(std::vector<std::string> tokens, std::vector<std::pair<std::string, std::string>> merges,
                     std::map<std::string, TokenId> specials)
    : tokens_(std::move(tokens)), special_flag_(tokens_.size(), false) {
  for (const auto& [name, id] : specials) {
    if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
      throw TokenizerError("special token " + name + " id out of range");
    }
    special_flag_[id] = true;
    tokens_[id].clear();
    if (name == "<|bos|>") special_.bos = id;
    if (name == "<|eos|>") special_.eos = id;
    if (name == "<|pad|>") special_.pad = id;
  }
  for (std::size_t id = 0; id < tokens_.size(); ++id) {
    if (special_flag_[id]) continue;
    if (tokens_[id].empty()) throw TokenizerError("token " + std::to_string(id) + " has no bytes");
    if (!by_bytes_.emplace(tokens_[id], static_cast<TokenId>(id)).second) {
      throw TokenizerError("duplicate token bytes for id " + std::to_string(id));
    }
  }
  for (int b = 0; b < 256; ++b) {
    if (!by_bytes_.contains(std::string(1, static_cast<char>(b)))) {
      throw TokenizerError("vocabulary lacks single-byte token " + hex_escape(std::string(1, static_cast<char>(b))));
    }
  }
  for (std::size_t rank = 0; rank < merges.size(); ++rank) {
    const auto& [left, right] = merges[rank];
    const auto l = token_id(left);
    const auto r = token_id(right);
    const auto m = token_id(left + right);
    if (!l || !r || !m) {
      throw TokenizerError("merge " + hex_escape(left) + " " + hex_escape(right) + " references unknown tokens");
    }
    merge_rank_.try_emplace({*l, *r}, static_cast<int>(rank), *m);
  }
}

Tokenizer Tokenizer::load(const std::filesystem::path& vocab_file, const std::filesystem::path& merges_file) {
  std::ifstream vocab(vocab_file);
  if (!vocab) throw TokenizerError("cannot open vocab file " + vocab_file.string());
  std::vector<std::string> tokens;
  std::vector<bool> filled;
  std::map<std::string, TokenId> specials;
  std::string line;
  int lineno = 0;
  while (std::getline(vocab, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto tab = line.rfind('\t');
    if (tab == std::string::npos) throw TokenizerError("vocab line " + std::to_string(lineno) + ": missing TAB");
    const std::string_view text(line.data(), tab);
    long id = -1;
    try {
      id = std::stol(line.substr(tab + 1));
    } catch (const std::exception&) {
      throw TokenizerError("vocab line " + std::to_string(lineno) + ": bad id");
    }
    if (id < 0 || id > std::numeric_limits<TokenId>::max() / 2) {
      throw TokenizerError("vocab line " + std::to_string(lineno) + ": id out of range");
    }
    if (static_cast<std::size_t>(id) >= tokens.size()) {
      tokens.resize(id + 1);
      filled.resize(id + 1, false);
    }
    if (filled[id]) throw TokenizerError("vocab id " + std::to_string(id) + " defined twice");
    filled[id] = true;
    if (is_special_name(text)) {
      specials.emplace(std::string(text), static_cast<TokenId>(id));
    } else {
      tokens[id] = parse_hex_escaped(text);
    }
  }
  for (std::size_t i = 0; i < filled.size(); ++i) {
    if (!filled[i]) throw TokenizerError("vocab ids are not dense: " + std::to_string(i) + " missing");
  }

  std::ifstream merge_in(merges_file);
  if (!merge_in) throw TokenizerError("cannot open merges file " + merges_file.string());
  std::vector<std::pair<std::string, std::string>> merges;
  lineno = 0;
  while (std::getline(merge_in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto space = line.find(' ');
    if (space == std::string::npos) throw TokenizerError("merges line " + std::to_string(lineno) + ": expected two tokens");
    merges.emplace_back(parse_hex_escaped(std::string_view(line).substr(0, space)),
                        parse_hex_escaped(std::string_view(line).substr(space + 1)));
  }
  return Tokenizer(std::move(tokens), std::move(merges), std::move(specials));
}

std::vector<TokenId> Tokenizer::encode(std::string_view text) const {
  std::vector<TokenId> ids;
  ids.reserve(text.size());
  for (char c : text) ids.push_back(by_bytes_.find(std::string_view(&c, 1))->second);

  // Repeatedly apply the lowest-ranked merge present anywhere in the
  // sequence, merging all of its occurrences left to right.
  while (ids.size() > 1) {
    int best_rank = std::numeric_limits<int>::max();
    std::pair<TokenId, TokenId> best_pair;
    TokenId merged = -1;
    for (std::size_t i = 0; i + 1 < ids.size(); ++i) {
      auto it = merge_rank_.find({ids[i], ids[i + 1]});
      if (it != merge_rank_.end() && it->second.first < best_rank) {
        best_rank = it->second.first;
        best_pair = it->first;
        merged = it->second.second;
      }
    }
    if (merged < 0) break;
    std::size_t out = 0;
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (i + 1 < ids.size() && ids[i] == best_pair.first && ids[i + 1] == best_pair.second) {
        ids[out++] = merged;
        ++i;
      } else {
        ids[out++] = ids[i];
      }
    }
    ids.resize(out);
  }
  return ids;
}

std::string Tokenizer::decode(std::span<const TokenId> ids) const {
  std::string out;
  for (TokenId id : ids) out += token_bytes(id);
  return out;
}

bool Tokenizer::is_special(TokenId id) const {
  return id >= 0 && static_cast<std::size_t>(id) < special_flag_.size() && special_flag_[id];
}

const std::string& Tokenizer::token_bytes(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw TokenizerError("token id " + std::to_string(id) + " outside vocabulary of " +
                         std::to_string(tokens_.size()));
  }
  return tokens_[id];
}

std::optional<TokenId> Tokenizer::token_id(std::string_view bytes) const {
  auto it = by_bytes_.find(bytes);
  if (it == by_bytes_.end()) return std::nullopt;
  return it->second;
}

}  // namespace pica
