#ifndef PICA_TOKENIZER_HPP_
#define PICA_TOKENIZER_HPP_

#include "pica/tensor.hpp"

#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace pica {

// Byte-level BPE. Every single byte is a token, so encoding is total and
// decode(encode(x)) == x for arbitrary bytes. Special tokens never arise
// from encode and decode to nothing.
//
// Vocab file: one token per line, `<bytes>\t<id>`, where <bytes> is every
// byte written as \xHH, or a special name in the form <|name|>.
// Merges file: one `<left> <right>` pair per line in rank order, both
// sides in the same \xHH form.
class Tokenizer {
 public:
  struct Special {
    std::optional<TokenId> bos;
    std::optional<TokenId> eos;
    std::optional<TokenId> pad;
  };

  // `tokens[id]` is the byte string of token id; specials map names such as
  // "<|eos|>" to ids whose byte string is empty.
  Tokenizer(std::vector<std::string> tokens, std::vector<std::pair<std::string, std::string>> merges,
            std::map<std::string, TokenId> specials = {});

  static Tokenizer load(const std::filesystem::path& vocab_file, const std::filesystem::path& merges_file);

  std::vector<TokenId> encode(std::string_view text) const;
  std::string decode(std::span<const TokenId> ids) const;

  int vocab_size() const { return static_cast<int>(tokens_.size()); }
  const Special& special() const { return special_; }
  bool is_special(TokenId id) const;
  // Byte string of a token; empty for specials.
  const std::string& token_bytes(TokenId id) const;
  std::optional<TokenId> token_id(std::string_view bytes) const;

 private:
  std::vector<std::string> tokens_;
  std::vector<bool> special_flag_;
  std::map<std::string, TokenId, std::less<>> by_bytes_;
  std::map<std::pair<TokenId, TokenId>, std::pair<int, TokenId>> merge_rank_;  // -> (rank, merged id)
  Special special_;
};

// \xHH-escapes every byte; parse_hex_escaped is its inverse.
std::string hex_escape(std::string_view bytes);
std::string parse_hex_escaped(std::string_view text);

}  // namespace pica

#endif  // PICA_TOKENIZER_HPP_
