#ifndef PICA_TESTS_SUPPORT_HPP_
#define PICA_TESTS_SUPPORT_HPP_

#include "pica/checkpoint.hpp"
#include "pica/dataset.hpp"
#include "pica/model.hpp"
#include "pica/prompt.hpp"
#include "pica/tokenizer.hpp"

#include <json.hpp>

#include <unistd.h>

#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace pica::testing {

inline std::filesystem::path fixtures_dir() { return PICA_FIXTURES_DIR; }
inline std::filesystem::path data_dir() { return PICA_DATA_DIR; }

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

inline nlohmann::json read_json(const std::filesystem::path& path) { return nlohmann::json::parse(read_file(path)); }

// Little-endian float32 file.
inline std::vector<float> read_floats(const std::filesystem::path& path) {
  const std::string bytes = read_file(path);
  std::vector<float> out(bytes.size() / sizeof(float));
  std::memcpy(out.data(), bytes.data(), out.size() * sizeof(float));
  return out;
}

// Oracle models are loaded once per process.
inline const Model& toy_a() {
  static const Model m = load_checkpoint(fixtures_dir() / "toy_a" / "model.ckpt");
  return m;
}

inline const Model& toy_chat() {
  static const Model m = load_checkpoint(fixtures_dir() / "toy_chat" / "model.ckpt");
  return m;
}

inline const Tokenizer& chat_tokenizer() {
  static const Tokenizer t =
      Tokenizer::load(fixtures_dir() / "toy_chat" / "vocab.txt", fixtures_dir() / "toy_chat" / "merges.txt");
  return t;
}

inline const PromptBuilder& chat_builder() {
  static const PromptBuilder b(chat_tokenizer(), PromptTemplate::load(data_dir() / "templates" / "default.tmpl"));
  return b;
}

inline const std::vector<Demonstration>& default_demos() {
  static const auto d = load_demonstrations(data_dir() / "demos" / "default.jsonl");
  return d;
}

inline const std::vector<Instance>& toy_queries() {
  static const auto d = load_dataset(data_dir() / "datasets" / "toy_queries.jsonl");
  return d;
}

inline std::vector<TokenId> random_tokens(std::mt19937_64& rng, std::size_t n, int vocab) {
  std::uniform_int_distribution<TokenId> pick(0, vocab - 1);
  std::vector<TokenId> out(n);
  for (auto& t : out) t = pick(rng);
  return out;
}

inline std::string random_text(std::mt19937_64& rng, std::size_t min_len, std::size_t max_len) {
  static constexpr std::string_view kAlphabet = "abcdefghijklmnopqrstuvwxyz     ,.?!'\nABCDEFG0123456789";
  std::uniform_int_distribution<std::size_t> len(min_len, max_len);
  std::uniform_int_distribution<std::size_t> pick(0, kAlphabet.size() - 1);
  std::string s(len(rng), ' ');
  for (auto& c : s) c = kAlphabet[pick(rng)];
  return s;
}

// Fresh directory under the build tree's temp area, removed by the caller.
inline std::filesystem::path temp_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("pica_test_" + name + "_" + std::to_string(::getpid()));
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline bool freeze_requested() { return std::getenv("PICA_FREEZE_FIXTURES") != nullptr; }

}  // namespace pica::testing

#endif  // PICA_TESTS_SUPPORT_HPP_
