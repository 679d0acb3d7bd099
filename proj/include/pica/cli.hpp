#ifndef PICA_CLI_HPP_
#define PICA_CLI_HPP_

#include "pica/tensor.hpp"

#include <json.hpp>

#include <ostream>
#include <span>
#include <string>
#include <vector>

namespace pica {

// Exit codes of run_cli.
inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;  // load, overflow or per-instance errors
inline constexpr int kExitUsage = 2;

// One JSON-lines record of `pica generate`. Decoding is greedy, so no seed
// is recorded. A failed instance carries only its id, query and error.
struct RunRecord {
  std::string instance_id;
  std::string query;
  std::string mode;
  std::string response;  // invalid UTF-8 replaced by U+FFFD when serialized
  std::vector<TokenId> response_tokens;
  std::size_t fewshot_tokens = 0;
  std::size_t zeroshot_tokens = 0;
  std::size_t fewshot_prompt_tokens = 0;
  std::size_t zeroshot_prompt_tokens = 0;
  std::string stop_reason;
  double fewshot_seconds = 0.0;
  double zeroshot_seconds = 0.0;
  nlohmann::json config;  // every resolved setting and input path
  std::string checkpoint_crc32;
  std::string error;

  bool operator==(const RunRecord&) const = default;
};

void to_json(nlohmann::json& j, const RunRecord& r);
void from_json(const nlohmann::json& j, RunRecord& r);

// Entry point of the `pica` binary. `args` excludes the program name.
// Subcommands: generate, diagnose, bench, ablate, validate, judge.
int run_cli(std::span<const std::string> args, std::ostream& out, std::ostream& err);

}  // namespace pica

#endif  // PICA_CLI_HPP_
