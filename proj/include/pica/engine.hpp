#ifndef PICA_ENGINE_HPP_
#define PICA_ENGINE_HPP_

#include "pica/model.hpp"
#include "pica/prompt.hpp"

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace pica {

enum class Mode {
  kZeroShot,    // query only
  kVanillaIcl,  // demonstrations for the whole response
  kVecOnly,     // zero-shot decoding guided by the ICL vector
  kProgOnly,    // few-shot prior tokens, then plain zero-shot
  kPica,        // few-shot prior tokens, then ICL-vector-guided zero-shot
};

std::string_view mode_name(Mode mode);
// Accepts the canonical names plus "vec" and "prog"; throws ConfigError.
Mode parse_mode(std::string_view name);

// When generation ends. An empty criteria set gives forced-length output.
struct StopCriteria {
  std::optional<TokenId> eos;
  std::vector<TokenId> close_sequence;  // stripped from the response

  static StopCriteria none() { return {}; }
  static StopCriteria for_prompt(const PromptBuilder& builder);
};

struct GenerationConfig {
  Mode mode = Mode::kPica;
  std::size_t prior_tokens = 10;      // tokens generated with demonstrations; >= max_tokens never switches
  int intervention_depth = 0;         // blocks 1..depth receive the ICL vector
  std::size_t max_tokens = 4096;      // response budget across both stages
  StopCriteria stop;

  // Defaults with intervention_depth = floor(num_layers / 2).
  static GenerationConfig defaults(const ModelConfig& model);
  void validate(const ModelConfig& model) const;
};

// Residual-stream states of the final separator tokens, blocks 1..layers,
// captured during a demonstration-bearing prefill.
struct IclVector {
  int layers = 0;
  std::size_t sep_count = 0;
  std::vector<std::size_t> source_positions;
  RowMatrixXf states;  // [layers * sep_count, hidden]; row (l-1)*sep_count + k

  auto state(int layer, std::size_t k) const {
    return states.row(static_cast<Eigen::Index>((layer - 1) * sep_count + k));
  }

  static IclVector extract(const CapturedStates& captured, int layers, std::span<const std::size_t> positions,
                           int hidden_dim);
  // Replacement plan mapping separator k of this vector onto target_positions[k].
  InterventionPlan plan(std::span<const std::size_t> target_positions) const;
};

enum class StopReason { kEos, kClose, kMaxTokens, kContextFull };
std::string_view stop_reason_name(StopReason reason);

struct GenerationResult {
  std::vector<TokenId> response;
  std::size_t fewshot_tokens = 0;
  std::size_t zeroshot_tokens = 0;
  double fewshot_seconds = 0.0;
  double zeroshot_seconds = 0.0;
  // Seconds from generation start until each response token was chosen.
  std::vector<double> token_times;
  std::size_t fewshot_prompt_tokens = 0;
  std::size_t zeroshot_prompt_tokens = 0;
  StopReason stop_reason = StopReason::kMaxTokens;
  std::optional<IclVector> icl;

  double total_seconds() const { return fewshot_seconds + zeroshot_seconds; }
};

// A cache together with the tokens whose keys and values it holds.
struct PrefixCache {
  KvCache cache;
  std::vector<TokenId> tokens;
};

struct FewshotStageResult {
  std::vector<TokenId> tokens;
  IclVector icl;
  // A stop condition fired (or the budget ran out); stage two is skipped.
  bool complete = false;
  StopReason stop_reason = StopReason::kMaxTokens;
  std::vector<double> token_times;
  double seconds = 0.0;
  // The stage's cache, kept so the zero-shot stage can reuse the prefix
  // both prompts share.
  std::optional<PrefixCache> prefix;
};

// Prefills the demonstration-bearing prompt capturing the final separator
// at blocks 1..depth, then greedily decodes up to `prior_tokens` tokens.
// `budget` caps the total response length.
FewshotStageResult run_fewshot_stage(const Model& model, std::span<const TokenId> tokens,
                                     const TranscriptLayout& layout, std::size_t prior_tokens, int depth,
                                     std::size_t budget, const StopCriteria& stop);

struct ZeroshotStageResult {
  std::vector<TokenId> tokens;  // new tokens only, close delimiter stripped
  // Prior tokens still part of the response; fewer than given only when a
  // close delimiter straddles the stage boundary.
  std::size_t prior_kept = 0;
  StopReason stop_reason = StopReason::kMaxTokens;
  std::size_t prompt_tokens = 0;
  std::vector<double> token_times;
  double seconds = 0.0;
};

// Demonstration-free continuation: one prefill of system, query, separator
// and prior tokens with the ICL vector written over the separator states,
// then greedy decoding on the intervened cache.
//
// With `reuse`, rows of that cache whose tokens match the zero-shot prompt
// from position 0 are kept and only the remainder is computed. A reused
// separator row is only kept when the ICL vector was captured at that very
// position, where writing it back changes nothing. `reuse` is consumed.
ZeroshotStageResult run_zeroshot_stage(const Model& model, const PromptBuilder& builder, std::string_view query,
                                       std::span<const TokenId> prior, const IclVector* icl,
                                       const GenerationConfig& config, PrefixCache* reuse = nullptr);

GenerationResult generate(const Model& model, const PromptBuilder& builder, std::span<const Demonstration> demos,
                          std::string_view query, const GenerationConfig& config);

}  // namespace pica

#endif  // PICA_ENGINE_HPP_
