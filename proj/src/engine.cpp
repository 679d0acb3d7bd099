#include "pica/engine.hpp"

#include "pica/errors.hpp"
#include "pica/ops.hpp"

#include <algorithm>
#include <chrono>

namespace pica {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

// Checks the tail of `response` against the stop criteria, stripping the
// close delimiter (or eos) when one fires.
std::optional<StopReason> check_stop(std::vector<TokenId>& response, const StopCriteria& stop) {
  if (stop.eos && !response.empty() && response.back() == *stop.eos) {
    response.pop_back();
    return StopReason::kEos;
  }
  const auto& close = stop.close_sequence;
  if (!close.empty() && response.size() >= close.size() &&
      std::equal(close.begin(), close.end(), response.end() - static_cast<std::ptrdiff_t>(close.size()))) {
    response.resize(response.size() - close.size());
    return StopReason::kClose;
  }
  return std::nullopt;
}

struct DecodeOutcome {
  std::optional<StopReason> stop;  // empty: the target count was reached without a stop
  std::vector<double> token_times;
};

// Greedy loop shared by both stages. Appends to `response` until it holds
// `target` tokens or a stop fires. The last emitted token is only fed back
// through the model when another token is still wanted.
DecodeOutcome greedy_decode(const Model& model, KvCache& cache, Eigen::VectorXf logits, std::vector<TokenId>& response,
                            std::size_t target, const StopCriteria& stop, Clock::time_point t0) {
  DecodeOutcome out;
  const std::size_t start_size = response.size();
  while (response.size() < target) {
    const TokenId token = greedy_select(softmax(logits));
    response.push_back(token);
    out.token_times.push_back(seconds_since(t0));
    if ((out.stop = check_stop(response, stop))) {
      const std::size_t kept = response.size() > start_size ? response.size() - start_size : 0;
      out.token_times.resize(std::min(out.token_times.size(), kept));
      return out;
    }
    if (response.size() >= target) break;
    if (cache.length() >= cache.capacity()) {
      out.stop = StopReason::kContextFull;
      return out;
    }
    logits = decode_step(model, cache, token);
  }
  return out;
}

}  // namespace

std::string_view mode_name(Mode mode) {
  switch (mode) {
    case Mode::kZeroShot: return "zero_shot";
    case Mode::kVanillaIcl: return "vanilla_icl";
    case Mode::kVecOnly: return "vec_only";
    case Mode::kProgOnly: return "prog_only";
    case Mode::kPica: return "pica";
  }
  return "unknown";
}

Mode parse_mode(std::string_view name) {
  if (name == "zero_shot" || name == "zero") return Mode::kZeroShot;
  if (name == "vanilla_icl" || name == "vanilla") return Mode::kVanillaIcl;
  if (name == "vec_only" || name == "vec") return Mode::kVecOnly;
  if (name == "prog_only" || name == "prog") return Mode::kProgOnly;
  if (name == "pica") return Mode::kPica;
  throw ConfigError("unknown mode '" + std::string(name) + "'");
}

std::string_view stop_reason_name(StopReason reason) {
  switch (reason) {
    case StopReason::kEos: return "eos";
    case StopReason::kClose: return "close";
    case StopReason::kMaxTokens: return "max_tokens";
    case StopReason::kContextFull: return "context_full";
  }
  return "unknown";
}

StopCriteria StopCriteria::for_prompt(const PromptBuilder& builder) {
  StopCriteria s;
  s.eos = builder.tokenizer().special().eos;
  s.close_sequence = builder.stop_sequence();
  return s;
}

GenerationConfig GenerationConfig::defaults(const ModelConfig& model) {
  GenerationConfig c;
  c.intervention_depth = model.num_layers / 2;
  return c;
}

void GenerationConfig::validate(const ModelConfig& model) const {
  if (max_tokens == 0) throw ConfigError("max_tokens must be positive");
  if (intervention_depth < 0 || intervention_depth > model.num_layers) {
    throw ConfigError("intervention depth " + std::to_string(intervention_depth) + " outside 0.." +
                      std::to_string(model.num_layers));
  }
}

IclVector IclVector::extract(const CapturedStates& captured, int layers, std::span<const std::size_t> positions,
                             int hidden_dim) {
  IclVector v;
  v.layers = layers;
  v.sep_count = positions.size();
  v.source_positions.assign(positions.begin(), positions.end());
  v.states.resize(static_cast<Eigen::Index>(layers * positions.size()), hidden_dim);
  for (int l = 1; l <= layers; ++l) {
    for (std::size_t k = 0; k < positions.size(); ++k) {
      auto it = captured.find(Site{l, positions[k]});
      if (it == captured.end()) throw PlanError("separator state missing from capture");
      v.states.row(static_cast<Eigen::Index>((l - 1) * positions.size() + k)) = it->second.transpose();
    }
  }
  if (!v.states.allFinite()) throw Error("ICL vector contains non-finite values");
  return v;
}

InterventionPlan IclVector::plan(std::span<const std::size_t> target_positions) const {
  if (layers > 0 && target_positions.size() != sep_count) {
    throw PlanError("ICL vector holds " + std::to_string(sep_count) + " separator tokens but the target has " +
                    std::to_string(target_positions.size()));
  }
  InterventionPlan p;
  for (int l = 1; l <= layers; ++l) {
    for (std::size_t k = 0; k < sep_count; ++k) p.add({l, target_positions[k]}, state(l, k).transpose());
  }
  return p;
}

FewshotStageResult run_fewshot_stage(const Model& model, std::span<const TokenId> tokens,
                                     const TranscriptLayout& layout, std::size_t prior_tokens, int depth,
                                     std::size_t budget, const StopCriteria& stop) {
  const auto t0 = Clock::now();
  const auto& positions = layout.separator_positions;
  PrefillResult pre = prefill(model, tokens, CapturePlan::grid(1, depth, positions));

  FewshotStageResult out;
  out.icl = IclVector::extract(pre.captured, depth, positions, model.config().hidden_dim);
  const std::size_t target = std::min(prior_tokens, budget);
  DecodeOutcome d = greedy_decode(model, pre.cache, std::move(pre.logits), out.tokens, target, stop, t0);
  out.token_times = std::move(d.token_times);
  if (d.stop) {
    out.complete = true;
    out.stop_reason = *d.stop;
  } else if (out.tokens.size() >= budget) {
    out.complete = true;
    out.stop_reason = StopReason::kMaxTokens;
  }
  out.seconds = seconds_since(t0);
  if (!out.complete) {
    std::vector<TokenId> fed(tokens.begin(), tokens.end());
    fed.insert(fed.end(), out.tokens.begin(), out.tokens.end());
    fed.resize(pre.cache.length());
    out.prefix = PrefixCache{std::move(pre.cache), std::move(fed)};
  }
  return out;
}

namespace {

// Number of leading rows of `reuse` the zero-shot prompt can keep.
std::size_t reusable_rows(const PrefixCache& reuse, std::span<const TokenId> prompt, const IclVector* icl,
                          std::span<const std::size_t> targets) {
  const std::size_t limit = std::min(reuse.tokens.size(), prompt.size() - 1);
  std::size_t n = 0;
  while (n < limit && reuse.tokens[n] == prompt[n]) ++n;
  if (icl != nullptr && icl->layers > 0) {
    for (std::size_t k = 0; k < targets.size(); ++k) {
      if (targets[k] < n && icl->source_positions[k] != targets[k]) n = targets[k];
    }
  }
  return n;
}

}  // namespace

ZeroshotStageResult run_zeroshot_stage(const Model& model, const PromptBuilder& builder, std::string_view query,
                                       std::span<const TokenId> prior, const IclVector* icl,
                                       const GenerationConfig& config, PrefixCache* reuse) {
  const auto t0 = Clock::now();
  const AssembledPrompt prompt =
      builder.assemble_zeroshot(query, prior, static_cast<std::size_t>(model.config().max_position));
  const auto& targets = prompt.layout.separator_positions;
  const bool guided = icl != nullptr && icl->layers > 0;

  std::optional<KvCache> cache;
  Eigen::VectorXf logits;
  if (reuse != nullptr) {
    const std::size_t keep = reusable_rows(*reuse, prompt.tokens, icl, targets);
    cache.emplace(std::move(reuse->cache));
    cache->truncate(keep);
    InterventionPlan plan;
    if (guided) {
      const InterventionPlan full = icl->plan(targets);
      for (const auto& [site, state] : full.entries()) {
        if (site.position >= keep) plan.add(site, state);
      }
    }
    logits = extend(model, *cache, std::span(prompt.tokens).subspan(keep), plan);
  } else {
    InterventionPlan plan;
    if (guided) plan = icl->plan(targets);
    PrefillResult pre = prefill(model, prompt.tokens, {}, plan);
    cache.emplace(std::move(pre.cache));
    logits = std::move(pre.logits);
  }

  ZeroshotStageResult out;
  out.prompt_tokens = prompt.tokens.size();
  std::vector<TokenId> response(prior.begin(), prior.end());
  DecodeOutcome d = greedy_decode(model, *cache, std::move(logits), response, config.max_tokens, config.stop, t0);
  out.stop_reason = d.stop.value_or(StopReason::kMaxTokens);
  out.token_times = std::move(d.token_times);
  // A close delimiter straddling the stage boundary can eat prior tokens.
  const std::size_t kept_prior = std::min(prior.size(), response.size());
  out.prior_kept = kept_prior;
  out.tokens.assign(response.begin() + static_cast<std::ptrdiff_t>(kept_prior), response.end());
  out.seconds = seconds_since(t0);
  return out;
}

GenerationResult generate(const Model& model, const PromptBuilder& builder, std::span<const Demonstration> demos,
                          std::string_view query, const GenerationConfig& config) {
  config.validate(model.config());
  const auto max_position = static_cast<std::size_t>(model.config().max_position);
  GenerationResult result;

  if (config.mode == Mode::kZeroShot) {
    ZeroshotStageResult zs = run_zeroshot_stage(model, builder, query, {}, nullptr, config);
    result.response = zs.tokens;
    result.zeroshot_tokens = zs.tokens.size();
    result.zeroshot_seconds = zs.seconds;
    result.zeroshot_prompt_tokens = zs.prompt_tokens;
    result.token_times = std::move(zs.token_times);
    result.stop_reason = zs.stop_reason;
    return result;
  }

  std::size_t prior = config.prior_tokens;
  int depth = config.intervention_depth;
  switch (config.mode) {
    case Mode::kVanillaIcl: prior = config.max_tokens; depth = 0; break;
    case Mode::kVecOnly: prior = 0; break;
    case Mode::kProgOnly: depth = 0; break;
    default: break;
  }

  const AssembledPrompt fewshot = builder.assemble_fewshot(demos, query, max_position);
  FewshotStageResult few =
      run_fewshot_stage(model, fewshot.tokens, fewshot.layout, prior, depth, config.max_tokens, config.stop);
  result.fewshot_prompt_tokens = fewshot.tokens.size();
  result.fewshot_seconds = few.seconds;
  result.token_times = few.token_times;
  if (depth > 0) result.icl = few.icl;

  if (few.complete) {
    result.response = std::move(few.tokens);
    result.fewshot_tokens = result.response.size();
    result.stop_reason = few.stop_reason;
    return result;
  }

  ZeroshotStageResult zs = run_zeroshot_stage(model, builder, query, few.tokens, depth > 0 ? &few.icl : nullptr,
                                              config, few.prefix ? &*few.prefix : nullptr);
  const std::size_t kept_prior = zs.prior_kept;
  result.response.assign(few.tokens.begin(), few.tokens.begin() + static_cast<std::ptrdiff_t>(kept_prior));
  result.response.insert(result.response.end(), zs.tokens.begin(), zs.tokens.end());
  result.fewshot_tokens = kept_prior;
  result.zeroshot_tokens = zs.tokens.size();
  result.zeroshot_seconds = zs.seconds;
  result.zeroshot_prompt_tokens = zs.prompt_tokens;
  result.stop_reason = zs.stop_reason;
  for (double t : zs.token_times) result.token_times.push_back(few.seconds + t);
  return result;
}

}  // namespace pica
