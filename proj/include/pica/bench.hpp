#ifndef PICA_BENCH_HPP_
#define PICA_BENCH_HPP_

#include "pica/dataset.hpp"
#include "pica/engine.hpp"

#include <json.hpp>

#include <ostream>
#include <span>
#include <vector>

namespace pica {

enum class SweepAxis { kNone, kPriorTokens, kDepth };
std::string_view axis_name(SweepAxis axis);
SweepAxis parse_axis(std::string_view name);

struct BenchSpec {
  std::vector<Instance> dataset;
  std::size_t force_tokens = 256;  // timing runs emit exactly this many tokens
  int repetitions = 3;
  int warmup = 1;
  std::vector<Mode> modes = {Mode::kVanillaIcl, Mode::kZeroShot, Mode::kVecOnly, Mode::kProgOnly, Mode::kPica};
  std::size_t prior_tokens = 10;
  int intervention_depth = 0;
  std::size_t max_tokens = 4096;  // ablation generation budget (stop conditions active)
  SweepAxis axis = SweepAxis::kNone;
  std::vector<long> values;

  void validate(const ModelConfig& model) const;
  nlohmann::json to_json() const;
};

struct ModeTiming {
  Mode mode = Mode::kVanillaIcl;
  std::vector<double> run_seconds;  // one entry per (repetition, instance)
  double mean_seconds = 0.0;
  double stddev_seconds = 0.0;
  double fewshot_seconds_per_token = 0.0;
  double zeroshot_seconds_per_token = 0.0;
  std::size_t tokens_per_run = 0;
  double speedup = 0.0;  // mean(vanilla_icl) / mean(mode)
  double speedup_noise = 0.0;  // one standard error, propagated from both means
};

struct SpeedupReport {
  std::vector<ModeTiming> modes;
  nlohmann::json metadata;  // spec, model checksum, machine

  const ModeTiming& timing(Mode mode) const;
  nlohmann::json to_json() const;
  void write_csv(std::ostream& out) const;
};

// Serialized timing of forced-length generation for every mode. Timed runs
// interleave modes within each repetition; warmup runs are discarded.
SpeedupReport measure_speedup(const Model& model, const PromptBuilder& builder, std::span<const Demonstration> demos,
                              const BenchSpec& spec);

struct AblationRow {
  std::string label;  // "vanilla_icl" for the baseline row, else the axis name
  long value = 0;
  double agreement_rate = 0.0;      // fraction of instances identical to vanilla ICL
  double mean_prefix_match = 0.0;   // mean leading tokens shared with vanilla ICL
  double prefix_match_fraction = 0.0;
  double normalized = 0.0;          // agreement_rate / baseline agreement (baseline = 1)
  double mean_seconds = 0.0;
  double normalized_time = 0.0;     // mean_seconds / baseline mean_seconds
};

struct AblationReport {
  AblationRow baseline;           // vanilla ICL against itself
  std::vector<AblationRow> rows;  // one per swept value, in order
  nlohmann::json metadata;        // spec, model checksum, machine
};

AblationReport ablation_sweep(const Model& model, const PromptBuilder& builder, std::span<const Demonstration> demos,
                              const BenchSpec& spec);

// Baseline row first, then the swept rows.
void write_ablation_csv(std::ostream& out, const AblationReport& report);

nlohmann::json machine_metadata();

}  // namespace pica

#endif  // PICA_BENCH_HPP_
