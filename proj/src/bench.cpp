#include "pica/bench.hpp"

#include "pica/errors.hpp"

#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <iomanip>
#include <numeric>
#include <thread>

namespace pica {

namespace {

using Clock = std::chrono::steady_clock;

double mean_of(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double stddev_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

std::size_t common_prefix(const std::vector<TokenId>& a, const std::vector<TokenId>& b) {
  const auto [ia, ib] = std::mismatch(a.begin(), a.end(), b.begin(), b.end());
  return static_cast<std::size_t>(ia - a.begin());
}

}  // namespace

std::string_view axis_name(SweepAxis axis) {
  switch (axis) {
    case SweepAxis::kNone: return "none";
    case SweepAxis::kPriorTokens: return "n";
    case SweepAxis::kDepth: return "l";
  }
  return "none";
}

SweepAxis parse_axis(std::string_view name) {
  if (name == "none") return SweepAxis::kNone;
  if (name == "n" || name == "N") return SweepAxis::kPriorTokens;
  if (name == "l" || name == "L") return SweepAxis::kDepth;
  throw ConfigError("unknown sweep axis '" + std::string(name) + "' (expected n or l)");
}

void BenchSpec::validate(const ModelConfig& model) const {
  if (repetitions < 1) throw ConfigError("repetitions must be at least 1");
  if (warmup < 0) throw ConfigError("warmup must be non-negative");
  if (force_tokens < 1) throw ConfigError("forced generation length must be at least 1");
  if (intervention_depth < 0 || intervention_depth > model.num_layers) {
    throw ConfigError("intervention depth outside 0.." + std::to_string(model.num_layers));
  }
  for (long v : values) {
    if (v < 0) throw ConfigError("sweep values must be non-negative");
    if (axis == SweepAxis::kDepth && v > model.num_layers) {
      throw ConfigError("sweep depth " + std::to_string(v) + " exceeds num_layers " + std::to_string(model.num_layers));
    }
  }
}

nlohmann::json BenchSpec::to_json() const {
  nlohmann::json modes_json = nlohmann::json::array();
  for (Mode m : modes) modes_json.push_back(mode_name(m));
  return {{"instances", dataset.size()},   {"force_tokens", force_tokens},
          {"repetitions", repetitions},    {"warmup", warmup},
          {"modes", modes_json},           {"prior_tokens", prior_tokens},
          {"intervention_depth", intervention_depth}, {"max_tokens", max_tokens},
          {"axis", axis_name(axis)},       {"values", values}};
}

nlohmann::json machine_metadata() {
  char host[256] = {};
  ::gethostname(host, sizeof(host) - 1);
  const std::time_t now = std::time(nullptr);
  char stamp[32] = {};
  std::strftime(stamp, sizeof(stamp), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
  return {{"hostname", host},
          {"hardware_concurrency", std::thread::hardware_concurrency()},
          {"compiler", __VERSION__},
#ifdef NDEBUG
          {"build", "release"},
#else
          {"build", "debug"},
#endif
          {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                        std::to_string(EIGEN_MINOR_VERSION)},
          {"simd", Eigen::SimdInstructionSetsInUse()},
          {"timestamp", stamp}};
}

const ModeTiming& SpeedupReport::timing(Mode mode) const {
  for (const auto& t : modes) {
    if (t.mode == mode) return t;
  }
  throw Error("mode " + std::string(mode_name(mode)) + " not in report");
}

nlohmann::json SpeedupReport::to_json() const {
  nlohmann::json j = metadata;
  j["modes"] = nlohmann::json::array();
  for (const auto& t : modes) {
    j["modes"].push_back({{"mode", mode_name(t.mode)},
                          {"mean_seconds", t.mean_seconds},
                          {"stddev_seconds", t.stddev_seconds},
                          {"fewshot_seconds_per_token", t.fewshot_seconds_per_token},
                          {"zeroshot_seconds_per_token", t.zeroshot_seconds_per_token},
                          {"tokens_per_run", t.tokens_per_run},
                          {"speedup", t.speedup},
                          {"speedup_noise", t.speedup_noise},
                          {"run_seconds", t.run_seconds}});
  }
  return j;
}

void SpeedupReport::write_csv(std::ostream& out) const {
  out << "mode,mean_seconds,stddev_seconds,fewshot_seconds_per_token,zeroshot_seconds_per_token,tokens_per_run,"
         "speedup,speedup_noise\n";
  out << std::setprecision(9);
  for (const auto& t : modes) {
    out << mode_name(t.mode) << ',' << t.mean_seconds << ',' << t.stddev_seconds << ','
        << t.fewshot_seconds_per_token << ',' << t.zeroshot_seconds_per_token << ',' << t.tokens_per_run << ','
        << t.speedup << ',' << t.speedup_noise << '\n';
  }
}

SpeedupReport measure_speedup(const Model& model, const PromptBuilder& builder, std::span<const Demonstration> demos,
                              const BenchSpec& spec) {
  spec.validate(model.config());
  if (spec.dataset.empty()) throw DatasetError("benchmark dataset is empty");
  if (spec.prior_tokens > spec.force_tokens) throw ConfigError("prior token count exceeds the forced length");
  const auto max_position = static_cast<std::size_t>(model.config().max_position);
  for (const auto& inst : spec.dataset) {
    const auto prompt = builder.assemble_fewshot(demos, inst.query);
    if (prompt.tokens.size() + spec.force_tokens > max_position) {
      throw OverflowError("instance " + inst.id + ": prompt of " + std::to_string(prompt.tokens.size()) +
                          " tokens plus " + std::to_string(spec.force_tokens) + " forced tokens exceeds max_position");
    }
  }

  std::vector<Mode> modes = spec.modes;
  if (std::find(modes.begin(), modes.end(), Mode::kVanillaIcl) == modes.end()) {
    modes.insert(modes.begin(), Mode::kVanillaIcl);
  }
  auto config_for = [&](Mode mode) {
    GenerationConfig c;
    c.mode = mode;
    c.prior_tokens = spec.prior_tokens;
    c.intervention_depth = spec.intervention_depth;
    c.max_tokens = spec.force_tokens;
    c.stop = StopCriteria::none();
    return c;
  };

  struct Accum {
    std::vector<double> runs;
    double fewshot_seconds = 0.0, zeroshot_seconds = 0.0;
    std::size_t fewshot_tokens = 0, zeroshot_tokens = 0;
  };
  std::vector<Accum> acc(modes.size());

  // Modes alternate per instance, in reversed order on odd repetitions, so
  // slow drift in machine speed falls on every mode alike.
  for (int rep = 0; rep < spec.warmup + spec.repetitions; ++rep) {
    const bool timed = rep >= spec.warmup;
    for (const auto& inst : spec.dataset) {
      for (std::size_t i = 0; i < modes.size(); ++i) {
        const std::size_t m = rep % 2 == 0 ? i : modes.size() - 1 - i;
        const GenerationConfig cfg = config_for(modes[m]);
        const auto t0 = Clock::now();
        const GenerationResult r = generate(model, builder, demos, inst.query, cfg);
        const double elapsed = std::chrono::duration<double>(Clock::now() - t0).count();
        if (r.response.size() != spec.force_tokens) {
          throw Error("forced-length run produced " + std::to_string(r.response.size()) + " tokens");
        }
        if (!timed) continue;
        acc[m].runs.push_back(elapsed);
        acc[m].fewshot_seconds += r.fewshot_seconds;
        acc[m].zeroshot_seconds += r.zeroshot_seconds;
        acc[m].fewshot_tokens += r.fewshot_tokens;
        acc[m].zeroshot_tokens += r.zeroshot_tokens;
      }
    }
  }

  SpeedupReport report;
  for (std::size_t m = 0; m < modes.size(); ++m) {
    ModeTiming t;
    t.mode = modes[m];
    t.run_seconds = acc[m].runs;
    t.mean_seconds = mean_of(t.run_seconds);
    t.stddev_seconds = stddev_of(t.run_seconds);
    t.tokens_per_run = spec.force_tokens;
    if (acc[m].fewshot_tokens) t.fewshot_seconds_per_token = acc[m].fewshot_seconds / acc[m].fewshot_tokens;
    if (acc[m].zeroshot_tokens) t.zeroshot_seconds_per_token = acc[m].zeroshot_seconds / acc[m].zeroshot_tokens;
    report.modes.push_back(std::move(t));
  }
  const ModeTiming& base = report.modes.front();
  const double n = static_cast<double>(base.run_seconds.size());
  for (auto& t : report.modes) {
    t.speedup = base.mean_seconds / t.mean_seconds;
    if (t.mode == Mode::kVanillaIcl) {
      t.speedup_noise = 0.0;
    } else {
      const double rel_base = base.stddev_seconds / std::sqrt(n) / base.mean_seconds;
      const double rel_mode = t.stddev_seconds / std::sqrt(n) / t.mean_seconds;
      t.speedup_noise = t.speedup * std::sqrt(rel_base * rel_base + rel_mode * rel_mode);
    }
  }
  report.metadata = {{"kind", "speedup"},
                     {"spec", spec.to_json()},
                     {"demonstrations", demos.size()},
                     {"model_checksum", model.checksum()},
                     {"model_config", model.config()},
                     {"machine", machine_metadata()}};
  return report;
}

AblationReport ablation_sweep(const Model& model, const PromptBuilder& builder, std::span<const Demonstration> demos,
                              const BenchSpec& spec) {
  spec.validate(model.config());
  if (spec.axis == SweepAxis::kNone) throw ConfigError("ablation requires a sweep axis");
  if (spec.values.empty()) throw ConfigError("ablation requires at least one sweep value");
  if (spec.dataset.empty()) throw DatasetError("ablation dataset is empty");

  const StopCriteria stop = StopCriteria::for_prompt(builder);
  auto run_all = [&](const GenerationConfig& cfg, std::vector<std::vector<TokenId>>& outputs) {
    const auto t0 = Clock::now();
    for (const auto& inst : spec.dataset) outputs.push_back(generate(model, builder, demos, inst.query, cfg).response);
    return std::chrono::duration<double>(Clock::now() - t0).count() / static_cast<double>(spec.dataset.size());
  };

  GenerationConfig base_cfg;
  base_cfg.mode = Mode::kVanillaIcl;
  base_cfg.prior_tokens = 0;
  base_cfg.max_tokens = spec.max_tokens;
  base_cfg.stop = stop;
  std::vector<std::vector<TokenId>> baseline;
  const double base_seconds = run_all(base_cfg, baseline);

  AblationReport report;
  report.baseline = {.label = "vanilla_icl",
                  .value = 0,
                  .agreement_rate = 1.0,
                  .mean_prefix_match = 0.0,
                  .prefix_match_fraction = 1.0,
                  .normalized = 1.0,
                  .mean_seconds = base_seconds,
                  .normalized_time = 1.0};
  double base_len = 0.0;
  for (const auto& b : baseline) base_len += static_cast<double>(b.size());
  report.baseline.mean_prefix_match = base_len / static_cast<double>(baseline.size());

  for (long v : spec.values) {
    GenerationConfig cfg;
    cfg.mode = Mode::kPica;
    cfg.prior_tokens = spec.axis == SweepAxis::kPriorTokens ? static_cast<std::size_t>(v) : spec.prior_tokens;
    cfg.intervention_depth = spec.axis == SweepAxis::kDepth ? static_cast<int>(v) : spec.intervention_depth;
    cfg.max_tokens = spec.max_tokens;
    cfg.prior_tokens = std::min(cfg.prior_tokens, cfg.max_tokens);
    cfg.stop = stop;
    std::vector<std::vector<TokenId>> outputs;
    const double seconds = run_all(cfg, outputs);

    std::size_t matches = 0;
    double prefix = 0.0, fraction = 0.0;
    for (std::size_t i = 0; i < outputs.size(); ++i) {
      matches += outputs[i] == baseline[i];
      const auto common = common_prefix(outputs[i], baseline[i]);
      prefix += static_cast<double>(common);
      fraction += baseline[i].empty() ? (outputs[i].empty() ? 1.0 : 0.0)
                                      : static_cast<double>(common) / static_cast<double>(baseline[i].size());
    }
    const double count = static_cast<double>(outputs.size());
    AblationRow row{.label = std::string(axis_name(spec.axis)),
                    .value = v,
                    .agreement_rate = static_cast<double>(matches) / count,
                    .mean_prefix_match = prefix / count,
                    .prefix_match_fraction = fraction / count,
                    .normalized = 0.0,
                    .mean_seconds = seconds,
                    .normalized_time = seconds / base_seconds};
    row.normalized = row.agreement_rate / report.baseline.agreement_rate;
    report.rows.push_back(row);
  }
  report.metadata = {{"kind", "ablation"},
                     {"spec", spec.to_json()},
                     {"demonstrations", demos.size()},
                     {"model_checksum", model.checksum()},
                     {"model_config", model.config()},
                     {"machine", machine_metadata()}};
  return report;
}

void write_ablation_csv(std::ostream& out, const AblationReport& report) {
  out << "axis,value,agreement_rate,mean_prefix_match,prefix_match_fraction,normalized,mean_seconds,normalized_time\n";
  out << std::setprecision(9);
  auto write_row = [&](const AblationRow& r) {
    out << r.label << ',' << r.value << ',' << r.agreement_rate << ',' << r.mean_prefix_match << ','
        << r.prefix_match_fraction << ',' << r.normalized << ',' << r.mean_seconds << ',' << r.normalized_time << '\n';
  };
  write_row(report.baseline);
  for (const auto& r : report.rows) write_row(r);
}

}  // namespace pica
