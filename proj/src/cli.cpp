#include "pica/cli.hpp"

#include "pica/bench.hpp"
#include "pica/checkpoint.hpp"
#include "pica/dataset.hpp"
#include "pica/diagnostics.hpp"
#include "pica/engine.hpp"
#include "pica/errors.hpp"
#include "pica/judge.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <atomic>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <thread>

namespace pica {
namespace {

using json = nlohmann::json;

std::string dump_line(const json& j) { return j.dump(-1, ' ', false, json::error_handler_t::replace); }

// Flags shared by the model-driving subcommands.
struct ModelOptions {
  std::string checkpoint;
  std::string vocab;
  std::string merges;
  std::string tmpl;
  std::string demos;
  std::string dataset;
  std::string query;
  std::string out;
  std::size_t n = 10;
  int l = -1;
  std::size_t max_tokens = 4096;
  int jobs = 1;
};

void add_model_flags(CLI::App* cmd, ModelOptions& o) {
  cmd->add_option("--checkpoint", o.checkpoint, "PICAW001 checkpoint file")->required()->check(CLI::ExistingFile);
  cmd->add_option("--vocab", o.vocab, "Tokenizer vocab file (default: vocab.txt beside the checkpoint)")
      ->check(CLI::ExistingFile);
  cmd->add_option("--merges", o.merges, "Tokenizer merges file (default: merges.txt beside the checkpoint)")
      ->check(CLI::ExistingFile);
  cmd->add_option("--template", o.tmpl, "Prompt template file")->required()->check(CLI::ExistingFile);
  cmd->add_option("--out", o.out, "Output file (default: stdout)");
}

void add_generation_flags(CLI::App* cmd, ModelOptions& o) {
  cmd->add_option("--n", o.n, "Prior tokens generated with demonstrations before switching to zero-shot")
      ->capture_default_str();
  cmd->add_option("--l", o.l, "Blocks 1..L receive the ICL vector (default: half the model depth)");
  cmd->add_option("--max-tokens", o.max_tokens, "Response token budget across both stages")->capture_default_str();
}

void add_input_flags(CLI::App* cmd, ModelOptions& o, bool allow_query) {
  auto* dataset = cmd->add_option("--dataset", o.dataset, "JSON-lines dataset of {id, query, reference_response?}")
                      ->check(CLI::ExistingFile);
  if (allow_query) {
    auto* query = cmd->add_option("--query", o.query, "Single query instead of a dataset");
    dataset->excludes(query);
    query->excludes(dataset);
  } else {
    dataset->required();
  }
}

// Loaded model, tokenizer, template and demonstrations. Not movable: the
// prompt builder refers to the tokenizer.
struct Session {
  explicit Session(const ModelOptions& o)
      : model(load_checkpoint(o.checkpoint)),
        tokenizer(Tokenizer::load(o.vocab.empty() ? sibling(o.checkpoint, "vocab.txt") : std::filesystem::path(o.vocab),
                                  o.merges.empty() ? sibling(o.checkpoint, "merges.txt") : std::filesystem::path(o.merges))),
        builder(tokenizer, PromptTemplate::load(o.tmpl)) {
    if (tokenizer.vocab_size() > model.config().vocab_size) {
      throw ConfigError("tokenizer has " + std::to_string(tokenizer.vocab_size()) + " tokens but the model only " +
                        std::to_string(model.config().vocab_size));
    }
    if (!o.demos.empty()) demos = load_demonstrations(o.demos);
  }
  Session(const Session&) = delete;
  Session& operator=(const Session&) = delete;

  static std::filesystem::path sibling(const std::string& path, const char* name) {
    return std::filesystem::path(path).parent_path() / name;
  }

  int depth(int requested) const {
    return requested >= 0 ? requested : GenerationConfig::defaults(model.config()).intervention_depth;
  }

  Model model;
  Tokenizer tokenizer;
  PromptBuilder builder;
  std::vector<Demonstration> demos;
};

std::vector<Instance> instances_for(const ModelOptions& o) {
  if (!o.query.empty()) return {Instance{.id = "query", .query = o.query, .reference_response = std::nullopt}};
  if (o.dataset.empty()) throw ConfigError("one of --dataset or --query is required");
  auto data = load_dataset(o.dataset);
  if (data.empty()) throw DatasetError("dataset " + o.dataset + " has no instances");
  return data;
}

// Writes to --out when given, else to the caller's stream.
class Sink {
 public:
  Sink(const std::string& path, std::ostream& fallback) : stream_(&fallback) {
    if (path.empty()) return;
    file_.open(path, std::ios::binary);
    if (!file_) throw Error("cannot open " + path + " for writing");
    stream_ = &file_;
  }
  std::ostream& operator*() { return *stream_; }
  void finish() {
    stream_->flush();
    if (!*stream_) throw Error("write failed");
  }

 private:
  std::ofstream file_;
  std::ostream* stream_;
};

// Runs f(0..n) on up to `jobs` threads. f must not throw.
template <typename F>
void parallel_for(std::size_t n, int jobs, F&& f) {
  const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(std::max(jobs, 1)), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) f(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i; (i = next.fetch_add(1)) < n;) f(i);
    });
  }
  for (auto& t : pool) t.join();
}

void check_jobs(int jobs) {
  if (jobs < 1) throw ConfigError("--jobs must be at least 1");
}

GenerationConfig generation_config(const Session& s, const ModelOptions& o, Mode mode) {
  GenerationConfig cfg = GenerationConfig::defaults(s.model.config());
  cfg.mode = mode;
  cfg.prior_tokens = o.n;
  cfg.intervention_depth = s.depth(o.l);
  cfg.max_tokens = o.max_tokens;
  cfg.stop = StopCriteria::for_prompt(s.builder);
  cfg.validate(s.model.config());
  return cfg;
}

json resolved_config(const ModelOptions& o, const GenerationConfig& cfg) {
  return {{"mode", mode_name(cfg.mode)},
          {"prior_tokens", cfg.prior_tokens},
          {"intervention_depth", cfg.intervention_depth},
          {"max_tokens", cfg.max_tokens},
          {"checkpoint", o.checkpoint},
          {"vocab", o.vocab},
          {"merges", o.merges},
          {"template", o.tmpl},
          {"demos", o.demos},
          {"dataset", o.dataset},
          {"decoding", "greedy"}};
}

int cmd_generate(const ModelOptions& o, const std::string& mode_text, std::ostream& out, std::ostream& err) {
  check_jobs(o.jobs);
  const Mode mode = parse_mode(mode_text);
  Session s(o);
  const auto data = instances_for(o);
  const GenerationConfig cfg = generation_config(s, o, mode);
  const json config = resolved_config(o, cfg);

  std::vector<RunRecord> records(data.size());
  parallel_for(data.size(), o.jobs, [&](std::size_t i) {
    RunRecord& r = records[i];
    r.instance_id = data[i].id;
    r.query = data[i].query;
    r.mode = std::string(mode_name(mode));
    r.config = config;
    r.checkpoint_crc32 = s.model.checksum();
    try {
      const GenerationResult g = generate(s.model, s.builder, s.demos, data[i].query, cfg);
      r.response_tokens = g.response;
      r.response = s.tokenizer.decode(g.response);
      r.fewshot_tokens = g.fewshot_tokens;
      r.zeroshot_tokens = g.zeroshot_tokens;
      r.fewshot_prompt_tokens = g.fewshot_prompt_tokens;
      r.zeroshot_prompt_tokens = g.zeroshot_prompt_tokens;
      r.stop_reason = std::string(stop_reason_name(g.stop_reason));
      r.fewshot_seconds = g.fewshot_seconds;
      r.zeroshot_seconds = g.zeroshot_seconds;
    } catch (const Error& e) {
      r.error = e.what();
    }
  });

  Sink sink(o.out, out);
  int status = kExitOk;
  for (const auto& r : records) {
    *sink << dump_line(r) << '\n';
    if (!r.error.empty()) {
      err << "generate: instance " << r.instance_id << ": " << r.error << '\n';
      status = kExitFailure;
    }
  }
  sink.finish();
  return status;
}

int cmd_diagnose(const ModelOptions& o, const std::string& group_text, const std::string& demos2_path,
                 std::ostream& out, std::ostream& err) {
  check_jobs(o.jobs);
  Group group;
  if (group_text == "experimental") {
    group = Group::kExperimental;
  } else if (group_text == "control") {
    group = Group::kControl;
    if (demos2_path.empty()) throw ConfigError("--group control needs a second demonstration file (--demos2)");
  } else {
    throw ConfigError("unknown group '" + group_text + "' (expected experimental or control)");
  }
  if (o.demos.empty()) throw ConfigError("diagnose needs --demos");
  Session s(o);
  const std::vector<Demonstration> demos2 =
      group == Group::kControl ? load_demonstrations(demos2_path) : std::vector<Demonstration>{};
  const auto data = instances_for(o);
  const GenerationConfig vanilla = generation_config(s, o, Mode::kVanillaIcl);

  std::vector<std::string> chunks(data.size());
  std::vector<std::string> errors(data.size());
  parallel_for(data.size(), o.jobs, [&](std::size_t i) {
    try {
      const Instance& inst = data[i];
      const AssembledPrompt few = s.builder.assemble_fewshot(s.demos, inst.query);
      const AssembledPrompt other = group == Group::kControl
                                        ? s.builder.assemble_fewshot(demos2, inst.query)
                                        : s.builder.assemble_zeroshot(inst.query, {});
      // Forced response: the reference when present, else vanilla ICL output.
      std::vector<TokenId> response;
      if (inst.reference_response) {
        response = s.tokenizer.encode(*inst.reference_response);
      } else {
        response = generate(s.model, s.builder, s.demos, inst.query, vanilla).response;
      }
      ComparisonSpec spec;
      const auto q = static_cast<std::ptrdiff_t>(few.layout.query.begin);
      const auto q_other = static_cast<std::ptrdiff_t>(other.layout.query.begin);
      spec.context_a.assign(few.tokens.begin(), few.tokens.begin() + q);
      spec.context_b.assign(other.tokens.begin(), other.tokens.begin() + q_other);
      spec.shared_text.assign(few.tokens.begin() + q, few.tokens.end());
      spec.boundary = spec.shared_text.size();
      spec.shared_text.insert(spec.shared_text.end(), response.begin(), response.end());
      const auto rows = compare_contexts(s.model, spec);
      std::ostringstream csv;
      write_profile_csv(csv, inst.id, group, rows);
      chunks[i] = csv.str();
    } catch (const Error& e) {
      errors[i] = e.what();
    }
  });

  Sink sink(o.out, out);
  write_profile_csv_header(*sink);
  int status = kExitOk;
  for (std::size_t i = 0; i < data.size(); ++i) {
    *sink << chunks[i];
    if (!errors[i].empty()) {
      err << "diagnose: instance " << data[i].id << ": " << errors[i] << '\n';
      status = kExitFailure;
    }
  }
  sink.finish();
  return status;
}

BenchSpec bench_spec(const Session& s, const ModelOptions& o) {
  BenchSpec spec;
  spec.dataset = instances_for(o);
  spec.prior_tokens = o.n;
  spec.intervention_depth = s.depth(o.l);
  spec.max_tokens = o.max_tokens;
  return spec;
}

struct BenchOptions {
  std::size_t force_tokens = 256;
  int reps = 3;
  int warmup = 1;
  std::vector<std::string> modes;
  std::string csv;
};

int cmd_bench(const ModelOptions& o, const BenchOptions& b, std::ostream& out) {
  Session s(o);
  BenchSpec spec = bench_spec(s, o);
  spec.force_tokens = b.force_tokens;
  spec.repetitions = b.reps;
  spec.warmup = b.warmup;
  if (!b.modes.empty()) {
    spec.modes.clear();
    for (const auto& m : b.modes) spec.modes.push_back(parse_mode(m));
  }
  const SpeedupReport report = measure_speedup(s.model, s.builder, s.demos, spec);
  Sink sink(o.out, out);
  *sink << report.to_json().dump(2) << '\n';
  sink.finish();
  if (!b.csv.empty()) {
    Sink csv(b.csv, out);
    report.write_csv(*csv);
    csv.finish();
  }
  return kExitOk;
}

struct AblateOptions {
  std::string axis;
  std::vector<long> values;
  std::string meta;
};

int cmd_ablate(const ModelOptions& o, const AblateOptions& a, std::ostream& out) {
  Session s(o);
  BenchSpec spec = bench_spec(s, o);
  spec.axis = parse_axis(a.axis);
  if (spec.axis == SweepAxis::kNone) throw ConfigError("--axis must be n or l");
  spec.values = a.values;
  const AblationReport report = ablation_sweep(s.model, s.builder, s.demos, spec);
  Sink sink(o.out, out);
  write_ablation_csv(*sink, report);
  sink.finish();

  std::string meta_path = a.meta;
  if (meta_path.empty() && !o.out.empty()) meta_path = o.out + ".meta.json";
  if (!meta_path.empty()) {
    json meta = report.metadata;
    meta["baseline"] = {{"label", report.baseline.label},
                        {"agreement_rate", report.baseline.agreement_rate},
                        {"mean_seconds", report.baseline.mean_seconds}};
    meta["inputs"] = {{"checkpoint", o.checkpoint}, {"template", o.tmpl}, {"demos", o.demos},
                      {"dataset", o.dataset}, {"query", o.query}};
    std::ofstream f(meta_path);
    f << meta.dump(2) << '\n';
    if (!f) throw Error("cannot write " + meta_path);
  }
  return kExitOk;
}

int cmd_validate(const std::string& path, std::ostream& out) {
  const ValidationReport report = validate_checkpoint(path);
  out << report.format();
  return report.passed ? kExitOk : kExitFailure;
}

struct JudgeOptions {
  std::string records_a;
  std::string records_b;
  std::string endpoint;
  std::string model;
  std::string api_key_env = "PICA_JUDGE_API_KEY";
  std::string mock;
  std::string cache;
  std::string out;
  double timeout_seconds = 60.0;
  int retries = 3;
  double rpm = 30.0;
  std::uint64_t seed = 0;
  int jobs = 1;
};

std::vector<RunRecord> load_records(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DatasetError("cannot open " + path);
  std::vector<RunRecord> records;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      records.push_back(json::parse(line).get<RunRecord>());
    } catch (const json::exception& e) {
      throw DatasetError(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return records;
}

int cmd_judge(const JudgeOptions& j, std::ostream& out, std::ostream& err) {
  check_jobs(j.jobs);
  JudgeConfig config;
  config.endpoint = j.endpoint;
  config.model = j.mock.empty() ? j.model : "mock-" + j.mock;
  config.api_key_env = j.api_key_env;
  config.timeout = std::chrono::milliseconds(static_cast<long long>(j.timeout_seconds * 1000.0));
  config.max_retries = j.retries;
  config.requests_per_minute = j.rpm;
  config.seed = j.seed;
  config.cache_file = j.cache;
  config.validate();

  std::unique_ptr<JudgeBackend> backend;
  if (j.mock == "prefer-longer") {
    backend = std::make_unique<MockJudge>(MockJudge::Behavior::kPreferLonger);
  } else if (j.mock == "malformed") {
    backend = std::make_unique<MockJudge>(MockJudge::Behavior::kMalformed);
  } else if (!j.mock.empty()) {
    throw ConfigError("unknown --mock '" + j.mock + "' (expected prefer-longer or malformed)");
  } else {
    if (j.endpoint.empty() || j.model.empty()) throw ConfigError("--endpoint and --judge-model are required");
    backend = std::make_unique<HttpJudgeBackend>(config);
  }
  Judge judge(config, std::move(backend), &err);

  const auto a = load_records(j.records_a);
  const auto b = load_records(j.records_b);
  std::map<std::string, const RunRecord*> by_id;
  for (const auto& r : b) by_id[r.instance_id] = &r;

  std::vector<std::optional<PairVerdict>> verdicts(a.size());
  std::vector<std::string> errors(a.size());
  parallel_for(a.size(), j.jobs, [&](std::size_t i) {
    try {
      const auto it = by_id.find(a[i].instance_id);
      if (it == by_id.end()) throw JudgeError("no record for this instance in " + j.records_b);
      if (!a[i].error.empty() || !it->second->error.empty()) throw JudgeError("generation failed");
      verdicts[i] = judge.judge_pair(a[i].instance_id, a[i].query, a[i].response, it->second->response);
    } catch (const Error& e) {
      errors[i] = e.what();
    }
  });

  Sink sink(j.out, out);
  std::vector<PairVerdict> ok;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (verdicts[i]) {
      const auto& v = *verdicts[i];
      *sink << dump_line({{"instance_id", v.instance_id},
                          {"winner", winner_name(v.winner)},
                          {"raw", v.raw},
                          {"latency_seconds", v.latency_seconds},
                          {"swapped", v.swapped},
                          {"cached", v.cached}})
            << '\n';
      ok.push_back(v);
    } else {
      *sink << dump_line({{"instance_id", a[i].instance_id}, {"error", errors[i]}}) << '\n';
    }
  }
  int status = ok.size() == a.size() ? kExitOk : kExitFailure;
  if (!ok.empty()) {
    const WinRate w = aggregate_win_rate(ok);
    *sink << dump_line({{"summary",
                         {{"win_rate", w.win_rate},
                          {"win_rate_kind", "raw"},
                          {"wins", w.wins},
                          {"losses", w.losses},
                          {"ties", w.ties},
                          {"total", w.total},
                          {"errors", a.size() - ok.size()}}}})
          << '\n';
  } else {
    err << "judge: no verdicts\n";
    status = kExitFailure;
  }
  sink.finish();
  return status;
}

}  // namespace

void to_json(json& j, const RunRecord& r) {
  j = {{"instance_id", r.instance_id}, {"query", r.query}, {"mode", r.mode}};
  if (!r.error.empty()) {
    j["error"] = r.error;
    return;
  }
  j["response"] = r.response;
  j["response_tokens"] = r.response_tokens;
  j["stage_tokens"] = {{"fewshot", r.fewshot_tokens}, {"zeroshot", r.zeroshot_tokens}};
  j["prompt_tokens"] = {{"fewshot", r.fewshot_prompt_tokens}, {"zeroshot", r.zeroshot_prompt_tokens}};
  j["stop_reason"] = r.stop_reason;
  j["timings"] = {{"fewshot_seconds", r.fewshot_seconds},
                  {"zeroshot_seconds", r.zeroshot_seconds},
                  {"total_seconds", r.fewshot_seconds + r.zeroshot_seconds}};
  j["config"] = r.config;
  j["checkpoint_crc32"] = r.checkpoint_crc32;
  j["seed"] = "not used: greedy decoding is deterministic";
}

void from_json(const json& j, RunRecord& r) {
  r = RunRecord{};
  j.at("instance_id").get_to(r.instance_id);
  j.at("query").get_to(r.query);
  j.at("mode").get_to(r.mode);
  if (j.contains("error")) {
    j.at("error").get_to(r.error);
    return;
  }
  j.at("response").get_to(r.response);
  j.at("response_tokens").get_to(r.response_tokens);
  j.at("stage_tokens").at("fewshot").get_to(r.fewshot_tokens);
  j.at("stage_tokens").at("zeroshot").get_to(r.zeroshot_tokens);
  j.at("prompt_tokens").at("fewshot").get_to(r.fewshot_prompt_tokens);
  j.at("prompt_tokens").at("zeroshot").get_to(r.zeroshot_prompt_tokens);
  j.at("stop_reason").get_to(r.stop_reason);
  j.at("timings").at("fewshot_seconds").get_to(r.fewshot_seconds);
  j.at("timings").at("zeroshot_seconds").get_to(r.zeroshot_seconds);
  r.config = j.at("config");
  j.at("checkpoint_crc32").get_to(r.checkpoint_crc32);
}

int run_cli(std::span<const std::string> args, std::ostream& out, std::ostream& err) {
  CLI::App app{"pica: in-context alignment engine for small decoder-only models", "pica"};
  app.require_subcommand(1);

  ModelOptions gen;
  std::string gen_mode = "pica";
  auto* generate_cmd = app.add_subcommand("generate", "Generate responses, one JSON-lines record per instance");
  add_model_flags(generate_cmd, gen);
  add_generation_flags(generate_cmd, gen);
  add_input_flags(generate_cmd, gen, true);
  generate_cmd->add_option("--demos", gen.demos, "JSON-lines demonstrations of {query, answer}")
      ->check(CLI::ExistingFile);
  generate_cmd
      ->add_option("--mode", gen_mode, "zero_shot | vanilla_icl | vec_only (vec) | prog_only (prog) | pica")
      ->capture_default_str();
  generate_cmd->add_option("--jobs", gen.jobs, "Instances processed in parallel")->capture_default_str();

  ModelOptions diag;
  std::string group = "experimental";
  std::string demos2;
  auto* diagnose_cmd = app.add_subcommand(
      "diagnose", "Per-position KL, top token rank and top token prob between two contexts, as CSV");
  add_model_flags(diagnose_cmd, diag);
  add_generation_flags(diagnose_cmd, diag);
  add_input_flags(diagnose_cmd, diag, true);
  diagnose_cmd->add_option("--demos", diag.demos, "Demonstrations of the first (few-shot) context")
      ->check(CLI::ExistingFile);
  diagnose_cmd
      ->add_option("--group", group,
                   "experimental: few-shot vs zero-shot; control: --demos vs --demos2, both few-shot")
      ->capture_default_str();
  diagnose_cmd->add_option("--demos2", demos2, "Demonstrations of the second context (control group)")
      ->check(CLI::ExistingFile);
  diagnose_cmd->add_option("--jobs", diag.jobs, "Instances processed in parallel")->capture_default_str();

  ModelOptions bench;
  BenchOptions bench_opts;
  auto* bench_cmd = app.add_subcommand("bench", "Time forced-length generation per mode and report speedups");
  add_model_flags(bench_cmd, bench);
  add_generation_flags(bench_cmd, bench);
  add_input_flags(bench_cmd, bench, true);
  bench_cmd->add_option("--demos", bench.demos, "JSON-lines demonstrations of {query, answer}")
      ->check(CLI::ExistingFile);
  bench_cmd->add_option("--force-tokens", bench_opts.force_tokens, "Tokens every timed run emits")
      ->capture_default_str();
  bench_cmd->add_option("--reps", bench_opts.reps, "Timed repetitions per mode")->capture_default_str();
  bench_cmd->add_option("--warmup", bench_opts.warmup, "Untimed warmup repetitions")->capture_default_str();
  bench_cmd->add_option("--modes", bench_opts.modes, "Modes to time (default: all)")->delimiter(',');
  bench_cmd->add_option("--csv", bench_opts.csv, "Also write a per-mode CSV here");

  ModelOptions ablate;
  AblateOptions ablate_opts;
  auto* ablate_cmd =
      app.add_subcommand("ablate", "Sweep N or L and report agreement with vanilla ICL, normalized to it, as CSV");
  add_model_flags(ablate_cmd, ablate);
  add_generation_flags(ablate_cmd, ablate);
  add_input_flags(ablate_cmd, ablate, true);
  ablate_cmd->add_option("--demos", ablate.demos, "JSON-lines demonstrations of {query, answer}")
      ->check(CLI::ExistingFile);
  ablate_cmd->add_option("--axis", ablate_opts.axis, "n (prior tokens) or l (intervention depth)")->required();
  ablate_cmd->add_option("--values", ablate_opts.values, "Comma-separated sweep values")
      ->required()
      ->delimiter(',');
  ablate_cmd->add_option("--meta", ablate_opts.meta, "Metadata sidecar (default: <out>.meta.json when --out is set)");

  std::string validate_path;
  auto* validate_cmd = app.add_subcommand("validate", "Check a checkpoint and print per-tensor statistics");
  auto* positional = validate_cmd->add_option("path", validate_path, "Checkpoint file");
  auto* named = validate_cmd->add_option("--checkpoint", validate_path, "Checkpoint file");
  positional->excludes(named);

  JudgeOptions judge;
  auto* judge_cmd = app.add_subcommand("judge", "Pairwise comparison of two generate outputs by a judge model");
  judge_cmd->add_option("--records-a", judge.records_a, "RunRecords of the system under test")
      ->required()
      ->check(CLI::ExistingFile);
  judge_cmd->add_option("--records-b", judge.records_b, "RunRecords of the reference system")
      ->required()
      ->check(CLI::ExistingFile);
  judge_cmd->add_option("--endpoint", judge.endpoint, "Chat-completion URL");
  judge_cmd->add_option("--judge-model", judge.model, "Judge model name sent to the endpoint");
  judge_cmd->add_option("--api-key-env", judge.api_key_env, "Environment variable holding the API key")
      ->capture_default_str();
  judge_cmd->add_option("--mock", judge.mock, "Offline judge: prefer-longer or malformed");
  judge_cmd->add_option("--cache", judge.cache, "Verdict cache file (JSON lines keyed by content hash)");
  judge_cmd->add_option("--timeout", judge.timeout_seconds, "Request timeout in seconds")->capture_default_str();
  judge_cmd->add_option("--retries", judge.retries, "Retries after a transient failure")->capture_default_str();
  judge_cmd->add_option("--rpm", judge.rpm, "Requests-per-minute cap")->capture_default_str();
  judge_cmd->add_option("--seed", judge.seed, "Seed of the position shuffle")->capture_default_str();
  judge_cmd->add_option("--jobs", judge.jobs, "Concurrent requests (still bounded by --rpm)")
      ->capture_default_str();
  judge_cmd->add_option("--out", judge.out, "Output file (default: stdout)");

  std::vector<std::string> argv(args.rbegin(), args.rend());  // CLI11 consumes from the back
  try {
    app.parse(argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (generate_cmd->parsed()) return cmd_generate(gen, gen_mode, out, err);
    if (diagnose_cmd->parsed()) return cmd_diagnose(diag, group, demos2, out, err);
    if (bench_cmd->parsed()) return cmd_bench(bench, bench_opts, out);
    if (ablate_cmd->parsed()) return cmd_ablate(ablate, ablate_opts, out);
    if (validate_cmd->parsed()) {
      if (validate_path.empty()) {
        err << "validate: a checkpoint path is required\n";
        return kExitUsage;
      }
      return cmd_validate(validate_path, out);
    }
    if (judge_cmd->parsed()) return cmd_judge(judge, out, err);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitUsage;
}

}  // namespace pica
