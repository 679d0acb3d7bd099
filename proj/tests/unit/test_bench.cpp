#include "pica/bench.hpp"
#include "pica/errors.hpp"

#include "../support.hpp"

#include <doctest.h>

using namespace pica;
using namespace pica::testing;

namespace {

BenchSpec small_spec(std::size_t instances) {
  BenchSpec s;
  s.dataset.assign(toy_queries().begin(), toy_queries().begin() + static_cast<long>(instances));
  s.force_tokens = 16;
  s.repetitions = 2;
  s.warmup = 0;
  s.prior_tokens = 4;
  s.intervention_depth = 4;
  s.max_tokens = 12;
  return s;
}

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

}  // namespace

TEST_SUITE("bench") {
  TEST_CASE("axis names") {
    CHECK(parse_axis("n") == SweepAxis::kPriorTokens);
    CHECK(parse_axis("l") == SweepAxis::kDepth);
    CHECK(parse_axis(axis_name(SweepAxis::kDepth)) == SweepAxis::kDepth);
    CHECK_THROWS_AS(parse_axis("x"), ConfigError);
  }

  TEST_CASE("spec validation") {
    const ModelConfig& m = toy_chat().config();
    BenchSpec s = small_spec(1);
    CHECK_NOTHROW(s.validate(m));
    s.repetitions = 0;
    CHECK_THROWS_AS(s.validate(m), ConfigError);
    s = small_spec(1);
    s.warmup = -1;
    CHECK_THROWS_AS(s.validate(m), ConfigError);
    s = small_spec(1);
    s.force_tokens = 0;
    CHECK_THROWS_AS(s.validate(m), ConfigError);
    s = small_spec(1);
    s.intervention_depth = m.num_layers + 1;
    CHECK_THROWS_AS(s.validate(m), ConfigError);
    s = small_spec(1);
    s.axis = SweepAxis::kDepth;
    s.values = {2, m.num_layers + 1};
    CHECK_THROWS_AS(s.validate(m), ConfigError);
    s.values = {-1};
    CHECK_THROWS_AS(s.validate(m), ConfigError);
    s.axis = SweepAxis::kPriorTokens;
    s.values = {2, 500};  // beyond the budget is allowed
    CHECK_NOTHROW(s.validate(m));
  }

  TEST_CASE("speedup report bookkeeping") {
    const BenchSpec s = small_spec(2);
    const SpeedupReport r = measure_speedup(toy_chat(), chat_builder(), default_demos(), s);
    REQUIRE(r.modes.size() == s.modes.size());
    const ModeTiming& base = r.timing(Mode::kVanillaIcl);
    CHECK(base.speedup == 1.0);
    for (const auto& t : r.modes) {
      CHECK(t.run_seconds.size() == 4);  // 2 repetitions x 2 instances
      CHECK(t.tokens_per_run == 16);
      CHECK(t.mean_seconds > 0.0);
      CHECK(t.speedup > 0.0);
    }
    CHECK(r.timing(Mode::kZeroShot).fewshot_seconds_per_token == 0.0);
    CHECK(r.timing(Mode::kPica).fewshot_seconds_per_token > 0.0);
    CHECK(r.timing(Mode::kPica).zeroshot_seconds_per_token > 0.0);
    CHECK(r.metadata.at("model_checksum") == toy_chat().checksum());

    std::ostringstream csv;
    r.write_csv(csv);
    const auto lines = lines_of(csv.str());
    REQUIRE(lines.size() == 1 + s.modes.size());
    CHECK(lines[0].rfind("mode,mean_seconds", 0) == 0);
    CHECK(lines[1].rfind("vanilla_icl,", 0) == 0);

    const auto j = r.to_json();
    CHECK(j.at("modes").size() == s.modes.size());

    BenchSpec bad = small_spec(1);
    bad.prior_tokens = 20;
    CHECK_THROWS_AS(measure_speedup(toy_chat(), chat_builder(), default_demos(), bad), ConfigError);
    bad = small_spec(0);
    CHECK_THROWS_AS(measure_speedup(toy_chat(), chat_builder(), default_demos(), bad), DatasetError);
  }

  TEST_CASE("prior-token sweep") {
    BenchSpec s = small_spec(3);
    s.axis = SweepAxis::kPriorTokens;
    s.values = {10};
    AblationReport one = ablation_sweep(toy_chat(), chat_builder(), default_demos(), s);
    CHECK(one.rows.size() == 1);

    s.values = {0, 6, 12, 40};
    const AblationReport r = ablation_sweep(toy_chat(), chat_builder(), default_demos(), s);
    REQUIRE(r.rows.size() == 4);
    CHECK(r.baseline.label == "vanilla_icl");
    CHECK(r.baseline.agreement_rate == 1.0);
    CHECK(r.baseline.normalized == 1.0);
    for (std::size_t i = 0; i < r.rows.size(); ++i) {
      CHECK(r.rows[i].value == s.values[i]);
      CHECK(r.rows[i].label == "n");
      CHECK(r.rows[i].normalized == r.rows[i].agreement_rate);
    }
    // N at or beyond the budget never leaves the few-shot stage.
    CHECK(r.rows[2].agreement_rate == 1.0);
    CHECK(r.rows[2].prefix_match_fraction == 1.0);
    CHECK(r.rows[3].agreement_rate == 1.0);

    std::ostringstream csv;
    write_ablation_csv(csv, r);
    const auto lines = lines_of(csv.str());
    REQUIRE(lines.size() == 6);
    CHECK(lines[0] == "axis,value,agreement_rate,mean_prefix_match,prefix_match_fraction,normalized,mean_seconds,"
                      "normalized_time");
    CHECK(lines[1].rfind("vanilla_icl,0,1,", 0) == 0);
    CHECK(lines[4].rfind("n,12,1,", 0) == 0);
    CHECK(r.metadata.at("kind") == "ablation");
  }

  TEST_CASE("depth sweep") {
    BenchSpec s = small_spec(2);
    s.axis = SweepAxis::kDepth;
    s.values = {0, 2, 4, 6, 8};
    const AblationReport r = ablation_sweep(toy_chat(), chat_builder(), default_demos(), s);
    REQUIRE(r.rows.size() == 5);
    // Depth 0 reproduces the prior-tokens-only mode.
    std::size_t matches = 0;
    for (const auto& inst : s.dataset) {
      GenerationConfig a, b;
      a.mode = Mode::kVanillaIcl;
      a.max_tokens = s.max_tokens;
      a.stop = StopCriteria::for_prompt(chat_builder());
      b = a;
      b.mode = Mode::kProgOnly;
      b.prior_tokens = s.prior_tokens;
      matches += generate(toy_chat(), chat_builder(), default_demos(), inst.query, a).response ==
                 generate(toy_chat(), chat_builder(), default_demos(), inst.query, b).response;
    }
    CHECK(r.rows[0].agreement_rate == static_cast<double>(matches) / 2.0);
  }

  TEST_CASE("ablation input checks") {
    BenchSpec s = small_spec(1);
    CHECK_THROWS_AS(ablation_sweep(toy_chat(), chat_builder(), default_demos(), s), ConfigError);
    s.axis = SweepAxis::kDepth;
    CHECK_THROWS_AS(ablation_sweep(toy_chat(), chat_builder(), default_demos(), s), ConfigError);
  }
}
