#include "pica/errors.hpp"
#include "pica/model.hpp"
#include "pica/ops.hpp"

#include "../support.hpp"

#include <doctest.h>

#include <random>
#include <thread>

using namespace pica;
using namespace pica::testing;

namespace {

constexpr float kOracleTolerance = 1e-4f;

// Max absolute difference between a [rows, vocab] logits matrix and a float file.
float max_error(const RowMatrixXf& logits, const std::vector<float>& expected) {
  REQUIRE(expected.size() == static_cast<std::size_t>(logits.size()));
  const Eigen::Map<const RowMatrixXf> ref(expected.data(), logits.rows(), logits.cols());
  return (logits - ref).cwiseAbs().maxCoeff();
}

void check_oracle(const Model& model, const std::string& name) {
  const auto dir = fixtures_dir() / name;
  const auto manifest = read_json(dir / "manifest.json");
  CHECK(manifest.at("model_config").get<ModelConfig>() == model.config());
  const auto& probes = manifest.at("probes");
  CHECK(probes.size() >= 10);
  for (const auto& probe : probes) {
    CAPTURE(probe.at("name").get<std::string>());
    const auto tokens = probe.at("tokens").get<std::vector<TokenId>>();
    CapturePlan plan;
    for (const auto& c : probe.at("captures")) {
      plan.add({c.at("layer").get<int>(), c.at("position").get<std::size_t>()});
    }
    const PrefillResult r = prefill(model, tokens, plan, {}, LogitsScope::kAll);
    CHECK(max_error(r.all_logits, read_floats(dir / probe.at("logits").get<std::string>())) < kOracleTolerance);
    CHECK(r.logits.isApprox(r.all_logits.row(r.all_logits.rows() - 1).transpose()));
    for (const auto& c : probe.at("captures")) {
      const Site site{c.at("layer").get<int>(), c.at("position").get<std::size_t>()};
      const auto expected = read_floats(dir / c.at("file").get<std::string>());
      const auto& got = r.captured.at(site);
      REQUIRE(got.size() == model.config().hidden_dim);
      REQUIRE(expected.size() == static_cast<std::size_t>(got.size()));
      const Eigen::Map<const Eigen::VectorXf> ref(expected.data(), got.size());
      CHECK((got - ref).cwiseAbs().maxCoeff() < kOracleTolerance);
    }
  }
}

}  // namespace

TEST_SUITE("model") {
  TEST_CASE("logits and captured states match the reference implementation") {
    SUBCASE("toy_a: 2 layers, grouped kv heads") { check_oracle(toy_a(), "toy_a"); }
    SUBCASE("toy_chat: 8 layers, probes up to 257 tokens") { check_oracle(toy_chat(), "toy_chat"); }
  }

  TEST_CASE("prefill of [1,2,3] matches the oracle") {
    const auto logits = read_floats(fixtures_dir() / "toy_a" / "prefill_a.bin");
    const std::vector<TokenId> tokens = {1, 2, 3};
    const PrefillResult r = prefill(toy_a(), tokens, {}, {}, LogitsScope::kAll);
    CHECK(max_error(r.all_logits, logits) < kOracleTolerance);
    CHECK(r.captured.empty());
    CHECK(r.cache.length() == 3);
  }

  TEST_CASE("intervention matches the reference implementation") {
    for (const char* name : {"toy_a", "toy_chat"}) {
      CAPTURE(name);
      const Model& model = std::string(name) == "toy_a" ? toy_a() : toy_chat();
      const auto spec = read_json(fixtures_dir() / name / "intervention.json");
      const auto donor = spec.at("donor").get<std::vector<TokenId>>();
      const auto target = spec.at("target").get<std::vector<TokenId>>();
      const auto src = spec.at("source_positions").get<std::vector<std::size_t>>();
      const auto dst = spec.at("target_positions").get<std::vector<std::size_t>>();
      const int depth = spec.at("depth").get<int>();
      const auto captured = prefill(model, donor, CapturePlan::grid(1, depth, src)).captured;
      InterventionPlan plan;
      for (int l = 1; l <= depth; ++l) {
        for (std::size_t k = 0; k < src.size(); ++k) plan.add({l, dst[k]}, captured.at({l, src[k]}));
      }
      const PrefillResult r = prefill(model, target, {}, plan, LogitsScope::kAll);
      CHECK(max_error(r.all_logits, read_floats(fixtures_dir() / name / spec.at("logits").get<std::string>())) <
            kOracleTolerance);
    }
  }

  TEST_CASE("decode_step continues a prefill") {
    const Model& m = toy_a();
    const std::vector<TokenId> ab = {5, 9};
    const std::vector<TokenId> abc = {5, 9, 42};
    PrefillResult r = prefill(m, ab);
    const Eigen::VectorXf step = decode_step(m, r.cache, 42);
    const Eigen::VectorXf full = prefill(m, abc).logits;
    CHECK((step - full).cwiseAbs().maxCoeff() < 1e-5f);
    CHECK(r.cache.length() == 3);
  }

  TEST_CASE("decode_step from an empty cache equals a one-token prefill") {
    const Model& m = toy_a();
    KvCache cache(m.config());
    const Eigen::VectorXf step = decode_step(m, cache, 17);
    const std::vector<TokenId> t = {17};
    CHECK((step - prefill(m, t).logits).cwiseAbs().maxCoeff() < 1e-6f);
  }

  TEST_CASE("incremental and full-recompute greedy decoding agree") {
    const Model& m = toy_a();
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 10; ++trial) {
      std::vector<TokenId> seq = random_tokens(rng, 1 + trial * 7, m.config().vocab_size);
      PrefillResult inc = prefill(m, seq);
      Eigen::VectorXf logits = inc.logits;
      for (int step = 0; step < 12; ++step) {
        const TokenId next = greedy_select(softmax(logits));
        const TokenId recompute = greedy_select(softmax(prefill(m, seq).logits));
        REQUIRE(next == recompute);
        seq.push_back(next);
        logits = decode_step(m, inc.cache, next);
      }
    }
  }

  TEST_CASE("extend over several chunks equals one prefill") {
    const Model& m = toy_chat();
    std::mt19937_64 rng(3);
    const auto tokens = random_tokens(rng, 600, m.config().vocab_size);
    const PrefillResult whole = prefill(m, tokens);
    KvCache cache(m.config());
    Eigen::VectorXf last;
    const std::size_t cuts[] = {0, 1, 70, 333, 599, 600};
    for (int i = 0; i + 1 < 6; ++i) {
      last = extend(m, cache, std::span(tokens).subspan(cuts[i], cuts[i + 1] - cuts[i]));
    }
    CHECK(cache.length() == 600);
    CHECK((last - whole.logits).cwiseAbs().maxCoeff() < 1e-4f);
    for (int l = 0; l < m.config().num_layers; ++l) {
      CHECK((cache.keys(l) - whole.cache.keys(l)).cwiseAbs().maxCoeff() < 1e-4f);
      CHECK((cache.values(l) - whole.cache.values(l)).cwiseAbs().maxCoeff() < 1e-4f);
    }
  }

  TEST_CASE("truncating the cache rewinds decoding") {
    const Model& m = toy_a();
    const std::vector<TokenId> prefix = {3, 1, 4, 1, 5};
    PrefillResult r = prefill(m, prefix);
    const Eigen::VectorXf first = decode_step(m, r.cache, 9);
    decode_step(m, r.cache, 2);
    r.cache.truncate(5);
    CHECK(r.cache.length() == 5);
    CHECK((decode_step(m, r.cache, 9) - first).cwiseAbs().maxCoeff() == 0.0f);
    CHECK_THROWS_AS(r.cache.truncate(7), OverflowError);
  }

  TEST_CASE("sequences longer than max_position overflow") {
    const Model& m = toy_a();
    const std::vector<TokenId> too_long(static_cast<std::size_t>(m.config().max_position) + 1, 1);
    CHECK_THROWS_AS(prefill(m, too_long), OverflowError);
    const std::vector<TokenId> full(static_cast<std::size_t>(m.config().max_position), 1);
    PrefillResult r = prefill(m, full);
    CHECK_THROWS_AS(decode_step(m, r.cache, 1), OverflowError);
    CHECK_THROWS_AS(prefill(m, std::vector<TokenId>{}), Error);
  }

  TEST_CASE("plans addressing missing sites are rejected") {
    const Model& m = toy_a();
    const std::vector<TokenId> t = {1, 2, 3};
    const Eigen::VectorXf state = Eigen::VectorXf::Zero(m.config().hidden_dim);
    auto one = [&](Site s, Eigen::VectorXf v) {
      InterventionPlan p;
      p.add(s, std::move(v));
      return p;
    };
    CHECK_THROWS_AS(prefill(m, t, {}, one({0, 0}, state)), PlanError);
    CHECK_THROWS_AS(prefill(m, t, {}, one({3, 0}, state)), PlanError);
    CHECK_THROWS_AS(prefill(m, t, {}, one({1, 3}, state)), PlanError);
    CHECK_THROWS_AS(prefill(m, t, {}, one({1, 0}, Eigen::VectorXf::Zero(5))), PlanError);
    CHECK_THROWS_AS(prefill(m, t, CapturePlan{{1, 9}}), PlanError);
    CHECK_THROWS_AS(prefill(m, t, CapturePlan{{0, 0}}), PlanError);
    InterventionPlan dup;
    dup.add({1, 0}, state);
    CHECK_THROWS_AS(dup.add({1, 0}, state), PlanError);
  }

  TEST_CASE("re-injecting a state the model produces itself changes nothing") {
    const Model& m = toy_chat();
    std::mt19937_64 rng(5);
    const auto tokens = random_tokens(rng, 40, m.config().vocab_size);
    const std::vector<std::size_t> positions = {20, 21};
    const PrefillResult base = prefill(m, tokens, CapturePlan::grid(1, 8, positions), {}, LogitsScope::kAll);
    InterventionPlan plan;
    for (const auto& [site, state] : base.captured) plan.add(site, state);
    const PrefillResult again = prefill(m, tokens, {}, plan, LogitsScope::kAll);
    CHECK((again.all_logits - base.all_logits).cwiseAbs().maxCoeff() == 0.0f);

    const std::vector<std::size_t> first = {0};
    const PrefillResult at0 = prefill(m, tokens, CapturePlan::grid(1, 1, first));
    const PrefillResult same = prefill(m, tokens, {}, [&] {
      InterventionPlan p;
      p.add({1, 0}, at0.captured.at({1, 0}));
      return p;
    }());
    CHECK((same.logits - at0.logits).cwiseAbs().maxCoeff() == 0.0f);
  }

  TEST_CASE("an intervention only affects later positions") {
    const Model& m = toy_chat();
    std::mt19937_64 rng(9);
    const auto tokens = random_tokens(rng, 30, m.config().vocab_size);
    InterventionPlan plan;
    plan.add({2, 12}, Eigen::VectorXf::Constant(m.config().hidden_dim, 0.5f));
    const PrefillResult base = prefill(m, tokens, {}, {}, LogitsScope::kAll);
    const PrefillResult hit = prefill(m, tokens, {}, plan, LogitsScope::kAll);
    CHECK((hit.all_logits.topRows(12) - base.all_logits.topRows(12)).cwiseAbs().maxCoeff() == 0.0f);
    CHECK((hit.all_logits.bottomRows(18) - base.all_logits.bottomRows(18)).cwiseAbs().maxCoeff() > 1e-3f);
  }

  TEST_CASE("captures record the state after an intervention at the same site") {
    const Model& m = toy_a();
    const std::vector<TokenId> t = {7, 8, 9};
    const Eigen::VectorXf v = Eigen::VectorXf::LinSpaced(m.config().hidden_dim, -1.0f, 1.0f);
    InterventionPlan plan;
    plan.add({1, 1}, v);
    const PrefillResult r = prefill(m, t, CapturePlan{{1, 1}}, plan);
    CHECK(r.captured.at({1, 1}) == v);
  }

  TEST_CASE("a shared model serves concurrent sessions") {
    const Model& m = toy_a();
    std::mt19937_64 rng(21);
    const auto tokens = random_tokens(rng, 50, m.config().vocab_size);
    const Eigen::VectorXf expected = prefill(m, tokens).logits;
    std::vector<Eigen::VectorXf> got(4);
    std::vector<std::thread> pool;
    for (int i = 0; i < 4; ++i) pool.emplace_back([&, i] { got[i] = prefill(m, tokens).logits; });
    for (auto& t : pool) t.join();
    for (const auto& g : got) CHECK(g == expected);
  }
}
