#ifndef PICA_JUDGE_HPP_
#define PICA_JUDGE_HPP_

#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <ostream>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace pica {

struct JudgeConfig {
  std::string endpoint;  // e.g. https://host/v1/chat/completions
  std::string model;
  std::string api_key_env = "PICA_JUDGE_API_KEY";  // name of the variable, never its value
  std::chrono::milliseconds timeout{60000};
  int max_retries = 3;
  std::chrono::milliseconds initial_backoff{1000};  // doubles after every failed attempt
  double requests_per_minute = 30.0;
  std::uint64_t seed = 0;               // drives the per-call position shuffle
  std::filesystem::path cache_file;     // empty: no verdict cache

  void validate() const;
};

enum class Winner { kA, kB, kTie };
std::string_view winner_name(Winner w);  // "A", "B", "tie"

struct PairVerdict {
  std::string instance_id;
  Winner winner = Winner::kTie;  // relative to the (a, b) order passed in
  std::string raw;               // judge text as returned
  double latency_seconds = 0.0;
  bool swapped = false;          // b was shown first
  bool cached = false;
};

// What a backend sees: the rendered rubric plus the responses in the order
// they were shown.
struct JudgeQuery {
  std::string system;
  std::string user;
  std::string prompt;
  std::string first;
  std::string second;
};

class JudgeBackend {
 public:
  virtual ~JudgeBackend() = default;
  // Raw judge text. Throws TransientJudgeError for failures worth retrying.
  virtual std::string complete(const JudgeQuery& query) = 0;
};

// Chat-completion endpoint (OpenAI-style request and response bodies). The
// key is read from the configured environment variable on every call.
class HttpJudgeBackend : public JudgeBackend {
 public:
  explicit HttpJudgeBackend(JudgeConfig config);
  std::string complete(const JudgeQuery& query) override;

 private:
  JudgeConfig config_;
};

// Offline stand-in. kPreferLonger answers for the longer response and ties
// on equal length; kMalformed answers with text carrying no verdict.
class MockJudge : public JudgeBackend {
 public:
  enum class Behavior { kPreferLonger, kMalformed };
  explicit MockJudge(Behavior behavior = Behavior::kPreferLonger) : behavior_(behavior) {}
  std::string complete(const JudgeQuery& query) override;
  int calls() const { return calls_; }

 private:
  Behavior behavior_;
  std::atomic<int> calls_ = 0;
};

// Rubric rendering. `first` and `second` are labelled A and B.
JudgeQuery render_rubric(const std::string& prompt, const std::string& first, const std::string& second);

// Exactly one of [[A]], [[B]], [[tie]] (any case) must appear.
std::optional<Winner> parse_verdict(const std::string& text);

class Judge {
 public:
  Judge(JudgeConfig config, std::unique_ptr<JudgeBackend> backend, std::ostream* log = nullptr);

  // Throws JudgeError on an unparseable verdict or once retries run out.
  PairVerdict judge_pair(const std::string& instance_id, const std::string& prompt, const std::string& response_a,
                         const std::string& response_b);

 private:
  // Start time of the next request under the rate cap.
  std::chrono::steady_clock::time_point reserve_slot();
  void load_cache();
  void store(const std::string& key, Winner winner, const std::string& raw);

  JudgeConfig config_;
  std::unique_ptr<JudgeBackend> backend_;
  std::ostream* log_;
  std::mutex mutex_;
  std::mt19937_64 rng_;
  std::chrono::steady_clock::time_point next_slot_{};
  std::map<std::string, std::pair<Winner, std::string>> cache_;
};

// SHA-256 over the judge model name and the length-prefixed texts.
std::string verdict_cache_key(const std::string& model, const std::string& prompt, const std::string& response_a,
                              const std::string& response_b);

struct WinRate {
  double win_rate = 0.0;  // (wins + 0.5 * ties) / total, raw (no length control)
  std::size_t wins = 0;
  std::size_t losses = 0;
  std::size_t ties = 0;
  std::size_t total = 0;
};

// Wins are verdicts for A. Throws JudgeError on empty input.
WinRate aggregate_win_rate(std::span<const PairVerdict> verdicts);

// Replaces every occurrence of `secret` with a fixed marker.
std::string redact(std::string text, const std::string& secret);

}  // namespace pica

#endif  // PICA_JUDGE_HPP_
