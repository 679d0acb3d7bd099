#define CPPHTTPLIB_OPENSSL_SUPPORT
#include "pica/judge.hpp"

#include "pica/errors.hpp"

#include <httplib.h>
#include <openssl/evp.h>

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <json.hpp>
#include <sstream>
#include <thread>

namespace pica {
namespace {

using json = nlohmann::json;
using Clock = std::chrono::steady_clock;

constexpr std::string_view kRubricSystem =
    "You are an impartial evaluator. You will see a user query and two candidate responses labelled A and B. "
    "Judge which response answers the query better, weighing helpfulness, factual accuracy and safety. "
    "Ignore the order in which the responses appear and do not reward length for its own sake.";

constexpr std::string_view kRubricInstruction =
    "Reply with a short justification followed by exactly one verdict token on its own line: "
    "[[A]] if A is better, [[B]] if B is better, [[tie]] if neither is better.";

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

Winner flip(Winner w) {
  if (w == Winner::kA) return Winner::kB;
  if (w == Winner::kB) return Winner::kA;
  return Winner::kTie;
}

Winner parse_winner_name(const std::string& s) {
  if (s == "A") return Winner::kA;
  if (s == "B") return Winner::kB;
  if (s == "tie") return Winner::kTie;
  throw JudgeError("verdict cache: unknown winner '" + s + "'");
}

struct Endpoint {
  std::string origin;  // scheme://host[:port]
  std::string path;
};

Endpoint split_endpoint(const std::string& url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw ConfigError("judge endpoint needs a scheme: " + url);
  const std::string scheme = url.substr(0, scheme_end);
  if (scheme != "http" && scheme != "https") throw ConfigError("judge endpoint scheme must be http or https");
  const auto path_start = url.find('/', scheme_end + 3);
  if (path_start == std::string::npos) return {url, "/"};
  return {url.substr(0, path_start), url.substr(path_start)};
}

}  // namespace

void JudgeConfig::validate() const {
  if (timeout.count() <= 0) throw ConfigError("judge timeout must be positive");
  if (!(requests_per_minute > 0.0)) throw ConfigError("judge requests_per_minute must be positive");
  if (max_retries < 0) throw ConfigError("judge max_retries must be non-negative");
  if (initial_backoff.count() < 0) throw ConfigError("judge backoff must be non-negative");
}

std::string_view winner_name(Winner w) {
  switch (w) {
    case Winner::kA:
      return "A";
    case Winner::kB:
      return "B";
    case Winner::kTie:
      return "tie";
  }
  return "tie";
}

JudgeQuery render_rubric(const std::string& prompt, const std::string& first, const std::string& second) {
  JudgeQuery q;
  q.system = std::string(kRubricSystem);
  q.user = "[Query]\n" + prompt + "\n\n[Response A]\n" + first + "\n\n[Response B]\n" + second + "\n\n" +
           std::string(kRubricInstruction);
  q.prompt = prompt;
  q.first = first;
  q.second = second;
  return q;
}

std::optional<Winner> parse_verdict(const std::string& text) {
  const std::string t = lower(text);
  std::optional<Winner> found;
  const std::pair<std::string_view, Winner> tokens[] = {
      {"[[a]]", Winner::kA}, {"[[b]]", Winner::kB}, {"[[tie]]", Winner::kTie}};
  for (const auto& [token, winner] : tokens) {
    if (t.find(token) == std::string::npos) continue;
    if (found) return std::nullopt;  // conflicting verdicts
    found = winner;
  }
  return found;
}

std::string MockJudge::complete(const JudgeQuery& query) {
  ++calls_;
  if (behavior_ == Behavior::kMalformed) return "Both responses have merit.";
  if (query.first.size() > query.second.size()) return "A is longer.\n[[A]]";
  if (query.second.size() > query.first.size()) return "B is longer.\n[[B]]";
  return "Equal length.\n[[tie]]";
}

HttpJudgeBackend::HttpJudgeBackend(JudgeConfig config) : config_(std::move(config)) {
  config_.validate();
  split_endpoint(config_.endpoint);
}

std::string HttpJudgeBackend::complete(const JudgeQuery& query) {
  const char* key = std::getenv(config_.api_key_env.c_str());
  if (key == nullptr || *key == '\0') {
    throw JudgeError("judge API key variable " + config_.api_key_env + " is not set");
  }
  const std::string secret = key;
  const Endpoint ep = split_endpoint(config_.endpoint);
  httplib::Client client(ep.origin);
  const auto secs = std::chrono::duration_cast<std::chrono::seconds>(config_.timeout);
  const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(config_.timeout - secs);
  client.set_connection_timeout(secs.count(), usecs.count());
  client.set_read_timeout(secs.count(), usecs.count());
  client.set_write_timeout(secs.count(), usecs.count());

  const json body = {{"model", config_.model},
                     {"temperature", 0},
                     {"messages",
                      json::array({{{"role", "system"}, {"content", query.system}},
                                   {{"role", "user"}, {"content", query.user}}})}};
  const httplib::Headers headers = {{"Authorization", "Bearer " + secret}};
  const auto res = client.Post(ep.path, headers, body.dump(), "application/json");
  if (!res) throw TransientJudgeError("judge request failed: " + httplib::to_string(res.error()));
  if (res->status == 429 || res->status >= 500) {
    throw TransientJudgeError("judge endpoint returned HTTP " + std::to_string(res->status));
  }
  if (res->status != 200) {
    throw JudgeError("judge endpoint returned HTTP " + std::to_string(res->status) + ": " +
                     redact(res->body.substr(0, 200), secret));
  }
  try {
    const json reply = json::parse(res->body);
    return reply.at("choices").at(0).at("message").at("content").get<std::string>();
  } catch (const json::exception&) {
    throw JudgeError("judge response is not a chat completion: " + redact(res->body.substr(0, 200), secret));
  }
}

std::string verdict_cache_key(const std::string& model, const std::string& prompt, const std::string& response_a,
                              const std::string& response_b) {
  std::string material;
  for (const std::string* part : {&model, &prompt, &response_a, &response_b}) {
    material += std::to_string(part->size());
    material += ':';
    material += *part;
  }
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(material.data(), material.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw JudgeError("sha256 failed");
  }
  std::ostringstream hex;
  hex << std::hex << std::setfill('0');
  for (unsigned int i = 0; i < len; ++i) hex << std::setw(2) << static_cast<int>(digest[i]);
  return hex.str();
}

Judge::Judge(JudgeConfig config, std::unique_ptr<JudgeBackend> backend, std::ostream* log)
    : config_(std::move(config)), backend_(std::move(backend)), log_(log), rng_(config_.seed) {
  config_.validate();
  if (!backend_) throw ConfigError("judge backend is null");
  load_cache();
}

void Judge::load_cache() {
  if (config_.cache_file.empty() || !std::filesystem::exists(config_.cache_file)) return;
  std::ifstream in(config_.cache_file);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      cache_[j.at("key").get<std::string>()] = {parse_winner_name(j.at("winner").get<std::string>()),
                                                j.at("raw").get<std::string>()};
    } catch (const json::exception& e) {
      throw JudgeError("verdict cache " + config_.cache_file.string() + ": " + e.what());
    }
  }
}

void Judge::store(const std::string& key, Winner winner, const std::string& raw) {
  cache_[key] = {winner, raw};
  if (config_.cache_file.empty()) return;
  std::ofstream out(config_.cache_file, std::ios::app);
  out << json{{"key", key}, {"winner", winner_name(winner)}, {"raw", raw}}.dump() << '\n';
  if (!out) throw JudgeError("cannot append to verdict cache " + config_.cache_file.string());
}

Clock::time_point Judge::reserve_slot() {
  const auto interval = std::chrono::duration_cast<Clock::duration>(
      std::chrono::duration<double>(60.0 / config_.requests_per_minute));
  const auto slot = std::max(Clock::now(), next_slot_);
  next_slot_ = slot + interval;
  return slot;
}

PairVerdict Judge::judge_pair(const std::string& instance_id, const std::string& prompt,
                              const std::string& response_a, const std::string& response_b) {
  PairVerdict v;
  v.instance_id = instance_id;
  const std::string key = verdict_cache_key(config_.model, prompt, response_a, response_b);
  bool swapped = false;
  {
    std::lock_guard lock(mutex_);
    if (auto it = cache_.find(key); it != cache_.end()) {
      v.winner = it->second.first;
      v.raw = it->second.second;
      v.cached = true;
      return v;
    }
    swapped = std::bernoulli_distribution(0.5)(rng_);
  }
  v.swapped = swapped;
  const JudgeQuery query =
      swapped ? render_rubric(prompt, response_b, response_a) : render_rubric(prompt, response_a, response_b);

  auto backoff = config_.initial_backoff;
  const auto start = Clock::now();
  for (int attempt = 0;; ++attempt) {
    Clock::time_point slot;
    {
      std::lock_guard lock(mutex_);
      slot = reserve_slot();
    }
    std::this_thread::sleep_until(slot);
    try {
      v.raw = backend_->complete(query);
      break;
    } catch (const TransientJudgeError& e) {
      if (log_ != nullptr) {
        *log_ << "judge: instance " << instance_id << " attempt " << attempt + 1 << " failed: " << e.what() << '\n';
      }
      if (attempt >= config_.max_retries) {
        throw JudgeError("judge: instance " + instance_id + " failed after " + std::to_string(attempt + 1) +
                         " attempts: " + e.what());
      }
      std::this_thread::sleep_for(backoff);
      backoff *= 2;
    }
  }
  v.latency_seconds = std::chrono::duration<double>(Clock::now() - start).count();

  const auto shown = parse_verdict(v.raw);
  if (!shown) throw JudgeError("judge: instance " + instance_id + " returned an unparseable verdict");
  v.winner = swapped ? flip(*shown) : *shown;
  if (log_ != nullptr) {
    *log_ << "judge: instance " << instance_id << " winner " << winner_name(v.winner)
          << (swapped ? " (swapped)" : "") << '\n';
  }
  std::lock_guard lock(mutex_);
  store(key, v.winner, v.raw);
  return v;
}

WinRate aggregate_win_rate(std::span<const PairVerdict> verdicts) {
  if (verdicts.empty()) throw JudgeError("aggregate_win_rate: no verdicts");
  WinRate r;
  for (const auto& v : verdicts) {
    if (v.winner == Winner::kA) ++r.wins;
    else if (v.winner == Winner::kB) ++r.losses;
    else ++r.ties;
  }
  r.total = verdicts.size();
  r.win_rate = (static_cast<double>(r.wins) + 0.5 * static_cast<double>(r.ties)) / static_cast<double>(r.total);
  return r;
}

std::string redact(std::string text, const std::string& secret) {
  if (secret.empty()) return text;
  constexpr std::string_view kMarker = "[redacted]";
  for (auto pos = text.find(secret); pos != std::string::npos; pos = text.find(secret, pos + kMarker.size())) {
    text.replace(pos, secret.size(), kMarker);
  }
  return text;
}

}  // namespace pica
