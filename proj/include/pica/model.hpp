#ifndef PICA_MODEL_HPP_
#define PICA_MODEL_HPP_

#include "pica/model_config.hpp"
#include "pica/tensor.hpp"

#include <Eigen/Dense>

#include <compare>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace pica {

struct LayerWeights {
  Eigen::VectorXf attn_norm;
  RowMatrixXf wq;  // [num_heads*head_dim, hidden]
  RowMatrixXf wk;  // [kv_dim, hidden]
  RowMatrixXf wv;  // [kv_dim, hidden]
  RowMatrixXf wo;  // [hidden, num_heads*head_dim]
  Eigen::VectorXf ffn_norm;
  RowMatrixXf w1;  // gate [mlp, hidden]
  RowMatrixXf w3;  // up   [mlp, hidden]
  RowMatrixXf w2;  // down [hidden, mlp]
};

struct ModelWeights {
  RowMatrixXf tok_embeddings;  // [vocab, hidden]
  std::vector<LayerWeights> layers;
  Eigen::VectorXf norm;
  RowMatrixXf output;  // [vocab, hidden]
};

// Decoder-only transformer: RMSNorm, rotary attention with grouped KV
// heads, SwiGLU feed-forward. Immutable once constructed, so a single
// instance can back any number of concurrent sessions.
class Model {
 public:
  Model(ModelConfig config, ModelWeights weights, std::string checksum = {});

  const ModelConfig& config() const { return config_; }
  const ModelWeights& weights() const { return weights_; }
  // Checksum of the source checkpoint file (hex), empty when built in memory.
  const std::string& checksum() const { return checksum_; }

  const RowMatrixXf& rope_cos() const { return rope_cos_; }
  const RowMatrixXf& rope_sin() const { return rope_sin_; }

 private:
  ModelConfig config_;
  ModelWeights weights_;
  std::string checksum_;
  RowMatrixXf rope_cos_;  // [max_position, head_dim/2]
  RowMatrixXf rope_sin_;
};

// Per-layer key/value history. Rows are absolute positions; columns are
// kv heads laid out contiguously (num_kv_heads * head_dim).
class KvCache {
 public:
  explicit KvCache(const ModelConfig& config);

  std::size_t length() const { return length_; }
  std::size_t capacity() const { return capacity_; }
  int num_layers() const { return static_cast<int>(keys_.size()); }

  auto keys(int layer) const { return keys_[layer].topRows(length_); }
  auto values(int layer) const { return values_[layer].topRows(length_); }
  // Forgets every position at or after `length`.
  void truncate(std::size_t length);

 private:
  friend class ForwardPass;
  void reserve(std::size_t rows);
  std::vector<RowMatrixXf> keys_;
  std::vector<RowMatrixXf> values_;
  std::size_t length_ = 0;
  std::size_t capacity_ = 0;
};

// A residual-stream site: output of transformer block `layer` (1-based;
// 0 is the embedding and is never addressed) at absolute `position`.
struct Site {
  int layer = 0;
  std::size_t position = 0;
  auto operator<=>(const Site&) const = default;
};

class CapturePlan {
 public:
  CapturePlan() = default;
  CapturePlan(std::initializer_list<Site> sites) : sites_(sites) {}
  void add(Site site) { sites_.push_back(site); }
  // Every (layer, position) in the cartesian product.
  static CapturePlan grid(int first_layer, int last_layer, std::span<const std::size_t> positions);

  const std::vector<Site>& sites() const { return sites_; }
  bool empty() const { return sites_.empty(); }

 private:
  std::vector<Site> sites_;
};

using CapturedStates = std::map<Site, Eigen::VectorXf>;

class InterventionPlan {
 public:
  // Throws PlanError if the site is already present.
  void add(Site site, Eigen::VectorXf state);

  const std::map<Site, Eigen::VectorXf>& entries() const { return entries_; }
  bool empty() const { return entries_.empty(); }
  std::size_t size() const { return entries_.size(); }

 private:
  std::map<Site, Eigen::VectorXf> entries_;
};

enum class LogitsScope { kLast, kAll };

struct PrefillResult {
  Eigen::VectorXf logits;   // after the final position
  RowMatrixXf all_logits;   // [tokens, vocab]; only filled for LogitsScope::kAll
  KvCache cache;
  CapturedStates captured;
};

// Full forward pass over `tokens` from an empty cache. Interventions
// replace the output of block l at position p before block l+1 reads it;
// captures record the state after any intervention at the same site.
PrefillResult prefill(const Model& model, std::span<const TokenId> tokens, const CapturePlan& capture = {},
                      const InterventionPlan& intervene = {}, LogitsScope scope = LogitsScope::kLast);

// Runs `tokens` as one chunk on top of `cache`, whose length is the first
// absolute position. Plan sites must fall inside the chunk. Returns the
// logits after the last token.
Eigen::VectorXf extend(const Model& model, KvCache& cache, std::span<const TokenId> tokens,
                       const InterventionPlan& intervene = {}, const CapturePlan& capture = {},
                       CapturedStates* captured = nullptr);

// Appends one token to `cache` and returns the logits after it.
Eigen::VectorXf decode_step(const Model& model, KvCache& cache, TokenId token);

}  // namespace pica

#endif  // PICA_MODEL_HPP_
