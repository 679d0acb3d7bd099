#include "pica/model.hpp"

#include "pica/errors.hpp"
#include "pica/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace pica {

namespace {

void expect_shape(const RowMatrixXf& m, Eigen::Index rows, Eigen::Index cols, const std::string& name) {
  if (m.rows() != rows || m.cols() != cols) {
    throw ConfigError(name + ": expected " + std::to_string(rows) + "x" + std::to_string(cols) + ", got " +
                      std::to_string(m.rows()) + "x" + std::to_string(m.cols()));
  }
}

void expect_size(const Eigen::VectorXf& v, Eigen::Index n, const std::string& name) {
  if (v.size() != n) {
    throw ConfigError(name + ": expected length " + std::to_string(n) + ", got " + std::to_string(v.size()));
  }
}

}  // namespace

Model::Model(ModelConfig config, ModelWeights weights, std::string checksum)
    : config_(config), weights_(std::move(weights)), checksum_(std::move(checksum)) {
  config_.validate();
  const int h = config_.hidden_dim;
  const int q_dim = config_.num_heads * config_.head_dim;
  expect_shape(weights_.tok_embeddings, config_.vocab_size, h, "tok_embeddings");
  expect_shape(weights_.output, config_.vocab_size, h, "output");
  expect_size(weights_.norm, h, "norm");
  if (static_cast<int>(weights_.layers.size()) != config_.num_layers) {
    throw ConfigError("expected " + std::to_string(config_.num_layers) + " layers, got " +
                      std::to_string(weights_.layers.size()));
  }
  for (int i = 0; i < config_.num_layers; ++i) {
    const auto& l = weights_.layers[i];
    const std::string p = "layers." + std::to_string(i) + ".";
    expect_size(l.attn_norm, h, p + "attn_norm");
    expect_size(l.ffn_norm, h, p + "ffn_norm");
    expect_shape(l.wq, q_dim, h, p + "wq");
    expect_shape(l.wk, config_.kv_dim(), h, p + "wk");
    expect_shape(l.wv, config_.kv_dim(), h, p + "wv");
    expect_shape(l.wo, h, q_dim, p + "wo");
    expect_shape(l.w1, config_.mlp_hidden_dim, h, p + "w1");
    expect_shape(l.w3, config_.mlp_hidden_dim, h, p + "w3");
    expect_shape(l.w2, h, config_.mlp_hidden_dim, p + "w2");
  }

  const int half = config_.head_dim / 2;
  rope_cos_.resize(config_.max_position, half);
  rope_sin_.resize(config_.max_position, half);
  for (int pos = 0; pos < config_.max_position; ++pos) {
    for (int i = 0; i < half; ++i) {
      const double inv = std::pow(config_.rope_base, -2.0 * i / config_.head_dim);
      const double angle = pos * inv;
      rope_cos_(pos, i) = static_cast<float>(std::cos(angle));
      rope_sin_(pos, i) = static_cast<float>(std::sin(angle));
    }
  }
}

KvCache::KvCache(const ModelConfig& config)
    : keys_(config.num_layers, RowMatrixXf(0, config.kv_dim())),
      values_(config.num_layers, RowMatrixXf(0, config.kv_dim())),
      capacity_(static_cast<std::size_t>(config.max_position)) {}

void KvCache::reserve(std::size_t rows) {
  const auto have = static_cast<std::size_t>(keys_.empty() ? 0 : keys_.front().rows());
  if (rows <= have) return;
  // Storage doubles so a long decode reallocates only logarithmically often.
  const auto grown = static_cast<Eigen::Index>(std::min(capacity_, std::max(rows, 2 * have)));
  for (auto& k : keys_) k.conservativeResize(grown, Eigen::NoChange);
  for (auto& v : values_) v.conservativeResize(grown, Eigen::NoChange);
}

CapturePlan CapturePlan::grid(int first_layer, int last_layer, std::span<const std::size_t> positions) {
  CapturePlan plan;
  for (int l = first_layer; l <= last_layer; ++l) {
    for (std::size_t p : positions) plan.add({l, p});
  }
  return plan;
}

void InterventionPlan::add(Site site, Eigen::VectorXf state) {
  if (!entries_.emplace(site, std::move(state)).second) {
    throw PlanError("duplicate intervention at layer " + std::to_string(site.layer) + ", position " +
                    std::to_string(site.position));
  }
}

// Runs a chunk of consecutive tokens through every block, appending to the
// cache. Prefill is one chunk from an empty cache; decoding is a chunk of
// one, so both paths share every arithmetic step.
class ForwardPass {
 public:
  static constexpr Eigen::Index kQueryTile = 64;
  static constexpr Eigen::Index kKeyBlock = 256;

  ForwardPass(const Model& model, KvCache& cache) : model_(model), cfg_(model.config()), cache_(cache) {}

  RowMatrixXf run(std::span<const TokenId> tokens, const CapturePlan& capture, const InterventionPlan& intervene,
                  CapturedStates* captured) {
    const auto start = static_cast<Eigen::Index>(cache_.length_);
    const auto count = static_cast<Eigen::Index>(tokens.size());
    const Eigen::Index end = start + count;
    const int hd = cfg_.head_dim;
    const float scale = 1.0f / std::sqrt(static_cast<float>(hd));
    const auto& w = model_.weights();

    cache_.reserve(static_cast<std::size_t>(end));
    RowMatrixXf x(count, cfg_.hidden_dim);
    for (Eigen::Index t = 0; t < count; ++t) {
      const TokenId id = tokens[t];
      if (id < 0 || id >= cfg_.vocab_size) throw PlanError("token id " + std::to_string(id) + " out of range");
      x.row(t) = w.tok_embeddings.row(id);
    }

    for (int l = 0; l < cfg_.num_layers; ++l) {
      const LayerWeights& lw = w.layers[l];
      const RowMatrixXf n = rms_norm(x, lw.attn_norm, cfg_.norm_eps);
      RowMatrixXf q = n * lw.wq.transpose();
      RowMatrixXf k = n * lw.wk.transpose();
      apply_rotary(q, hd, start, model_.rope_cos(), model_.rope_sin());
      apply_rotary(k, hd, start, model_.rope_cos(), model_.rope_sin());
      cache_.keys_[l].middleRows(start, count) = k;
      cache_.values_[l].middleRows(start, count).noalias() = n * lw.wv.transpose();

      // Query rows go in tiles so each tile reads only the keys it can see.
      // Multi-token chunks also walk the keys in blocks with a running max
      // (online softmax) so the score block stays cache-resident; a single
      // decoded token takes its whole history as one block.
      q *= scale;
      RowMatrixXf attn(count, cfg_.num_heads * hd);
      for (Eigen::Index r0 = 0; r0 < count; r0 += kQueryTile) {
        const Eigen::Index rows = std::min(kQueryTile, count - r0);
        const Eigen::Index visible = start + r0 + rows;
        const Eigen::Index block = count == 1 ? visible : kKeyBlock;
        for (int head = 0; head < cfg_.num_heads; ++head) {
          const int kv = head / cfg_.group_size();
          attend(q.block(r0, head * hd, rows, hd), cache_.keys_[l].middleCols(kv * hd, hd),
                 cache_.values_[l].middleCols(kv * hd, hd), start + r0, visible, block);
          attn.block(r0, head * hd, rows, hd) = acc_.array().colwise() / sums_.array();
        }
      }
      x.noalias() += attn * lw.wo.transpose();

      const RowMatrixXf n2 = rms_norm(x, lw.ffn_norm, cfg_.norm_eps);
      const RowMatrixXf gate = n2 * lw.w1.transpose();
      const RowMatrixXf up = n2 * lw.w3.transpose();
      const RowMatrixXf act = (silu(gate.array()) * up.array()).matrix();
      x.noalias() += act * lw.w2.transpose();

      const int block = l + 1;
      for (const auto& [site, state] : intervene.entries()) {
        if (site.layer == block) x.row(static_cast<Eigen::Index>(site.position) - start) = state.transpose();
      }
      if (captured != nullptr) {
        for (const Site& site : capture.sites()) {
          if (site.layer == block) {
            (*captured)[site] = x.row(static_cast<Eigen::Index>(site.position) - start).transpose();
          }
        }
      }
      debug_check_finite(x, "transformer block");
    }
    cache_.length_ = static_cast<std::size_t>(end);
    return x;
  }

  // Unnormalised attention of `queries` (first at absolute position
  // `first`) over key rows [0, visible): leaves sum_j exp(s_ij - m_i) v_j in
  // acc_ and the matching sum_j exp(s_ij - m_i) in sums_.
  template <typename Q, typename K, typename V>
  void attend(const Q& queries, const K& keys, const V& values, Eigen::Index first, Eigen::Index visible,
              Eigen::Index block) {
    const Eigen::Index rows = queries.rows();
    acc_.setZero(rows, queries.cols());
    sums_.setZero(rows);
    peak_.setConstant(rows, -std::numeric_limits<float>::infinity());
    for (Eigen::Index c0 = 0; c0 < visible; c0 += block) {
      const Eigen::Index cols = std::min(block, visible - c0);
      scores_.noalias() = queries * keys.middleRows(c0, cols).transpose();
      for (Eigen::Index r = 0; r < rows; ++r) {
        const Eigen::Index seen = std::clamp<Eigen::Index>(first + r + 1 - c0, 0, cols);
        auto row = scores_.row(r);
        if (seen > 0) {
          auto head = row.head(seen);
          const float peak = std::max(peak_(r), head.maxCoeff());
          if (peak > peak_(r) && c0 > 0) {
            const float factor = std::exp(peak_(r) - peak);
            acc_.row(r) *= factor;
            sums_(r) *= factor;
          }
          peak_(r) = peak;
          head = (head.array() - peak).exp().matrix();
          sums_(r) += head.sum();
        }
        row.tail(cols - seen).setZero();
      }
      acc_.noalias() += scores_ * values.middleRows(c0, cols);
    }
  }

  Eigen::VectorXf logits(const RowMatrixXf& hidden_row) const {
    const auto& w = model_.weights();
    const RowMatrixXf n = rms_norm(hidden_row, w.norm, cfg_.norm_eps);
    Eigen::VectorXf out = w.output * n.transpose();
    debug_check_finite(out, "logits");
    return out;
  }

  RowMatrixXf all_logits(const RowMatrixXf& hidden) const {
    const auto& w = model_.weights();
    return rms_norm(hidden, w.norm, cfg_.norm_eps) * w.output.transpose();
  }

 private:
  const Model& model_;
  const ModelConfig& cfg_;
  KvCache& cache_;
  RowMatrixXf scores_;
  RowMatrixXf acc_;
  Eigen::VectorXf sums_;
  Eigen::VectorXf peak_;
};

namespace {

void check_site(const Site& site, const ModelConfig& cfg, std::size_t first, std::size_t end, const char* what) {
  if (site.layer < 1 || site.layer > cfg.num_layers) {
    throw PlanError(std::string(what) + " layer " + std::to_string(site.layer) + " outside 1.." +
                    std::to_string(cfg.num_layers));
  }
  if (site.position < first || site.position >= end) {
    throw PlanError(std::string(what) + " position " + std::to_string(site.position) + " outside the chunk [" +
                    std::to_string(first) + ", " + std::to_string(end) + ")");
  }
}

void check_chunk(const ModelConfig& cfg, const KvCache& cache, std::size_t count, const CapturePlan& capture,
                 const InterventionPlan& intervene) {
  if (count == 0) throw OverflowError("a forward pass requires at least one token");
  const std::size_t first = cache.length();
  if (first + count > cache.capacity()) {
    throw OverflowError("sequence of " + std::to_string(first + count) + " tokens exceeds max_position " +
                        std::to_string(cache.capacity()));
  }
  for (const Site& s : capture.sites()) check_site(s, cfg, first, first + count, "capture");
  for (const auto& [s, state] : intervene.entries()) {
    check_site(s, cfg, first, first + count, "intervention");
    if (state.size() != cfg.hidden_dim) {
      throw PlanError("intervention state has length " + std::to_string(state.size()) + ", expected " +
                      std::to_string(cfg.hidden_dim));
    }
  }
}

}  // namespace

void KvCache::truncate(std::size_t length) {
  if (length > length_) throw OverflowError("cannot truncate a cache of " + std::to_string(length_) + " to " +
                                            std::to_string(length));
  length_ = length;
}

PrefillResult prefill(const Model& model, std::span<const TokenId> tokens, const CapturePlan& capture,
                      const InterventionPlan& intervene, LogitsScope scope) {
  PrefillResult result{.logits = {}, .all_logits = {}, .cache = KvCache(model.config()), .captured = {}};
  check_chunk(model.config(), result.cache, tokens.size(), capture, intervene);
  ForwardPass pass(model, result.cache);
  const RowMatrixXf hidden = pass.run(tokens, capture, intervene, &result.captured);
  if (scope == LogitsScope::kAll) {
    result.all_logits = pass.all_logits(hidden);
    result.logits = result.all_logits.bottomRows(1).transpose();
  } else {
    result.logits = pass.logits(hidden.bottomRows(1));
  }
  return result;
}

Eigen::VectorXf extend(const Model& model, KvCache& cache, std::span<const TokenId> tokens,
                       const InterventionPlan& intervene, const CapturePlan& capture, CapturedStates* captured) {
  check_chunk(model.config(), cache, tokens.size(), capture, intervene);
  CapturedStates scratch;
  ForwardPass pass(model, cache);
  const RowMatrixXf hidden = pass.run(tokens, capture, intervene, captured != nullptr ? captured : &scratch);
  return pass.logits(hidden.bottomRows(1));
}

Eigen::VectorXf decode_step(const Model& model, KvCache& cache, TokenId token) {
  if (cache.length() + 1 > cache.capacity()) {
    throw OverflowError("kv cache full at " + std::to_string(cache.length()) + " positions");
  }
  ForwardPass pass(model, cache);
  const TokenId one[] = {token};
  const RowMatrixXf hidden = pass.run(one, {}, {}, nullptr);
  return pass.logits(hidden);
}

}  // namespace pica
