#ifndef PICA_MODEL_CONFIG_HPP_
#define PICA_MODEL_CONFIG_HPP_

#include <json.hpp>

#include <cstdint>

namespace pica {

struct ModelConfig {
  int num_layers = 0;
  int hidden_dim = 0;
  int num_heads = 0;
  int num_kv_heads = 0;
  int head_dim = 0;
  int vocab_size = 0;
  int mlp_hidden_dim = 0;
  int max_position = 0;
  double rope_base = 10000.0;
  double norm_eps = 1e-5;

  int kv_dim() const { return num_kv_heads * head_dim; }
  int group_size() const { return num_heads / num_kv_heads; }

  // Throws ConfigError on any violated invariant.
  void validate() const;

  bool operator==(const ModelConfig&) const = default;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

}  // namespace pica

#endif  // PICA_MODEL_CONFIG_HPP_
