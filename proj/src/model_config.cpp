#include "pica/model_config.hpp"

#include "pica/errors.hpp"

#include <string>

namespace pica {

void ModelConfig::validate() const {
  auto positive = [](int v, const char* name) {
    if (v <= 0) throw ConfigError(std::string(name) + " must be positive, got " + std::to_string(v));
  };
  positive(num_layers, "num_layers");
  positive(hidden_dim, "hidden_dim");
  positive(num_heads, "num_heads");
  positive(num_kv_heads, "num_kv_heads");
  positive(head_dim, "head_dim");
  positive(vocab_size, "vocab_size");
  positive(mlp_hidden_dim, "mlp_hidden_dim");
  positive(max_position, "max_position");
  if (!(rope_base > 0.0)) throw ConfigError("rope_base must be positive");
  if (!(norm_eps > 0.0)) throw ConfigError("norm_eps must be positive");
  if (num_heads % num_kv_heads != 0) throw ConfigError("num_kv_heads must divide num_heads");
  if (num_heads * head_dim != hidden_dim) throw ConfigError("num_heads * head_dim must equal hidden_dim");
  if (head_dim % 2 != 0) throw ConfigError("head_dim must be even for rotary embeddings");
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"num_layers", c.num_layers},     {"hidden_dim", c.hidden_dim},
                     {"num_heads", c.num_heads},       {"num_kv_heads", c.num_kv_heads},
                     {"head_dim", c.head_dim},         {"vocab_size", c.vocab_size},
                     {"mlp_hidden_dim", c.mlp_hidden_dim}, {"max_position", c.max_position},
                     {"rope_base", c.rope_base},       {"norm_eps", c.norm_eps}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  j.at("num_layers").get_to(c.num_layers);
  j.at("hidden_dim").get_to(c.hidden_dim);
  j.at("num_heads").get_to(c.num_heads);
  j.at("num_kv_heads").get_to(c.num_kv_heads);
  j.at("head_dim").get_to(c.head_dim);
  j.at("vocab_size").get_to(c.vocab_size);
  j.at("mlp_hidden_dim").get_to(c.mlp_hidden_dim);
  j.at("max_position").get_to(c.max_position);
  j.at("rope_base").get_to(c.rope_base);
  j.at("norm_eps").get_to(c.norm_eps);
}

}  // namespace pica
