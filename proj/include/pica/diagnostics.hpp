#ifndef PICA_DIAGNOSTICS_HPP_
#define PICA_DIAGNOSTICS_HPP_

#include "pica/model.hpp"
#include "pica/ops.hpp"

#include <ostream>
#include <span>
#include <string>
#include <vector>

namespace pica {

// Ranks reported by top_token_rank are clipped to this value.
inline constexpr int kRankClip = 10;

// Kullback-Leibler divergence KL(p || q) in nats, with 0 * ln(0 / q) = 0.
template <typename DerivedP, typename DerivedQ>
double kl_divergence(const Eigen::MatrixBase<DerivedP>& p, const Eigen::MatrixBase<DerivedQ>& q) {
  if (p.size() != q.size()) throw Error("kl_divergence: distributions differ in size");
  double sum = 0.0;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    const double pi = static_cast<double>(p(i));
    if (pi > 0.0) sum += pi * std::log(pi / static_cast<double>(q(i)));
  }
  return std::max(sum, 0.0);
}

// 1-based rank of argmax(a) inside b (descending probability, ties to the
// lower token id), clipped to kRankClip.
int top_token_rank(const Distribution& a, const Distribution& b);

// Probability b assigns to argmax(a).
double top_token_prob(const Distribution& a, const Distribution& b);

// Distribution at step t predicts shared_text[t] after context + shared_text[0, t).
std::vector<Distribution> forced_distributions(const Model& model, std::span<const TokenId> context,
                                               std::span<const TokenId> shared_text);

enum class Segment { kInput, kOutput };
enum class Group { kExperimental, kControl };

struct ComparisonSpec {
  std::vector<TokenId> context_a;  // p in KL(p || q)
  std::vector<TokenId> context_b;
  std::vector<TokenId> shared_text;
  // shared_text[0, boundary) is the input segment, the rest output.
  std::size_t boundary = 0;
};

struct ProfileRow {
  std::size_t position = 0;  // index into shared_text
  Segment segment = Segment::kInput;
  double kl_nats = 0.0;
  int top_token_rank = 1;
  double top_token_prob = 0.0;
};

std::vector<ProfileRow> compare_contexts(const Model& model, const ComparisonSpec& spec);

// CSV with header
//   instance_id,position,segment,kl_nats,top_token_rank,top_token_prob,group,kl_direction
// Quotes a CSV field when it contains a separator, quote or newline.
std::string csv_field(const std::string& s);
void write_profile_csv_header(std::ostream& out);
void write_profile_csv(std::ostream& out, const std::string& instance_id, Group group,
                       std::span<const ProfileRow> rows);

std::string_view group_name(Group group);
std::string_view kl_direction(Group group);

}  // namespace pica

#endif  // PICA_DIAGNOSTICS_HPP_
