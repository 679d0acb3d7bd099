#include "pica/diagnostics.hpp"

#include "pica/errors.hpp"

#include <iomanip>

namespace pica {

int top_token_rank(const Distribution& a, const Distribution& b) {
  if (a.size() != b.size()) throw Error("top_token_rank: distributions differ in size");
  const Eigen::Index target = argmax(a);
  const double p = b(target);
  // Entries of b that sort ahead of the target under (prob desc, id asc).
  int ahead = 0;
  for (Eigen::Index i = 0; i < b.size() && ahead < kRankClip; ++i) {
    if (b(i) > p || (b(i) == p && i < target)) ++ahead;
  }
  return std::min(ahead + 1, kRankClip);
}

double top_token_prob(const Distribution& a, const Distribution& b) {
  if (a.size() != b.size()) throw Error("top_token_prob: distributions differ in size");
  return b(argmax(a));
}

std::vector<Distribution> forced_distributions(const Model& model, std::span<const TokenId> context,
                                               std::span<const TokenId> shared_text) {
  if (shared_text.empty()) throw Error("forced_distributions: shared text is empty");
  if (context.empty()) throw Error("forced_distributions: context is empty");
  std::vector<TokenId> seq(context.begin(), context.end());
  // The final shared token is never an input: nothing is predicted after it.
  seq.insert(seq.end(), shared_text.begin(), shared_text.end() - 1);
  if (seq.size() > static_cast<std::size_t>(model.config().max_position)) {
    throw OverflowError("context plus shared text exceeds max_position");
  }
  const PrefillResult pre = prefill(model, seq, {}, {}, LogitsScope::kAll);
  std::vector<Distribution> out;
  out.reserve(shared_text.size());
  for (std::size_t t = 0; t < shared_text.size(); ++t) {
    out.push_back(softmax(pre.all_logits.row(static_cast<Eigen::Index>(context.size() - 1 + t)).transpose()));
  }
  return out;
}

std::vector<ProfileRow> compare_contexts(const Model& model, const ComparisonSpec& spec) {
  if (spec.boundary > spec.shared_text.size()) throw Error("compare_contexts: boundary beyond shared text");
  const auto a = forced_distributions(model, spec.context_a, spec.shared_text);
  const auto b = forced_distributions(model, spec.context_b, spec.shared_text);
  std::vector<ProfileRow> rows;
  rows.reserve(a.size());
  for (std::size_t t = 0; t < a.size(); ++t) {
    rows.push_back({.position = t,
                    .segment = t < spec.boundary ? Segment::kInput : Segment::kOutput,
                    .kl_nats = kl_divergence(a[t], b[t]),
                    .top_token_rank = top_token_rank(a[t], b[t]),
                    .top_token_prob = top_token_prob(a[t], b[t])});
  }
  return rows;
}

std::string_view group_name(Group group) { return group == Group::kExperimental ? "experimental" : "control"; }

std::string_view kl_direction(Group group) {
  return group == Group::kExperimental ? "few_shot||zero_shot" : "few_shot_a||few_shot_b";
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
  std::string q = "\"";
  for (char c : s) {
    if (c == '"') q += '"';
    q += c;
  }
  return q + '"';
}

void write_profile_csv_header(std::ostream& out) {
  out << "instance_id,position,segment,kl_nats,top_token_rank,top_token_prob,group,kl_direction\n";
}

void write_profile_csv(std::ostream& out, const std::string& instance_id, Group group,
                       std::span<const ProfileRow> rows) {
  const auto flags = out.flags();
  const auto precision = out.precision();
  out << std::setprecision(9);
  for (const auto& r : rows) {
    out << csv_field(instance_id) << ',' << r.position << ',' << (r.segment == Segment::kInput ? "input" : "output") << ','
        << r.kl_nats << ',' << r.top_token_rank << ',' << r.top_token_prob << ',' << group_name(group) << ','
        << kl_direction(group) << '\n';
  }
  out.flags(flags);
  out.precision(precision);
}

}  // namespace pica
