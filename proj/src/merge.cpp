#include "mlip/merge.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace mlip {

std::vector<int> rank_tail_selection(const std::vector<double>& scores, double keep_ratio) {
  int n = static_cast<int>(scores.size());
  if (keep_ratio < 0.5 || keep_ratio >= 1.0)
    throw std::invalid_argument("rank_tail_selection: keep ratio must lie in [0.5, 1), got " +
                                std::to_string(keep_ratio));
  int merge_count = static_cast<int>(std::llround((1.0 - keep_ratio) * n));
  if (2 * merge_count > n)
    throw std::invalid_argument("rank_tail_selection: 2C = " + std::to_string(2 * merge_count) +
                                " exceeds mergeable count " + std::to_string(n));
  std::vector<int> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    if (scores[static_cast<size_t>(a)] != scores[static_cast<size_t>(b)])
      return scores[static_cast<size_t>(a)] > scores[static_cast<size_t>(b)];
    return a < b;
  });
  return std::vector<int>(order.end() - 2 * merge_count, order.end());
}

std::vector<int> rank_by_class_attention(const AttentionRecord& attn, double keep_ratio,
                                         const TokenSet& ts) {
  std::vector<int> mergeable = ts.mergeable_indices();
  std::vector<double> scores;
  scores.reserve(mergeable.size());
  for (int i : mergeable) scores.push_back(attn.head_mean[static_cast<size_t>(i)]);
  std::vector<int> tail = rank_tail_selection(scores, keep_ratio);
  std::vector<int> out;
  out.reserve(tail.size());
  for (int t : tail) out.push_back(mergeable[static_cast<size_t>(t)]);
  return out;
}

MergePlan bipartite_soft_match(const Tensor& tokens, const std::vector<int>& selection) {
  MergePlan plan;
  if (selection.empty()) return plan;
  if (selection.size() % 2 != 0)
    throw std::invalid_argument("bipartite_soft_match: selection size must be even, got " +
                                std::to_string(selection.size()));
  plan.selection = selection;
  for (size_t i = 0; i < selection.size(); ++i)
    (i % 2 == 0 ? plan.group_a : plan.group_b).push_back(selection[i]);

  int c = tokens.cols();
  auto norm_of = [&](int row) {
    double acc = 0.0;
    for (int j = 0; j < c; ++j) acc += tokens.at2(row, j) * tokens.at2(row, j);
    return std::sqrt(acc);
  };
  auto cosine = [&](int ra, int rb) {
    double na = norm_of(ra), nb = norm_of(rb);
    if (na == 0.0 || nb == 0.0) return -1.0;
    double dot = 0.0;
    for (int j = 0; j < c; ++j) dot += tokens.at2(ra, j) * tokens.at2(rb, j);
    return dot / (na * nb);
  };

  plan.target_of_a.reserve(plan.group_a.size());
  for (int a : plan.group_a) {
    int best = 0;
    double best_sim = -2.0;
    for (size_t bi = 0; bi < plan.group_b.size(); ++bi) {
      double sim = cosine(a, plan.group_b[bi]);
      if (sim > best_sim) {
        best_sim = sim;
        best = static_cast<int>(bi);
      }
    }
    plan.target_of_a.push_back(best);
  }
  return plan;
}

TokenSet merge_tokens(const TokenSet& ts, const MergePlan& plan) {
  if (plan.empty()) return ts;
  int n = ts.count();
  for (int i : plan.selection) {
    if (i < 0 || i >= n)
      throw std::out_of_range("merge_tokens: plan index " + std::to_string(i) + " out of range for " +
                              std::to_string(n) + " tokens");
    if (ts.fine_class_index && *ts.fine_class_index == i)
      throw std::invalid_argument("merge_tokens: plan selects the fine class token");
  }

  std::vector<bool> removed(static_cast<size_t>(n), false);
  for (int a : plan.group_a) removed[static_cast<size_t>(a)] = true;

  // accumulate incoming weight per B target
  std::vector<double> new_weight(ts.size_weights);
  std::vector<std::vector<int>> incoming(static_cast<size_t>(n));
  for (size_t ai = 0; ai < plan.group_a.size(); ++ai) {
    int b = plan.group_b[static_cast<size_t>(plan.target_of_a[ai])];
    incoming[static_cast<size_t>(b)].push_back(plan.group_a[ai]);
    new_weight[static_cast<size_t>(b)] += ts.size_weights[static_cast<size_t>(plan.group_a[ai])];
  }

  int out_n = n - plan.merge_count();
  // survivor rows as a constant mixing matrix; gradients flow through the
  // weighted averaging inside the matmul
  Tensor mix = Tensor::zeros({out_n, n});
  auto& mv = mix.data_mut();
  TokenSet out;
  out.size_weights.reserve(static_cast<size_t>(out_n));
  int r = 0;
  for (int i = 0; i < n; ++i) {
    if (removed[static_cast<size_t>(i)]) continue;
    if (ts.fine_class_index && *ts.fine_class_index == i) out.fine_class_index = r;
    double wi = new_weight[static_cast<size_t>(i)];
    mv[static_cast<size_t>(r) * n + i] = ts.size_weights[static_cast<size_t>(i)] / wi;
    for (int a : incoming[static_cast<size_t>(i)])
      mv[static_cast<size_t>(r) * n + a] = ts.size_weights[static_cast<size_t>(a)] / wi;
    out.size_weights.push_back(wi);
    ++r;
  }
  mix.requantize();
  out.tokens = matmul(mix, ts.tokens);
  return out;
}

}  // namespace mlip
