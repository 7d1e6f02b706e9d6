#pragma once

#include <vector>

#include "mlip/tensor.hpp"
#include "mlip/token_set.hpp"

namespace mlip {

// One merge step: the 2C lowest-ranked token indices, their odd/even split
// into sets A and B, and the chosen B target for every A member. All indices
// refer to rows of the TokenSet the plan was built for; the fine class token
// never appears.
struct MergePlan {
  std::vector<int> selection;    // 2C indices, ranking order (best of the tail first)
  std::vector<int> group_a;      // selection entries at odd list positions (1st, 3rd, ...)
  std::vector<int> group_b;      // selection entries at even list positions
  std::vector<int> target_of_a;  // group_b member index chosen for each group_a entry

  bool empty() const { return selection.empty(); }
  int merge_count() const { return static_cast<int>(group_a.size()); }
};

// Tail selection on raw ranking scores: sort descending (ties keep the lower
// original index first) and return the last 2C positions of the sorted order,
// C = round((1 - keep_ratio) * n). keep_ratio must lie in [0.5, 1).
std::vector<int> rank_tail_selection(const std::vector<double>& scores, double keep_ratio);

// Selection over the mergeable tokens of a set, ranked by the head-mean
// attention paid by the fine class token. Returns TokenSet row indices.
std::vector<int> rank_by_class_attention(const AttentionRecord& attn, double keep_ratio,
                                         const TokenSet& ts);

// Odd positions of the selection form A, even positions form B; each A member
// maps to its highest-cosine B member (zero-norm tokens score -1 against
// everything, argmax ties take the lower B index). Similarities are computed
// on detached token values.
MergePlan bipartite_soft_match(const Tensor& tokens, const std::vector<int>& selection);

// Merge every A member into its B target as a size-weighted mean; weights add,
// A rows disappear, survivor order is preserved. Gradients flow through the
// averaging only.
TokenSet merge_tokens(const TokenSet& ts, const MergePlan& plan);

}  // namespace mlip
