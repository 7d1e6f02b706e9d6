#pragma once

#include <optional>
#include <vector>

#include "mlip/tensor.hpp"

namespace mlip {

// Ordered token embeddings plus merge bookkeeping. size_weights track how
// many original tokens each row represents; the fine class token (when
// present) is excluded from every merge candidate set.
struct TokenSet {
  Tensor tokens;                     // n x C
  std::vector<double> size_weights;  // length n, all > 0
  std::optional<int> fine_class_index;

  int count() const { return tokens.rows(); }
  int width() const { return tokens.cols(); }

  std::vector<int> mergeable_indices() const {
    std::vector<int> out;
    for (int i = 0; i < count(); ++i)
      if (!fine_class_index || *fine_class_index != i) out.push_back(i);
    return out;
  }

  double mergeable_weight_sum() const {
    double acc = 0.0;
    for (int i : mergeable_indices()) acc += size_weights[static_cast<size_t>(i)];
    return acc;
  }
};

TokenSet make_token_set(Tensor tokens);

// Per-head attention weights from the fine class token query to every token,
// plus the head mean used as the merge ranking signal. Detached values.
struct AttentionRecord {
  std::vector<std::vector<double>> per_head;  // [heads][n]
  std::vector<double> head_mean;              // [n]
};

struct GuideOutput {
  Tensor coarse_class;  // 1 x C_g
  Tensor tokens;        // m x C_g
};

}  // namespace mlip
