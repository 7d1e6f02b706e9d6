#pragma once

#include <vector>

#include "mlip/spatial.hpp"
#include "mlip/tensor.hpp"

namespace mlip {

// l* x l* cosine weight matrix between text tokens (rows) and spatial tokens
// (columns); rows >= l2 and columns >= l3 are zero padding.
struct WeightMatrix {
  Tensor w;
  int l2 = 0;  // valid text tokens
  int l3 = 0;  // valid spatial tokens
  int side() const { return w.rows(); }
};

// injective column -> row matching plus its total weight
struct Assignment {
  std::vector<int> match_of_col;  // M[t] = s
  double total_weight = 0.0;
};

// Symmetric InfoNCE over unit-norm instance embeddings: mean of row-wise and
// column-wise cross entropy against the diagonal at temperature tau.
Tensor info_nce(const Tensor& y, const Tensor& z, const Tensor& tau);

// Mean best-cosine match in both directions for one image/text token pair;
// argmax picks are detached, gradients flow through the selected cosines.
// Returns varpi_IT + varpi_TI for one sample.
Tensor one_to_many_pair(const Tensor& image_tokens, const Tensor& text_tokens,
                        ChoiceCache* cache = nullptr);

// Batch loss: -(1/2N) sum varpi_IT - (1/2N) sum varpi_TI.
Tensor one_to_many_align(const std::vector<Tensor>& image_tokens,
                         const std::vector<Tensor>& text_tokens, ChoiceCache* cache = nullptr);

WeightMatrix build_weight_matrix(const Tensor& text_tokens, const Tensor& spatial_tokens);

// Maximum-weight perfect matching on the padded square matrix (Kuhn-Munkres,
// alternating tree with slack arrays; ties resolved toward lower indices).
Assignment km_match(const WeightMatrix& wm);
Assignment km_match_raw(const std::vector<double>& w, int n);

// Brute-force matching oracle for small matrices (test reference).
Assignment km_brute_force(const std::vector<double>& w, int n);

// One sample of Eq.-style one-to-one loss: -(1/min(l2,l3)) sum_t w(M[t], t);
// the assignment is detached, gradients flow through the selected entries.
Tensor one_to_one_loss(const WeightMatrix& wm, const Assignment& m);

// alpha * ins_fre + beta * ins_spa + gamma * tok_fre + delta * tok_spa
struct MixCoefficients {
  double alpha = 0.15, beta = 0.65, gamma = 0.1, delta = 0.1;
};

Tensor mlip_total_loss(const Tensor& ins_fre, const Tensor& ins_spa, const Tensor& tok_fre,
                       const Tensor& tok_spa, const MixCoefficients& mix);

}  // namespace mlip
