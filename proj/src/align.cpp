#include "mlip/align.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace mlip {

Tensor info_nce(const Tensor& y, const Tensor& z, const Tensor& tau) {
  if (y.rank() != 2 || z.rank() != 2 || y.shape() != z.shape())
    throw std::invalid_argument("info_nce: embedding batches must share shape, got " +
                                shape_str(y.shape()) + " and " + shape_str(z.shape()));
  int n = y.rows();
  if (n < 2) throw std::invalid_argument("info_nce: batch size must be at least 2, got " + std::to_string(n));
  if (tau.size() != 1 || tau.value(0) <= 0.0)
    throw std::invalid_argument("info_nce: temperature must be a positive scalar");

  Tensor sim = mul_scalar_t(matmul(y, transpose(z)), reciprocal(tau));
  Tensor row_nll = scale(sum_all(take_diag(log_softmax_rows(sim))), -1.0 / n);
  Tensor col_nll = scale(sum_all(take_diag(log_softmax_rows(transpose(sim)))), -1.0 / n);
  return weighted_sum_scalars({row_nll, col_nll}, {0.5, 0.5});
}

static std::vector<int> argmax_rows(const Tensor& m) {
  std::vector<int> idx(static_cast<size_t>(m.rows()));
  for (int i = 0; i < m.rows(); ++i) {
    int best = 0;
    for (int j = 1; j < m.cols(); ++j)
      if (m.at2(i, j) > m.at2(i, best)) best = j;
    idx[static_cast<size_t>(i)] = best;
  }
  return idx;
}

Tensor one_to_many_pair(const Tensor& image_tokens, const Tensor& text_tokens, ChoiceCache* cache) {
  if (image_tokens.rows() < 1 || text_tokens.rows() < 1)
    throw std::invalid_argument("one_to_many_pair: token lists must be nonempty");
  Tensor cosines = matmul(l2_normalize_rows(image_tokens), transpose(l2_normalize_rows(text_tokens)));
  auto pick_it = [&] { return argmax_rows(cosines); };
  std::vector<int> it_idx = cache ? cache->choose(pick_it) : pick_it();
  Tensor cosines_t = transpose(cosines);
  auto pick_ti = [&] { return argmax_rows(cosines_t); };
  std::vector<int> ti_idx = cache ? cache->choose(pick_ti) : pick_ti();
  Tensor varpi_it = mean_all(select_per_row(cosines, it_idx));
  Tensor varpi_ti = mean_all(select_per_row(cosines_t, ti_idx));
  return weighted_sum_scalars({varpi_it, varpi_ti}, {1.0, 1.0});
}

Tensor one_to_many_align(const std::vector<Tensor>& image_tokens,
                         const std::vector<Tensor>& text_tokens, ChoiceCache* cache) {
  if (image_tokens.empty() || image_tokens.size() != text_tokens.size())
    throw std::invalid_argument("one_to_many_align: batches must be nonempty and matched");
  size_t n = image_tokens.size();
  std::vector<Tensor> parts;
  parts.reserve(n);
  for (size_t j = 0; j < n; ++j) parts.push_back(one_to_many_pair(image_tokens[j], text_tokens[j], cache));
  return weighted_sum_scalars(parts, std::vector<double>(n, -0.5 / static_cast<double>(n)));
}

WeightMatrix build_weight_matrix(const Tensor& text_tokens, const Tensor& spatial_tokens) {
  if (text_tokens.rows() < 1 || spatial_tokens.rows() < 1)
    throw std::invalid_argument("build_weight_matrix: token lists must be nonempty");
  WeightMatrix wm;
  wm.l2 = text_tokens.rows();
  wm.l3 = spatial_tokens.rows();
  int side = std::max(wm.l2, wm.l3);
  Tensor cosines = matmul(l2_normalize_rows(text_tokens), transpose(l2_normalize_rows(spatial_tokens)));
  wm.w = pad_matrix(cosines, side, side);
  return wm;
}

// Kuhn-Munkres via feasible labels and slack arrays. Tight edges are tested
// with a scale-relative tolerance so positive rescaling of W cannot flip the
// selected matching on generic inputs.
Assignment km_match_raw(const std::vector<double>& w, int n) {
  if (n <= 0 || w.size() != static_cast<size_t>(n) * n)
    throw std::invalid_argument("km_match: square matrix required");
  auto at = [&](int s, int t) { return w[static_cast<size_t>(s) * n + t]; };
  double scale = 0.0;
  for (double x : w) scale = std::max(scale, std::fabs(x));
  double tol = 1e-12 * (1.0 + scale);

  std::vector<double> lb(static_cast<size_t>(n)), lc(static_cast<size_t>(n), 0.0);
  for (int s = 0; s < n; ++s) {
    double mx = at(s, 0);
    for (int t = 1; t < n; ++t) mx = std::max(mx, at(s, t));
    lb[static_cast<size_t>(s)] = mx;
  }

  std::vector<int> match_col(static_cast<size_t>(n), -1);  // M[t] = s
  std::vector<int> match_row(static_cast<size_t>(n), -1);

  for (int s0 = 0; s0 < n; ++s0) {
    std::vector<double> slack(static_cast<size_t>(n));
    std::vector<int> slack_src(static_cast<size_t>(n), s0);
    std::vector<bool> in_tree_row(static_cast<size_t>(n), false);
    std::vector<bool> in_tree_col(static_cast<size_t>(n), false);
    std::vector<int> parent_col(static_cast<size_t>(n), -1);  // row that reached column t
    in_tree_row[static_cast<size_t>(s0)] = true;
    for (int t = 0; t < n; ++t) slack[static_cast<size_t>(t)] = lb[static_cast<size_t>(s0)] + lc[static_cast<size_t>(t)] - at(s0, t);

    int found_col = -1;
    while (found_col < 0) {
      // tight column outside the tree, lowest index first
      int pick = -1;
      for (int t = 0; t < n; ++t)
        if (!in_tree_col[static_cast<size_t>(t)] && slack[static_cast<size_t>(t)] <= tol) {
          pick = t;
          break;
        }
      if (pick < 0) {
        double delta = 0.0;
        bool first = true;
        for (int t = 0; t < n; ++t)
          if (!in_tree_col[static_cast<size_t>(t)] && (first || slack[static_cast<size_t>(t)] < delta)) {
            delta = slack[static_cast<size_t>(t)];
            first = false;
          }
        for (int s = 0; s < n; ++s)
          if (in_tree_row[static_cast<size_t>(s)]) lb[static_cast<size_t>(s)] -= delta;
        for (int t = 0; t < n; ++t) {
          if (in_tree_col[static_cast<size_t>(t)])
            lc[static_cast<size_t>(t)] += delta;
          else
            slack[static_cast<size_t>(t)] -= delta;
        }
        continue;
      }
      parent_col[static_cast<size_t>(pick)] = slack_src[static_cast<size_t>(pick)];
      if (match_col[static_cast<size_t>(pick)] < 0) {
        found_col = pick;
      } else {
        int s = match_col[static_cast<size_t>(pick)];
        in_tree_col[static_cast<size_t>(pick)] = true;
        in_tree_row[static_cast<size_t>(s)] = true;
        for (int t = 0; t < n; ++t)
          if (!in_tree_col[static_cast<size_t>(t)]) {
            double cand = lb[static_cast<size_t>(s)] + lc[static_cast<size_t>(t)] - at(s, t);
            if (cand < slack[static_cast<size_t>(t)]) {
              slack[static_cast<size_t>(t)] = cand;
              slack_src[static_cast<size_t>(t)] = s;
            }
          }
      }
    }
    // augment along alternating path
    int t = found_col;
    while (t >= 0) {
      int s = parent_col[static_cast<size_t>(t)];
      int prev_t = match_row[static_cast<size_t>(s)];
      match_col[static_cast<size_t>(t)] = s;
      match_row[static_cast<size_t>(s)] = t;
      t = prev_t;
    }
  }

  Assignment a;
  a.match_of_col = match_col;
  double total = 0.0;
  for (int t = 0; t < n; ++t) total += at(match_col[static_cast<size_t>(t)], t);
  a.total_weight = total;
  return a;
}

Assignment km_match(const WeightMatrix& wm) {
  if (wm.w.rank() != 2 || wm.w.rows() != wm.w.cols())
    throw std::invalid_argument("km_match: padded weight matrix must be square, got " +
                                shape_str(wm.w.shape()));
  return km_match_raw(wm.w.data(), wm.side());
}

Assignment km_brute_force(const std::vector<double>& w, int n) {
  std::vector<int> perm(static_cast<size_t>(n));
  std::iota(perm.begin(), perm.end(), 0);
  Assignment best;
  best.total_weight = -1e300;
  do {
    double total = 0.0;
    for (int t = 0; t < n; ++t) total += w[static_cast<size_t>(perm[static_cast<size_t>(t)]) * n + t];
    if (total > best.total_weight) {
      best.total_weight = total;
      best.match_of_col = perm;
    }
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

Tensor one_to_one_loss(const WeightMatrix& wm, const Assignment& m) {
  int side = wm.side();
  if (static_cast<int>(m.match_of_col.size()) != side)
    throw std::invalid_argument("one_to_one_loss: assignment size " +
                                std::to_string(m.match_of_col.size()) + " does not match matrix side " +
                                std::to_string(side));
  std::vector<std::pair<int, int>> coords;
  coords.reserve(static_cast<size_t>(side));
  for (int t = 0; t < side; ++t) coords.emplace_back(m.match_of_col[static_cast<size_t>(t)], t);
  return scale(sum_selected(wm.w, coords), -1.0 / std::min(wm.l2, wm.l3));
}

Tensor mlip_total_loss(const Tensor& ins_fre, const Tensor& ins_spa, const Tensor& tok_fre,
                       const Tensor& tok_spa, const MixCoefficients& mix) {
  if (mix.alpha < 0 || mix.beta < 0 || mix.gamma < 0 || mix.delta < 0 ||
      (mix.alpha == 0 && mix.beta == 0 && mix.gamma == 0 && mix.delta == 0))
    throw std::invalid_argument("mlip_total_loss: coefficients must be nonnegative with one positive");
  for (const Tensor* t : {&ins_fre, &ins_spa, &tok_fre, &tok_spa})
    if (!std::isfinite(t->value(0)))
      throw std::invalid_argument("mlip_total_loss: loss components must be finite");
  return weighted_sum_scalars({ins_fre, ins_spa, tok_fre, tok_spa},
                              {mix.alpha, mix.beta, mix.gamma, mix.delta});
}

}  // namespace mlip
