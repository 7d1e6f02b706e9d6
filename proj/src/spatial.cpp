#include "mlip/spatial.hpp"

#include <cmath>

namespace mlip {

constexpr double kLnEps = 1e-5;

Tensor patch_embed_tokens(const Image& img, int patch_size, const Tensor& weight, const Tensor& pos) {
  if (patch_size <= 0 || img.h % patch_size != 0 || img.w % patch_size != 0)
    throw std::invalid_argument("patch_embed: resolution " + std::to_string(img.h) + "x" +
                                std::to_string(img.w) + " not divisible by patch size " +
                                std::to_string(patch_size));
  int gh = img.h / patch_size, gw = img.w / patch_size;
  int n = gh * gw;
  int flat = patch_size * patch_size * 3;
  if (weight.rows() != flat)
    throw std::invalid_argument("patch_embed: weight rows " + std::to_string(weight.rows()) +
                                " do not match flattened patch size " + std::to_string(flat));
  if (pos.rows() != n)
    throw std::invalid_argument("patch_embed: positional table has " + std::to_string(pos.rows()) +
                                " rows, expected " + std::to_string(n));
  std::vector<double> patches(static_cast<size_t>(n) * flat);
  for (int gy = 0; gy < gh; ++gy)
    for (int gx = 0; gx < gw; ++gx) {
      size_t row = static_cast<size_t>(gy * gw + gx) * flat;
      int k = 0;
      for (int py = 0; py < patch_size; ++py)
        for (int px = 0; px < patch_size; ++px)
          for (int ci = 0; ci < 3; ++ci)
            patches[row + k++] =
                img.rgb[(static_cast<size_t>(gy * patch_size + py) * img.w + (gx * patch_size + px)) * 3 + ci];
    }
  Tensor patch_mat = Tensor::from_vec({n, flat}, patches);
  return add(matmul(patch_mat, weight), pos);
}

TokenSet patch_embed(const Image& img, int patch_size, const Tensor& weight, const Tensor& pos) {
  return make_token_set(patch_embed_tokens(img, patch_size, weight, pos));
}

static Tensor causal_mask(int n) {
  Tensor m = Tensor::zeros({n, n});
  auto& v = m.data_mut();
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) v[static_cast<size_t>(i) * n + j] = -1e9;
  return m;
}

std::pair<Tensor, AttentionRecord> attention_sublayer(const Tensor& x, const AttnParams& p,
                                                      int cls_row, bool causal) {
  int n = x.rows(), c = x.cols();
  if (c % p.heads != 0)
    throw std::invalid_argument("attention_sublayer: heads " + std::to_string(p.heads) +
                                " do not divide width " + std::to_string(c));
  int dh = c / p.heads;
  Tensor xn = layer_norm(x, p.ln_gain, p.ln_bias, kLnEps);
  Tensor q = add_rowvec(matmul(xn, p.wq), p.bq);
  Tensor k = add_rowvec(matmul(xn, p.wk), p.bk);
  Tensor v = add_rowvec(matmul(xn, p.wv), p.bv);

  AttentionRecord rec;
  if (cls_row >= 0) rec.head_mean.assign(static_cast<size_t>(n), 0.0);
  Tensor mask;
  if (causal) mask = causal_mask(n);

  std::vector<Tensor> head_outs;
  head_outs.reserve(static_cast<size_t>(p.heads));
  for (int hd = 0; hd < p.heads; ++hd) {
    Tensor qh = slice_cols(q, hd * dh, dh);
    Tensor kh = slice_cols(k, hd * dh, dh);
    Tensor vh = slice_cols(v, hd * dh, dh);
    Tensor scores = scale(matmul(qh, transpose(kh)), 1.0 / std::sqrt(static_cast<double>(dh)));
    if (causal) scores = add(scores, mask);
    Tensor attn = softmax_rows(scores);
    if (cls_row >= 0) {
      std::vector<double> row(static_cast<size_t>(n));
      for (int j = 0; j < n; ++j) {
        row[static_cast<size_t>(j)] = attn.at2(cls_row, j);
        rec.head_mean[static_cast<size_t>(j)] += row[static_cast<size_t>(j)] / p.heads;
      }
      rec.per_head.push_back(std::move(row));
    }
    head_outs.push_back(matmul(attn, vh));
  }
  Tensor merged = p.heads == 1 ? head_outs[0] : concat_cols(head_outs);
  Tensor out = add(x, add_rowvec(matmul(merged, p.wo), p.bo));
  return {out, rec};
}

Tensor mlp_sublayer(const Tensor& x, const MlpParams& p) {
  Tensor xn = layer_norm(x, p.ln_gain, p.ln_bias, kLnEps);
  Tensor hidden = gelu(add_rowvec(matmul(xn, p.w1), p.b1));
  return add(x, add_rowvec(matmul(hidden, p.w2), p.b2));
}

std::pair<TokenSet, AttentionRecord> mhsa_block_forward(const TokenSet& ts, const BlockParams& p) {
  int cls = ts.fine_class_index ? *ts.fine_class_index : -1;
  auto [attended, rec] = attention_sublayer(ts.tokens, p.attn, cls, false);
  TokenSet out;
  out.tokens = mlp_sublayer(attended, p.mlp);
  out.size_weights = ts.size_weights;
  out.fine_class_index = ts.fine_class_index;
  return {out, rec};
}

GuideOutput guide_forward(const Image& low_res, const GuideParams& p) {
  Tensor tokens = patch_embed_tokens(low_res, p.patch_size, p.patch_w, p.pos);
  Tensor x = concat_rows({p.cls, tokens});
  for (const auto& blk : p.blocks) {
    x = attention_sublayer(x, blk.attn, -1, false).first;
    x = mlp_sublayer(x, blk.mlp);
  }
  GuideOutput out;
  out.coarse_class = slice_rows(x, 0, 1);
  out.tokens = slice_rows(x, 1, x.rows() - 1);
  return out;
}

TokenSet cross_attention(const TokenSet& ts, const GuideOutput& guide, const CrossAttnParams& p) {
  if (!ts.fine_class_index)
    throw std::invalid_argument("cross_attention: fine class token missing from token set");
  int c = ts.width();
  if (c % p.heads != 0)
    throw std::invalid_argument("cross_attention: heads do not divide width");
  int dh = c / p.heads;

  Tensor kv_src = concat_rows({guide.coarse_class, guide.tokens});
  Tensor xn = layer_norm(ts.tokens, p.ln_gain, p.ln_bias, kLnEps);
  Tensor q = add_rowvec(matmul(xn, p.wq), p.bq);
  Tensor k = add_rowvec(matmul(kv_src, p.wk), p.bk);
  Tensor v = add_rowvec(matmul(kv_src, p.wv), p.bv);

  std::vector<Tensor> head_outs;
  head_outs.reserve(static_cast<size_t>(p.heads));
  for (int hd = 0; hd < p.heads; ++hd) {
    Tensor qh = slice_cols(q, hd * dh, dh);
    Tensor kh = slice_cols(k, hd * dh, dh);
    Tensor vh = slice_cols(v, hd * dh, dh);
    Tensor attn = softmax_rows(scale(matmul(qh, transpose(kh)), 1.0 / std::sqrt(static_cast<double>(dh))));
    head_outs.push_back(matmul(attn, vh));
  }
  Tensor merged = p.heads == 1 ? head_outs[0] : concat_cols(head_outs);
  TokenSet out;
  out.tokens = add(ts.tokens, add_rowvec(matmul(merged, p.wo), p.bo));
  out.size_weights = ts.size_weights;
  out.fine_class_index = ts.fine_class_index;
  return out;
}

static std::vector<double> weighted_centroid(const TokenSet& ts) {
  int c = ts.width();
  std::vector<double> acc(static_cast<size_t>(c), 0.0);
  for (int i = 0; i < ts.count(); ++i)
    for (int j = 0; j < c; ++j)
      acc[static_cast<size_t>(j)] += ts.size_weights[static_cast<size_t>(i)] * ts.tokens.at2(i, j);
  return acc;
}

SpatialStageResult spatial_stage_forward(const TokenSet& freq_tokens, const Image& low_res,
                                         const SpatialStageParams& params, ChoiceCache* cache) {
  if (!params.blocks.empty() && params.blocks.front().accel)
    throw std::invalid_argument(
        "spatial_stage_forward: schedule places an acceleration block before any MHSA block");

  TokenSet ts;
  ts.tokens = concat_rows({params.cls, freq_tokens.tokens});
  ts.size_weights.assign(1, 1.0);
  ts.size_weights.insert(ts.size_weights.end(), freq_tokens.size_weights.begin(),
                         freq_tokens.size_weights.end());
  ts.fine_class_index = 0;

  bool needs_guide = false;
  for (const auto& b : params.blocks) needs_guide = needs_guide || b.accel;
  GuideOutput guide;
  if (needs_guide) guide = guide_forward(low_res, params.guide);

  SpatialStageResult result;
  for (const auto& blk : params.blocks) {
    StageBlockTrace trace;
    trace.tokens_before = static_cast<int>(ts.mergeable_indices().size());
    trace.weight_sum_before = ts.mergeable_weight_sum();
    if (!blk.accel) {
      auto [next, rec] = mhsa_block_forward(ts, blk.block);
      ts = std::move(next);
      result.attention_history.push_back(std::move(rec));
    } else {
      ts = cross_attention(ts, guide, blk.cross);
      auto [attended, rec] = attention_sublayer(ts.tokens, blk.block.attn,
                                                ts.fine_class_index ? *ts.fine_class_index : -1, false);
      ts.tokens = attended;
      if (blk.keep_ratio < 1.0) {
        auto before = weighted_centroid(ts);
        std::vector<int> selection;
        MergePlan plan;
        if (cache) {
          selection = cache->choose([&] { return rank_by_class_attention(rec, blk.keep_ratio, ts); });
          plan.selection = selection;
          for (size_t i = 0; i < selection.size(); ++i)
            (i % 2 == 0 ? plan.group_a : plan.group_b).push_back(selection[i]);
          plan.target_of_a =
              cache->choose([&] { return bipartite_soft_match(ts.tokens, selection).target_of_a; });
        } else {
          selection = rank_by_class_attention(rec, blk.keep_ratio, ts);
          plan = bipartite_soft_match(ts.tokens, selection);
        }
        ts = merge_tokens(ts, plan);
        auto after = weighted_centroid(ts);
        for (size_t j = 0; j < before.size(); ++j)
          trace.centroid_delta = std::max(trace.centroid_delta, std::fabs(before[j] - after[j]));
        trace.merged_away = static_cast<int>(selection.size()) / 2;
      }
      ts.tokens = mlp_sublayer(ts.tokens, blk.block.mlp);
      result.attention_history.push_back(std::move(rec));
    }
    trace.tokens_after = static_cast<int>(ts.mergeable_indices().size());
    trace.weight_sum_after = ts.mergeable_weight_sum();
    result.trace.blocks.push_back(trace);
  }
  result.tokens = std::move(ts);
  return result;
}

}  // namespace mlip
