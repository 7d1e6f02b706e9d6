#pragma once

#include <vector>

#include "mlip/merge.hpp"
#include "mlip/tensor.hpp"
#include "mlip/token_set.hpp"

namespace mlip {

struct Image {
  int h = 0, w = 0;
  std::vector<double> rgb;  // row-major h x w x 3, values in [0, 1]
};

struct AttnParams {
  Tensor ln_gain, ln_bias;
  Tensor wq, bq, wk, bk, wv, bv, wo, bo;
  int heads = 1;
};

struct MlpParams {
  Tensor ln_gain, ln_bias;
  Tensor w1, b1, w2, b2;
};

struct BlockParams {
  AttnParams attn;
  MlpParams mlp;
};

// cross-attention projections map guide features (C_g) into the token width
struct CrossAttnParams {
  Tensor ln_gain, ln_bias;
  Tensor wq, bq, wk, bk, wv, bv, wo, bo;
  int heads = 1;
};

struct GuideParams {
  Tensor patch_w;  // (p*p*3) x C_g, bias free
  Tensor pos;      // m x C_g
  Tensor cls;      // 1 x C_g
  std::vector<BlockParams> blocks;
  int patch_size = 0;
  int heads = 1;
};

struct SpatialBlockParams {
  bool accel = false;
  double keep_ratio = 1.0;  // 1.0 disables the merge step
  BlockParams block;
  CrossAttnParams cross;  // used when accel
};

struct SpatialStageParams {
  Tensor cls;  // 1 x C, prepended at stage entry
  std::vector<SpatialBlockParams> blocks;
  GuideParams guide;
};

// Records replayable discrete decisions (merge selections, argmax picks, KM
// assignments) so the finite-difference harness can evaluate the loss with
// those choices frozen.
struct ChoiceCache {
  bool replay = false;
  size_t cursor = 0;
  std::vector<std::vector<int>> items;

  std::vector<int> choose(const std::function<std::vector<int>()>& compute) {
    if (!replay) {
      items.push_back(compute());
      return items.back();
    }
    if (cursor >= items.size()) throw std::runtime_error("ChoiceCache: replay past end of recording");
    return items[cursor++];
  }
  void rewind() { cursor = 0; }
};

// per-block trace of a spatial stage pass; used for merge audits and for
// cross-checking the analytic op accounting
struct StageBlockTrace {
  int tokens_before = 0;  // mergeable count entering the block
  int tokens_after = 0;   // mergeable count leaving the block
  int merged_away = 0;
  double weight_sum_before = 0.0;
  double weight_sum_after = 0.0;
  double centroid_delta = 0.0;  // max abs change of sum(w_i * token_i)
};

struct StageTrace {
  std::vector<StageBlockTrace> blocks;
};

Tensor patch_embed_tokens(const Image& img, int patch_size, const Tensor& weight, const Tensor& pos);
TokenSet patch_embed(const Image& img, int patch_size, const Tensor& weight, const Tensor& pos);

// pre-norm self-attention with residual; records the fine-class-token
// attention row when cls_row >= 0
std::pair<Tensor, AttentionRecord> attention_sublayer(const Tensor& x, const AttnParams& p,
                                                      int cls_row, bool causal);
Tensor mlp_sublayer(const Tensor& x, const MlpParams& p);

// full MHSA block: attention sublayer then MLP sublayer
std::pair<TokenSet, AttentionRecord> mhsa_block_forward(const TokenSet& ts, const BlockParams& p);

GuideOutput guide_forward(const Image& low_res, const GuideParams& p);

// queries = image tokens plus the fine class token; keys/values = the guide
// class token plus guide tokens, projected into the token width
TokenSet cross_attention(const TokenSet& ts, const GuideOutput& guide, const CrossAttnParams& p);

struct SpatialStageResult {
  TokenSet tokens;
  std::vector<AttentionRecord> attention_history;
  StageTrace trace;
};

SpatialStageResult spatial_stage_forward(const TokenSet& freq_tokens, const Image& low_res,
                                         const SpatialStageParams& params, ChoiceCache* cache = nullptr);

}  // namespace mlip
