#pragma once

#include <map>
#include <set>
#include <string>
#include <vector>

#include "mlip/align.hpp"
#include "mlip/spatial.hpp"
#include "mlip/spectral.hpp"
#include "mlip/tensor.hpp"

namespace mlip {

struct GuideConfig {
  int image_size = 16;
  int patch_size = 8;
  int width = 32;
  int depth = 2;
  int heads = 2;
};

struct TextConfig {
  int vocab_size = 32;
  int context = 16;
  int width = 64;
  int depth = 2;
  int heads = 4;
};

struct SpatialBlockSpec {
  bool accel = false;
  double keep_ratio = 1.0;
};

struct ModelConfig {
  int image_size = 32;
  int patch_size = 4;
  int embed_dim = 64;
  int heads = 4;
  int freq_blocks = 2;
  std::vector<SpatialBlockSpec> spatial_schedule;
  int lego_pieces = 4;
  GuideConfig guide;
  TextConfig text;
  int proj_dim = 64;
  double tau_init = 0.07;

  int grid_side() const { return image_size / patch_size; }
  int token_count() const { return grid_side() * grid_side(); }
};

void validate_model_config(const ModelConfig& cfg);

// closed-form parameter count for a config; the realized model must agree
long long expected_param_count(const ModelConfig& cfg);

// Every learnable tensor, hierarchically named. Iteration order is the
// creation order; checkpoints serialize by sorted name.
struct ModelState {
  std::map<std::string, Tensor> params;
  std::vector<std::string> creation_order;
  std::set<std::string> no_decay;

  Tensor& add(const std::string& name, const Shape& shape, bool decay);
  Tensor& param(const std::string& name);
  const Tensor& param(const std::string& name) const;
  long long total_count() const;
};

struct ImageEncoding {
  TokenSet freq_tokens;
  TokenSet spatial_tokens;
  Tensor y_fre;  // 1 x proj_dim, unit norm
  Tensor y_spa;  // 1 x proj_dim, unit norm
  Tensor freq_token_emb;     // l1 x proj_dim
  Tensor spatial_token_emb;  // l3 x proj_dim (class token excluded)
  StageTrace trace;
  std::vector<AttentionRecord> attention_history;
};

struct TextEncoding {
  Tensor token_emb;  // l2 x proj_dim, non-padded positions only
  Tensor z;          // 1 x proj_dim, unit norm
  int length = 0;
};

class MlipModel {
 public:
  MlipModel(const ModelConfig& cfg, uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  ModelState& state() { return state_; }
  const ModelState& state() const { return state_; }

  // learnable temperature, clamped to [0.01, 100] after optimizer steps
  Tensor temperature();

  ImageEncoding encode_image(const Image& image, const Image& low_res, ChoiceCache* cache = nullptr);
  TextEncoding encode_text(const std::vector<int>& token_ids);

  FourierBlockParams fourier_block(int i);
  SpatialStageParams spatial_stage();

 private:
  void init_params(uint64_t seed);
  AttnParams attn_params(const std::string& prefix, int heads);
  MlpParams mlp_params(const std::string& prefix);
  CrossAttnParams cross_params(const std::string& prefix, int heads);

  ModelConfig cfg_;
  ModelState state_;
};

// pad token id 0, end-of-caption id 1; non-padded length of a caption
int caption_length(const std::vector<int>& ids);

}  // namespace mlip
