#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "vlpre/checkpoint.hpp"
#include "vlpre/corpus.hpp"
#include "vlpre/ops.hpp"
#include "vlpre/rng.hpp"
#include "vlpre/tensor.hpp"
#include "vlpre/tokenizer.hpp"

namespace vlpre {

struct ModelConfig {
  int layers = 12;
  int hidden = 768;
  int intermediate = 3072;
  int heads = 12;
  double dropout = 0.1;
  int max_seq_len = 144;
  int max_text_len = 44;
  int num_visual_tokens = 100;  // o
  int d_v = 32;
  int vocab_size = 0;
  int num_classes = 16;  // K detector classes for the classification head
  bool use_global_feature = false;
  double ln_eps = 1e-12;

  void validate() const;  // throws std::invalid_argument
  int head_dim() const { return hidden / heads; }
  // joint sequence length: text + visual (+ optional global token)
  int joint_len() const {
    return max_text_len + num_visual_tokens + (use_global_feature ? 1 : 0);
  }

  std::string to_json() const;
  static ModelConfig from_json(const std::string& text);
};

struct LayerParams {
  Tensor q_w, q_b, k_w, k_b, v_w, v_b;
  Tensor out_w, out_b, attn_ln_g, attn_ln_b;
  Tensor ffn_in_w, ffn_in_b, ffn_out_w, ffn_out_b, ffn_ln_g, ffn_ln_b;
};

// The full parameter set. Tensor names in named() form the checkpoint
// contract; the list order is fixed by construction.
struct ModelParams {
  ModelConfig config;

  Tensor word_emb;      // vocab x d
  Tensor segment_emb;   // 2 x d (0 = text, 1 = visual)
  Tensor pos_emb;       // (max_text_len + 1) x d; last row = shared visual position
  Tensor emb_ln_g, emb_ln_b;
  Tensor visual_proj_w, visual_proj_b;  // d_v -> d
  Tensor geom_proj_w, geom_proj_b;      // 5 -> d
  std::vector<LayerParams> layers;
  Tensor mlm_w, mlm_b;    // d -> vocab
  Tensor moc_w, moc_b;    // d -> K
  Tensor mrfr_w, mrfr_b;  // d -> d_v
  Tensor itm_w, itm_b;    // d -> 1

  static ModelParams init(const ModelConfig& cfg, Rng& rng);

  checkpoint::NamedTensors named() const;
  std::vector<Tensor> trainable() const;
  int64_t parameter_count() const;
  void zero_grads() const;
  // Detached copy with requires_grad=false everywhere; forwards through it
  // build no autodiff graph (cheap scoring/eval).
  ModelParams eval_copy() const;
};

namespace model {

// (x_tl/W, y_tl/H, x_br/W, y_br/H, area ratio) — all in [0, 1].
std::array<double, 5> geometry_vector(const std::array<double, 4>& box, double width,
                                      double height);

// LN(word + segment + position) rows for one padded token sequence.
// seq length must be exactly config.max_text_len.
Tensor embed_text(const TokenSequence& seq, const ModelParams& p, Mode mode, Rng& rng);

// LN(projected feature + segment + projected geometry + shared dummy
// position) rows; the optional global token is appended last with geometry
// (0,0,1,1,1).
Tensor embed_visual(const VisualTokenSet& v, const ModelParams& p, Mode mode, Rng& rng);

// Joint input assembled from both modalities plus its key-attention mask.
struct JointInput {
  Tensor emb;                       // L x d
  std::vector<char> attention_mask;  // length L; 0 = padded key
  int text_len = 0;                  // = config.max_text_len
  int visual_len = 0;                // o (+1 with global token)
};

JointInput build_joint(const TokenSequence& seq, const VisualTokenSet& v,
                       const ModelParams& p, Mode mode, Rng& rng);

// Multi-layer bidirectional self-attention encoder (post-LN residual blocks,
// GELU MLPs). Masked keys receive an additive -1e30 logit.
Tensor encode(const Tensor& emb, const std::vector<char>& attention_mask,
              const ModelParams& p, Mode mode, Rng& rng);

// Task heads over selected hidden rows.
Tensor mlm_logits(const Tensor& rows, const ModelParams& p);  // n x vocab
Tensor moc_logits(const Tensor& rows, const ModelParams& p);  // n x K
Tensor mrfr_pred(const Tensor& rows, const ModelParams& p);   // n x d_v
Tensor itm_raw(const Tensor& cls_row, const ModelParams& p);  // 1 x 1, pre-sigmoid
Tensor itm_score(const Tensor& cls_row, const ModelParams& p);  // sigmoid(itm_raw)

}  // namespace model
}  // namespace vlpre
