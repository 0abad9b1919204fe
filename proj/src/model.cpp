#include "vlpre/model.hpp"

#include <cmath>
#include <stdexcept>

#include "json.hpp"

namespace vlpre {

namespace op = vlpre::ops;

void ModelConfig::validate() const {
  auto fail = [](const std::string& what) {
    throw std::invalid_argument("model config: " + what);
  };
  if (layers < 1) fail("layers must be >= 1");
  if (hidden < 1 || intermediate < 1) fail("hidden/intermediate must be >= 1");
  if (heads < 1 || hidden % heads != 0)
    fail("hidden (" + std::to_string(hidden) + ") must be divisible by heads (" +
         std::to_string(heads) + ")");
  if (dropout < 0.0 || dropout >= 1.0) fail("dropout must be in [0, 1)");
  if (vocab_size < 5) fail("vocab_size must cover the special tokens");
  if (max_text_len < 3) fail("max_text_len must be >= 3");
  if (num_visual_tokens < 1) fail("num_visual_tokens must be >= 1");
  if (d_v < 1) fail("d_v must be >= 1");
  if (num_classes < 2) fail("num_classes must be >= 2");
  if (joint_len() > max_seq_len)
    fail("max_text_len + visual tokens (" + std::to_string(joint_len()) +
         ") exceeds max_seq_len (" + std::to_string(max_seq_len) + ")");
  if (ln_eps <= 0.0) fail("ln_eps must be positive");
}

std::string ModelConfig::to_json() const {
  nlohmann::json j;
  j["layers"] = layers;
  j["hidden"] = hidden;
  j["intermediate"] = intermediate;
  j["heads"] = heads;
  j["dropout"] = dropout;
  j["max_seq_len"] = max_seq_len;
  j["max_text_len"] = max_text_len;
  j["num_visual_tokens"] = num_visual_tokens;
  j["d_v"] = d_v;
  j["vocab_size"] = vocab_size;
  j["num_classes"] = num_classes;
  j["use_global_feature"] = use_global_feature;
  j["ln_eps"] = ln_eps;
  return j.dump(2);
}

ModelConfig ModelConfig::from_json(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  ModelConfig c;
  c.layers = j.value("layers", c.layers);
  c.hidden = j.value("hidden", c.hidden);
  c.intermediate = j.value("intermediate", c.intermediate);
  c.heads = j.value("heads", c.heads);
  c.dropout = j.value("dropout", c.dropout);
  c.max_seq_len = j.value("max_seq_len", c.max_seq_len);
  c.max_text_len = j.value("max_text_len", c.max_text_len);
  c.num_visual_tokens = j.value("num_visual_tokens", c.num_visual_tokens);
  c.d_v = j.value("d_v", c.d_v);
  c.vocab_size = j.value("vocab_size", c.vocab_size);
  c.num_classes = j.value("num_classes", c.num_classes);
  c.use_global_feature = j.value("use_global_feature", c.use_global_feature);
  c.ln_eps = j.value("ln_eps", c.ln_eps);
  c.validate();
  return c;
}

namespace {

// dimension-aware init keeps activation and attention-logit scale healthy
// across model widths, so small configurations train as readily as large ones
Tensor weight(std::vector<int> shape, Rng& rng) {
  const double fan_in = shape[0], fan_out = shape[1];
  const double std = std::sqrt(2.0 / (fan_in + fan_out));
  return Tensor::truncated_normal(std::move(shape), rng, std, /*requires_grad=*/true);
}

// lookup tables are gathered, not multiplied; scale rows to unit-ish norm
// relative to the hidden size instead of by fan-in
Tensor table(std::vector<int> shape, Rng& rng) {
  const double std = 1.0 / std::sqrt(static_cast<double>(shape[1]));
  return Tensor::truncated_normal(std::move(shape), rng, std, /*requires_grad=*/true);
}

Tensor bias(int n) { return Tensor::zeros({n}, /*requires_grad=*/true); }

Tensor ln_gain(int n) { return Tensor::full({n}, 1.0, /*requires_grad=*/true); }

}  // namespace

ModelParams ModelParams::init(const ModelConfig& cfg, Rng& rng) {
  cfg.validate();
  const int d = cfg.hidden;
  ModelParams p;
  p.config = cfg;
  p.word_emb = table({cfg.vocab_size, d}, rng);
  p.segment_emb = table({2, d}, rng);
  p.pos_emb = table({cfg.max_text_len + 1, d}, rng);
  p.emb_ln_g = ln_gain(d);
  p.emb_ln_b = bias(d);
  p.visual_proj_w = weight({cfg.d_v, d}, rng);
  p.visual_proj_b = bias(d);
  p.geom_proj_w = weight({5, d}, rng);
  p.geom_proj_b = bias(d);
  p.layers.reserve(cfg.layers);
  for (int l = 0; l < cfg.layers; ++l) {
    LayerParams lp;
    lp.q_w = weight({d, d}, rng);
    lp.q_b = bias(d);
    lp.k_w = weight({d, d}, rng);
    lp.k_b = bias(d);
    lp.v_w = weight({d, d}, rng);
    lp.v_b = bias(d);
    lp.out_w = weight({d, d}, rng);
    lp.out_b = bias(d);
    lp.attn_ln_g = ln_gain(d);
    lp.attn_ln_b = bias(d);
    lp.ffn_in_w = weight({d, cfg.intermediate}, rng);
    lp.ffn_in_b = bias(cfg.intermediate);
    lp.ffn_out_w = weight({cfg.intermediate, d}, rng);
    lp.ffn_out_b = bias(d);
    lp.ffn_ln_g = ln_gain(d);
    lp.ffn_ln_b = bias(d);
    p.layers.push_back(std::move(lp));
  }
  p.mlm_w = weight({d, cfg.vocab_size}, rng);
  p.mlm_b = bias(cfg.vocab_size);
  p.moc_w = weight({d, cfg.num_classes}, rng);
  p.moc_b = bias(cfg.num_classes);
  p.mrfr_w = weight({d, cfg.d_v}, rng);
  p.mrfr_b = bias(cfg.d_v);
  p.itm_w = weight({d, 1}, rng);
  p.itm_b = bias(1);
  return p;
}

checkpoint::NamedTensors ModelParams::named() const {
  checkpoint::NamedTensors out;
  out.emplace_back("embeddings.word", word_emb);
  out.emplace_back("embeddings.segment", segment_emb);
  out.emplace_back("embeddings.position", pos_emb);
  out.emplace_back("embeddings.ln.gain", emb_ln_g);
  out.emplace_back("embeddings.ln.bias", emb_ln_b);
  out.emplace_back("visual.proj.w", visual_proj_w);
  out.emplace_back("visual.proj.b", visual_proj_b);
  out.emplace_back("visual.geom.w", geom_proj_w);
  out.emplace_back("visual.geom.b", geom_proj_b);
  for (size_t l = 0; l < layers.size(); ++l) {
    const auto& lp = layers[l];
    std::string pre = "encoder." + std::to_string(l) + ".";
    out.emplace_back(pre + "attn.q.w", lp.q_w);
    out.emplace_back(pre + "attn.q.b", lp.q_b);
    out.emplace_back(pre + "attn.k.w", lp.k_w);
    out.emplace_back(pre + "attn.k.b", lp.k_b);
    out.emplace_back(pre + "attn.v.w", lp.v_w);
    out.emplace_back(pre + "attn.v.b", lp.v_b);
    out.emplace_back(pre + "attn.out.w", lp.out_w);
    out.emplace_back(pre + "attn.out.b", lp.out_b);
    out.emplace_back(pre + "attn.ln.gain", lp.attn_ln_g);
    out.emplace_back(pre + "attn.ln.bias", lp.attn_ln_b);
    out.emplace_back(pre + "ffn.in.w", lp.ffn_in_w);
    out.emplace_back(pre + "ffn.in.b", lp.ffn_in_b);
    out.emplace_back(pre + "ffn.out.w", lp.ffn_out_w);
    out.emplace_back(pre + "ffn.out.b", lp.ffn_out_b);
    out.emplace_back(pre + "ffn.ln.gain", lp.ffn_ln_g);
    out.emplace_back(pre + "ffn.ln.bias", lp.ffn_ln_b);
  }
  out.emplace_back("heads.mlm.w", mlm_w);
  out.emplace_back("heads.mlm.b", mlm_b);
  out.emplace_back("heads.moc.w", moc_w);
  out.emplace_back("heads.moc.b", moc_b);
  out.emplace_back("heads.mrfr.w", mrfr_w);
  out.emplace_back("heads.mrfr.b", mrfr_b);
  out.emplace_back("heads.itm.w", itm_w);
  out.emplace_back("heads.itm.b", itm_b);
  return out;
}

std::vector<Tensor> ModelParams::trainable() const {
  std::vector<Tensor> out;
  for (auto& [name, t] : named()) out.push_back(t);
  return out;
}

int64_t ModelParams::parameter_count() const {
  int64_t total = 0;
  for (auto& [name, t] : named()) total += static_cast<int64_t>(t.data().size());
  return total;
}

void ModelParams::zero_grads() const {
  for (auto& [name, t] : named()) t.zero_grad();
}

ModelParams ModelParams::eval_copy() const {
  ModelParams out;
  out.config = config;
  auto det = [](const Tensor& t) { return t.detached(); };
  out.word_emb = det(word_emb);
  out.segment_emb = det(segment_emb);
  out.pos_emb = det(pos_emb);
  out.emb_ln_g = det(emb_ln_g);
  out.emb_ln_b = det(emb_ln_b);
  out.visual_proj_w = det(visual_proj_w);
  out.visual_proj_b = det(visual_proj_b);
  out.geom_proj_w = det(geom_proj_w);
  out.geom_proj_b = det(geom_proj_b);
  for (const auto& lp : layers) {
    LayerParams o;
    o.q_w = det(lp.q_w);
    o.q_b = det(lp.q_b);
    o.k_w = det(lp.k_w);
    o.k_b = det(lp.k_b);
    o.v_w = det(lp.v_w);
    o.v_b = det(lp.v_b);
    o.out_w = det(lp.out_w);
    o.out_b = det(lp.out_b);
    o.attn_ln_g = det(lp.attn_ln_g);
    o.attn_ln_b = det(lp.attn_ln_b);
    o.ffn_in_w = det(lp.ffn_in_w);
    o.ffn_in_b = det(lp.ffn_in_b);
    o.ffn_out_w = det(lp.ffn_out_w);
    o.ffn_out_b = det(lp.ffn_out_b);
    o.ffn_ln_g = det(lp.ffn_ln_g);
    o.ffn_ln_b = det(lp.ffn_ln_b);
    out.layers.push_back(std::move(o));
  }
  out.mlm_w = det(mlm_w);
  out.mlm_b = det(mlm_b);
  out.moc_w = det(moc_w);
  out.moc_b = det(moc_b);
  out.mrfr_w = det(mrfr_w);
  out.mrfr_b = det(mrfr_b);
  out.itm_w = det(itm_w);
  out.itm_b = det(itm_b);
  return out;
}

namespace model {

std::array<double, 5> geometry_vector(const std::array<double, 4>& box, double width,
                                      double height) {
  if (width <= 0 || height <= 0)
    throw std::invalid_argument("geometry_vector: image size must be positive");
  const double dx = box[2] - box[0], dy = box[3] - box[1];
  return {box[0] / width, box[1] / height, box[2] / width, box[3] / height,
          (dx * dy) / (width * height)};
}

Tensor embed_text(const TokenSequence& seq, const ModelParams& p, Mode mode, Rng& rng) {
  const auto& cfg = p.config;
  if (seq.length() != cfg.max_text_len)
    throw std::invalid_argument("embed_text: sequence length " +
                                std::to_string(seq.length()) + " != max_text_len " +
                                std::to_string(cfg.max_text_len));
  for (int id : seq.token_ids) {
    if (id < 0 || id >= cfg.vocab_size)
      throw std::out_of_range("embed_text: token id " + std::to_string(id) +
                              " outside vocab of " + std::to_string(cfg.vocab_size));
  }
  for (int pos : seq.positions) {
    if (pos < 0 || pos >= cfg.max_text_len)
      throw std::invalid_argument("embed_text: position " + std::to_string(pos) +
                                  " >= max_text_len " + std::to_string(cfg.max_text_len));
  }
  auto w = op::embedding_lookup(p.word_emb, seq.token_ids);
  auto s = op::embedding_lookup(p.segment_emb, seq.segment_ids);
  auto pos = op::embedding_lookup(p.pos_emb, seq.positions);
  auto summed = op::add(op::add(w, s), pos);
  auto normed = op::layer_norm(summed, p.emb_ln_g, p.emb_ln_b, cfg.ln_eps);
  return op::dropout(normed, cfg.dropout, mode, rng);
}

Tensor embed_visual(const VisualTokenSet& v, const ModelParams& p, Mode mode, Rng& rng) {
  const auto& cfg = p.config;
  if (v.o < 1) throw std::invalid_argument("embed_visual: need at least one RoI");
  if (v.d_v != cfg.d_v)
    throw std::invalid_argument("embed_visual: feature dim " + std::to_string(v.d_v) +
                                " != configured d_v " + std::to_string(cfg.d_v));
  if (v.o > cfg.num_visual_tokens)
    throw std::invalid_argument("embed_visual: " + std::to_string(v.o) +
                                " RoIs exceed num_visual_tokens " +
                                std::to_string(cfg.num_visual_tokens));
  if (static_cast<int>(v.features.size()) != v.o * v.d_v)
    throw std::invalid_argument("embed_visual: feature buffer size mismatch");
  if (cfg.use_global_feature && !v.global_feature)
    throw std::invalid_argument("embed_visual: config expects a global feature");

  const int rows = v.o + (cfg.use_global_feature ? 1 : 0);
  std::vector<double> feat = v.features;
  std::vector<double> geom;
  geom.reserve(static_cast<size_t>(rows) * 5);
  for (int i = 0; i < v.o; ++i) {
    auto g = geometry_vector(v.boxes[i], v.width, v.height);
    geom.insert(geom.end(), g.begin(), g.end());
  }
  if (cfg.use_global_feature) {
    if (static_cast<int>(v.global_feature->size()) != cfg.d_v)
      throw std::invalid_argument("embed_visual: global feature dim mismatch");
    feat.insert(feat.end(), v.global_feature->begin(), v.global_feature->end());
    geom.insert(geom.end(), {0, 0, 1, 1, 1});
  }

  auto features = Tensor::from({rows, cfg.d_v}, feat);
  auto geometry = Tensor::from({rows, 5}, geom);
  auto obj = op::linear(features, p.visual_proj_w, p.visual_proj_b);
  auto pos_img = op::linear(geometry, p.geom_proj_w, p.geom_proj_b);
  auto seg = op::embedding_lookup(p.segment_emb, std::vector<int>(rows, 1));
  auto pos_seq =
      op::embedding_lookup(p.pos_emb, std::vector<int>(rows, cfg.max_text_len));
  auto summed = op::add(op::add(obj, seg), op::add(pos_img, pos_seq));
  auto normed = op::layer_norm(summed, p.emb_ln_g, p.emb_ln_b, cfg.ln_eps);
  return op::dropout(normed, cfg.dropout, mode, rng);
}

JointInput build_joint(const TokenSequence& seq, const VisualTokenSet& v,
                       const ModelParams& p, Mode mode, Rng& rng) {
  JointInput out;
  auto text = embed_text(seq, p, mode, rng);
  auto vis = embed_visual(v, p, mode, rng);
  out.text_len = text.shape()[0];
  out.visual_len = vis.shape()[0];
  out.emb = op::concat_rows({text, vis});
  out.attention_mask.assign(seq.attention_mask.begin(), seq.attention_mask.end());
  out.attention_mask.insert(out.attention_mask.end(), out.visual_len, 1);
  return out;
}

Tensor encode(const Tensor& emb, const std::vector<char>& attention_mask,
              const ModelParams& p, Mode mode, Rng& rng) {
  const auto& cfg = p.config;
  const int L = emb.shape()[0];
  if (static_cast<int>(attention_mask.size()) != L)
    throw std::invalid_argument("encode: mask length " +
                                std::to_string(attention_mask.size()) +
                                " != sequence length " + std::to_string(L));
  if (L > cfg.max_seq_len)
    throw std::invalid_argument("encode: sequence length " + std::to_string(L) +
                                " exceeds max_seq_len " + std::to_string(cfg.max_seq_len));

  // additive key mask, one shared row: 0 for real keys, -1e30 for padding
  constexpr double kMaskedLogit = -1e30;
  std::vector<double> mask_vals(static_cast<size_t>(L) * L, 0.0);
  for (int i = 0; i < L; ++i)
    for (int j = 0; j < L; ++j)
      if (!attention_mask[j]) mask_vals[static_cast<size_t>(i) * L + j] = kMaskedLogit;
  auto mask = Tensor::from({L, L}, mask_vals);

  const int dh = cfg.head_dim();
  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));
  Tensor x = emb;
  for (const auto& lp : p.layers) {
    auto q = op::linear(x, lp.q_w, lp.q_b);
    auto k = op::linear(x, lp.k_w, lp.k_b);
    auto v = op::linear(x, lp.v_w, lp.v_b);
    std::vector<Tensor> ctx;
    ctx.reserve(cfg.heads);
    for (int h = 0; h < cfg.heads; ++h) {
      auto qh = op::slice_cols(q, h * dh, dh);
      auto kh = op::slice_cols(k, h * dh, dh);
      auto vh = op::slice_cols(v, h * dh, dh);
      auto scores = op::add(op::scale(op::matmul_nt(qh, kh), inv_sqrt_dh), mask);
      auto probs = op::dropout(op::softmax_rows(scores), cfg.dropout, mode, rng);
      ctx.push_back(op::matmul(probs, vh));
    }
    auto attn = op::linear(op::concat_cols(ctx), lp.out_w, lp.out_b);
    attn = op::dropout(attn, cfg.dropout, mode, rng);
    x = op::layer_norm(op::add(x, attn), lp.attn_ln_g, lp.attn_ln_b, cfg.ln_eps);

    auto mid = op::gelu(op::linear(x, lp.ffn_in_w, lp.ffn_in_b));
    auto ffn = op::dropout(op::linear(mid, lp.ffn_out_w, lp.ffn_out_b), cfg.dropout, mode,
                           rng);
    x = op::layer_norm(op::add(x, ffn), lp.ffn_ln_g, lp.ffn_ln_b, cfg.ln_eps);
  }
  return x;
}

Tensor mlm_logits(const Tensor& rows, const ModelParams& p) {
  return op::linear(rows, p.mlm_w, p.mlm_b);
}

Tensor moc_logits(const Tensor& rows, const ModelParams& p) {
  return op::linear(rows, p.moc_w, p.moc_b);
}

Tensor mrfr_pred(const Tensor& rows, const ModelParams& p) {
  return op::linear(rows, p.mrfr_w, p.mrfr_b);
}

Tensor itm_raw(const Tensor& cls_row, const ModelParams& p) {
  if (cls_row.shape()[0] != 1)
    throw std::invalid_argument("itm_raw: expected a single hidden row");
  return op::linear(cls_row, p.itm_w, p.itm_b);
}

Tensor itm_score(const Tensor& cls_row, const ModelParams& p) {
  return op::sigmoid(itm_raw(cls_row, p));
}

}  // namespace model
}  // namespace vlpre
