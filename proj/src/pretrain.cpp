#include "vlpre/pretrain.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace vlpre {

namespace op = vlpre::ops;

MaskPlan plan_masks(const TokenSequence& seq, int num_visual, const Vocab& vocab, Rng& rng,
                    const MaskConfig& cfg) {
  MaskPlan plan;
  auto eligible = [&](int i) {
    if (!seq.attention_mask[i]) return false;
    int id = seq.token_ids[i];
    return id != Vocab::kPad && id != vocab.cls_id() && id != vocab.sep_id();
  };
  auto draw_replacement = [&] {
    while (true) {
      int id = static_cast<int>(rng.uniform_int(vocab.size()));
      if (!vocab.is_special(id)) return id;
    }
  };
  auto draw_text_action = [&](int index) {
    double a = rng.uniform();
    TextMask m;
    m.index = index;
    if (a < cfg.mask_action_prob) {
      m.action = TextMaskAction::mask_token;
    } else if (a < cfg.mask_action_prob + cfg.random_action_prob) {
      m.action = TextMaskAction::random_token;
      m.replacement_id = draw_replacement();
    } else {
      m.action = TextMaskAction::keep;
    }
    return m;
  };

  std::vector<int> candidates;
  for (int i = 0; i < seq.length(); ++i) {
    if (!eligible(i)) continue;
    candidates.push_back(i);
    if (rng.uniform() < cfg.text_mask_prob) plan.text.push_back(draw_text_action(i));
  }
  if (cfg.force_text_mask && plan.text.empty() && !candidates.empty()) {
    int pick = candidates[rng.uniform_int(candidates.size())];
    plan.text.push_back(draw_text_action(pick));
  }

  for (int i = 0; i < num_visual; ++i) {
    if (rng.uniform() < cfg.visual_mask_prob) {
      VisualMask m;
      m.index = i;
      m.action = rng.uniform() < cfg.visual_zero_prob ? VisualMaskAction::zero
                                                      : VisualMaskAction::keep;
      plan.visual.push_back(m);
    }
  }
  return plan;
}

TokenSequence apply_text_mask(const TokenSequence& seq, const MaskPlan& plan,
                              const Vocab& vocab) {
  TokenSequence out = seq;
  for (const auto& m : plan.text) {
    switch (m.action) {
      case TextMaskAction::mask_token:
        out.token_ids[m.index] = vocab.mask_id();
        break;
      case TextMaskAction::random_token:
        out.token_ids[m.index] = m.replacement_id;
        break;
      case TextMaskAction::keep:
        break;
    }
  }
  return out;
}

VisualTokenSet apply_visual_mask(const VisualTokenSet& v, const MaskPlan& plan) {
  VisualTokenSet out = v;
  for (const auto& m : plan.visual) {
    if (m.action != VisualMaskAction::zero) continue;
    for (int j = 0; j < v.d_v; ++j) out.features[static_cast<size_t>(m.index) * v.d_v + j] = 0.0;
  }
  return out;
}

PairBatch build_pair_batch(const Dataset& ds, const std::vector<int>& record_ids,
                           const Vocab& vocab, const ModelConfig& cfg, Rng& rng,
                           const MaskConfig& mask_cfg, double negative_ratio) {
  if (record_ids.empty()) throw std::invalid_argument("build_pair_batch: empty batch");
  if (negative_ratio < 0.0)
    throw std::invalid_argument("build_pair_batch: negative_ratio must be >= 0");
  const int b = static_cast<int>(record_ids.size());
  int negatives = static_cast<int>(std::ceil(b * negative_ratio));
  if (negatives > 0 && b < 2)
    throw std::invalid_argument(
        "build_pair_batch: need at least two records to form within-batch negatives");

  PairBatch batch;
  for (int id : record_ids) {
    const auto& rec = ds.records.at(id);
    PairSample s;
    s.image_id = rec.image_id;
    s.seq = tokenize(rec.caption, vocab, cfg.max_text_len);
    s.visual = corpus::visual_tokens(rec, ds.features);
    s.label = 1;
    batch.samples.push_back(std::move(s));
  }
  if (negatives > 0) {
    // rotate captions so each negative pairs an image with some other
    // image's text
    int shift = 1 + static_cast<int>(rng.uniform_int(static_cast<uint64_t>(b - 1)));
    for (int i = 0; i < negatives; ++i) {
      int img = i % b;
      int txt = (img + shift) % b;
      const auto& img_rec = ds.records.at(record_ids[img]);
      const auto& txt_rec = ds.records.at(record_ids[txt]);
      PairSample s;
      s.image_id = img_rec.image_id;
      s.seq = tokenize(txt_rec.caption, vocab, cfg.max_text_len);
      s.visual = corpus::visual_tokens(img_rec, ds.features);
      s.label = 0;
      batch.samples.push_back(std::move(s));
    }
  }
  for (size_t i = 0; i < batch.samples.size(); ++i) {
    Rng plan_rng = rng.derive(i);
    auto& s = batch.samples[i];
    s.plan = plan_masks(s.seq, s.visual.o, vocab, plan_rng, mask_cfg);
  }
  return batch;
}

PretrainLosses pretrain_losses(const PairBatch& batch, const ModelParams& params, Mode mode,
                               Rng& rng, const Vocab& vocab, const TaskToggles& tasks) {
  if (batch.samples.empty()) throw std::invalid_argument("pretrain_losses: empty batch");
  const auto& cfg = params.config;

  Tensor mlm_sum, moc_sum, mrfr_sum, itm_sum;
  int mlm_count = 0, moc_count = 0, itm_count = 0;
  long mrfr_entries = 0;
  auto accumulate = [](Tensor& acc, const Tensor& term) {
    acc = acc.defined() ? op::add(acc, term) : term;
  };

  for (const auto& s : batch.samples) {
    bool need_masks = s.label == 1 && (tasks.mlm || tasks.moc || tasks.mrfr);
    bool need_itm = tasks.itm;
    if (!need_masks && !need_itm) continue;

    auto masked_seq = apply_text_mask(s.seq, s.plan, vocab);
    auto masked_visual = apply_visual_mask(s.visual, s.plan);
    auto joint = model::build_joint(masked_seq, masked_visual, params, mode, rng);
    auto h = model::encode(joint.emb, joint.attention_mask, params, mode, rng);

    if (need_masks) {
      // conditional mask: only matching pairs contribute here
      if (tasks.mlm && !s.plan.text.empty()) {
        std::vector<int> rows, targets;
        for (const auto& m : s.plan.text) {
          rows.push_back(m.index);
          targets.push_back(s.seq.token_ids[m.index]);  // original id, pre-mask
        }
        auto logits = model::mlm_logits(op::gather_rows(h, rows), params);
        accumulate(mlm_sum, op::softmax_ce(logits, targets, Reduction::sum));
        mlm_count += static_cast<int>(rows.size());
      }
      if ((tasks.moc || tasks.mrfr) && !s.plan.visual.empty()) {
        std::vector<int> rows, labels;
        std::vector<double> target_feats;
        for (const auto& m : s.plan.visual) {
          rows.push_back(joint.text_len + m.index);
          labels.push_back(s.visual.class_labels[m.index]);
          for (int j = 0; j < s.visual.d_v; ++j)
            target_feats.push_back(
                s.visual.features[static_cast<size_t>(m.index) * s.visual.d_v + j]);
        }
        auto hidden = op::gather_rows(h, rows);
        if (tasks.moc) {
          for (int l : labels) {
            if (l < 0 || l >= cfg.num_classes)
              throw std::out_of_range("pretrain: class label " + std::to_string(l) +
                                      " outside [0, " + std::to_string(cfg.num_classes) +
                                      ")");
          }
          auto logits = model::moc_logits(hidden, params);
          accumulate(moc_sum, op::softmax_ce(logits, labels, Reduction::sum));
          moc_count += static_cast<int>(labels.size());
        }
        if (tasks.mrfr) {
          auto pred = model::mrfr_pred(hidden, params);
          auto target =
              Tensor::from({static_cast<int>(rows.size()), s.visual.d_v}, target_feats);
          accumulate(mrfr_sum, op::l2_loss(pred, target));
          mrfr_entries += static_cast<long>(rows.size()) * s.visual.d_v;
        }
      }
    }
    if (need_itm) {
      auto cls = op::gather_rows(h, {0});
      auto score = model::itm_score(cls, params);
      accumulate(itm_sum, op::binary_ce(score, {s.label}, Reduction::sum));
      ++itm_count;
    }
  }

  PretrainLosses out;
  auto zero = Tensor::scalar(0.0);
  out.mlm = mlm_count > 0 ? op::scale(mlm_sum, 1.0 / mlm_count) : zero;
  out.mlm_defined = mlm_count > 0;
  out.moc = moc_count > 0 ? op::scale(moc_sum, 1.0 / moc_count) : zero;
  out.moc_defined = moc_count > 0;
  // mean over masked feature entries keeps the regression term on the same
  // footing as the classification losses in the shared encoder's updates
  out.mrfr = mrfr_entries > 0 ? op::scale(mrfr_sum, 1.0 / static_cast<double>(mrfr_entries))
                              : zero;
  out.mrfr_defined = mrfr_entries > 0;
  out.itm = itm_count > 0 ? op::scale(itm_sum, 1.0 / itm_count) : zero;

  Tensor total;
  auto add_term = [&](bool enabled, const Tensor& t) {
    if (!enabled) return;
    total = total.defined() ? op::add(total, t) : t;
  };
  add_term(tasks.mlm && out.mlm_defined, out.mlm);
  add_term(tasks.moc && out.moc_defined, out.moc);
  add_term(tasks.mrfr && out.mrfr_defined, out.mrfr);
  add_term(tasks.itm && itm_count > 0, out.itm);
  out.total = total.defined() ? total : zero;
  return out;
}

std::string StepReport::to_json_line() const {
  nlohmann::json j;
  j["step"] = step;
  j["stage"] = stage;
  j["mlm"] = mlm;
  j["moc"] = moc;
  j["mrfr"] = mrfr;
  j["itm"] = itm;
  j["total"] = total;
  j["lr"] = lr;
  return j.dump();
}

StepReport pretrain_step(const PairBatch& batch, const ModelParams& params, Adam& opt,
                         Rng& rng, const Vocab& vocab, const TaskToggles& tasks, int step,
                         int stage) {
  params.zero_grads();
  auto losses = pretrain_losses(batch, params, Mode::train, rng, vocab, tasks);
  double total = losses.total.item();
  if (!std::isfinite(total)) {
    std::ostringstream dump;
    dump << "pretrain_step: non-finite total loss at step " << step << " (mlm="
         << losses.mlm.item() << " moc=" << losses.moc.item() << " mrfr="
         << losses.mrfr.item() << " itm=" << losses.itm.item() << "); batch:";
    for (const auto& s : batch.samples) {
      dump << " {" << s.image_id << " y=" << s.label << " masks=" << s.plan.text.size()
           << "/" << s.plan.visual.size() << "}";
    }
    throw std::runtime_error(dump.str());
  }
  if (losses.total.requires_grad()) {
    backward(losses.total);
    opt.step(params.trainable());
  }
  StepReport rep;
  rep.step = step;
  rep.stage = stage;
  rep.mlm = losses.mlm.item();
  rep.moc = losses.moc.item();
  rep.mrfr = losses.mrfr.item();
  rep.itm = losses.itm.item();
  rep.total = total;
  rep.lr = opt.config().lr;
  return rep;
}

}  // namespace vlpre
