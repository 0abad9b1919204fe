#pragma once

#include <string>
#include <vector>

#include "vlpre/adam.hpp"
#include "vlpre/corpus.hpp"
#include "vlpre/model.hpp"
#include "vlpre/rng.hpp"
#include "vlpre/tokenizer.hpp"

namespace vlpre {

enum class TextMaskAction { mask_token, random_token, keep };
enum class VisualMaskAction { zero, keep };

struct MaskConfig {
  double text_mask_prob = 0.15;
  double mask_action_prob = 0.80;    // -> [MASK]
  double random_action_prob = 0.10;  // -> random vocab token; remainder kept
  double visual_mask_prob = 0.15;
  double visual_zero_prob = 0.90;  // remainder kept
  // guarantee at least one text mask so the MLM loss is always defined
  bool force_text_mask = true;
};

struct TextMask {
  int index = 0;  // position in the token sequence
  TextMaskAction action = TextMaskAction::mask_token;
  int replacement_id = -1;  // drawn at plan time for random_token
};

struct VisualMask {
  int index = 0;  // RoI index
  VisualMaskAction action = VisualMaskAction::zero;
};

struct MaskPlan {
  std::vector<TextMask> text;
  std::vector<VisualMask> visual;
};

// Draws a plan for one pair. Text tokens are visited in index order; each
// eligible (non-[CLS]/[SEP]/[PAD]) token draws one uniform for selection and,
// when selected, one more for the action (plus a replacement id for
// random_token, rejection-sampled to a non-special token). Visual tokens
// follow with the same two-draw scheme. The force-one floor, when triggered,
// picks one eligible index uniformly and draws its action normally.
MaskPlan plan_masks(const TokenSequence& seq, int num_visual, const Vocab& vocab, Rng& rng,
                    const MaskConfig& cfg = {});

// Masked copies of the inputs. Text substitutes ids at masked indices;
// visual zeroes the feature vector only — class labels, boxes (and thus the
// geometry embedding) survive.
TokenSequence apply_text_mask(const TokenSequence& seq, const MaskPlan& plan,
                              const Vocab& vocab);
VisualTokenSet apply_visual_mask(const VisualTokenSet& v, const MaskPlan& plan);

struct PairSample {
  std::string image_id;
  TokenSequence seq;      // original, unmasked
  VisualTokenSet visual;  // original features
  int label = 1;          // 1 = matching pair
  MaskPlan plan;
};

struct PairBatch {
  std::vector<PairSample> samples;
};

// Assembles positives from the chosen records, then one negative per
// ceil(positives * negative_ratio) by rotating captions within the batch so
// every negative's text comes from a different image. Mask plans are drawn
// per sample from rng streams derived by sample index.
PairBatch build_pair_batch(const Dataset& ds, const std::vector<int>& record_ids,
                           const Vocab& vocab, const ModelConfig& cfg, Rng& rng,
                           const MaskConfig& mask_cfg = {}, double negative_ratio = 1.0);

struct TaskToggles {
  bool mlm = true, moc = true, mrfr = true, itm = true;
};

struct PretrainLosses {
  Tensor mlm, moc, mrfr, itm;  // scalar tensors (exact zeros when undefined)
  Tensor total;
  // a mask loss is undefined when no eligible positions survive the
  // conditional mask (e.g. all pairs negative)
  bool mlm_defined = false, moc_defined = false, mrfr_defined = false;
};

// Runs the joint forward once per sample and assembles all four losses.
// MLM/MOC are means over masked positions, MRFR is a plain sum of squared
// errors, ITM is a mean over every pair. The conditional mask restricts
// MLM/MOC/MRFR to label-1 pairs; ITM always sees the whole batch.
PretrainLosses pretrain_losses(const PairBatch& batch, const ModelParams& params,
                               Mode mode, Rng& rng, const Vocab& vocab,
                               const TaskToggles& tasks = {});

struct StepReport {
  int step = 0;
  int stage = 0;
  double mlm = 0, moc = 0, mrfr = 0, itm = 0, total = 0;
  double lr = 0;

  std::string to_json_line() const;
};

// One optimizer step: zero grads, forward, backward, Adam update.
// Non-finite totals throw std::runtime_error carrying a batch dump.
StepReport pretrain_step(const PairBatch& batch, const ModelParams& params, Adam& opt,
                         Rng& rng, const Vocab& vocab, const TaskToggles& tasks, int step,
                         int stage);

}  // namespace vlpre
