#pragma once

#include <string>
#include <vector>

#include "vlpre/adam.hpp"
#include "vlpre/corpus.hpp"
#include "vlpre/model.hpp"
#include "vlpre/rng.hpp"
#include "vlpre/tokenizer.hpp"

namespace vlpre {

enum class Direction { image_to_text, text_to_image };

std::string to_string(Direction d);

// One ranking problem: an anchor record plus P candidate records, exactly one
// of which is the anchor's true counterpart. For image_to_text the anchor
// contributes the image and candidates contribute captions; text_to_image is
// the mirror image.
struct RetrievalGroup {
  Direction direction = Direction::image_to_text;
  int anchor_record = -1;
  std::vector<int> candidate_records;  // size P, shuffled
  int positive_index = -1;             // where anchor_record sits in candidates
};

// One group per record: P-1 negatives drawn uniformly without replacement
// from the other records, then the candidate order is shuffled.
std::vector<RetrievalGroup> build_groups(const Dataset& ds, int P, Direction dir, Rng& rng);

// Raw (pre-sigmoid) similarity scores for the P pairings of a group, 1 x P.
// No masking is applied to either modality.
Tensor group_scores(const Dataset& ds, const RetrievalGroup& g, const ModelParams& params,
                    const Vocab& vocab, Mode mode, Rng& rng);

// Mean binary CE over the P sigmoid scores: y=1 at the positive, 0 elsewhere.
Tensor binary_loss_from_scores(const Tensor& raw_scores, int positive_index);
// Softmax CE over the P raw scores with the positive as the true class.
Tensor ce_loss_from_scores(const Tensor& raw_scores, int positive_index);
// max(0, margin - s+ + s_hardest); the hardest negative is the argmax over
// negatives, held constant during differentiation.
Tensor triplet_loss_from_scores(const Tensor& raw_scores, int positive_index, double margin);

struct FinetuneLossConfig {
  bool binary = true;  // strongest single loss in practice, so the default
  bool ce = false;
  bool triplet = false;
  double margin = 0.2;

  void validate() const;  // non-empty combo, margin > 0 when triplet set
};

struct FinetuneStepReport {
  int step = 0;
  Direction direction = Direction::image_to_text;
  double binary = 0, ce = 0, triplet = 0, total = 0;
  double lr = 0;

  std::string to_json_line() const;
};

// One optimizer step over a batch of groups (all one direction): per-group
// selected losses are summed, averaged over groups, backpropagated.
FinetuneStepReport finetune_step(const Dataset& ds, const std::vector<RetrievalGroup>& groups,
                                 const ModelParams& params, Adam& opt, const Vocab& vocab,
                                 const FinetuneLossConfig& cfg, Rng& rng, int step);

}  // namespace vlpre
