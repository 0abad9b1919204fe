#include "vlpre/finetune.hpp"

#include <algorithm>
#include <stdexcept>

#include "json.hpp"

namespace vlpre {

namespace op = vlpre::ops;

std::string to_string(Direction d) {
  return d == Direction::image_to_text ? "image_to_text" : "text_to_image";
}

std::vector<RetrievalGroup> build_groups(const Dataset& ds, int P, Direction dir, Rng& rng) {
  const int n = static_cast<int>(ds.records.size());
  if (P < 2) throw std::invalid_argument("build_groups: P must be >= 2");
  if (n < P)
    throw std::invalid_argument("build_groups: corpus has " + std::to_string(n) +
                                " records, need at least P=" + std::to_string(P));
  std::vector<RetrievalGroup> groups;
  groups.reserve(n);
  for (int anchor = 0; anchor < n; ++anchor) {
    std::vector<int> others;
    others.reserve(n - 1);
    for (int i = 0; i < n; ++i)
      if (i != anchor) others.push_back(i);
    // partial Fisher-Yates: first P-1 entries are a uniform sample
    for (int i = 0; i < P - 1; ++i) {
      int j = i + static_cast<int>(rng.uniform_int(others.size() - i));
      std::swap(others[i], others[j]);
    }
    RetrievalGroup g;
    g.direction = dir;
    g.anchor_record = anchor;
    g.candidate_records.assign(others.begin(), others.begin() + (P - 1));
    g.candidate_records.push_back(anchor);
    rng.shuffle(g.candidate_records);
    for (int i = 0; i < P; ++i)
      if (g.candidate_records[i] == anchor) g.positive_index = i;
    groups.push_back(std::move(g));
  }
  return groups;
}

namespace {

Tensor pair_score_raw(const Dataset& ds, int image_record, int text_record,
                      const ModelParams& params, const Vocab& vocab, Mode mode, Rng& rng) {
  const auto& img = ds.records.at(image_record);
  const auto& txt = ds.records.at(text_record);
  auto seq = tokenize(txt.caption, vocab, params.config.max_text_len);
  auto visual = corpus::visual_tokens(img, ds.features);
  auto joint = model::build_joint(seq, visual, params, mode, rng);
  auto h = model::encode(joint.emb, joint.attention_mask, params, mode, rng);
  return model::itm_raw(op::gather_rows(h, {0}), params);
}

}  // namespace

Tensor group_scores(const Dataset& ds, const RetrievalGroup& g, const ModelParams& params,
                    const Vocab& vocab, Mode mode, Rng& rng) {
  if (g.candidate_records.empty() || g.positive_index < 0)
    throw std::invalid_argument("group_scores: malformed group");
  std::vector<Tensor> scores;
  scores.reserve(g.candidate_records.size());
  for (int cand : g.candidate_records) {
    int image = g.direction == Direction::image_to_text ? g.anchor_record : cand;
    int text = g.direction == Direction::image_to_text ? cand : g.anchor_record;
    scores.push_back(pair_score_raw(ds, image, text, params, vocab, mode, rng));
  }
  return op::concat_cols(scores);  // 1 x P
}

Tensor binary_loss_from_scores(const Tensor& raw_scores, int positive_index) {
  const int P = raw_scores.shape()[1];
  if (positive_index < 0 || positive_index >= P)
    throw std::invalid_argument("binary_loss_from_scores: bad positive index");
  std::vector<int> labels(P, 0);
  labels[positive_index] = 1;
  return op::binary_ce(op::sigmoid(raw_scores), labels, Reduction::mean);
}

Tensor ce_loss_from_scores(const Tensor& raw_scores, int positive_index) {
  const int P = raw_scores.shape()[1];
  if (positive_index < 0 || positive_index >= P)
    throw std::invalid_argument("ce_loss_from_scores: bad positive index");
  return op::softmax_ce(raw_scores, {positive_index});
}

Tensor triplet_loss_from_scores(const Tensor& raw_scores, int positive_index, double margin) {
  const int P = raw_scores.shape()[1];
  if (positive_index < 0 || positive_index >= P)
    throw std::invalid_argument("triplet_loss_from_scores: bad positive index");
  if (margin <= 0) throw std::invalid_argument("triplet_loss_from_scores: margin must be > 0");
  int hardest = -1;
  double best = -1e300;
  for (int i = 0; i < P; ++i) {
    if (i == positive_index) continue;
    double s = raw_scores.at(0, i);
    if (s > best) {
      best = s;
      hardest = i;
    }
  }
  auto s_pos = op::slice_cols(raw_scores, positive_index, 1);
  auto s_neg = op::slice_cols(raw_scores, hardest, 1);
  return op::sum(op::relu(op::add_scalar(op::sub(s_neg, s_pos), margin)));
}

void FinetuneLossConfig::validate() const {
  if (!binary && !ce && !triplet)
    throw std::invalid_argument("finetune: loss combo must enable at least one loss");
  if (triplet && margin <= 0)
    throw std::invalid_argument("finetune: triplet margin must be > 0");
}

std::string FinetuneStepReport::to_json_line() const {
  nlohmann::json j;
  j["step"] = step;
  j["direction"] = vlpre::to_string(direction);
  j["binary"] = binary;
  j["ce"] = ce;
  j["triplet"] = triplet;
  j["total"] = total;
  j["lr"] = lr;
  return j.dump();
}

FinetuneStepReport finetune_step(const Dataset& ds, const std::vector<RetrievalGroup>& groups,
                                 const ModelParams& params, Adam& opt, const Vocab& vocab,
                                 const FinetuneLossConfig& cfg, Rng& rng, int step) {
  cfg.validate();
  if (groups.empty()) throw std::invalid_argument("finetune_step: no groups");
  params.zero_grads();

  Tensor binary_sum, ce_sum, triplet_sum;
  auto accumulate = [](Tensor& acc, const Tensor& term) {
    acc = acc.defined() ? op::add(acc, term) : term;
  };
  for (const auto& g : groups) {
    auto raw = group_scores(ds, g, params, vocab, Mode::train, rng);
    if (cfg.binary) accumulate(binary_sum, binary_loss_from_scores(raw, g.positive_index));
    if (cfg.ce) accumulate(ce_sum, ce_loss_from_scores(raw, g.positive_index));
    if (cfg.triplet)
      accumulate(triplet_sum, triplet_loss_from_scores(raw, g.positive_index, cfg.margin));
  }
  const double inv = 1.0 / static_cast<double>(groups.size());
  Tensor total;
  auto add_part = [&](Tensor& part) {
    if (!part.defined()) return;
    part = op::scale(part, inv);
    total = total.defined() ? op::add(total, part) : part;
  };
  add_part(binary_sum);
  add_part(ce_sum);
  add_part(triplet_sum);

  double total_v = total.item();
  if (!std::isfinite(total_v))
    throw std::runtime_error("finetune_step: non-finite loss at step " +
                             std::to_string(step));
  if (total.requires_grad()) {
    backward(total);
    opt.step(params.trainable());
  }

  FinetuneStepReport rep;
  rep.step = step;
  rep.direction = groups.front().direction;
  rep.binary = binary_sum.defined() ? binary_sum.item() : 0.0;
  rep.ce = ce_sum.defined() ? ce_sum.item() : 0.0;
  rep.triplet = triplet_sum.defined() ? triplet_sum.item() : 0.0;
  rep.total = total_v;
  rep.lr = opt.config().lr;
  return rep;
}

}  // namespace vlpre
