#include <cmath>
#include <set>
#include <stdexcept>

#include "doctest.h"
#include "support/fixtures.hpp"
#include "vlpre/gradcheck.hpp"
#include "vlpre/pretrain.hpp"

using namespace vlpre;
namespace op = vlpre::ops;

namespace {

TokenSequence wide_sequence(const Vocab& v, int eligible) {
  // [CLS] + `eligible` real tokens + [SEP], no padding
  TokenSequence seq;
  seq.token_ids.push_back(v.cls_id());
  for (int i = 0; i < eligible; ++i) seq.token_ids.push_back(v.id("a"));
  seq.token_ids.push_back(v.sep_id());
  int n = static_cast<int>(seq.token_ids.size());
  seq.segment_ids.assign(n, 0);
  for (int i = 0; i < n; ++i) seq.positions.push_back(i);
  seq.attention_mask.assign(n, 1);
  return seq;
}

void zero_tensor(const Tensor& t) {
  auto* d = const_cast<double*>(t.data().data());
  for (size_t i = 0; i < t.data().size(); ++i) d[i] = 0.0;
}

}  // namespace

TEST_CASE("mask plan statistics match the configured probabilities") {
  auto vocab = fixtures::tiny_vocab();
  auto seq = wide_sequence(vocab, 50);
  Rng rng(4242);
  long text_total = 0, text_masked = 0;
  long act_mask = 0, act_random = 0, act_keep = 0;
  long vis_total = 0, vis_masked = 0, vis_zero = 0;
  const int o = 50;
  for (int trial = 0; trial < 2000; ++trial) {
    auto plan = plan_masks(seq, o, vocab, rng);
    text_total += 50;
    text_masked += static_cast<long>(plan.text.size());
    for (const auto& m : plan.text) {
      switch (m.action) {
        case TextMaskAction::mask_token: ++act_mask; break;
        case TextMaskAction::random_token: ++act_random; break;
        case TextMaskAction::keep: ++act_keep; break;
      }
    }
    vis_total += o;
    vis_masked += static_cast<long>(plan.visual.size());
    for (const auto& m : plan.visual)
      if (m.action == VisualMaskAction::zero) ++vis_zero;
  }
  CHECK(text_total == 100000);
  CHECK(std::abs(text_masked / double(text_total) - 0.15) < 0.005);
  double masked = static_cast<double>(text_masked);
  CHECK(std::abs(act_mask / masked - 0.80) < 0.01);
  CHECK(std::abs(act_random / masked - 0.10) < 0.01);
  CHECK(std::abs(act_keep / masked - 0.10) < 0.01);
  CHECK(std::abs(vis_masked / double(vis_total) - 0.15) < 0.005);
  CHECK(std::abs(vis_zero / double(vis_masked) - 0.90) < 0.01);
}

TEST_CASE("special tokens are never masked and indices stay unique") {
  auto vocab = fixtures::tiny_vocab();
  auto seq = tokenize("a dog and a cat .", vocab, 10);  // has [CLS],[SEP],[PAD]
  Rng rng(7);
  for (int trial = 0; trial < 10000; ++trial) {
    auto plan = plan_masks(seq, 4, vocab, rng);
    CHECK(!plan.text.empty());  // force-one floor
    std::set<int> seen;
    for (const auto& m : plan.text) {
      CHECK(seen.insert(m.index).second);
      int id = seq.token_ids[m.index];
      CHECK(id != vocab.cls_id());
      CHECK(id != vocab.sep_id());
      CHECK(id != Vocab::kPad);
      if (m.action == TextMaskAction::random_token) {
        CHECK(m.replacement_id >= 0);
        CHECK_FALSE(vocab.is_special(m.replacement_id));
      }
    }
  }
}

TEST_CASE("applying masks changes only what it should") {
  auto vocab = fixtures::tiny_vocab();
  auto cfg = fixtures::tiny_config();
  cfg.vocab_size = vocab.size();
  auto ds = fixtures::make_dataset(cfg, 3, 1);
  auto seq = tokenize(ds.records[0].caption, vocab, cfg.max_text_len);
  auto vis = corpus::visual_tokens(ds.records[0], ds.features);

  MaskPlan plan;
  plan.text.push_back({1, TextMaskAction::mask_token, -1});
  plan.text.push_back({2, TextMaskAction::random_token, vocab.id("cat")});
  plan.text.push_back({3, TextMaskAction::keep, -1});
  plan.visual.push_back({0, VisualMaskAction::zero});
  plan.visual.push_back({2, VisualMaskAction::keep});

  auto mseq = apply_text_mask(seq, plan, vocab);
  CHECK(mseq.token_ids[1] == vocab.mask_id());
  CHECK(mseq.token_ids[2] == vocab.id("cat"));
  CHECK(mseq.token_ids[3] == seq.token_ids[3]);
  for (int i = 4; i < seq.length(); ++i) CHECK(mseq.token_ids[i] == seq.token_ids[i]);

  auto mvis = apply_visual_mask(vis, plan);
  for (int j = 0; j < vis.d_v; ++j) CHECK(mvis.features[j] == 0.0);
  // keep action and unmasked rows untouched
  for (int i = 1; i < vis.o; ++i)
    for (int j = 0; j < vis.d_v; ++j)
      CHECK(mvis.features[i * vis.d_v + j] == vis.features[i * vis.d_v + j]);
  // geometry and labels survive zeroing
  CHECK(mvis.boxes == vis.boxes);
  CHECK(mvis.class_labels == vis.class_labels);
}

TEST_CASE("batch construction pairs negatives within the batch") {
  auto vocab = fixtures::tiny_vocab();
  auto cfg = fixtures::tiny_config();
  cfg.vocab_size = vocab.size();
  auto ds = fixtures::make_dataset(cfg, 6, 2);
  Rng rng(11);
  auto batch = build_pair_batch(ds, {0, 1, 2, 3}, vocab, cfg, rng);
  REQUIRE(batch.samples.size() == 8);
  int positives = 0;
  for (const auto& s : batch.samples) positives += s.label;
  CHECK(positives == 4);
  // each negative reuses a caption from a different record of the batch
  for (int i = 4; i < 8; ++i) {
    const auto& neg = batch.samples[i];
    CHECK(neg.label == 0);
    const auto& own = batch.samples[i - 4];
    CHECK(neg.image_id == own.image_id);
    CHECK(neg.seq.token_ids != own.seq.token_ids);
  }
  CHECK_THROWS_AS(build_pair_batch(ds, {}, vocab, cfg, rng), std::invalid_argument);
  CHECK_THROWS_AS(build_pair_batch(ds, {0}, vocab, cfg, rng, {}, 1.0),
                  std::invalid_argument);
  // ratio 0 works with a single record
  auto solo = build_pair_batch(ds, {0}, vocab, cfg, rng, {}, 0.0);
  CHECK(solo.samples.size() == 1);
}

TEST_CASE("uniform heads give log-cardinality losses") {
  auto vocab = fixtures::tiny_vocab();
  auto cfg = fixtures::tiny_config();
  cfg.vocab_size = vocab.size();
  Rng init(3);
  auto params = ModelParams::init(cfg, init);
  zero_tensor(params.mlm_w);
  zero_tensor(params.mlm_b);
  zero_tensor(params.moc_w);
  zero_tensor(params.moc_b);
  zero_tensor(params.itm_w);
  zero_tensor(params.itm_b);

  auto ds = fixtures::make_dataset(cfg, 4, 4);
  Rng rng(5);
  auto batch = build_pair_batch(ds, {0, 1, 2, 3}, vocab, cfg, rng);
  Rng fwd(0);
  auto losses = pretrain_losses(batch, params, Mode::eval, fwd, vocab);
  REQUIRE(losses.mlm_defined);
  REQUIRE(losses.moc_defined);
  CHECK(losses.mlm.item() == doctest::Approx(std::log(vocab.size())).epsilon(1e-12));
  CHECK(losses.moc.item() == doctest::Approx(std::log(cfg.num_classes)).epsilon(1e-12));
  CHECK(losses.itm.item() == doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("perfect logits drive MLM loss to zero") {
  auto vocab = fixtures::tiny_vocab();
  auto cfg = fixtures::tiny_config();
  cfg.vocab_size = vocab.size();
  Rng init(6);
  auto params = ModelParams::init(cfg, init);
  zero_tensor(params.mlm_w);
  zero_tensor(params.mlm_b);

  // single positive, forced plan masking token 1 whose true id is "a"
  auto ds = fixtures::make_dataset(cfg, 2, 7);
  Rng rng(8);
  auto batch = build_pair_batch(ds, {0, 1}, vocab, cfg, rng, {}, 0.0);
  for (auto& s : batch.samples) {
    s.plan.text.clear();
    s.plan.text.push_back({1, TextMaskAction::mask_token, -1});
    s.plan.visual.clear();
  }
  int true_id = batch.samples[0].seq.token_ids[1];
  auto* b = const_cast<double*>(params.mlm_b.data().data());
  b[true_id] = 20.0;

  Rng fwd(0);
  TaskToggles only_mlm{.mlm = true, .moc = false, .mrfr = false, .itm = false};
  auto losses = pretrain_losses(batch, params, Mode::eval, fwd, vocab, only_mlm);
  CHECK(losses.mlm.item() < 1e-6);
}

TEST_CASE("MRFR is zero when predictions equal targets") {
  auto vocab = fixtures::tiny_vocab();
  auto cfg = fixtures::tiny_config();
  cfg.vocab_size = vocab.size();
  Rng init(9);
  auto params = ModelParams::init(cfg, init);
  zero_tensor(params.mrfr_w);
  zero_tensor(params.mrfr_b);

  auto ds = fixtures::make_dataset(cfg, 2, 10);
  // zero features -> target is the zero vector -> head output 0 matches
  for (auto& v : ds.features.values) v = 0.0;
  Rng rng(11);
  auto batch = build_pair_batch(ds, {0, 1}, vocab, cfg, rng, {}, 0.0);
  for (auto& s : batch.samples) {
    s.plan.visual.clear();
    s.plan.visual.push_back({0, VisualMaskAction::zero});
  }
  Rng fwd(0);
  TaskToggles only_mrfr{.mlm = false, .moc = false, .mrfr = true, .itm = false};
  auto losses = pretrain_losses(batch, params, Mode::eval, fwd, vocab, only_mrfr);
  REQUIRE(losses.mrfr_defined);
  CHECK(losses.mrfr.item() == 0.0);
}

TEST_CASE("conditional mask: all-negative batches zero the mask losses and their grads") {
  auto vocab = fixtures::tiny_vocab();
  auto cfg = fixtures::tiny_config();
  cfg.vocab_size = vocab.size();
  Rng init(12);
  auto params = ModelParams::init(cfg, init);
  auto ds = fixtures::make_dataset(cfg, 4, 13);
  Rng rng(14);
  auto batch = build_pair_batch(ds, {0, 1, 2, 3}, vocab, cfg, rng);
  for (auto& s : batch.samples) s.label = 0;

  params.zero_grads();
  Rng fwd(0);
  auto losses = pretrain_losses(batch, params, Mode::eval, fwd, vocab);
  CHECK_FALSE(losses.mlm_defined);
  CHECK_FALSE(losses.moc_defined);
  CHECK_FALSE(losses.mrfr_defined);
  CHECK(losses.mlm.item() == 0.0);
  CHECK(losses.moc.item() == 0.0);
  CHECK(losses.mrfr.item() == 0.0);
  CHECK(losses.itm.item() > 0.0);

  backward(losses.total);
  auto all_zero = [](const Tensor& t) {
    if (t.grad().empty()) return true;
    for (double g : t.grad())
      if (g != 0.0) return false;
    return true;
  };
  CHECK(all_zero(params.mlm_w));
  CHECK(all_zero(params.moc_w));
  CHECK(all_zero(params.mrfr_w));
  CHECK_FALSE(all_zero(params.itm_w));
  // encoder still learns from ITM
  CHECK_FALSE(all_zero(params.layers[0].q_w));
}

TEST_CASE("all four losses pass end-to-end finite differences on the tiny config") {
  auto vocab = fixtures::tiny_vocab();
  auto cfg = fixtures::tiny_config();
  cfg.vocab_size = vocab.size();
  Rng init(15);
  auto params = ModelParams::init(cfg, init);
  auto ds = fixtures::make_dataset(cfg, 4, 16);
  Rng rng(17);
  auto batch = build_pair_batch(ds, {0, 1, 2, 3}, vocab, cfg, rng);

  struct Case {
    TaskToggles tasks;
    Tensor head;
    double eps;  // larger step for the regression loss (roundoff control)
  };
  std::vector<Case> cases = {
      {{true, false, false, false}, params.mlm_w, 1e-5},
      {{false, true, false, false}, params.moc_w, 1e-5},
      {{false, false, true, false}, params.mrfr_w, 1e-4},
      {{false, false, false, true}, params.itm_w, 1e-5},
  };
  for (size_t ci = 0; ci < cases.size(); ++ci) {
    const auto& c = cases[ci];
    auto forward = [&] {
      Rng fwd(0);
      return pretrain_losses(batch, params, Mode::eval, fwd, vocab, c.tasks).total;
    };
    auto res = gradcheck::check(
        forward,
        {params.word_emb, params.visual_proj_w, params.geom_proj_w, params.layers[0].q_w,
         params.layers[1].ffn_in_w, c.head},
        c.eps);
    CHECK_MESSAGE(res.max_rel_err < 1e-4, "loss case ", ci);
  }
}

TEST_CASE("task toggles remove terms exactly") {
  auto vocab = fixtures::tiny_vocab();
  auto cfg = fixtures::tiny_config();
  cfg.vocab_size = vocab.size();
  Rng init(18);
  auto params = ModelParams::init(cfg, init);
  auto ds = fixtures::make_dataset(cfg, 4, 19);
  Rng rng(20);
  auto batch = build_pair_batch(ds, {0, 1, 2, 3}, vocab, cfg, rng);

  Rng f1(0), f2(0);
  auto full = pretrain_losses(batch, params, Mode::eval, f1, vocab);
  TaskToggles no_mrfr{.mlm = true, .moc = true, .mrfr = false, .itm = true};
  auto ablated = pretrain_losses(batch, params, Mode::eval, f2, vocab, no_mrfr);
  CHECK(ablated.total.item() ==
        doctest::Approx(full.total.item() - full.mrfr.item()).epsilon(1e-12));
  CHECK(full.total.item() == doctest::Approx(full.mlm.item() + full.moc.item() +
                                             full.mrfr.item() + full.itm.item())
                                 .epsilon(1e-12));
}

TEST_CASE("pretrain steps are deterministic given the seed") {
  auto vocab = fixtures::tiny_vocab();
  auto cfg = fixtures::tiny_config();
  cfg.vocab_size = vocab.size();
  auto run = [&] {
    Rng init(21);
    auto params = ModelParams::init(cfg, init);
    auto ds = fixtures::make_dataset(cfg, 4, 22);
    Adam opt({.lr = 1e-3});
    std::vector<double> totals;
    Rng driver(23);
    for (int step = 0; step < 5; ++step) {
      Rng brng = driver.derive(step);
      auto batch = build_pair_batch(ds, {0, 1, 2, 3}, vocab, cfg, brng);
      Rng srng = driver.derive(1000 + step);
      auto rep = pretrain_step(batch, params, opt, srng, vocab, {}, step, 0);
      totals.push_back(rep.total);
    }
    return totals;
  };
  auto a = run();
  auto b = run();
  CHECK(a == b);
  CHECK(a.size() == 5);
}

TEST_CASE("a tiny model overfits one batch") {
  auto vocab = fixtures::tiny_vocab();
  auto cfg = fixtures::tiny_config();
  cfg.vocab_size = vocab.size();
  Rng init(24);
  auto params = ModelParams::init(cfg, init);
  auto ds = fixtures::make_dataset(cfg, 4, 25);
  Rng rng(26);
  auto batch = build_pair_batch(ds, {0, 1, 2, 3}, vocab, cfg, rng);
  Adam opt({.lr = 5e-3});
  Rng srng(27);
  double first = 0, last = 0;
  for (int step = 0; step < 200; ++step) {
    auto rep = pretrain_step(batch, params, opt, srng, vocab, {}, step, 0);
    if (step == 0) first = rep.total;
    last = rep.total;
  }
  CHECK(first > 0.0);
  CHECK(last < 0.1 * first);
}

TEST_CASE("MRFR-only training decreases monotonically on a fixed batch") {
  auto vocab = fixtures::tiny_vocab();
  auto cfg = fixtures::tiny_config();
  cfg.vocab_size = vocab.size();
  Rng init(28);
  auto params = ModelParams::init(cfg, init);
  auto ds = fixtures::make_dataset(cfg, 4, 29);
  Rng rng(30);
  auto batch = build_pair_batch(ds, {0, 1, 2, 3}, vocab, cfg, rng, {}, 0.0);
  // pin masks so every sample definitely contributes a regression target
  for (auto& s : batch.samples) {
    s.plan.visual.clear();
    s.plan.visual.push_back({0, VisualMaskAction::zero});
    s.plan.visual.push_back({2, VisualMaskAction::zero});
  }
  Adam opt({.lr = 1e-3});
  TaskToggles only_mrfr{.mlm = false, .moc = false, .mrfr = true, .itm = false};
  Rng srng(31);
  double prev = 1e300;
  for (int step = 0; step < 50; ++step) {
    auto rep = pretrain_step(batch, params, opt, srng, vocab, only_mrfr, step, 0);
    CHECK(rep.total < prev);
    prev = rep.total;
  }
}

TEST_CASE("adding MRFR changes encoder gradients") {
  auto vocab = fixtures::tiny_vocab();
  auto cfg = fixtures::tiny_config();
  cfg.vocab_size = vocab.size();
  Rng init(32);
  auto params = ModelParams::init(cfg, init);
  auto ds = fixtures::make_dataset(cfg, 4, 33);
  Rng rng(34);
  auto batch = build_pair_batch(ds, {0, 1, 2, 3}, vocab, cfg, rng);
  for (auto& s : batch.samples) {
    if (s.plan.visual.empty()) s.plan.visual.push_back({1, VisualMaskAction::zero});
  }

  auto grads_for = [&](const TaskToggles& tasks) {
    params.zero_grads();
    Rng fwd(0);
    auto losses = pretrain_losses(batch, params, Mode::eval, fwd, vocab, tasks);
    backward(losses.total);
    return params.layers[0].q_w.grad();
  };
  TaskToggles no_mrfr{.mlm = true, .moc = true, .mrfr = false, .itm = true};
  auto with = grads_for({});
  auto without = grads_for(no_mrfr);
  CHECK(with != without);
}

TEST_CASE("non-finite losses abort with a batch dump") {
  auto vocab = fixtures::tiny_vocab();
  auto cfg = fixtures::tiny_config();
  cfg.vocab_size = vocab.size();
  Rng init(35);
  auto params = ModelParams::init(cfg, init);
  // poison the [CLS] embedding row: present in every sequence
  auto* w = const_cast<double*>(params.word_emb.data().data());
  w[vocab.cls_id() * cfg.hidden] = std::numeric_limits<double>::quiet_NaN();
  auto ds = fixtures::make_dataset(cfg, 2, 36);
  Rng rng(37);
  auto batch = build_pair_batch(ds, {0, 1}, vocab, cfg, rng);
  Adam opt({.lr = 1e-3});
  Rng srng(38);
  CHECK_THROWS_WITH_AS(pretrain_step(batch, params, opt, srng, vocab, {}, 0, 0),
                       doctest::Contains("img_"), std::runtime_error);
}

TEST_CASE("step reports serialize to JSONL") {
  StepReport rep;
  rep.step = 3;
  rep.stage = 1;
  rep.mlm = 2.5;
  rep.total = 4.0;
  rep.lr = 1e-4;
  auto line = rep.to_json_line();
  CHECK(line.find("\"step\":3") != std::string::npos);
  CHECK(line.find("\"stage\":1") != std::string::npos);
  CHECK(line.find('\n') == std::string::npos);
}
