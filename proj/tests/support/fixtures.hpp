#pragma once

// Shared tiny-model fixtures used across training/eval tests.

#include <string>
#include <vector>

#include "vlpre/corpus.hpp"
#include "vlpre/model.hpp"
#include "vlpre/rng.hpp"
#include "vlpre/tokenizer.hpp"

namespace fixtures {

inline vlpre::ModelConfig tiny_config() {
  vlpre::ModelConfig cfg;
  cfg.layers = 2;
  cfg.hidden = 16;
  cfg.intermediate = 32;
  cfg.heads = 2;
  cfg.dropout = 0.0;
  cfg.max_seq_len = 16;
  cfg.max_text_len = 6;
  cfg.num_visual_tokens = 4;
  cfg.d_v = 8;
  cfg.num_classes = 5;
  return cfg;
}

inline const std::vector<std::string>& class_names() {
  static const std::vector<std::string> names{"dog", "cat", "car", "tree", "house"};
  return names;
}

inline vlpre::Vocab tiny_vocab() {
  std::vector<std::string> toks{"[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]",
                                "a",     "the",   "and",   "of",    "photo",
                                ".",     "on",    "near"};
  for (const auto& n : class_names()) toks.push_back(n);
  return vlpre::Vocab::from_tokens(toks);
}

// n records over the tiny class set: class-prototype features plus noise,
// captions naming the two classes present.
inline vlpre::Dataset make_dataset(const vlpre::ModelConfig& cfg, int n, uint64_t seed) {
  const int nc = static_cast<int>(class_names().size());
  vlpre::Rng proto_rng(seed ^ 0x9e37);
  std::vector<std::vector<double>> protos(nc, std::vector<double>(cfg.d_v));
  for (auto& p : protos)
    for (auto& x : p) x = proto_rng.normal();

  vlpre::Dataset ds;
  vlpre::Rng rng(seed);
  for (int i = 0; i < n; ++i) {
    vlpre::CorpusRecord rec;
    rec.image_id = "img_" + std::to_string(i);
    rec.width = 320;
    rec.height = 240;
    rec.d_v = cfg.d_v;
    int c1 = i % nc;
    int c2 = (i / nc + i + 1) % nc;
    rec.caption = "a " + class_names()[c1] + " and a " + class_names()[c2] + " .";
    rec.tags = {class_names()[c1], class_names()[c2]};
    for (int r = 0; r < cfg.num_visual_tokens; ++r) {
      vlpre::Roi roi;
      int cls = (r % 2 == 0) ? c1 : c2;
      roi.class_id = cls;
      roi.class_name = class_names()[cls];
      double x = 10.0 + 20.0 * r, y = 8.0 + 12.0 * r;
      roi.box = {x, y, x + 60, y + 50};
      roi.feature_offset = static_cast<int64_t>(ds.features.values.size());
      for (int j = 0; j < cfg.d_v; ++j)
        ds.features.values.push_back(protos[cls][j] + 0.1 * rng.normal());
      rec.rois.push_back(roi);
    }
    ds.records.push_back(std::move(rec));
  }
  return ds;
}

inline std::vector<int> first_ids(int n) {
  std::vector<int> ids(n);
  for (int i = 0; i < n; ++i) ids[i] = i;
  return ids;
}

}  // namespace fixtures
