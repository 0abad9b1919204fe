#pragma once

#include <string>
#include <vector>

#include "vlpre/corpus.hpp"
#include "vlpre/model.hpp"
#include "vlpre/tokenizer.hpp"

namespace vlpre {

// Retrieval pool: every caption belongs to exactly one image; an image may
// own several captions (five-captions mode).
struct EvalPool {
  std::vector<VisualTokenSet> images;
  std::vector<TokenSequence> captions;
  std::vector<int> caption_to_image;
  std::vector<std::vector<int>> image_to_captions;

  int num_images() const { return static_cast<int>(images.size()); }
  int num_captions() const { return static_cast<int>(captions.size()); }
  void validate() const;  // bidirectional ground-truth consistency
};

// Records with a non-empty `captions` list contribute all of them; otherwise
// the single `caption` field is used.
EvalPool build_pool(const Dataset& ds, const Vocab& vocab, const ModelConfig& cfg);

struct ScoreMatrix {
  int rows = 0;  // images
  int cols = 0;  // captions
  std::vector<double> values;

  double at(int i, int j) const { return values[static_cast<size_t>(i) * cols + j]; }
};

enum class RetrievalDirection { image_retrieval, sentence_retrieval };

std::string to_string(RetrievalDirection d);

// Exhaustively scores every (image, caption) pair with the ITM head, eval
// mode, no masking. batch_size only chunks the work; results are identical
// for any value >= 1.
ScoreMatrix score_all(const EvalPool& pool, const ModelParams& params, int batch_size = 16);

// image_retrieval: per caption, hit when its ground-truth image is in the
// top K of that caption's column. sentence_retrieval: per image, hit when
// ANY of its captions is in the top K of that image's row. Ties rank the
// lower index first.
double recall_at_k(const ScoreMatrix& m, const EvalPool& pool, int K,
                   RetrievalDirection direction);

struct EvalReport {
  std::vector<int> ks;
  std::vector<double> image_retrieval;     // recall per K
  std::vector<double> sentence_retrieval;  // recall per K
  int pool_images = 0;
  int pool_captions = 0;
  std::string checkpoint;

  std::string to_json() const;
  std::string to_table() const;  // aligned text, one row per direction
};

EvalReport eval_report(const EvalPool& pool, const ModelParams& params,
                       const std::vector<int>& ks = {1, 5, 10},
                       const std::string& checkpoint_id = "");

// Same metrics computed from an existing matrix (pure function of inputs).
EvalReport report_from_matrix(const ScoreMatrix& m, const EvalPool& pool,
                              const std::vector<int>& ks, const std::string& checkpoint_id);

}  // namespace vlpre
