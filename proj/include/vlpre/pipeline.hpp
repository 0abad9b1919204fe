#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "vlpre/corpus.hpp"
#include "vlpre/tokenizer.hpp"

namespace vlpre {
namespace pipeline {

// Knobs for every stage; anything not fixed by the data contract is config
// here, with these defaults documented as the reference behavior.
struct PipelinePolicy {
  int min_size = 300;  // keep only width > min_size AND height > min_size
  std::string required_lang = "en";
  bool require_dominant = true;
  std::vector<std::string> forbidden_flags = {"pornographic", "racy", "unnatural"};
  std::vector<std::string> bad_spans = {"<[^>]*>", "https?://[^ ]+", "click here", "buy now"};
  int min_words = 3;
  int max_words = 30;
  double max_oov_ratio = 0.25;  // strict: drop when ratio > threshold
  double score_threshold = 0.5;  // strict: drop when score < threshold
  int max_dup = 10;  // texts on more than this many images vanish entirely

  void validate() const;
  std::string to_json() const;
  static PipelinePolicy from_json(const std::string& text);
};

struct FilterDecision {
  bool keep = false;
  std::string reason;  // lang | dominant | size | content, first match wins
};

// Total function over metadata records; checks run in the documented order.
FilterDecision filter_image(const CorpusRecord& rec, const PipelinePolicy& policy);

struct CleanResult {
  bool kept = false;
  std::string text;    // stripped + whitespace-normalized when kept
  std::string reason;  // length | oov
};

CleanResult clean_sentence(const std::string& text, const PipelinePolicy& policy,
                           const Vocab& vocab);

struct ScoredPair {
  std::string image_id;
  std::string text;
  double score = 0.0;  // always within [0,1]
  // interpretable feature groups feeding the scorer
  std::vector<double> text_features;
  std::vector<double> image_features;
  std::vector<double> cross_features;
};

class SemanticScorer {
 public:
  virtual ~SemanticScorer() = default;
  // empty text must score 0; throwing skips the pair with reason scorer_error
  virtual ScoredPair score(const CorpusRecord& rec, const std::string& text) const = 0;
};

// Transparent logistic over hand-checkable features:
//   cross:  distinct-word overlap with the record's tag set, / |tags|
//   text:   length prior exp(-(words - 13)^2 / 72)
//   image:  min(1, |tags| / 8)
//   score = sigmoid(4*cross + 1*text + 0.5*image - 2)
class ReferenceScorer : public SemanticScorer {
 public:
  ScoredPair score(const CorpusRecord& rec, const std::string& text) const override;
};

struct StageCounts {
  long input = 0;
  long kept = 0;
  std::map<std::string, long> dropped;

  long dropped_total() const;
  void check() const;  // input == kept + sum(dropped), else throws
};

struct PipelineStats {
  StageCounts images;       // record filtering
  StageCounts sentences;    // candidate-text cleaning
  StageCounts scoring;      // semantic scoring + threshold
  StageCounts aggregation;  // dedup + per-image argmax

  void check() const;
  std::string to_json() const;
};

// Dedup first (texts spanning more than max_dup images disappear with all
// their pairs), then per-image argmax; equal scores keep the
// lexicographically smallest text. Output sorted by image_id.
std::vector<ScoredPair> aggregate(const std::vector<ScoredPair>& pairs, int max_dup,
                                  StageCounts& counts);

struct PipelineResult {
  std::vector<CorpusRecord> records;  // caption = winning text
  PipelineStats stats;
};

PipelineResult run(const std::vector<CorpusRecord>& input, const PipelinePolicy& policy,
                   const Vocab& vocab, const SemanticScorer& scorer);

}  // namespace pipeline
}  // namespace vlpre
