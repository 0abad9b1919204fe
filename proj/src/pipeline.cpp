#include "vlpre/pipeline.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <regex>
#include <set>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace vlpre {
namespace pipeline {

void PipelinePolicy::validate() const {
  if (min_size < 0) throw std::invalid_argument("policy: negative min_size");
  if (required_lang.empty()) throw std::invalid_argument("policy: empty required_lang");
  if (min_words < 0 || max_words < min_words)
    throw std::invalid_argument("policy: bad word-count bounds");
  if (max_oov_ratio < 0 || max_oov_ratio > 1)
    throw std::invalid_argument("policy: max_oov_ratio outside [0,1]");
  if (score_threshold < 0 || score_threshold > 1)
    throw std::invalid_argument("policy: score_threshold outside [0,1]");
  if (max_dup < 1) throw std::invalid_argument("policy: max_dup must be >= 1");
  for (const auto& pat : bad_spans) {
    try {
      std::regex re(pat, std::regex::icase);
    } catch (const std::regex_error&) {
      throw std::invalid_argument("policy: bad_spans pattern does not compile: " + pat);
    }
  }
}

std::string PipelinePolicy::to_json() const {
  nlohmann::json j{{"min_size", min_size},
                   {"required_lang", required_lang},
                   {"require_dominant", require_dominant},
                   {"forbidden_flags", forbidden_flags},
                   {"bad_spans", bad_spans},
                   {"min_words", min_words},
                   {"max_words", max_words},
                   {"max_oov_ratio", max_oov_ratio},
                   {"score_threshold", score_threshold},
                   {"max_dup", max_dup}};
  return j.dump(2);
}

PipelinePolicy PipelinePolicy::from_json(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  PipelinePolicy p;
  p.min_size = j.value("min_size", p.min_size);
  p.required_lang = j.value("required_lang", p.required_lang);
  p.require_dominant = j.value("require_dominant", p.require_dominant);
  p.forbidden_flags = j.value("forbidden_flags", p.forbidden_flags);
  p.bad_spans = j.value("bad_spans", p.bad_spans);
  p.min_words = j.value("min_words", p.min_words);
  p.max_words = j.value("max_words", p.max_words);
  p.max_oov_ratio = j.value("max_oov_ratio", p.max_oov_ratio);
  p.score_threshold = j.value("score_threshold", p.score_threshold);
  p.max_dup = j.value("max_dup", p.max_dup);
  p.validate();
  return p;
}

FilterDecision filter_image(const CorpusRecord& rec, const PipelinePolicy& policy) {
  if (rec.page_lang != policy.required_lang) return {false, "lang"};
  if (policy.require_dominant && !rec.is_dominant) return {false, "dominant"};
  if (rec.width <= policy.min_size || rec.height <= policy.min_size) return {false, "size"};
  for (const auto& flag : policy.forbidden_flags)
    if (std::find(rec.content_flags.begin(), rec.content_flags.end(), flag) !=
        rec.content_flags.end())
      return {false, "content"};
  return {true, ""};
}

namespace {

std::vector<std::string> whitespace_words(const std::string& text) {
  std::vector<std::string> words;
  std::istringstream in(text);
  std::string w;
  while (in >> w) words.push_back(w);
  return words;
}

std::string join_words(const std::vector<std::string>& words) {
  std::string out;
  for (size_t i = 0; i < words.size(); ++i) {
    if (i > 0) out += ' ';
    out += words[i];
  }
  return out;
}

// a word is out-of-vocabulary when WordPiece cannot decompose any of its
// basic tokens without falling back to [UNK]
bool word_is_oov(const std::string& word, const Vocab& vocab) {
  const int unk = vocab.id("[UNK]");
  TokenizerConfig cfg;
  std::vector<int> ids;
  for (const auto& tok : basic_tokenize(word, cfg)) wordpiece(tok, vocab, cfg, ids);
  for (int id : ids)
    if (id == unk) return true;
  return false;
}

std::string normalize_text(const std::string& text) {
  std::string lower = text;
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return join_words(whitespace_words(lower));
}

}  // namespace

CleanResult clean_sentence(const std::string& text, const PipelinePolicy& policy,
                           const Vocab& vocab) {
  std::string stripped = text;
  for (const auto& pat : policy.bad_spans)
    stripped = std::regex_replace(stripped, std::regex(pat, std::regex::icase), " ");
  auto words = whitespace_words(stripped);
  const int n = static_cast<int>(words.size());
  if (n < policy.min_words || n > policy.max_words) return {false, "", "length"};
  int oov = 0;
  for (const auto& w : words)
    if (word_is_oov(w, vocab)) ++oov;
  if (static_cast<double>(oov) / n > policy.max_oov_ratio) return {false, "", "oov"};
  return {true, join_words(words), ""};
}

ScoredPair ReferenceScorer::score(const CorpusRecord& rec, const std::string& text) const {
  ScoredPair out;
  out.image_id = rec.image_id;
  out.text = text;
  auto words = whitespace_words(normalize_text(text));
  if (words.empty()) return out;  // empty text scores 0 by convention

  std::set<std::string> word_set(words.begin(), words.end());
  std::set<std::string> tag_set;
  for (const auto& t : rec.tags) tag_set.insert(normalize_text(t));
  int overlap = 0;
  for (const auto& t : tag_set)
    if (word_set.count(t)) ++overlap;
  const double cross = overlap / std::max<double>(1.0, tag_set.size());
  const double n = static_cast<double>(words.size());
  const double length_prior = std::exp(-(n - 13.0) * (n - 13.0) / 72.0);
  const double image_feat = std::min(1.0, tag_set.size() / 8.0);

  out.cross_features = {cross};
  out.text_features = {length_prior};
  out.image_features = {image_feat};
  const double z = 4.0 * cross + 1.0 * length_prior + 0.5 * image_feat - 2.0;
  out.score = 1.0 / (1.0 + std::exp(-z));
  return out;
}

long StageCounts::dropped_total() const {
  long total = 0;
  for (const auto& [reason, n] : dropped) total += n;
  return total;
}

void StageCounts::check() const {
  if (input != kept + dropped_total())
    throw std::logic_error("stage counters do not reconcile: input " + std::to_string(input) +
                           " != kept " + std::to_string(kept) + " + dropped " +
                           std::to_string(dropped_total()));
}

void PipelineStats::check() const {
  images.check();
  sentences.check();
  scoring.check();
  aggregation.check();
}

namespace {

nlohmann::json stage_json(const StageCounts& s) {
  nlohmann::json dropped = nlohmann::json::object();
  for (const auto& [reason, n] : s.dropped) dropped[reason] = n;
  return {{"input", s.input}, {"kept", s.kept}, {"dropped", dropped}};
}

}  // namespace

std::string PipelineStats::to_json() const {
  nlohmann::json j{{"images", stage_json(images)},
                   {"sentences", stage_json(sentences)},
                   {"scoring", stage_json(scoring)},
                   {"aggregation", stage_json(aggregation)}};
  return j.dump(2);
}

std::vector<ScoredPair> aggregate(const std::vector<ScoredPair>& pairs, int max_dup,
                                  StageCounts& counts) {
  counts.input += static_cast<long>(pairs.size());

  // texts spanning too many distinct images disappear with all their pairs
  std::map<std::string, std::set<std::string>> images_per_text;
  for (const auto& p : pairs) images_per_text[normalize_text(p.text)].insert(p.image_id);

  std::map<std::string, const ScoredPair*> best;  // image_id -> winner
  for (const auto& p : pairs) {
    if (static_cast<int>(images_per_text[normalize_text(p.text)].size()) > max_dup) {
      ++counts.dropped["dup"];
      continue;
    }
    auto [it, inserted] = best.try_emplace(p.image_id, &p);
    if (inserted) continue;
    const ScoredPair* cur = it->second;
    // higher score wins; equal scores keep the lexicographically smallest text
    if (p.score > cur->score || (p.score == cur->score && p.text < cur->text)) {
      it->second = &p;
      ++counts.dropped["not_best"];
    } else {
      ++counts.dropped["not_best"];
    }
  }

  std::vector<ScoredPair> out;
  out.reserve(best.size());
  for (const auto& [id, p] : best) {
    out.push_back(*p);
    ++counts.kept;
  }
  counts.check();
  return out;
}

PipelineResult run(const std::vector<CorpusRecord>& input, const PipelinePolicy& policy,
                   const Vocab& vocab, const SemanticScorer& scorer) {
  policy.validate();
  PipelineResult result;
  auto& stats = result.stats;

  std::vector<const CorpusRecord*> kept_images;
  for (const auto& rec : input) {
    ++stats.images.input;
    auto d = filter_image(rec, policy);
    if (d.keep) {
      ++stats.images.kept;
      kept_images.push_back(&rec);
    } else {
      ++stats.images.dropped[d.reason];
    }
  }

  std::vector<std::pair<const CorpusRecord*, std::string>> cleaned;
  for (const CorpusRecord* rec : kept_images) {
    for (const auto& cand : rec->candidate_texts) {
      ++stats.sentences.input;
      auto c = clean_sentence(cand.text, policy, vocab);
      if (c.kept) {
        ++stats.sentences.kept;
        cleaned.emplace_back(rec, c.text);
      } else {
        ++stats.sentences.dropped[c.reason];
      }
    }
  }

  std::vector<ScoredPair> scored;
  for (const auto& [rec, text] : cleaned) {
    ++stats.scoring.input;
    ScoredPair p;
    try {
      p = scorer.score(*rec, text);
    } catch (const std::exception&) {
      ++stats.scoring.dropped["scorer_error"];
      continue;
    }
    if (p.score < 0.0 || p.score > 1.0)
      throw std::logic_error("scorer produced score outside [0,1] for " + rec->image_id);
    if (p.score < policy.score_threshold) {
      ++stats.scoring.dropped["score"];
    } else {
      ++stats.scoring.kept;
      scored.push_back(std::move(p));
    }
  }

  auto winners = aggregate(scored, policy.max_dup, stats.aggregation);

  std::map<std::string, const CorpusRecord*> by_id;
  for (const CorpusRecord* rec : kept_images) by_id[rec->image_id] = rec;
  for (const auto& w : winners) {
    CorpusRecord out = *by_id.at(w.image_id);
    out.caption = w.text;
    result.records.push_back(std::move(out));
  }

  stats.check();
  return result;
}

}  // namespace pipeline
}  // namespace vlpre
