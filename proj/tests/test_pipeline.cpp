#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "doctest.h"
#include "json.hpp"
#include "vlpre/pipeline.hpp"
#include "vlpre/rng.hpp"
#include "vlpre/synth.hpp"
#include "vlpre/tokenizer.hpp"

using namespace vlpre;
using pipeline::PipelinePolicy;

namespace {

Vocab shipped_vocab() { return Vocab::from_file(VLPRE_DATA_DIR "/vocab.txt"); }

CorpusRecord raw_record(const std::string& id = "r0") {
  CorpusRecord rec;
  rec.image_id = id;
  rec.width = 640;
  rec.height = 480;
  rec.page_lang = "en";
  rec.is_dominant = true;
  rec.tags = {"dog", "cat"};
  return rec;
}

}  // namespace

TEST_CASE("image filtering applies the documented rules in order") {
  PipelinePolicy policy;
  auto rec = raw_record();

  SUBCASE("boundary sizes: strictly larger than 300 passes") {
    rec.width = 301;
    rec.height = 301;
    CHECK(pipeline::filter_image(rec, policy).keep);
    rec.width = 300;
    auto d = pipeline::filter_image(rec, policy);
    CHECK_FALSE(d.keep);
    CHECK(d.reason == "size");
    rec.width = 301;
    rec.height = 300;
    CHECK(pipeline::filter_image(rec, policy).reason == "size");
  }
  SUBCASE("language, dominance, and content flags") {
    rec.page_lang = "fr";
    CHECK(pipeline::filter_image(rec, policy).reason == "lang");
    rec.page_lang = "en";
    rec.is_dominant = false;
    CHECK(pipeline::filter_image(rec, policy).reason == "dominant");
    rec.is_dominant = true;
    rec.content_flags = {"racy"};
    CHECK(pipeline::filter_image(rec, policy).reason == "content");
    rec.content_flags = {"unnatural"};
    CHECK(pipeline::filter_image(rec, policy).reason == "content");
  }
  SUBCASE("first matching reason wins") {
    rec.page_lang = "de";
    rec.content_flags = {"racy"};
    rec.width = 10;
    CHECK(pipeline::filter_image(rec, policy).reason == "lang");
  }
  SUBCASE("policy can relax the rules") {
    policy.require_dominant = false;
    rec.is_dominant = false;
    CHECK(pipeline::filter_image(rec, policy).keep);
    policy.min_size = 100;
    rec.width = 150;
    rec.height = 150;
    CHECK(pipeline::filter_image(rec, policy).keep);
  }
}

TEST_CASE("sentence cleaning") {
  PipelinePolicy policy;
  auto vocab = shipped_vocab();

  SUBCASE("a 13-word in-vocab sentence is kept unchanged") {
    std::string s = "an old dog and a cat near a tree by a house .";
    REQUIRE(std::count(s.begin(), s.end(), ' ') == 12);  // 13 whitespace words
    auto c = pipeline::clean_sentence(s, policy, vocab);
    CHECK(c.kept);
    CHECK(c.text == s);
  }
  SUBCASE("length bounds are inclusive") {
    CHECK_FALSE(pipeline::clean_sentence("a dog", policy, vocab).kept);
    CHECK(pipeline::clean_sentence("a dog", policy, vocab).reason == "length");
    CHECK(pipeline::clean_sentence("a small dog", policy, vocab).kept);  // 3 words
    std::string long30, long31;
    for (int i = 0; i < 30; ++i) long30 += (i ? " a" : "a");
    long31 = long30 + " a";
    CHECK(pipeline::clean_sentence(long30, policy, vocab).kept);
    CHECK(pipeline::clean_sentence(long31, policy, vocab).reason == "length");
    CHECK(pipeline::clean_sentence("", policy, vocab).reason == "length");
  }
  SUBCASE("out-of-vocabulary ratio is a strict threshold") {
    // 2 of 5 words unknown: 0.4 > 0.25 drops
    auto d = pipeline::clean_sentence("a dog zzzq qqqz .", policy, vocab);
    CHECK_FALSE(d.kept);
    CHECK(d.reason == "oov");
    // 1 of 4: 0.25 is not strictly greater, keeps
    CHECK(pipeline::clean_sentence("a dog zzzq .", policy, vocab).kept);
    // subword decompositions (cats -> cat ##s, unable -> un ##able) are in-vocabulary
    CHECK(pipeline::clean_sentence("some unable cats are showing", policy, vocab).kept);
  }
  SUBCASE("bad spans are stripped before counting") {
    auto c = pipeline::clean_sentence("a dog <b>Click Here</b> and a cat with http://x.y/z .",
                                      policy, vocab);
    CHECK(c.kept);
    CHECK(c.text == "a dog and a cat with .");
    // stripping can push a sentence under the length floor
    auto d = pipeline::clean_sentence("<div>click here</div> a dog", policy, vocab);
    CHECK(d.reason == "length");
  }
  SUBCASE("whitespace is normalized") {
    auto c = pipeline::clean_sentence("  a   small\tdog  ", policy, vocab);
    CHECK(c.kept);
    CHECK(c.text == "a small dog");
  }
}

TEST_CASE("reference scorer is a hand-checkable logistic") {
  pipeline::ReferenceScorer scorer;
  auto rec = raw_record();  // tags {dog, cat}

  SUBCASE("full tag overlap scores above 0.9") {
    auto p = scorer.score(rec, "a dog and a cat .");
    // by hand: overlap 2/2, 6 words -> prior exp(-49/72), image 2/8
    const double prior = std::exp(-49.0 / 72.0);
    const double z = 4.0 * 1.0 + prior + 0.5 * 0.25 - 2.0;
    CHECK(p.score == doctest::Approx(1.0 / (1.0 + std::exp(-z))).epsilon(1e-12));
    CHECK(p.score > 0.9);
    REQUIRE(p.cross_features.size() == 1);
    CHECK(p.cross_features[0] == 1.0);
    CHECK(p.text_features[0] == doctest::Approx(prior));
    CHECK(p.image_features[0] == 0.25);
  }
  SUBCASE("zero overlap lands below the keep threshold") {
    auto p = scorer.score(rec, "a large green tree near a house .");
    CHECK(p.score < 0.5);
  }
  SUBCASE("empty text scores exactly 0") {
    CHECK(scorer.score(rec, "").score == 0.0);
    CHECK(scorer.score(rec, "   ").score == 0.0);
  }
  SUBCASE("scoring is deterministic") {
    auto a = scorer.score(rec, "a dog and a cat .");
    auto b = scorer.score(rec, "a dog and a cat .");
    CHECK(a.score == b.score);
  }
  SUBCASE("overlap is case-insensitive and counts distinct words") {
    auto p = scorer.score(rec, "Dog dog DOG cat");
    CHECK(p.cross_features[0] == 1.0);
  }
}

TEST_CASE("aggregation keeps the best text per image") {
  pipeline::StageCounts counts;
  auto pair = [](const std::string& img, const std::string& text, double score) {
    pipeline::ScoredPair p;
    p.image_id = img;
    p.text = text;
    p.score = score;
    return p;
  };

  SUBCASE("argmax per image") {
    auto out = pipeline::aggregate(
        {pair("i1", "weak caption here", 0.6), pair("i1", "strong caption here", 0.9)}, 10, counts);
    REQUIRE(out.size() == 1);
    CHECK(out[0].text == "strong caption here");
    CHECK(counts.input == 2);
    CHECK(counts.kept == 1);
    CHECK(counts.dropped.at("not_best") == 1);
  }
  SUBCASE("score ties pick the lexicographically smallest text") {
    auto out = pipeline::aggregate(
        {pair("i1", "b caption", 0.7), pair("i1", "a caption", 0.7), pair("i1", "c caption", 0.7)},
        10, counts);
    REQUIRE(out.size() == 1);
    CHECK(out[0].text == "a caption");
  }
  SUBCASE("texts spread over more than max_dup images vanish entirely") {
    std::vector<pipeline::ScoredPair> pairs;
    for (int i = 0; i < 4; ++i)
      pairs.push_back(pair("img" + std::to_string(i), "same spam text", 0.99));
    for (int i = 0; i < 4; ++i)
      pairs.push_back(pair("img" + std::to_string(i), "honest caption " + std::to_string(i), 0.6));
    auto out = pipeline::aggregate(pairs, 3, counts);
    REQUIRE(out.size() == 4);
    for (const auto& p : out) CHECK(p.text.rfind("honest", 0) == 0);
    CHECK(counts.dropped.at("dup") == 4);
    CHECK(counts.input == counts.kept + counts.dropped_total());
  }
  SUBCASE("duplicate detection normalizes case and spacing") {
    std::vector<pipeline::ScoredPair> pairs;
    pairs.push_back(pair("a", "Same  Text", 0.9));
    pairs.push_back(pair("b", "same text", 0.9));
    auto out = pipeline::aggregate(pairs, 1, counts);
    CHECK(out.empty());
    CHECK(counts.dropped.at("dup") == 2);
  }
  SUBCASE("single pair in, single pair out") {
    auto out = pipeline::aggregate({pair("i1", "only text", 0.8)}, 10, counts);
    REQUIRE(out.size() == 1);
    CHECK(out[0].text == "only text");
    CHECK(counts.kept == 1);
  }
  SUBCASE("output is sorted by image id regardless of input order") {
    auto out = pipeline::aggregate(
        {pair("z", "z text", 0.9), pair("a", "a text", 0.9), pair("m", "m text", 0.9)}, 10, counts);
    REQUIRE(out.size() == 3);
    CHECK(out[0].image_id == "a");
    CHECK(out[2].image_id == "z");
  }
}

TEST_CASE("stage counters reconcile and misuse is caught") {
  pipeline::StageCounts s;
  s.input = 10;
  s.kept = 7;
  s.dropped["x"] = 3;
  CHECK_NOTHROW(s.check());
  s.dropped["x"] = 2;
  CHECK_THROWS_AS(s.check(), std::logic_error);
}

namespace {

struct FlakyScorer : pipeline::SemanticScorer {
  pipeline::ScoredPair score(const CorpusRecord& rec, const std::string& text) const override {
    if (text.find("poison") != std::string::npos) throw std::runtime_error("scorer exploded");
    pipeline::ReferenceScorer ref;
    return ref.score(rec, text);
  }
};

std::vector<CorpusRecord> mixed_input() {
  std::vector<CorpusRecord> recs;

  auto good = raw_record("good_1");
  good.candidate_texts = {{"alt", "a dog and a cat ."}, {"title", "a large green tree ."}};
  recs.push_back(good);

  auto small = raw_record("small_1");
  small.width = 200;
  small.candidate_texts = {{"alt", "a dog and a cat ."}};
  recs.push_back(small);

  auto foreign = raw_record("foreign_1");
  foreign.page_lang = "de";
  foreign.candidate_texts = {{"alt", "a dog and a cat ."}};
  recs.push_back(foreign);

  auto flagged = raw_record("flagged_1");
  flagged.content_flags = {"pornographic"};
  flagged.candidate_texts = {{"alt", "a dog and a cat ."}};
  recs.push_back(flagged);

  auto noisy = raw_record("noisy_1");
  noisy.tags = {"house", "tree"};
  noisy.candidate_texts = {{"alt", "ok"},                                // too short
                           {"title", "a zzzq qqqz xxxj sentence here"},  // too many OOV
                           {"surrounding", "a house and a tree ."}};     // survives
  recs.push_back(noisy);

  auto poisoned = raw_record("poisoned_1");
  poisoned.candidate_texts = {{"alt", "poison a dog and a cat ."}};
  recs.push_back(poisoned);

  auto weak = raw_record("weak_1");
  weak.tags = {"bus", "lamp"};
  weak.candidate_texts = {{"alt", "a dog and a cat ."}};  // no overlap with tags
  recs.push_back(weak);

  return recs;
}

}  // namespace

TEST_CASE("end-to-end pipeline run") {
  auto vocab = shipped_vocab();
  PipelinePolicy policy;
  FlakyScorer scorer;
  auto input = mixed_input();
  auto result = pipeline::run(input, policy, vocab, scorer);

  SUBCASE("stage counters reconcile exactly") {
    CHECK_NOTHROW(result.stats.check());
    CHECK(result.stats.images.input == 7);
    CHECK(result.stats.images.kept == 4);  // good, noisy, poisoned, weak
    CHECK(result.stats.images.dropped.at("size") == 1);
    CHECK(result.stats.images.dropped.at("lang") == 1);
    CHECK(result.stats.images.dropped.at("content") == 1);
    CHECK(result.stats.sentences.input == 7);
    CHECK(result.stats.sentences.dropped.at("length") == 1);
    CHECK(result.stats.sentences.dropped.at("oov") == 1);
    CHECK(result.stats.scoring.dropped.at("scorer_error") == 1);
    CHECK(result.stats.scoring.dropped.at("score") >= 1);  // weak_1 and good_1's tree text
  }
  SUBCASE("surviving records carry the winning caption") {
    REQUIRE(result.records.size() == 2);
    CHECK(result.records[0].image_id == "good_1");
    CHECK(result.records[0].caption == "a dog and a cat .");
    CHECK(result.records[1].image_id == "noisy_1");
    CHECK(result.records[1].caption == "a house and a tree .");
  }
  SUBCASE("output is invariant to input order") {
    auto shuffled = input;
    Rng rng(7);
    rng.shuffle(shuffled);
    auto other = pipeline::run(shuffled, policy, vocab, scorer);
    REQUIRE(other.records.size() == result.records.size());
    for (size_t i = 0; i < other.records.size(); ++i) {
      CHECK(other.records[i].image_id == result.records[i].image_id);
      CHECK(corpus::to_json_line(other.records[i]) == corpus::to_json_line(result.records[i]));
    }
    CHECK(other.stats.to_json() == result.stats.to_json());
  }
  SUBCASE("re-running produces identical serialized output") {
    auto again = pipeline::run(input, policy, vocab, scorer);
    std::string a, b;
    for (const auto& r : result.records) a += corpus::to_json_line(r) + "\n";
    for (const auto& r : again.records) b += corpus::to_json_line(r) + "\n";
    CHECK(a == b);
    CHECK(again.stats.to_json() == result.stats.to_json());
  }
}

TEST_CASE("synthetic corpora flow through the pipeline cleanly") {
  auto vocab = shipped_vocab();
  auto spec = synth::WorldSpec::demo();
  spec.num_images = 30;
  spec.width = 640;  // above the size gate
  spec.height = 480;
  auto ds = synth::generate(spec, 17);
  PipelinePolicy policy;
  pipeline::ReferenceScorer scorer;
  auto result = pipeline::run(ds.records, policy, vocab, scorer);
  CHECK_NOTHROW(result.stats.check());
  // every synthetic record is dominant English with a template candidate
  CHECK(result.stats.images.kept == 30);
  CHECK(result.stats.sentences.input == 30);
  // captions mention their tags, so the reference scorer keeps them
  CHECK(result.records.size() == 30);
}

TEST_CASE("pipeline policy JSON") {
  PipelinePolicy p;
  p.max_dup = 4;
  p.score_threshold = 0.25;
  p.bad_spans.push_back("extra pattern");
  auto back = PipelinePolicy::from_json(p.to_json());
  CHECK(back.to_json() == p.to_json());
  CHECK(back.max_dup == 4);
  CHECK(back.bad_spans.size() == 5);

  CHECK_THROWS_AS(PipelinePolicy::from_json(R"({"max_dup": 0})"), std::invalid_argument);
  CHECK_THROWS_AS(PipelinePolicy::from_json(R"({"score_threshold": 1.5})"), std::invalid_argument);
  CHECK_THROWS_AS(PipelinePolicy::from_json(R"({"bad_spans": ["(unclosed"]})"),
                  std::invalid_argument);
  // defaults match the documented reference behavior
  PipelinePolicy d;
  CHECK(d.min_size == 300);
  CHECK(d.min_words == 3);
  CHECK(d.max_words == 30);
  CHECK(d.max_oov_ratio == 0.25);
  CHECK(d.score_threshold == 0.5);
  CHECK(d.max_dup == 10);
}
