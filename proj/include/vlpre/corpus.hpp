#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace vlpre {

// One detected region: pixel box, detector class, and the element offset of
// its d_v feature vector inside the dataset's sidecar feature blob.
struct Roi {
  std::array<double, 4> box{};  // x_tl, y_tl, x_br, y_br
  int class_id = 0;
  std::string class_name;
  int64_t feature_offset = 0;
};

struct CandidateText {
  std::string source;  // alt | title | surrounding
  std::string text;
};

// One line of a corpus JSONL file. Raw crawl-style metadata (page_lang,
// is_dominant, content_flags, candidate_texts) feeds the cleaning pipeline;
// caption/captions + rois feed training and evaluation.
struct CorpusRecord {
  std::string image_id;
  int width = 0;
  int height = 0;
  std::string page_lang = "en";
  bool is_dominant = true;
  std::vector<std::string> content_flags;  // subset of {pornographic, racy, unnatural}
  std::vector<CandidateText> candidate_texts;
  std::string caption;
  std::vector<std::string> captions;  // multi-caption eval mode; empty otherwise
  std::vector<std::string> tags;      // latent class names present in the image
  int d_v = 0;
  std::vector<Roi> rois;
  int64_t global_feature_offset = -1;  // -1 = absent
};

// Flat little-endian float64 sidecar holding all RoI feature vectors.
struct FeatureBlob {
  std::vector<double> values;

  std::vector<double> slice(int64_t offset, int n) const;  // bounds-checked
};

struct Dataset {
  std::vector<CorpusRecord> records;
  FeatureBlob features;
};

// Dense per-image visual input, materialized from a record + blob.
struct VisualTokenSet {
  int o = 0;    // number of RoIs
  int d_v = 0;  // feature dimension
  std::vector<double> features;  // o * d_v, row-major
  std::vector<int> class_labels;
  std::vector<std::array<double, 4>> boxes;
  double width = 0, height = 0;
  std::optional<std::vector<double>> global_feature;
};

namespace corpus {

std::string to_json_line(const CorpusRecord& rec);
CorpusRecord from_json_line(const std::string& line);

// Invariant checks shared by loaders and generators; throws
// std::invalid_argument naming the offending field and image_id.
void validate(const CorpusRecord& rec);

// stem.jsonl + stem.features.bin
Dataset load(const std::string& stem);
void save(const std::string& stem, const Dataset& ds);

VisualTokenSet visual_tokens(const CorpusRecord& rec, const FeatureBlob& blob);

// Concatenates records and feature blobs in order, shifting feature offsets.
Dataset merge(const std::vector<const Dataset*>& parts);

}  // namespace corpus
}  // namespace vlpre
