#include "vlpre/corpus.hpp"

#include <bit>
#include <cstring>
#include <stdexcept>

#include "json.hpp"
#include "vlpre/util.hpp"

namespace vlpre {

static_assert(std::endian::native == std::endian::little,
              "feature blobs are little-endian on disk");

std::vector<double> FeatureBlob::slice(int64_t offset, int n) const {
  if (offset < 0 || n < 0 || offset + n > static_cast<int64_t>(values.size()))
    throw std::out_of_range("feature blob: slice [" + std::to_string(offset) + ", " +
                            std::to_string(offset + n) + ") outside blob of " +
                            std::to_string(values.size()) + " values");
  return {values.begin() + offset, values.begin() + offset + n};
}

namespace corpus {

using nlohmann::json;

std::string to_json_line(const CorpusRecord& rec) {
  json j;
  j["image_id"] = rec.image_id;
  j["width"] = rec.width;
  j["height"] = rec.height;
  j["page_lang"] = rec.page_lang;
  j["is_dominant"] = rec.is_dominant;
  j["content_flags"] = rec.content_flags;
  json cands = json::array();
  for (const auto& c : rec.candidate_texts)
    cands.push_back({{"source", c.source}, {"text", c.text}});
  j["candidate_texts"] = cands;
  j["caption"] = rec.caption;
  if (!rec.captions.empty()) j["captions"] = rec.captions;
  j["tags"] = rec.tags;
  j["d_v"] = rec.d_v;
  json rois = json::array();
  for (const auto& r : rec.rois) {
    rois.push_back({{"box", r.box},
                    {"class_id", r.class_id},
                    {"class_name", r.class_name},
                    {"feature_offset", r.feature_offset}});
  }
  j["rois"] = rois;
  if (rec.global_feature_offset >= 0) j["global_feature_offset"] = rec.global_feature_offset;
  return j.dump();
}

CorpusRecord from_json_line(const std::string& line) {
  json j = json::parse(line);
  CorpusRecord rec;
  rec.image_id = j.at("image_id").get<std::string>();
  rec.width = j.value("width", 0);
  rec.height = j.value("height", 0);
  rec.page_lang = j.value("page_lang", "en");
  rec.is_dominant = j.value("is_dominant", true);
  rec.content_flags = j.value("content_flags", std::vector<std::string>{});
  if (j.contains("candidate_texts")) {
    for (const auto& c : j["candidate_texts"]) {
      rec.candidate_texts.push_back(
          {c.value("source", "alt"), c.at("text").get<std::string>()});
    }
  }
  rec.caption = j.value("caption", "");
  rec.captions = j.value("captions", std::vector<std::string>{});
  rec.tags = j.value("tags", std::vector<std::string>{});
  rec.d_v = j.value("d_v", 0);
  if (j.contains("rois")) {
    for (const auto& r : j["rois"]) {
      Roi roi;
      auto box = r.at("box");
      for (int i = 0; i < 4; ++i) roi.box[i] = box.at(i).get<double>();
      roi.class_id = r.at("class_id").get<int>();
      roi.class_name = r.value("class_name", "");
      roi.feature_offset = r.at("feature_offset").get<int64_t>();
      rec.rois.push_back(std::move(roi));
    }
  }
  rec.global_feature_offset = j.value("global_feature_offset", int64_t{-1});
  return rec;
}

void validate(const CorpusRecord& rec) {
  auto fail = [&](const std::string& what) {
    throw std::invalid_argument("record '" + rec.image_id + "': " + what);
  };
  if (rec.image_id.empty()) throw std::invalid_argument("record: empty image_id");
  if (rec.width < 0 || rec.height < 0) fail("negative image size");
  for (const auto& r : rec.rois) {
    const auto& b = r.box;
    if (!(0 <= b[0] && b[0] < b[2] && b[2] <= rec.width))
      fail("roi x-range [" + std::to_string(b[0]) + ", " + std::to_string(b[2]) +
           "] invalid for width " + std::to_string(rec.width));
    if (!(0 <= b[1] && b[1] < b[3] && b[3] <= rec.height))
      fail("roi y-range [" + std::to_string(b[1]) + ", " + std::to_string(b[3]) +
           "] invalid for height " + std::to_string(rec.height));
    if (r.class_id < 0) fail("negative class_id");
    if (r.feature_offset < 0) fail("negative feature_offset");
  }
  if (!rec.rois.empty() && rec.d_v <= 0) fail("rois present but d_v not set");
}

Dataset load(const std::string& stem) {
  Dataset ds;
  for (const auto& line : split_lines(read_file(stem + ".jsonl"))) {
    if (line.empty()) continue;
    ds.records.push_back(from_json_line(line));
    validate(ds.records.back());
  }
  std::string raw = read_file(stem + ".features.bin");
  if (raw.size() % sizeof(double) != 0)
    throw std::runtime_error(stem + ".features.bin: size not a multiple of 8");
  ds.features.values.resize(raw.size() / sizeof(double));
  std::memcpy(ds.features.values.data(), raw.data(), raw.size());
  return ds;
}

void save(const std::string& stem, const Dataset& ds) {
  std::string text;
  for (const auto& rec : ds.records) {
    text += to_json_line(rec);
    text += '\n';
  }
  write_file_atomic(stem + ".jsonl", text);
  std::string raw(ds.features.values.size() * sizeof(double), '\0');
  std::memcpy(raw.data(), ds.features.values.data(), raw.size());
  write_file_atomic(stem + ".features.bin", raw);
}

VisualTokenSet visual_tokens(const CorpusRecord& rec, const FeatureBlob& blob) {
  if (rec.rois.empty())
    throw std::invalid_argument("record '" + rec.image_id + "': no rois");
  VisualTokenSet v;
  v.o = static_cast<int>(rec.rois.size());
  v.d_v = rec.d_v;
  v.width = rec.width;
  v.height = rec.height;
  v.features.reserve(static_cast<size_t>(v.o) * v.d_v);
  for (const auto& r : rec.rois) {
    auto f = blob.slice(r.feature_offset, rec.d_v);
    v.features.insert(v.features.end(), f.begin(), f.end());
    v.class_labels.push_back(r.class_id);
    v.boxes.push_back(r.box);
  }
  if (rec.global_feature_offset >= 0)
    v.global_feature = blob.slice(rec.global_feature_offset, rec.d_v);
  return v;
}

Dataset merge(const std::vector<const Dataset*>& parts) {
  Dataset out;
  for (const Dataset* part : parts) {
    const int64_t shift = static_cast<int64_t>(out.features.values.size());
    out.features.values.insert(out.features.values.end(), part->features.values.begin(),
                               part->features.values.end());
    for (const auto& rec : part->records) {
      CorpusRecord copy = rec;
      for (auto& roi : copy.rois) roi.feature_offset += shift;
      if (copy.global_feature_offset >= 0) copy.global_feature_offset += shift;
      out.records.push_back(std::move(copy));
    }
  }
  return out;
}

}  // namespace corpus
}  // namespace vlpre
