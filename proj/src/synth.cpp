#include "vlpre/synth.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>

#include "json.hpp"
#include "vlpre/rng.hpp"

namespace vlpre {
namespace synth {

void WorldSpec::validate() const {
  if (class_names.empty()) throw std::invalid_argument("world spec: no classes");
  for (const auto& n : class_names)
    if (n.empty()) throw std::invalid_argument("world spec: empty class name");
  if (num_images < 1) throw std::invalid_argument("world spec: num_images must be >= 1");
  if (rois_per_image < 1) throw std::invalid_argument("world spec: rois_per_image must be >= 1");
  if (d_v < 1) throw std::invalid_argument("world spec: d_v must be >= 1");
  if (width < 16 || height < 16) throw std::invalid_argument("world spec: image too small");
  if (feature_noise < 0) throw std::invalid_argument("world spec: negative feature_noise");
  if (caption_class_noise < 0 || caption_class_noise > 1)
    throw std::invalid_argument("world spec: caption_class_noise outside [0,1]");
  if (captions_per_image < 1) throw std::invalid_argument("world spec: captions_per_image < 1");
  if (max_classes_per_image < 1)
    throw std::invalid_argument("world spec: max_classes_per_image < 1");
  if (dialect != 0 && dialect != 1) throw std::invalid_argument("world spec: dialect must be 0 or 1");
  if (domain_ratio < 1) throw std::invalid_argument("world spec: domain_ratio must be >= 1");
}

std::string WorldSpec::to_json() const {
  nlohmann::json j{{"class_names", class_names},
                   {"num_images", num_images},
                   {"rois_per_image", rois_per_image},
                   {"d_v", d_v},
                   {"width", width},
                   {"height", height},
                   {"feature_noise", feature_noise},
                   {"caption_class_noise", caption_class_noise},
                   {"captions_per_image", captions_per_image},
                   {"max_classes_per_image", max_classes_per_image},
                   {"unique_class_sets", unique_class_sets},
                   {"class_skew", class_skew},
                   {"dialect", dialect},
                   {"domain_ratio", domain_ratio},
                   {"id_prefix", id_prefix},
                   {"proto_seed", proto_seed}};
  return j.dump(2);
}

WorldSpec WorldSpec::from_json(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  WorldSpec s;
  s.class_names = j.at("class_names").get<std::vector<std::string>>();
  s.num_images = j.value("num_images", s.num_images);
  s.rois_per_image = j.value("rois_per_image", s.rois_per_image);
  s.d_v = j.value("d_v", s.d_v);
  s.width = j.value("width", s.width);
  s.height = j.value("height", s.height);
  s.feature_noise = j.value("feature_noise", s.feature_noise);
  s.caption_class_noise = j.value("caption_class_noise", s.caption_class_noise);
  s.captions_per_image = j.value("captions_per_image", s.captions_per_image);
  s.max_classes_per_image = j.value("max_classes_per_image", s.max_classes_per_image);
  s.unique_class_sets = j.value("unique_class_sets", s.unique_class_sets);
  s.class_skew = j.value("class_skew", s.class_skew);
  s.dialect = j.value("dialect", s.dialect);
  s.domain_ratio = j.value("domain_ratio", s.domain_ratio);
  s.id_prefix = j.value("id_prefix", s.id_prefix);
  s.proto_seed = j.value("proto_seed", s.proto_seed);
  s.validate();
  return s;
}

WorldSpec WorldSpec::demo() {
  WorldSpec s;
  s.class_names = {"dog",    "cat",    "car",    "tree",  "house", "bird",  "boat",
                   "chair",  "horse",  "train",  "plane", "flower", "person", "bottle",
                   "clock",  "fish",   "sheep",  "cow",   "bus",   "lamp"};
  return s;
}

std::vector<std::vector<double>> class_prototypes(int K, int d_v, uint64_t proto_seed) {
  Rng rng(proto_seed);
  std::vector<std::vector<double>> protos(K, std::vector<double>(d_v));
  for (int c = 0; c < K; ++c) {
    auto sub = rng.derive(static_cast<uint64_t>(c));
    double norm2 = 0.0;
    for (auto& x : protos[c]) {
      x = sub.normal();
      norm2 += x * x;
    }
    const double inv = 1.0 / std::sqrt(std::max(norm2, 1e-12));
    for (auto& x : protos[c]) x *= inv;
  }
  return protos;
}

std::vector<double> class_weights(int K, double skew) {
  std::vector<double> w(K);
  double total = 0.0;
  for (int c = 0; c < K; ++c) {
    const double z = K == 1 ? 0.0 : 2.0 * c / (K - 1) - 1.0;
    w[c] = std::exp(skew * z);
    total += w[c];
  }
  for (auto& x : w) x /= total;
  return w;
}

namespace {

int sample_class(const std::vector<double>& weights, Rng& rng) {
  const double u = rng.uniform();
  double acc = 0.0;
  for (size_t c = 0; c < weights.size(); ++c) {
    acc += weights[c];
    if (u < acc) return static_cast<int>(c);
  }
  return static_cast<int>(weights.size()) - 1;
}

// a noun phrase, optionally decorated with a distractor adjective
std::string noun_phrase(const std::string& cls, Rng& rng) {
  static const std::vector<std::string> adjectives{"small", "large", "old",  "new",
                                                   "red",   "blue",  "green"};
  std::string np = "a ";
  if (rng.uniform() < 0.3) np += adjectives[rng.uniform_int(adjectives.size())] + " ";
  return np + cls;
}

std::string make_caption(const std::vector<std::string>& mentioned, int dialect, Rng& rng) {
  static const std::vector<std::string> prefixes0{"a photo of", "a picture of", "an image of",
                                                  "a snapshot of"};
  static const std::vector<std::string> joins1{"beside", "near"};
  std::string cap;
  if (dialect == 0) {
    cap = prefixes0[rng.uniform_int(prefixes0.size())];
    for (size_t i = 0; i < mentioned.size(); ++i) {
      if (i > 0) cap += " and";
      cap += " " + noun_phrase(mentioned[i], rng);
    }
  } else {
    cap = "there is";
    for (size_t i = 0; i < mentioned.size(); ++i) {
      if (i > 0) cap += " " + joins1[rng.uniform_int(joins1.size())];
      cap += " " + noun_phrase(mentioned[i], rng);
    }
  }
  return cap + " .";
}

}  // namespace

Dataset generate(const WorldSpec& spec, uint64_t seed) {
  spec.validate();
  const int K = static_cast<int>(spec.class_names.size());
  const auto protos = class_prototypes(K, spec.d_v, spec.proto_seed);
  const auto weights = class_weights(K, spec.class_skew);
  Rng root(seed);
  Dataset ds;
  std::set<std::vector<int>> used_sets;
  for (int i = 0; i < spec.num_images; ++i) {
    Rng img_rng = root.derive(static_cast<uint64_t>(i));

    // distinct classes present, rejected until unseen in unique mode
    std::vector<int> distinct;
    for (int attempt = 0;; ++attempt) {
      if (attempt > 500)
        throw std::runtime_error("generate: unique class sets exhausted at image " +
                                 std::to_string(i));
      Rng cr = img_rng.derive("classes").derive(static_cast<uint64_t>(attempt));
      distinct.clear();
      distinct.push_back(sample_class(weights, cr));
      const int max_distinct =
          std::min(spec.max_classes_per_image, std::min(spec.rois_per_image, K));
      // each additional class joins with p = 0.7, rejection-sampled to be new
      for (int extra = 1; extra < max_distinct; ++extra) {
        if (cr.uniform() >= 0.7) break;
        bool added = false;
        for (int guard = 0; guard < 64 && !added; ++guard) {
          int c = sample_class(weights, cr);
          if (std::find(distinct.begin(), distinct.end(), c) == distinct.end()) {
            distinct.push_back(c);
            added = true;
          }
        }
        if (!added) break;
      }
      if (!spec.unique_class_sets) break;
      std::vector<int> key = distinct;
      std::sort(key.begin(), key.end());
      if (used_sets.insert(key).second) break;
    }

    CorpusRecord rec;
    rec.image_id = spec.id_prefix + "_" + std::to_string(i);
    rec.width = spec.width;
    rec.height = spec.height;
    rec.d_v = spec.d_v;

    Rng roi_rng = img_rng.derive("rois");
    for (int r = 0; r < spec.rois_per_image; ++r) {
      // every distinct class appears at least once
      const int cls = r < static_cast<int>(distinct.size())
                          ? distinct[r]
                          : distinct[roi_rng.uniform_int(distinct.size())];
      Roi roi;
      roi.class_id = cls;
      roi.class_name = spec.class_names[cls];
      const double bw = 10.0 + roi_rng.uniform() * (spec.width / 2.0 - 10.0);
      const double bh = 10.0 + roi_rng.uniform() * (spec.height / 2.0 - 10.0);
      const double x = roi_rng.uniform() * (spec.width - bw);
      const double y = roi_rng.uniform() * (spec.height - bh);
      roi.box = {x, y, x + bw, y + bh};
      roi.feature_offset = static_cast<int64_t>(ds.features.values.size());
      for (int j = 0; j < spec.d_v; ++j)
        ds.features.values.push_back(protos[cls][j] + spec.feature_noise * roi_rng.normal());
      rec.rois.push_back(roi);
    }

    // mentioned classes follow RoI order; optional label noise breaks alignment
    Rng cap_rng = img_rng.derive("caption");
    std::vector<std::string> mentioned;
    for (int c : distinct) {
      int named = c;
      if (cap_rng.uniform() < spec.caption_class_noise)
        named = static_cast<int>(cap_rng.uniform_int(static_cast<uint64_t>(K)));
      mentioned.push_back(spec.class_names[named]);
    }
    rec.tags = mentioned;
    for (int v = 0; v < spec.captions_per_image; ++v)
      rec.captions.push_back(make_caption(mentioned, spec.dialect, cap_rng));
    rec.caption = rec.captions[0];
    if (spec.captions_per_image == 1) rec.captions.clear();
    rec.candidate_texts.push_back({"template", rec.caption});

    corpus::validate(rec);
    ds.records.push_back(std::move(rec));
  }
  return ds;
}

std::pair<Dataset, Dataset> make_domain_pair(const WorldSpec& spec, double shift, uint64_t seed) {
  if (shift < 0) throw std::invalid_argument("make_domain_pair: shift must be >= 0");
  spec.validate();
  WorldSpec out = spec;
  out.class_skew = shift;
  out.dialect = 0;
  out.id_prefix = spec.id_prefix + "_ood";
  WorldSpec in = spec;
  in.class_skew = -shift;
  in.dialect = shift > 0 ? 1 : 0;
  in.id_prefix = spec.id_prefix + "_ind";
  in.num_images = std::max(1, spec.num_images / spec.domain_ratio);
  Rng r(seed);
  const uint64_t out_seed = r.next_u64();
  const uint64_t in_seed = r.next_u64();
  return {generate(out, out_seed), generate(in, in_seed)};
}

std::vector<double> class_frequencies(const Dataset& ds, int K) {
  std::vector<double> freq(K, 0.0);
  long total = 0;
  for (const auto& rec : ds.records)
    for (const auto& roi : rec.rois) {
      if (roi.class_id < 0 || roi.class_id >= K)
        throw std::invalid_argument("class_frequencies: label outside [0, K)");
      freq[roi.class_id] += 1.0;
      ++total;
    }
  if (total > 0)
    for (auto& f : freq) f /= static_cast<double>(total);
  return freq;
}

}  // namespace synth
}  // namespace vlpre
