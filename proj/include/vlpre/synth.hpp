#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "vlpre/corpus.hpp"

namespace vlpre {
namespace synth {

// Generator description for toy image-text worlds. Seeds fully determine the
// output; prototypes depend only on proto_seed so datasets can share classes.
struct WorldSpec {
  std::vector<std::string> class_names;  // index = class id
  int num_images = 100;
  int rois_per_image = 4;
  int d_v = 32;
  int width = 640;
  int height = 480;
  double feature_noise = 0.1;        // sigma around the class prototype
  double caption_class_noise = 0.0;  // chance a mentioned class is swapped
  int captions_per_image = 1;        // >1 fills the captions list (eval pools)
  int max_classes_per_image = 2;     // distinct classes per image, chained at p=0.7
  bool unique_class_sets = false;    // distinct class set per image
  double class_skew = 0.0;           // class weights proportional to exp(skew * z_c)
  int dialect = 0;                   // caption template family, 0 or 1
  int domain_ratio = 5;              // out-of-domain : in-domain size
  std::string id_prefix = "img";
  uint64_t proto_seed = 7;

  void validate() const;
  std::string to_json() const;
  static WorldSpec from_json(const std::string& text);
  // ready-to-run spec over the 20 class tokens in the shipped vocab
  static WorldSpec demo();
};

// unit-norm random vectors; high-dimensional draws are near-orthogonal
std::vector<std::vector<double>> class_prototypes(int K, int d_v, uint64_t proto_seed);

// normalized exp(skew * z_c) with z_c evenly spread over [-1, 1]
std::vector<double> class_weights(int K, double skew);

Dataset generate(const WorldSpec& spec, uint64_t seed);

// Shared prototypes, opposite frequency skew, different caption dialect;
// in-domain set is num_images / domain_ratio. shift 0 degenerates to two
// draws of the same distribution.
std::pair<Dataset, Dataset> make_domain_pair(const WorldSpec& spec, double shift, uint64_t seed);

// empirical RoI class-label distribution
std::vector<double> class_frequencies(const Dataset& ds, int K);

}  // namespace synth
}  // namespace vlpre
