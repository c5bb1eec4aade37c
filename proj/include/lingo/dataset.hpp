#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lingo/rng.hpp"
#include "lingo/tensor.hpp"

namespace lingo {

// JSON manifest describing one concept split: class names, instances per
// class, generator seed, image size.
struct DatasetManifest {
  std::string split;
  std::uint64_t generator_seed = 0;
  int image_size = 16;
  std::vector<std::pair<std::string, int>> classes;  // name, instance count

  static DatasetManifest load(const std::string& path);
  void save(const std::string& path) const;

  // presets mirroring the two icon collections (40 classes / 408 images and
  // 16 classes / 48 images) plus small desk-scale splits
  static DatasetManifest preset(const std::string& name);
  std::vector<std::string> class_names() const;
  int total_images() const;
};

// Procedural stand-in for the icon datasets: each class owns a palette and a
// parametric pattern; instances jitter translation, color and noise.
// Deterministic in (generator_seed, class, instance).
Tensor synth_image(std::uint64_t generator_seed, int image_size, int class_id,
                   int instance_seed);

class ConceptDataset {
 public:
  ConceptDataset(DatasetManifest manifest);

  int num_classes() const { return static_cast<int>(entries_.size()); }
  int num_instances(int class_idx) const;
  const std::string& class_name(int class_idx) const;
  const std::string& split() const { return manifest_.split; }
  const DatasetManifest& manifest() const { return manifest_; }
  int image_size() const { return manifest_.image_size; }
  int total_images() const;

  const Tensor& image(int class_idx, int instance_idx) const;

  // canonical instance with probability 1-ratio, else a uniform other one
  int sample_instance(int class_idx, double variation_ratio, Rng& rng) const;

  bool classes_disjoint_from(const ConceptDataset& other) const;

 private:
  DatasetManifest manifest_;
  struct Entry {
    std::string name;
    std::vector<Tensor> images;
  };
  std::vector<Entry> entries_;
};

}  // namespace lingo
