#include "lingo/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <stdexcept>

#include "json.hpp"

namespace lingo {

namespace {

const std::vector<std::string>& animal_names() {
  static const std::vector<std::string> names = {
      "armadillo", "bear",      "bull",      "butterfly", "camel",
      "cat",       "chicken",   "cobra",     "condor",    "cow",
      "crab",      "crocodile", "deer",      "dog",       "donkey",
      "duck",      "elephant",  "fish",      "frog",      "giraffe",
      "goat",      "hedgehog",  "kangaroo",  "koala",     "lion",
      "monkey",    "octopus",   "ostrich",   "panda",     "peacock",
      "penguin",   "pig",       "rhinoceros", "rooster",  "seahorse",
      "snail",     "spider",    "squirrel",  "tiger",     "turtle"};
  return names;
}

const std::vector<std::string>& fruit_names() {
  static const std::vector<std::string> names = {
      "apple",     "avocado", "banana",  "blueberry",  "cabbage",
      "cherry",    "coconut", "cucumber", "fig",       "grape",
      "lemon",     "orange",  "pineapple", "pumpkin",  "strawberry",
      "watermelon"};
  return names;
}

}  // namespace

DatasetManifest DatasetManifest::load(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot read dataset manifest: " + path);
  nlohmann::json j;
  f >> j;
  DatasetManifest m;
  m.split = j.at("split").get<std::string>();
  m.generator_seed = j.at("generator_seed").get<std::uint64_t>();
  m.image_size = j.at("image_size").get<int>();
  for (const auto& c : j.at("classes"))
    m.classes.emplace_back(c.at("name").get<std::string>(),
                           c.at("instances").get<int>());
  if (m.classes.empty())
    throw std::runtime_error("dataset manifest has no classes: " + path);
  return m;
}

void DatasetManifest::save(const std::string& path) const {
  nlohmann::json j;
  j["split"] = split;
  j["generator_seed"] = generator_seed;
  j["image_size"] = image_size;
  j["classes"] = nlohmann::json::array();
  for (const auto& [name, count] : classes)
    j["classes"].push_back({{"name", name}, {"instances", count}});
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write dataset manifest: " + path);
  f << j.dump(2) << '\n';
}

DatasetManifest DatasetManifest::preset(const std::string& name) {
  DatasetManifest m;
  if (name == "animal") {
    // 40 classes, 408 images: first eight classes carry one extra instance
    m.split = "train";
    m.generator_seed = 7001;
    m.image_size = 32;
    for (std::size_t i = 0; i < animal_names().size(); ++i)
      m.classes.emplace_back(animal_names()[i], i < 8 ? 11 : 10);
  } else if (name == "fruit") {
    m.split = "test";
    m.generator_seed = 7002;
    m.image_size = 32;
    for (const auto& n : fruit_names()) m.classes.emplace_back(n, 3);
  } else if (name == "desk_train") {
    m.split = "train";
    m.generator_seed = 7001;
    m.image_size = 16;
    for (int i = 0; i < 8; ++i)
      m.classes.emplace_back(animal_names()[i], 10);
  } else if (name == "desk_test") {
    m.split = "test";
    m.generator_seed = 7002;
    m.image_size = 16;
    for (int i = 0; i < 4; ++i)
      m.classes.emplace_back(fruit_names()[i], 6);
  } else {
    throw std::runtime_error("unknown dataset preset: " + name);
  }
  return m;
}

std::vector<std::string> DatasetManifest::class_names() const {
  std::vector<std::string> out;
  for (const auto& [name, _] : classes) out.push_back(name);
  return out;
}

int DatasetManifest::total_images() const {
  int n = 0;
  for (const auto& [_, count] : classes) n += count;
  return n;
}

Tensor synth_image(std::uint64_t generator_seed, int image_size, int class_id,
                   int instance_seed) {
  const int s = image_size;
  Tensor img({s, s, 3});
  Rng class_rng(Rng::derive(generator_seed, 0xC1A55, class_id));
  // class-level appearance
  double bg[3], fg[3], fg2[3];
  for (int c = 0; c < 3; ++c) bg[c] = class_rng.uniform(0.05, 0.35);
  for (int c = 0; c < 3; ++c) fg[c] = class_rng.uniform(0.55, 0.95);
  for (int c = 0; c < 3; ++c) fg2[c] = class_rng.uniform(0.35, 0.85);
  const int pattern = static_cast<int>(class_rng.randint(8));
  const double cx0 = class_rng.uniform(0.38, 0.62) * s;
  const double cy0 = class_rng.uniform(0.38, 0.62) * s;
  const double radius = class_rng.uniform(0.22, 0.36) * s;
  const double stripe = class_rng.uniform(0.16, 0.30) * s;
  const double dotx = class_rng.uniform(0.15, 0.85) * s;
  const double doty = class_rng.uniform(0.15, 0.85) * s;
  const double dotr = class_rng.uniform(0.06, 0.12) * s;

  Rng inst_rng(Rng::derive(generator_seed, 0x1257A4CE, class_id,
                           static_cast<std::uint64_t>(instance_seed)));
  const double jx = inst_rng.uniform(-1.0, 1.0) * s / 8.0;
  const double jy = inst_rng.uniform(-1.0, 1.0) * s / 8.0;
  double tint[3];
  for (int c = 0; c < 3; ++c) tint[c] = 1.0 + 0.12 * inst_rng.normal();
  const double rscale = 1.0 + 0.08 * inst_rng.normal();

  const double cx = cx0 + jx, cy = cy0 + jy, rr = radius * rscale;
  for (int y = 0; y < s; ++y) {
    for (int x = 0; x < s; ++x) {
      const double dx = x - cx, dy = y - cy;
      const double d = std::sqrt(dx * dx + dy * dy);
      bool inside = false;
      switch (pattern) {
        case 0: inside = d < rr; break;                       // disc
        case 1: inside = d < rr && d > rr * 0.55; break;      // ring
        case 2: inside = std::abs(dx) < rr && std::abs(dy) < rr; break;
        case 3: inside = std::abs(dx) + std::abs(dy) < rr * 1.4; break;
        case 4: inside = std::fmod(y + jy + 4.0 * s, 2.0 * stripe) < stripe;
                break;
        case 5: inside = std::fmod(x + jx + 4.0 * s, 2.0 * stripe) < stripe;
                break;
        case 6: inside = (std::fmod(x + jx + 4.0 * s, 2.0 * stripe) < stripe) ^
                         (std::fmod(y + jy + 4.0 * s, 2.0 * stripe) < stripe);
                break;
        default: inside = std::abs(dx) < rr * 0.35 || std::abs(dy) < rr * 0.35;
                 break;                                       // cross
      }
      const bool in_dot = std::sqrt((x - dotx - jx) * (x - dotx - jx) +
                                    (y - doty - jy) * (y - doty - jy)) < dotr;
      for (int c = 0; c < 3; ++c) {
        double val = inside ? fg[c] : bg[c];
        if (in_dot) val = fg2[c];
        val = val * tint[c] + 0.02 * inst_rng.normal();
        img.v[(y * s + x) * 3 + c] = std::clamp(val, 0.0, 1.0);
      }
    }
  }
  return img;
}

ConceptDataset::ConceptDataset(DatasetManifest manifest)
    : manifest_(std::move(manifest)) {
  std::set<std::string> seen;
  int class_id = 0;
  for (const auto& [name, count] : manifest_.classes) {
    if (!seen.insert(name).second)
      throw std::runtime_error("duplicate class in manifest: " + name);
    if (count < 1)
      throw std::runtime_error("class " + name + " has no instances");
    Entry e;
    e.name = name;
    for (int inst = 0; inst < count; ++inst)
      e.images.push_back(synth_image(manifest_.generator_seed,
                                     manifest_.image_size, class_id, inst));
    entries_.push_back(std::move(e));
    ++class_id;
  }
}

int ConceptDataset::num_instances(int class_idx) const {
  return static_cast<int>(entries_.at(class_idx).images.size());
}

const std::string& ConceptDataset::class_name(int class_idx) const {
  return entries_.at(class_idx).name;
}

int ConceptDataset::total_images() const { return manifest_.total_images(); }

const Tensor& ConceptDataset::image(int class_idx, int instance_idx) const {
  return entries_.at(class_idx).images.at(instance_idx);
}

int ConceptDataset::sample_instance(int class_idx, double variation_ratio,
                                    Rng& rng) const {
  const int n = num_instances(class_idx);
  if (n == 1) return 0;
  if (rng.uniform() >= variation_ratio) return 0;
  return 1 + static_cast<int>(rng.randint(n - 1));
}

bool ConceptDataset::classes_disjoint_from(const ConceptDataset& other) const {
  std::set<std::string> mine;
  for (const auto& e : entries_) mine.insert(e.name);
  for (const auto& e : other.entries_)
    if (mine.count(e.name)) return false;
  return true;
}

}  // namespace lingo
