#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "plarseg/synth/sample.hpp"
#include "plarseg/synth/scene.hpp"

namespace plarseg::synth {

// Ground truth of the unlabelled pool. Only the simulated oracle and the
// evaluation code hold a reference to it.
class GroundTruthVault {
 public:
  void deposit(const std::string& id, LabelMap labels);
  bool contains(const std::string& id) const { return store_.count(id) != 0; }
  // Throws std::out_of_range for unknown ids.
  const LabelMap& reveal(const std::string& id) const;
  std::size_t size() const { return store_.size(); }
  std::vector<std::string> ids() const;
  // Overwrites every stored label with `value` (used by audit tests).
  void scramble(std::uint8_t value);

 private:
  std::map<std::string, LabelMap> store_;
};

struct Partition {
  std::vector<Sample> labelled;
  std::vector<Sample> unlabelled;  // label fields cleared
  GroundTruthVault vault;
};

// Random set partition with round(fraction * n) labelled samples.
Partition partition(std::vector<Sample> samples, double labelled_fraction, std::uint64_t seed);

struct DatasetSpec {
  SceneParams scene;
  int n_train = 200;
  int n_val = 40;
  int n_test = 0;
  double labelled_fraction = 0.15;
  std::uint64_t seed = 0;
  std::vector<std::string> class_names;  // defaulted to class_<c>
};

DatasetSpec dataset_spec_from_json(const nlohmann::json& j);
nlohmann::json to_json(const DatasetSpec& spec);

struct Dataset {
  DatasetSpec spec;
  std::vector<Sample> labelled;
  std::vector<Sample> unlabelled;
  std::vector<Sample> val;
  std::vector<Sample> test;
  GroundTruthVault vault;

  int k() const { return spec.scene.k; }
  std::size_t training_pixels() const;
};

Dataset make_dataset(const DatasetSpec& spec);

// <root>/images/<id>.ppm, <root>/labels/<id>.pgm, <root>/vault/<id>.pgm,
// <root>/manifest.json
void save_dataset(const Dataset& ds, const std::filesystem::path& root);
Dataset load_dataset(const std::filesystem::path& root);

nlohmann::json manifest_json(const Dataset& ds);

// Default palette: class prototypes scaled to bytes.
std::vector<std::array<std::uint8_t, 3>> default_palette(const SceneParams& p);

}  // namespace plarseg::synth
