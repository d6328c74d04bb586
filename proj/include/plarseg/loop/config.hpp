#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "plarseg/errmap/emd.hpp"
#include "plarseg/plar/stats.hpp"
#include "plarseg/plar/weight_module.hpp"
#include "plarseg/synth/dataset.hpp"
#include "plarseg/tsf/model.hpp"
#include "plarseg/tsf/trainer.hpp"

namespace plarseg::loop {

enum class OracleMode { SIMULATED, HUMAN };

// Which error-mask cells reach refinement.
struct Components {
  bool al = true;      // manual labelling of flagged cells
  bool emd = true;     // fuse the decoder's mask with the confidence mask
  bool plar = true;    // nearest-class auto-refinement before the manual path
  bool learned_weights = true;  // false freezes both lambdas at 0.5
};

struct LoopConfig {
  std::string name = "run";
  std::string out_dir = "runs/run";
  std::optional<std::string> data_dir;  // load instead of generating
  synth::DatasetSpec data;
  tsf::SegModelConfig model;
  tsf::TrainConfig train;
  int rounds = 3;
  int iters_per_round = 200;
  Components components;
  float conf_tau = 0.7f;
  float emd_threshold = 0.5f;
  double active_fraction = 0.09;            // of all training pixels
  std::optional<std::int64_t> budget_pixels;  // overrides active_fraction
  int al_start_round = 0;                   // first round whose requests are released
  OracleMode oracle_mode = OracleMode::SIMULATED;
  double oracle_eta = 0.0;
  double human_wait_seconds = 0.0;          // serve: wait for the queue to drain at a release
  errmap::EmdTrainConfig emd;
  int emd_warmup_iters = 0;                 // decoder trains from the start, masks used after this
  plar::WeightTrainConfig weights;
  bool stats_bank = true;
  int bank_refresh_iters = 100;
  std::int64_t own_stats_min_count = plar::kDiagonalMinCount;
  int plar_start_iter = 0;
  int pl_eval_images = 16;
  bool checkpoint = true;
  std::uint64_t seed = 0;
  bool data_seed_pinned = false;  // data.seed given explicitly

  int total_iters() const { return rounds * iters_per_round; }
  void validate() const;
};

nlohmann::json to_json(const LoopConfig& c);
LoopConfig loop_config_from_json(const nlohmann::json& j);
LoopConfig load_loop_config(const std::string& path);

// Applies a --seed override: the run, training and generator seeds follow it
// unless the data section pins its own seed.
void apply_seed(LoopConfig& c, std::uint64_t seed);

const char* oracle_mode_name(OracleMode m);

}  // namespace plarseg::loop
