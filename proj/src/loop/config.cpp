#include "plarseg/loop/config.hpp"

#include <fstream>
#include <stdexcept>

namespace plarseg::loop {

using nlohmann::json;

const char* oracle_mode_name(OracleMode m) { return m == OracleMode::HUMAN ? "human" : "simulated"; }

void LoopConfig::validate() const {
  if (rounds < 1) throw std::invalid_argument("rounds must be >= 1");
  if (iters_per_round < 1) throw std::invalid_argument("iters_per_round must be >= 1");
  if (!(conf_tau > 0.0f && conf_tau < 1.0f)) throw std::invalid_argument("conf_tau must lie in (0, 1)");
  if (!(emd_threshold > 0.0f && emd_threshold < 1.0f)) throw std::invalid_argument("emd_threshold must lie in (0, 1)");
  if (active_fraction < 0.0 || active_fraction > 1.0) throw std::invalid_argument("active_fraction must lie in [0, 1]");
  if (budget_pixels && *budget_pixels < 0) throw std::invalid_argument("budget_pixels must be >= 0");
  if (oracle_eta < 0.0 || oracle_eta > 1.0) throw std::invalid_argument("oracle eta must lie in [0, 1]");
  if (bank_refresh_iters < 1) throw std::invalid_argument("bank_refresh_iters must be >= 1");
  if (model.num_classes != data.scene.k)
    throw std::invalid_argument("model.num_classes (" + std::to_string(model.num_classes) +
                                ") differs from the dataset class count (" + std::to_string(data.scene.k) + ")");
  model.validate();
}

json to_json(const LoopConfig& c) {
  json j{{"name", c.name},
         {"out_dir", c.out_dir},
         {"data", to_json(c.data)},
         {"model", tsf::to_json(c.model)},
         {"train", tsf::to_json(c.train)},
         {"rounds", c.rounds},
         {"iters_per_round", c.iters_per_round},
         {"components",
          {{"al", c.components.al},
           {"emd", c.components.emd},
           {"plar", c.components.plar},
           {"learned_weights", c.components.learned_weights}}},
         {"mask", {{"conf_tau", c.conf_tau}, {"emd_threshold", c.emd_threshold}}},
         {"budget", {{"active_fraction", c.active_fraction}, {"al_start_round", c.al_start_round}}},
         {"oracle", {{"mode", oracle_mode_name(c.oracle_mode)}, {"eta", c.oracle_eta}, {"wait_seconds", c.human_wait_seconds}}},
         {"emd",
          {{"hidden", c.emd.hidden}, {"lr", c.emd.lr}, {"momentum", c.emd.momentum}, {"warmup_iters", c.emd_warmup_iters}}},
         {"weights",
          {{"hidden", c.weights.hidden},
           {"lr", c.weights.lr},
           {"momentum", c.weights.momentum},
           {"temperature", c.weights.temperature}}},
         {"plar",
          {{"stats_bank", c.stats_bank},
           {"bank_refresh_iters", c.bank_refresh_iters},
           {"own_stats_min_count", c.own_stats_min_count},
           {"start_iter", c.plar_start_iter}}},
         {"eval", {{"pl_images", c.pl_eval_images}}},
         {"checkpoint", c.checkpoint},
         {"seed", c.seed}};
  if (c.data_dir) j["data_dir"] = *c.data_dir;
  j["budget"]["pixels"] = c.budget_pixels ? json(*c.budget_pixels) : json(nullptr);
  return j;
}

LoopConfig loop_config_from_json(const json& j) {
  LoopConfig c;
  c.name = j.value("name", c.name);
  c.out_dir = j.value("out_dir", "runs/" + c.name);
  c.seed = j.value("seed", c.seed);
  if (j.contains("data_dir")) c.data_dir = j.at("data_dir").get<std::string>();
  if (j.contains("data")) {
    c.data = synth::dataset_spec_from_json(j.at("data"));
    c.data_seed_pinned = j.at("data").contains("seed");
  }
  if (!c.data_seed_pinned) c.data.seed = c.seed;

  json model = j.value("model", json::object());
  if (!model.contains("num_classes")) model["num_classes"] = c.data.scene.k;
  c.model = tsf::seg_model_config_from_json(model);

  c.rounds = j.value("rounds", c.rounds);
  c.iters_per_round = j.value("iters_per_round", c.iters_per_round);

  json train = j.value("train", json::object());
  if (!train.contains("seed")) train["seed"] = c.seed;
  if (!train.contains("max_iter")) train["max_iter"] = c.total_iters();
  c.train = tsf::train_config_from_json(train);

  const json comp = j.value("components", json::object());
  c.components.al = comp.value("al", c.components.al);
  c.components.emd = comp.value("emd", c.components.emd);
  c.components.plar = comp.value("plar", c.components.plar);
  c.components.learned_weights = comp.value("learned_weights", c.components.learned_weights);

  const json mask = j.value("mask", json::object());
  c.conf_tau = mask.value("conf_tau", c.conf_tau);
  c.emd_threshold = mask.value("emd_threshold", c.emd_threshold);

  const json budget = j.value("budget", json::object());
  c.active_fraction = budget.value("active_fraction", c.active_fraction);
  c.al_start_round = budget.value("al_start_round", c.al_start_round);
  if (budget.contains("pixels") && !budget.at("pixels").is_null()) c.budget_pixels = budget.at("pixels").get<std::int64_t>();

  const json oracle = j.value("oracle", json::object());
  const std::string mode = oracle.value("mode", "simulated");
  if (mode == "simulated")
    c.oracle_mode = OracleMode::SIMULATED;
  else if (mode == "human")
    c.oracle_mode = OracleMode::HUMAN;
  else
    throw std::invalid_argument("unknown oracle mode '" + mode + "'");
  c.oracle_eta = oracle.value("eta", c.oracle_eta);
  c.human_wait_seconds = oracle.value("wait_seconds", c.human_wait_seconds);

  const json emd = j.value("emd", json::object());
  c.emd.hidden = emd.value("hidden", c.emd.hidden);
  c.emd.lr = emd.value("lr", c.emd.lr);
  c.emd.momentum = emd.value("momentum", c.emd.momentum);
  c.emd.threshold = c.emd_threshold;
  c.emd.max_iter = c.total_iters();
  c.emd_warmup_iters = emd.value("warmup_iters", c.emd_warmup_iters);

  const json w = j.value("weights", json::object());
  c.weights.hidden = w.value("hidden", c.weights.hidden);
  c.weights.lr = w.value("lr", c.weights.lr);
  c.weights.momentum = w.value("momentum", c.weights.momentum);
  c.weights.temperature = w.value("temperature", c.weights.temperature);
  c.weights.conf_tau = c.conf_tau;
  c.weights.max_iter = c.total_iters();

  const json plar = j.value("plar", json::object());
  c.stats_bank = plar.value("stats_bank", c.stats_bank);
  c.bank_refresh_iters = plar.value("bank_refresh_iters", c.bank_refresh_iters);
  c.own_stats_min_count = plar.value("own_stats_min_count", c.own_stats_min_count);
  c.plar_start_iter = plar.value("start_iter", c.plar_start_iter);

  c.pl_eval_images = j.value("eval", json::object()).value("pl_images", c.pl_eval_images);
  c.checkpoint = j.value("checkpoint", c.checkpoint);
  c.validate();
  return c;
}

LoopConfig load_loop_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open config " + path);
  return loop_config_from_json(json::parse(is));
}

void apply_seed(LoopConfig& c, std::uint64_t seed) {
  c.seed = seed;
  c.train.seed = seed;
  if (!c.data_seed_pinned) c.data.seed = seed;
}

}  // namespace plarseg::loop
