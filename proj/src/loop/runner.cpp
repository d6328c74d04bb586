#include "plarseg/loop/runner.hpp"

#include <chrono>
#include <cstdio>
#include <fstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "plarseg/errmap/error_mask.hpp"
#include "plarseg/numkit/checkpoint.hpp"
#include "plarseg/numkit/ops.hpp"
#include "plarseg/numkit/rng.hpp"

namespace plarseg::loop {

namespace nk = plarseg::numkit;
using nlohmann::json;
using synth::Sample;

namespace {

std::vector<const Sample*> ptrs(const std::vector<Sample>& v) {
  std::vector<const Sample*> out;
  out.reserve(v.size());
  for (const auto& s : v) out.push_back(&s);
  return out;
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

std::string fmt(const std::optional<double>& v) { return v ? fmt(*v) : std::string(); }

std::string fmt9(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

json opt_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }
std::optional<double> opt_from(const json& j) {
  if (j.is_null()) return std::nullopt;
  return j.get<double>();
}

json to_json(const RoundMetrics& m) {
  return {{"round", m.round},
          {"iter", m.iter},
          {"miou_teacher", m.miou_teacher},
          {"miou_student", m.miou_student},
          {"pl_acc_before", m.pl_acc_before},
          {"pl_acc_after", m.pl_acc_after},
          {"pl_corrected_acc", opt_json(m.pl_corrected_acc)},
          {"auto_precision", opt_json(m.auto_precision)},
          {"auto_teacher_acc", opt_json(m.auto_teacher_acc)},
          {"auto_pixels", m.auto_pixels},
          {"manual_pixels", m.manual_pixels},
          {"budget_spent", m.budget_spent},
          {"budget_total", m.budget_total}};
}

RoundMetrics round_metrics_from_json(const json& j) {
  RoundMetrics m;
  m.round = j.at("round");
  m.iter = j.at("iter");
  m.miou_teacher = j.at("miou_teacher");
  m.miou_student = j.at("miou_student");
  m.pl_acc_before = j.at("pl_acc_before");
  m.pl_acc_after = j.at("pl_acc_after");
  m.pl_corrected_acc = opt_from(j.at("pl_corrected_acc"));
  m.auto_precision = opt_from(j.at("auto_precision"));
  m.auto_teacher_acc = opt_from(j.at("auto_teacher_acc"));
  m.auto_pixels = j.at("auto_pixels");
  m.manual_pixels = j.at("manual_pixels");
  m.budget_spent = j.at("budget_spent");
  m.budget_total = j.at("budget_total");
  return m;
}

void add_params(std::vector<nk::NamedTensor>& out, const nk::ParamSet& params, const std::string& prefix) {
  for (const auto& p : params) out.push_back({prefix + p.name, p.tensor});
}

void add_velocity(std::vector<nk::NamedTensor>& out, const std::vector<std::vector<float>>& vel,
                  const std::string& prefix) {
  for (std::size_t i = 0; i < vel.size(); ++i)
    out.push_back({prefix + std::to_string(i), nk::Tensor({static_cast<int>(vel[i].size())}, vel[i])});
}

void load_velocity(std::vector<std::vector<float>>& vel, const std::vector<nk::NamedTensor>& archive,
                   const std::string& prefix, std::size_t count) {
  vel.clear();
  for (std::size_t i = 0; i < count; ++i) {
    const std::string name = prefix + std::to_string(i);
    auto it = std::find_if(archive.begin(), archive.end(), [&](const auto& e) { return e.name == name; });
    if (it == archive.end()) throw nk::CheckpointError("checkpoint lacks " + name);
    auto d = it->tensor.data();
    vel.emplace_back(d.begin(), d.end());
  }
}

}  // namespace

// Pseudo-label source used during training steps.
class RunnerSource : public tsf::PseudoLabelSource {
 public:
  explicit RunnerSource(const LoopRunner& r) : r_(&r) {}
  tsf::PseudoLabelMap refine(const Sample& image, const tsf::SegOutput& t, int iter) override {
    return r_->make_targets(image, t, iter, true).result.refined;
  }

 private:
  const LoopRunner* r_;
};

// Records disagreement cells as candidates for the round's release.
class CollectChannel : public plar::ManualChannel {
 public:
  CollectChannel(const LoopRunner& r, int gh, int gw, int h, int w, bool open)
      : r_(&r), gh_(gh), gw_(gw), h_(h), w_(w), open_(open) {}

  plar::ManualReply submit(const plar::ManualRequest& req) override {
    if (!open_ || req.pixels.empty()) return {};
    const Pixel& p = req.pixels.front();
    const int cell = plar::feature_index(p.r, h_, gh_) * gw_ + plar::feature_index(p.c, w_, gw_);
    r_->pool_.add({req.image_id, cell, req.pixels, req.priority});
    return {plar::ManualStatus::QUEUED, {}};
  }

 private:
  const LoopRunner* r_;
  int gh_, gw_, h_, w_;
  bool open_;
};

std::int64_t budget_pixels(const LoopConfig& cfg, const synth::Dataset& ds) {
  if (cfg.budget_pixels) return *cfg.budget_pixels;
  return static_cast<std::int64_t>(std::floor(cfg.active_fraction * static_cast<double>(ds.training_pixels())));
}

synth::Dataset prepare_dataset(const LoopConfig& cfg) {
  if (cfg.data_dir) return synth::load_dataset(*cfg.data_dir);
  return synth::make_dataset(cfg.data);
}

LoopRunner::LoopRunner(LoopConfig cfg, synth::Dataset dataset, Oracle* oracle)
    : cfg_(std::move(cfg)), ds_(std::move(dataset)) {
  if (cfg_.data_dir) cfg_.data = ds_.spec;
  if (cfg_.model.num_classes != ds_.k())
    throw std::invalid_argument("model class count differs from the dataset's (" + std::to_string(ds_.k()) + ")");
  cfg_.validate();
  labelled_ = ptrs(ds_.labelled);
  unlabelled_ = ptrs(ds_.unlabelled);
  val_ = ptrs(ds_.val);

  tsf::TrainConfig tc = cfg_.train;
  tc.schedule.max_iter = std::max(tc.schedule.max_iter, cfg_.total_iters());
  trainer_ = std::make_unique<tsf::TsfTrainer>(tc, tsf::ModelTriplet::create(cfg_.model, cfg_.seed), labelled_, unlabelled_);

  if (cfg_.components.emd) {
    emd_ = std::make_unique<errmap::EmdTrainer>(
        errmap::EmdNet::create(errmap::emd_input_channels(cfg_.model), cfg_.emd.hidden, nk::mix_seed(cfg_.seed, 3)),
        cfg_.emd);
  }
  if (cfg_.components.plar && cfg_.components.learned_weights) {
    weights_ = plar::WeightModule::create(cfg_.model.f1_channels(), cfg_.model.f2_channels(), cfg_.weights.hidden,
                                          nk::mix_seed(cfg_.seed, 4));
    weight_trainer_ = std::make_unique<plar::WeightTrainer>(weights_, cfg_.weights);
  } else {
    weights_ = plar::WeightModule::frozen_half();
  }

  ledger_ = BudgetLedger(budget_pixels(cfg_, ds_));
  const int h = cfg_.data.scene.height, w = cfg_.data.scene.width;
  labels_ = LabelStore(h, w);

  if (cfg_.oracle_mode == OracleMode::SIMULATED) {
    if (oracle) {
      oracle_ = oracle;
    } else {
      own_oracle_ = std::make_unique<SimulatedOracle>(ds_.vault, ds_.k(), cfg_.oracle_eta, nk::mix_seed(cfg_.seed, 5));
      oracle_ = own_oracle_.get();
    }
  } else {
    hub_ = std::make_unique<AnnotationHub>(ledger_, ds_.k(), ds_.spec.class_names, synth::default_palette(ds_.spec.scene));
    for (const auto* s : unlabelled_) hub_->register_image(s);
  }

  bank_f1_acc_ = plar::StatsAccumulator(ds_.k(), cfg_.model.f1_channels());
  bank_f2_acc_ = plar::StatsAccumulator(ds_.k(), cfg_.model.f2_channels());

  const auto n_eval = std::min<std::size_t>(static_cast<std::size_t>(std::max(cfg_.pl_eval_images, 0)), unlabelled_.size());
  pl_eval_.assign(unlabelled_.begin(), unlabelled_.begin() + static_cast<std::ptrdiff_t>(n_eval));
}

LoopRunner::~LoopRunner() = default;

const tsf::ModelTriplet& LoopRunner::triplet() const { return trainer_->triplet(); }

bool LoopRunner::release_round(int round) const {
  return cfg_.components.al && round >= cfg_.al_start_round && round < cfg_.rounds - 1;
}

void LoopRunner::refresh_bank() {
  nk::NoGradGuard guard;
  bank_f1_acc_.clear();
  bank_f2_acc_.clear();
  for (const auto* s : labelled_) {
    const auto t = trainer_->triplet().teacher.forward(s->image);
    plar::accumulate_stats(bank_f1_acc_, t.f1, *s->label);
    plar::accumulate_stats(bank_f2_acc_, t.f2, *s->label);
  }
  bank_f1_ = bank_f1_acc_.finalize(plar::Level::F1);
  bank_f2_ = bank_f2_acc_.finalize(plar::Level::F2);
  bank_ready_ = true;
}

LoopRunner::Targets LoopRunner::make_targets(const Sample& sample, const tsf::SegOutput& t, int iter, bool collect) const {
  nk::NoGradGuard guard;
  Targets out;
  tsf::PseudoLabelMap pl = tsf::pseudo_labels_from_logits(t.logits);
  labels_.overlay(sample.id, pl);
  out.prob_grid = nk::softmax_channels(t.logits_grid);
  const int gh = out.prob_grid.dim(1), gw = out.prob_grid.dim(2);

  out.mask = errmap::confidence_error_map(out.prob_grid, cfg_.conf_tau);
  std::vector<float> priority(static_cast<std::size_t>(gh) * gw);
  {
    const auto p = out.prob_grid.data();
    const int k = out.prob_grid.dim(0);
    for (std::size_t i = 0; i < priority.size(); ++i) {
      float best = 0.0f;
      for (int c = 0; c < k; ++c) best = std::max(best, p[static_cast<std::size_t>(c) * priority.size() + i]);
      priority[i] = 1.0f - best;
    }
  }
  if (emd_ && iter >= cfg_.emd_warmup_iters) {
    const nk::Tensor x = emd_->net().forward(errmap::emd_features(t));
    out.mask = errmap::fuse(out.mask, errmap::emd_error_map(x, cfg_.emd_threshold));
    const auto xd = x.data();
    priority.assign(xd.begin(), xd.end());
  }

  const bool al = cfg_.components.al;
  const bool plar_on = cfg_.components.plar && iter >= cfg_.plar_start_iter;
  if (!al && !plar_on) {
    out.result.refined = std::move(pl);
    return out;
  }

  plar::LevelStats s1, s2;
  bool have_stats = false;
  if (plar_on) {
    const synth::LabelMap* own = labels_.find(sample.id);
    if (own) {
      s1 = plar::collect_stats(t.f1, *own, ds_.k(), plar::Level::F1);
      s2 = plar::collect_stats(t.f2, *own, ds_.k(), plar::Level::F2);
      have_stats = true;
    }
    if (cfg_.stats_bank && bank_ready_) {
      if (have_stats) {
        s1 = plar::merge_with_bank(s1, bank_f1_, cfg_.own_stats_min_count);
        s2 = plar::merge_with_bank(s2, bank_f2_, cfg_.own_stats_min_count);
      } else {
        s1 = bank_f1_;
        s2 = bank_f2_;
      }
      have_stats = true;
    }
  }

  plar::RefineInputs in;
  in.image_id = sample.id;
  in.pseudo = &pl;
  in.mask = &out.mask;
  in.f1 = t.f1;
  in.f2 = t.f2;
  in.priority = &priority;
  in.auto_enabled = plar_on && have_stats;
  if (in.auto_enabled) {
    in.stats_f1 = &s1;
    in.stats_f2 = &s2;
    in.lambdas = weights_.lambdas(t.f1, t.f2);
  }
  const bool open = collect && al && release_round(current_round_) && ledger_.available() > 0;
  CollectChannel channel(*this, gh, gw, pl.height, pl.width, open);
  out.result = plar::refine(in, channel);
  if (collect) round_auto_pixels_ += static_cast<std::int64_t>(out.result.outcome.auto_pixels);
  return out;
}

void LoopRunner::train_iter(int iter, int round_start) {
  if (cfg_.components.plar && cfg_.stats_bank && (iter - round_start) % cfg_.bank_refresh_iters == 0) refresh_bank();
  if (emd_ || weight_trainer_) {
    nk::Rng rng(nk::mix_seed(nk::mix_seed(cfg_.seed, static_cast<std::uint64_t>(iter)), 13));
    const Sample* lab = labelled_[static_cast<std::size_t>(rng.randint(0, static_cast<std::int64_t>(labelled_.size()) - 1))];
    tsf::SegOutput t;
    {
      nk::NoGradGuard guard;
      t = trainer_->triplet().teacher.forward(lab->image);
    }
    if (emd_) emd_->step(t, *lab->label, iter);
    if (weight_trainer_) weight_trainer_->step(t, *lab->label, iter);
  }
  RunnerSource source(*this);
  losses_.push_back(trainer_->step(iter, &source));
}

void LoopRunner::consume_human_labels() {
  if (!hub_) return;
  for (const auto& [id, l] : hub_->drain()) labels_.set(id, l.r, l.c, l.cls);
}

bool LoopRunner::release(int round) {
  if (!release_round(round)) {
    pool_.clear();
    return true;
  }
  const auto ranked = pool_.ranked();
  pool_.clear();
  if (cfg_.oracle_mode == OracleMode::SIMULATED) {
    for (const Candidate& c : ranked) {
      std::vector<Pixel> px = c.pixels;
      std::erase_if(px, [&](const Pixel& p) { return labels_.has(c.image_id, p.r, p.c); });
      if (px.empty()) continue;
      const auto id = ledger_.reserve(static_cast<std::int64_t>(px.size()));
      if (!id) {
        if (ledger_.available() == 0) break;
        continue;
      }
      OracleResponse resp;
      try {
        resp = oracle_->query({c.image_id, px});
      } catch (const std::exception& e) {
        resp.status = OracleStatus::FAILED;
        resp.error = e.what();
      }
      if (resp.status != OracleStatus::ANSWERED || resp.classes.size() != px.size()) {
        ledger_.release(*id);
        continue;
      }
      std::int64_t billed = 0;
      for (std::size_t i = 0; i < px.size(); ++i) {
        if (resp.classes[i] == kSkip) continue;
        labels_.set(c.image_id, px[i].r, px[i].c, resp.classes[i]);
        ++billed;
      }
      ledger_.commit(*id, billed, c.image_id, oracle_->kind());
      ledger_.release(*id);
    }
    return true;
  }

  // HUMAN: queue the requests with an overlay marking the requested pixels.
  const int h = cfg_.data.scene.height, w = cfg_.data.scene.width;
  std::map<std::string, std::vector<float>> overlays;
  bool published = false;
  for (const Candidate& c : ranked) {
    std::vector<Pixel> px = c.pixels;
    std::erase_if(px, [&](const Pixel& p) { return labels_.has(c.image_id, p.r, p.c); });
    if (px.empty()) continue;
    const std::vector<Pixel> copy = px;
    if (!hub_->publish(c.image_id, std::move(px), c.priority)) {
      if (ledger_.available() == 0) break;
      continue;
    }
    published = true;
    auto& u = overlays.try_emplace(c.image_id, static_cast<std::size_t>(h) * w, 0.0f).first->second;
    for (const Pixel& p : copy) u[static_cast<std::size_t>(p.r) * w + p.c] = std::max(0.25f, static_cast<float>(c.priority));
  }
  for (auto& [id, u] : overlays) hub_->set_uncertainty(id, std::move(u));

  if (service_attached_ && cfg_.human_wait_seconds > 0.0) {
    const auto deadline = std::chrono::steady_clock::now() + std::chrono::duration<double>(cfg_.human_wait_seconds);
    while (hub_->queued_pixels() > 0 && std::chrono::steady_clock::now() < deadline)
      std::this_thread::sleep_for(std::chrono::milliseconds(50));
  }
  return service_attached_ || !published;
}

eval::IouResult LoopRunner::evaluate(const std::vector<const Sample*>& samples, bool teacher) const {
  const auto& m = teacher ? trainer_->triplet().teacher : trainer_->triplet().student;
  return eval::iou(eval::evaluate_model(m, samples));
}

RoundMetrics LoopRunner::measure(int round, int iter) const {
  RoundMetrics m;
  m.round = round;
  m.iter = iter;
  if (!val_.empty()) {
    m.miou_teacher = evaluate(val_, true).miou;
    m.miou_student = evaluate(val_, false).miou;
  }
  eval::PseudoLabelTally tally;
  for (const Sample* s : pl_eval_) {
    tsf::SegOutput t;
    {
      nk::NoGradGuard guard;
      t = trainer_->triplet().teacher.forward(s->image);
    }
    const auto before = tsf::pseudo_labels_from_logits(t.logits);
    const auto after = make_targets(*s, t, iter, false).result.refined;
    tally.add(before, after, ds_.vault.reveal(s->id));
  }
  const auto pl = tally.result();
  m.pl_acc_before = pl.accuracy_before;
  m.pl_acc_after = pl.accuracy_after;
  m.pl_corrected_acc = pl.corrected_pixel_accuracy;
  m.auto_precision = pl.auto_precision;
  m.auto_teacher_acc = pl.auto_baseline_accuracy;
  m.auto_pixels = round_auto_pixels_;
  m.budget_total = ledger_.total();
  return m;
}

void LoopRunner::run_round(int round) {
  current_round_ = round;
  consume_human_labels();
  const std::int64_t free = ledger_.total() - ledger_.spent() - ledger_.reserved();
  std::int64_t allowance = 0;
  if (release_round(round)) allowance = free / (cfg_.rounds - 1 - std::max(round, cfg_.al_start_round));
  ledger_.open_round(round, allowance);
  round_auto_pixels_ = 0;
  const int start = round * cfg_.iters_per_round;
  for (int iter = start; iter < start + cfg_.iters_per_round; ++iter) train_iter(iter, start);
}

RunStatus LoopRunner::run(std::optional<int> max_rounds) {
  int done = 0;
  while (next_round_ < cfg_.rounds) {
    if (max_rounds && done >= *max_rounds) return RunStatus::STOPPED;
    const int r = next_round_;
    run_round(r);
    RoundMetrics m = measure(r, (r + 1) * cfg_.iters_per_round);
    const bool keep_going = release(r);
    m.manual_pixels = labels_.pixels();
    m.budget_spent = ledger_.spent();
    metrics_.push_back(m);
    next_round_ = r + 1;
    ++done;
    if (hub_) {
      std::vector<double> hist;
      for (const auto& x : metrics_) hist.push_back(x.miou_teacher);
      hub_->set_progress(next_round_, hist);
    }
    if (cfg_.checkpoint) {
      save_checkpoint(std::filesystem::path(cfg_.out_dir) / "checkpoint");
      write_csvs(cfg_.out_dir);
    }
    if (!keep_going) return RunStatus::PAUSED;
  }
  return RunStatus::COMPLETED;
}

std::string LoopRunner::metrics_csv() const {
  std::string s =
      "round,iter,miou_teacher,miou_student,pl_acc_before,pl_acc_after,pl_corrected_acc,auto_precision,auto_teacher_acc,auto_pixels,"
      "manual_pixels,budget_spent,budget_total\n";
  for (const auto& m : metrics_) {
    s += std::to_string(m.round) + ',' + std::to_string(m.iter) + ',' + fmt(m.miou_teacher) + ',' + fmt(m.miou_student) +
         ',' + fmt(m.pl_acc_before) + ',' + fmt(m.pl_acc_after) + ',' + fmt(m.pl_corrected_acc) + ',' +
         fmt(m.auto_precision) + ',' + fmt(m.auto_teacher_acc) + ',' + std::to_string(m.auto_pixels) + ',' + std::to_string(m.manual_pixels) + ',' +
         std::to_string(m.budget_spent) + ',' + std::to_string(m.budget_total) + '\n';
  }
  return s;
}

std::string LoopRunner::losses_csv() const {
  std::string s = "iter,lr,L_sup,L_t,L_f,total\n";
  for (const auto& l : losses_)
    s += std::to_string(l.iter) + ',' + fmt9(l.lr) + ',' + fmt9(l.l_sup) + ',' + fmt9(l.l_t) + ',' + fmt9(l.l_f) + ',' +
         fmt9(l.total) + '\n';
  return s;
}

void LoopRunner::write_csvs(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  std::ofstream(dir / "metrics.csv", std::ios::binary) << metrics_csv();
  std::ofstream(dir / "losses.csv", std::ios::binary) << losses_csv();
}

Preview LoopRunner::preview(const Sample& sample) const {
  tsf::SegOutput t;
  {
    nk::NoGradGuard guard;
    t = trainer_->triplet().teacher.forward(sample.image);
  }
  Targets tg = make_targets(sample, t, next_round_ * cfg_.iters_per_round, false);
  return {tsf::pseudo_labels_from_logits(t.logits), std::move(tg.result.refined), std::move(tg.result.outcome),
          std::move(tg.mask), std::move(tg.prob_grid)};
}

void LoopRunner::save_checkpoint(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  auto& tr = *trainer_;
  std::vector<nk::NamedTensor> tensors;
  add_params(tensors, tr.triplet().student.params(), "student/");
  add_params(tensors, tr.triplet().friend_model.params(), "friend/");
  add_params(tensors, tr.triplet().teacher.params(), "teacher/");
  add_velocity(tensors, tr.optimizers().student.velocity(), "vel/student/");
  add_velocity(tensors, tr.optimizers().friend_model.velocity(), "vel/friend/");
  json vel{{"student", tr.optimizers().student.velocity().size()}, {"friend", tr.optimizers().friend_model.velocity().size()}};
  if (emd_) {
    add_params(tensors, emd_->net().params(), "emd/");
    add_velocity(tensors, emd_->optimizer().velocity(), "vel/emd/");
    vel["emd"] = emd_->optimizer().velocity().size();
  }
  if (weight_trainer_) {
    add_params(tensors, weights_.params(), "wm/");
    add_velocity(tensors, weight_trainer_->optimizer().velocity(), "vel/wm/");
    vel["wm"] = weight_trainer_->optimizer().velocity().size();
  }
  nk::save_tensors((dir / "tensors.bin").string(), tensors);

  json metrics = json::array();
  for (const auto& m : metrics_) metrics.push_back(to_json(m));
  json losses = json::array();
  for (const auto& l : losses_) losses.push_back({l.iter, l.lr, l.l_sup, l.l_t, l.l_f, l.total, l.all_ignored});
  json state{{"config", to_json(cfg_)},   {"next_round", next_round_}, {"ledger", ledger_.to_json()},
             {"labels", labels_.to_json()}, {"metrics", metrics},        {"losses", losses},
             {"velocity", vel}};
  if (hub_) state["hub"] = hub_->to_json();
  const auto tmp = dir / "state.json.tmp";
  std::ofstream(tmp) << state.dump(1);
  std::filesystem::rename(tmp, dir / "state.json");
}

std::unique_ptr<LoopRunner> LoopRunner::resume(const std::filesystem::path& dir, Oracle* oracle,
                                               std::optional<LoopConfig> override_cfg) {
  std::ifstream is(dir / "state.json");
  if (!is) throw nk::CheckpointError("no checkpoint state in " + dir.string());
  const json state = json::parse(is);
  LoopConfig cfg = override_cfg ? *override_cfg : loop_config_from_json(state.at("config"));
  auto r = std::make_unique<LoopRunner>(cfg, prepare_dataset(cfg), oracle);
  const auto tensors = nk::load_tensors((dir / "tensors.bin").string());
  auto& tr = *r->trainer_;
  nk::assign_params(tr.triplet().student.params(), tensors, "student/");
  nk::assign_params(tr.triplet().friend_model.params(), tensors, "friend/");
  nk::assign_params(tr.triplet().teacher.params(), tensors, "teacher/");
  const json& vel = state.at("velocity");
  load_velocity(tr.optimizers().student.velocity(), tensors, "vel/student/", vel.at("student"));
  load_velocity(tr.optimizers().friend_model.velocity(), tensors, "vel/friend/", vel.at("friend"));
  if (r->emd_) {
    nk::assign_params(r->emd_->net().params(), tensors, "emd/");
    load_velocity(r->emd_->optimizer().velocity(), tensors, "vel/emd/", vel.value("emd", 0));
  }
  if (r->weight_trainer_) {
    nk::assign_params(r->weights_.params(), tensors, "wm/");
    load_velocity(r->weight_trainer_->optimizer().velocity(), tensors, "vel/wm/", vel.value("wm", 0));
  }
  r->next_round_ = state.at("next_round");
  r->ledger_ = BudgetLedger::from_json(state.at("ledger"));
  r->labels_ = LabelStore::from_json(state.at("labels"));
  for (const auto& m : state.at("metrics")) r->metrics_.push_back(round_metrics_from_json(m));
  for (const auto& l : state.at("losses")) {
    tsf::LossBreakdown b;
    b.iter = l.at(0);
    b.lr = l.at(1);
    b.l_sup = l.at(2);
    b.l_t = l.at(3);
    b.l_f = l.at(4);
    b.total = l.at(5);
    b.all_ignored = l.at(6);
    r->losses_.push_back(b);
  }
  if (r->hub_) {
    // A checkpoint written in SIMULATED mode has no hub state to restore.
    if (state.contains("hub")) r->hub_->restore(state.at("hub"));
    std::vector<double> hist;
    for (const auto& x : r->metrics_) hist.push_back(x.miou_teacher);
    r->hub_->set_progress(r->next_round_, hist);
  }
  return r;
}

}  // namespace plarseg::loop
