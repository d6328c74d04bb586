#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "plarseg/errmap/emd.hpp"
#include "plarseg/eval/metrics.hpp"
#include "plarseg/loop/config.hpp"
#include "plarseg/loop/hub.hpp"
#include "plarseg/loop/label_store.hpp"
#include "plarseg/loop/ledger.hpp"
#include "plarseg/loop/oracle.hpp"
#include "plarseg/plar/refine.hpp"
#include "plarseg/plar/stats.hpp"
#include "plarseg/plar/weight_module.hpp"
#include "plarseg/synth/dataset.hpp"
#include "plarseg/tsf/trainer.hpp"

namespace plarseg::loop {

struct RoundMetrics {
  int round = 0;
  int iter = 0;  // iterations completed
  double miou_teacher = 0.0;
  double miou_student = 0.0;
  double pl_acc_before = 0.0;
  double pl_acc_after = 0.0;
  std::optional<double> pl_corrected_acc;
  std::optional<double> auto_precision;
  std::optional<double> auto_teacher_acc;  // teacher argmax on the auto-refined pixels
  std::int64_t auto_pixels = 0;    // auto-refined pixels over the round's training steps
  std::int64_t manual_pixels = 0;  // manual labels held after the round
  std::int64_t budget_spent = 0;
  std::int64_t budget_total = 0;
};

enum class RunStatus { COMPLETED, PAUSED, STOPPED };

// Refinement of one image with the current state, for inspection and export.
struct Preview {
  tsf::PseudoLabelMap before;
  tsf::PseudoLabelMap after;
  plar::RefinementOutcome outcome;
  errmap::ErrorMask mask;
  numkit::Tensor prob_grid;
};

// Runs rounds of TSF training with per-step refinement of the unlabelled
// targets. Manual-label requests gathered during a round are released at its
// end: answered straight away by the simulated oracle, or queued on the
// annotation hub for humans and picked up at the next round boundary.
class LoopRunner {
 public:
  // `oracle` replaces the simulated oracle (SIMULATED mode only).
  LoopRunner(LoopConfig cfg, synth::Dataset dataset, Oracle* oracle = nullptr);
  ~LoopRunner();

  // Runs until all rounds are done, or stops early after `max_rounds` more
  // rounds. In HUMAN mode without an attached service the run pauses at the
  // first release so that a service can pick it up.
  RunStatus run(std::optional<int> max_rounds = std::nullopt);

  void save_checkpoint(const std::filesystem::path& dir) const;
  static std::unique_ptr<LoopRunner> resume(const std::filesystem::path& dir, Oracle* oracle = nullptr,
                                            std::optional<LoopConfig> override_cfg = std::nullopt);

  void write_csvs(const std::filesystem::path& dir) const;
  std::string metrics_csv() const;
  std::string losses_csv() const;

  Preview preview(const synth::Sample& sample) const;
  eval::IouResult evaluate(const std::vector<const synth::Sample*>& samples, bool teacher = true) const;

  // Marks that an annotation service is serving the hub (HUMAN mode).
  void attach_service(bool on = true) { service_attached_ = on; }

  const LoopConfig& config() const { return cfg_; }
  const synth::Dataset& dataset() const { return ds_; }
  const std::vector<RoundMetrics>& metrics() const { return metrics_; }
  const std::vector<tsf::LossBreakdown>& losses() const { return losses_; }
  BudgetLedger& ledger() { return ledger_; }
  const BudgetLedger& ledger() const { return ledger_; }
  const LabelStore& labels() const { return labels_; }
  AnnotationHub* hub() { return hub_.get(); }
  const tsf::ModelTriplet& triplet() const;
  int next_round() const { return next_round_; }
  const std::vector<const synth::Sample*>& unlabelled() const { return unlabelled_; }

 private:
  friend class RunnerSource;
  friend class CollectChannel;

  void run_round(int round);
  void train_iter(int iter, int round_start);
  void refresh_bank();
  void consume_human_labels();
  bool release(int round);  // false when the run must pause
  RoundMetrics measure(int round, int iter) const;
  bool release_round(int round) const;

  struct Targets {
    plar::RefineResult result;
    errmap::ErrorMask mask;
    numkit::Tensor prob_grid;
  };
  Targets make_targets(const synth::Sample& sample, const tsf::SegOutput& teacher_out, int iter, bool collect) const;

  LoopConfig cfg_;
  synth::Dataset ds_;
  std::vector<const synth::Sample*> labelled_, unlabelled_, val_;
  std::unique_ptr<tsf::TsfTrainer> trainer_;
  std::unique_ptr<errmap::EmdTrainer> emd_;
  plar::WeightModule weights_;
  std::unique_ptr<plar::WeightTrainer> weight_trainer_;
  BudgetLedger ledger_;
  LabelStore labels_;
  mutable CandidatePool pool_;
  std::unique_ptr<Oracle> own_oracle_;
  Oracle* oracle_ = nullptr;
  std::unique_ptr<AnnotationHub> hub_;
  plar::StatsAccumulator bank_f1_acc_, bank_f2_acc_;
  plar::LevelStats bank_f1_, bank_f2_;
  bool bank_ready_ = false;
  int next_round_ = 0;
  int current_round_ = 0;
  bool service_attached_ = false;
  mutable std::int64_t round_auto_pixels_ = 0;
  std::vector<RoundMetrics> metrics_;
  std::vector<tsf::LossBreakdown> losses_;
  std::vector<const synth::Sample*> pl_eval_;
};

// Budget in pixels for a configuration and dataset.
std::int64_t budget_pixels(const LoopConfig& cfg, const synth::Dataset& ds);

// Generates the configured dataset, or loads it when data_dir is set.
synth::Dataset prepare_dataset(const LoopConfig& cfg);

}  // namespace plarseg::loop
