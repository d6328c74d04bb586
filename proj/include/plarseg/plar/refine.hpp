#pragma once

#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "plarseg/errmap/error_mask.hpp"
#include "plarseg/loop/ledger.hpp"
#include "plarseg/loop/oracle.hpp"
#include "plarseg/plar/stats.hpp"
#include "plarseg/plar/weight_module.hpp"
#include "plarseg/tsf/pseudo_label.hpp"

namespace plarseg::plar {

using loop::Pixel;

// A disagreement cell handed to the manual-labelling side. Pixels are at image
// resolution.
struct ManualRequest {
  std::string image_id;
  std::vector<Pixel> pixels;
  double priority = 0.0;
};

enum class ManualStatus {
  ANSWERED,    // classes returned now, one per pixel (kSkip allowed)
  QUEUED,      // accepted for a later round; pseudo-label kept meanwhile
  UNAVAILABLE  // no budget or no oracle
};

struct ManualReply {
  ManualStatus status = ManualStatus::UNAVAILABLE;
  std::vector<int> classes;
};

class ManualChannel {
 public:
  virtual ~ManualChannel() = default;
  virtual ManualReply submit(const ManualRequest& request) = 0;
};

// Never grants manual labels.
class NoManualChannel : public ManualChannel {
 public:
  ManualReply submit(const ManualRequest&) override { return {}; }
};

// Reserves the whole cell on the ledger, asks the oracle, bills the answered
// pixels and releases the rest. Any failure returns the reservation.
class DirectOracleChannel : public ManualChannel {
 public:
  DirectOracleChannel(loop::BudgetLedger& ledger, loop::Oracle& oracle) : ledger_(&ledger), oracle_(&oracle) {}
  ManualReply submit(const ManualRequest& request) override;

  std::size_t failures() const { return failures_; }

 private:
  loop::BudgetLedger* ledger_;
  loop::Oracle* oracle_;
  std::size_t failures_ = 0;
};

enum class Decision { AUTO, MANUAL_QUEUED, KEPT_PSEUDO };

const char* decision_name(Decision d);

struct CellOutcome {
  int r = 0;  // grid cell
  int c = 0;
  int c_euclid = -1;
  int c_maha = -1;
  Decision decision = Decision::KEPT_PSEUDO;
  bool answered = false;  // manual labels were written for this cell
  std::vector<double> euclid;
  std::vector<double> maha;
};

struct RefinementOutcome {
  std::string image_id;
  int grid_height = 0;
  int grid_width = 0;
  Lambdas lambdas;
  std::vector<CellOutcome> cells;
  std::size_t auto_pixels = 0;
  std::size_t manual_pixels = 0;
  std::size_t queued_cells = 0;
  std::size_t kept_cells = 0;

  std::size_t count(Decision d) const;
};

nlohmann::json to_json(const RefinementOutcome& o);

struct RefineInputs {
  std::string image_id;
  const tsf::PseudoLabelMap* pseudo = nullptr;  // image resolution
  const errmap::ErrorMask* mask = nullptr;      // grid resolution
  numkit::Tensor f1;                            // teacher features, C1 x h1 x w1
  numkit::Tensor f2;                            // C2 x h x w
  const LevelStats* stats_f1 = nullptr;
  const LevelStats* stats_f2 = nullptr;
  Lambdas lambdas;
  // Manual-queue priority per grid cell (EMD probability); cell order is used
  // when absent.
  const std::vector<float>* priority = nullptr;
  // With auto-refinement off every flagged cell goes to the manual channel.
  bool auto_enabled = true;
};

struct RefineResult {
  tsf::PseudoLabelMap refined;
  RefinementOutcome outcome;
};

// For each flagged grid cell: both nearest-class rules agree -> the class is
// written to the cell's pixels as PLAR_AUTO. Otherwise the cell goes to the
// manual channel in descending priority; answered pixels become MANUAL, the
// rest keep their teacher label. Cells whose pixels are all MANUAL already are
// left alone, as are unflagged cells.
RefineResult refine(const RefineInputs& in, ManualChannel& manual);

// Pixels of the image belonging to grid cell (r, c) under nearest-neighbour
// downsampling.
std::vector<Pixel> cell_pixels(int r, int c, int grid_h, int grid_w, int image_h, int image_w);

}  // namespace plarseg::plar
