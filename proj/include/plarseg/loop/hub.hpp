#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "plarseg/loop/label_store.hpp"
#include "plarseg/loop/ledger.hpp"
#include "plarseg/synth/sample.hpp"

namespace plarseg::loop {

struct QueueItem {
  std::uint64_t id = 0;
  std::string image_id;
  std::vector<Pixel> pixels;  // still unanswered
  double priority = 0.0;
  BudgetLedger::ReservationId reservation = 0;
};

enum class SubmitStatus { OK, CONFLICT, INVALID, NOT_FOUND };

struct SubmitResult {
  SubmitStatus status = SubmitStatus::OK;
  std::int64_t accepted = 0;
  std::int64_t billed = 0;
  std::int64_t remaining_budget = 0;
  std::vector<Pixel> conflicts;
  std::string error;
};

// Shared state between the trainer and human annotators. The trainer
// publishes requests and drains received labels at round boundaries; the HTTP
// service reads the queue and submits labels. Every member is thread-safe.
class AnnotationHub {
 public:
  AnnotationHub(BudgetLedger& ledger, int num_classes, std::vector<std::string> class_names = {},
                std::vector<std::array<std::uint8_t, 3>> palette = {});

  void register_image(const synth::Sample* sample);
  // Per-pixel uncertainty in [0, 1] at image resolution, shown by render_png.
  void set_uncertainty(const std::string& image_id, std::vector<float> u);

  // Reserves the pixels on the ledger and queues them; false without budget.
  bool publish(const std::string& image_id, std::vector<Pixel> pixels, double priority);

  // Highest priority first.
  std::vector<QueueItem> queue(std::size_t limit = 0) const;
  std::size_t queued_pixels() const;

  // Validates every label first (class range, image known); an invalid
  // request changes nothing. Pixels answered before are conflicts; pixels
  // never requested are invalid. Accepted pixels are billed one by one.
  SubmitResult submit(const std::string& image_id, const std::vector<PixelLabel>& labels);

  // Labels received since the last drain, in arrival order.
  std::vector<std::pair<std::string, PixelLabel>> drain();

  void set_progress(int round, std::vector<double> miou_history);
  nlohmann::json status() const;
  // PNG bytes of the image with its uncertainty overlay; empty when unknown.
  std::optional<std::string> render_png(const std::string& image_id) const;

  int num_classes() const { return k_; }
  BudgetLedger& ledger() { return *ledger_; }

  nlohmann::json to_json() const;
  void restore(const nlohmann::json& j);

 private:
  mutable std::mutex mu_;
  BudgetLedger* ledger_;
  int k_;
  std::vector<std::string> class_names_;
  std::vector<std::array<std::uint8_t, 3>> palette_;
  std::map<std::string, const synth::Sample*> images_;
  std::map<std::string, std::vector<float>> uncertainty_;
  std::map<std::uint64_t, QueueItem> items_;
  std::uint64_t next_item_ = 1;
  std::set<std::pair<std::string, Pixel>> answered_;
  std::vector<std::pair<std::string, PixelLabel>> inbox_;
  int round_ = 0;
  std::vector<double> miou_history_;
};

}  // namespace plarseg::loop
