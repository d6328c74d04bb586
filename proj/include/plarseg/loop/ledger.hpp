#pragma once

#include <cstdint>
#include <map>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace plarseg::loop {

class LedgerError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

struct LedgerRecord {
  int round = 0;
  std::string image_id;
  std::int64_t pixels = 0;
  std::string oracle_kind;
};

// Manual-label pixel budget. Pixels move from available to reserved to spent;
// spent + reserved never exceeds total. All members are thread-safe.
class BudgetLedger {
 public:
  using ReservationId = std::uint64_t;

  explicit BudgetLedger(std::int64_t total_pixels = 0);
  BudgetLedger(const BudgetLedger& other);
  BudgetLedger& operator=(const BudgetLedger& other);

  // Starts a round; reservations made during it are limited to `allowance`
  // pixels in total (unlimited when absent).
  void open_round(int round, std::optional<std::int64_t> allowance = std::nullopt);

  std::optional<ReservationId> reserve(std::int64_t pixels);
  // Bills `pixels` of a reservation; the remainder stays reserved.
  void commit(ReservationId id, std::int64_t pixels, const std::string& image_id, const std::string& oracle_kind);
  // Returns whatever is left of a reservation to the pool.
  void release(ReservationId id);
  std::int64_t outstanding(ReservationId id) const;

  std::int64_t total() const;
  std::int64_t spent() const;
  std::int64_t reserved() const;
  std::int64_t available() const;  // total - spent - reserved, also bounded by the round allowance
  int round() const;

  std::vector<LedgerRecord> log() const;
  // Sum of logged pixels; equals spent() by construction.
  std::int64_t replay() const;

  nlohmann::json to_json() const;
  static BudgetLedger from_json(const nlohmann::json& j);

 private:
  std::int64_t available_locked() const;

  mutable std::mutex mu_;
  std::int64_t total_ = 0;
  std::int64_t spent_ = 0;
  std::int64_t reserved_ = 0;
  int round_ = 0;
  std::optional<std::int64_t> allowance_;
  std::int64_t round_reserved_ = 0;
  ReservationId next_id_ = 1;
  std::map<ReservationId, std::int64_t> open_;
  std::vector<LedgerRecord> log_;
};

}  // namespace plarseg::loop
