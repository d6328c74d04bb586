#include "plarseg/loop/ledger.hpp"

#include <algorithm>

#include <nlohmann/json.hpp>

namespace plarseg::loop {

BudgetLedger::BudgetLedger(std::int64_t total_pixels) : total_(total_pixels) {
  if (total_pixels < 0) throw LedgerError("budget must be non-negative");
}

BudgetLedger::BudgetLedger(const BudgetLedger& other) {
  std::lock_guard lock(other.mu_);
  total_ = other.total_;
  spent_ = other.spent_;
  reserved_ = other.reserved_;
  round_ = other.round_;
  allowance_ = other.allowance_;
  round_reserved_ = other.round_reserved_;
  next_id_ = other.next_id_;
  open_ = other.open_;
  log_ = other.log_;
}

BudgetLedger& BudgetLedger::operator=(const BudgetLedger& other) {
  if (this == &other) return *this;
  BudgetLedger copy(other);
  std::lock_guard lock(mu_);
  total_ = copy.total_;
  spent_ = copy.spent_;
  reserved_ = copy.reserved_;
  round_ = copy.round_;
  allowance_ = copy.allowance_;
  round_reserved_ = copy.round_reserved_;
  next_id_ = copy.next_id_;
  open_ = std::move(copy.open_);
  log_ = std::move(copy.log_);
  return *this;
}

void BudgetLedger::open_round(int round, std::optional<std::int64_t> allowance) {
  std::lock_guard lock(mu_);
  round_ = round;
  allowance_ = allowance;
  round_reserved_ = 0;
}

std::int64_t BudgetLedger::available_locked() const {
  std::int64_t a = total_ - spent_ - reserved_;
  if (allowance_) a = std::min(a, *allowance_ - round_reserved_);
  return std::max<std::int64_t>(a, 0);
}

std::optional<BudgetLedger::ReservationId> BudgetLedger::reserve(std::int64_t pixels) {
  if (pixels <= 0) throw LedgerError("reservation must be positive");
  std::lock_guard lock(mu_);
  if (pixels > available_locked()) return std::nullopt;
  const ReservationId id = next_id_++;
  open_[id] = pixels;
  reserved_ += pixels;
  round_reserved_ += pixels;
  return id;
}

void BudgetLedger::commit(ReservationId id, std::int64_t pixels, const std::string& image_id,
                          const std::string& oracle_kind) {
  std::lock_guard lock(mu_);
  auto it = open_.find(id);
  if (it == open_.end()) throw LedgerError("commit on unknown reservation " + std::to_string(id));
  if (pixels < 0 || pixels > it->second)
    throw LedgerError("commit of " + std::to_string(pixels) + " exceeds reservation of " + std::to_string(it->second));
  if (pixels == 0) return;
  it->second -= pixels;
  reserved_ -= pixels;
  spent_ += pixels;
  log_.push_back({round_, image_id, pixels, oracle_kind});
  if (it->second == 0) open_.erase(it);
}

void BudgetLedger::release(ReservationId id) {
  std::lock_guard lock(mu_);
  auto it = open_.find(id);
  if (it == open_.end()) return;
  reserved_ -= it->second;
  round_reserved_ = std::max<std::int64_t>(0, round_reserved_ - it->second);
  open_.erase(it);
}

std::int64_t BudgetLedger::outstanding(ReservationId id) const {
  std::lock_guard lock(mu_);
  auto it = open_.find(id);
  return it == open_.end() ? 0 : it->second;
}

std::int64_t BudgetLedger::total() const {
  std::lock_guard lock(mu_);
  return total_;
}

std::int64_t BudgetLedger::spent() const {
  std::lock_guard lock(mu_);
  return spent_;
}

std::int64_t BudgetLedger::reserved() const {
  std::lock_guard lock(mu_);
  return reserved_;
}

std::int64_t BudgetLedger::available() const {
  std::lock_guard lock(mu_);
  return available_locked();
}

int BudgetLedger::round() const {
  std::lock_guard lock(mu_);
  return round_;
}

std::vector<LedgerRecord> BudgetLedger::log() const {
  std::lock_guard lock(mu_);
  return log_;
}

std::int64_t BudgetLedger::replay() const {
  std::lock_guard lock(mu_);
  std::int64_t s = 0;
  for (const auto& r : log_) s += r.pixels;
  return s;
}

nlohmann::json BudgetLedger::to_json() const {
  std::lock_guard lock(mu_);
  nlohmann::json log = nlohmann::json::array();
  for (const auto& r : log_) log.push_back({r.round, r.image_id, r.pixels, r.oracle_kind});
  nlohmann::json open = nlohmann::json::array();
  for (const auto& [id, px] : open_) open.push_back({id, px});
  nlohmann::json j{{"total", total_}, {"spent", spent_},     {"reserved", reserved_},
                   {"round", round_}, {"next_id", next_id_}, {"round_reserved", round_reserved_},
                   {"open", open},    {"log", log}};
  j["allowance"] = allowance_ ? nlohmann::json(*allowance_) : nlohmann::json(nullptr);
  return j;
}

BudgetLedger BudgetLedger::from_json(const nlohmann::json& j) {
  BudgetLedger l(j.at("total").get<std::int64_t>());
  l.spent_ = j.at("spent");
  l.reserved_ = j.at("reserved");
  l.round_ = j.at("round");
  l.next_id_ = j.at("next_id");
  l.round_reserved_ = j.at("round_reserved");
  if (!j.at("allowance").is_null()) l.allowance_ = j.at("allowance").get<std::int64_t>();
  for (const auto& o : j.at("open")) l.open_[o.at(0).get<ReservationId>()] = o.at(1).get<std::int64_t>();
  for (const auto& r : j.at("log"))
    l.log_.push_back({r.at(0).get<int>(), r.at(1).get<std::string>(), r.at(2).get<std::int64_t>(),
                      r.at(3).get<std::string>()});
  std::int64_t open_sum = 0;
  for (const auto& [_, px] : l.open_) open_sum += px;
  if (l.replay() != l.spent_ || open_sum != l.reserved_ || l.spent_ + l.reserved_ > l.total_)
    throw LedgerError("ledger state is inconsistent");
  return l;
}

}  // namespace plarseg::loop
