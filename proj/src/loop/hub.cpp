#include "plarseg/loop/hub.hpp"

#include <algorithm>

#include "plarseg/eval/viz.hpp"

namespace plarseg::loop {

using nlohmann::json;

AnnotationHub::AnnotationHub(BudgetLedger& ledger, int num_classes, std::vector<std::string> class_names,
                             std::vector<std::array<std::uint8_t, 3>> palette)
    : ledger_(&ledger), k_(num_classes), class_names_(std::move(class_names)), palette_(std::move(palette)) {
  if (num_classes < 1) throw std::invalid_argument("hub needs at least one class");
}

void AnnotationHub::register_image(const synth::Sample* sample) {
  std::lock_guard lock(mu_);
  images_[sample->id] = sample;
}

void AnnotationHub::set_uncertainty(const std::string& image_id, std::vector<float> u) {
  std::lock_guard lock(mu_);
  uncertainty_[image_id] = std::move(u);
}

bool AnnotationHub::publish(const std::string& image_id, std::vector<Pixel> pixels, double priority) {
  std::lock_guard lock(mu_);
  std::erase_if(pixels, [&](const Pixel& p) { return answered_.count({image_id, p}) > 0; });
  // Pixels already waiting in another item are not requested twice.
  for (const auto& [_, item] : items_) {
    if (item.image_id != image_id) continue;
    std::erase_if(pixels, [&](const Pixel& p) { return std::find(item.pixels.begin(), item.pixels.end(), p) != item.pixels.end(); });
  }
  if (pixels.empty()) return false;
  const auto res = ledger_->reserve(static_cast<std::int64_t>(pixels.size()));
  if (!res) return false;
  QueueItem item{next_item_++, image_id, std::move(pixels), priority, *res};
  items_.emplace(item.id, std::move(item));
  return true;
}

std::vector<QueueItem> AnnotationHub::queue(std::size_t limit) const {
  std::lock_guard lock(mu_);
  std::vector<QueueItem> out;
  for (const auto& [_, item] : items_) out.push_back(item);
  std::stable_sort(out.begin(), out.end(), [](const QueueItem& a, const QueueItem& b) { return a.priority > b.priority; });
  if (limit > 0 && out.size() > limit) out.resize(limit);
  return out;
}

std::size_t AnnotationHub::queued_pixels() const {
  std::lock_guard lock(mu_);
  std::size_t n = 0;
  for (const auto& [_, item] : items_) n += item.pixels.size();
  return n;
}

SubmitResult AnnotationHub::submit(const std::string& image_id, const std::vector<PixelLabel>& labels) {
  std::lock_guard lock(mu_);
  SubmitResult res;
  auto fail = [&](SubmitStatus s, std::string msg) {
    res.status = s;
    res.error = std::move(msg);
    res.remaining_budget = ledger_->total() - ledger_->spent();
    return res;
  };
  if (!images_.count(image_id)) return fail(SubmitStatus::NOT_FOUND, "unknown image '" + image_id + "'");
  if (labels.empty()) return fail(SubmitStatus::INVALID, "no labels in request");

  // Locate every pixel before touching anything.
  std::vector<std::pair<QueueItem*, std::size_t>> where(labels.size(), {nullptr, 0});
  std::set<Pixel> in_request;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const PixelLabel& l = labels[i];
    if (l.cls < 0 || l.cls >= k_)
      return fail(SubmitStatus::INVALID, "class " + std::to_string(l.cls) + " outside [0, " + std::to_string(k_) + ")");
    const Pixel p{l.r, l.c};
    if (answered_.count({image_id, p}) || !in_request.insert(p).second) continue;  // conflict
    for (auto& [_, item] : items_) {
      if (item.image_id != image_id) continue;
      auto it = std::find(item.pixels.begin(), item.pixels.end(), p);
      if (it != item.pixels.end()) {
        where[i] = {&item, static_cast<std::size_t>(it - item.pixels.begin())};
        break;
      }
    }
    if (!where[i].first)
      return fail(SubmitStatus::INVALID, "pixel (" + std::to_string(l.r) + ", " + std::to_string(l.c) + ") was not requested");
  }

  for (std::size_t i = 0; i < labels.size(); ++i) {
    const Pixel p{labels[i].r, labels[i].c};
    QueueItem* item = where[i].first;
    if (!item) {
      res.conflicts.push_back(p);
      continue;
    }
    ledger_->commit(item->reservation, 1, image_id, "human");
    answered_.insert({image_id, p});
    inbox_.push_back({image_id, labels[i]});
    std::erase(item->pixels, p);
    ++res.accepted;
    ++res.billed;
  }
  std::erase_if(items_, [](const auto& kv) { return kv.second.pixels.empty(); });
  res.status = res.accepted == 0 ? SubmitStatus::CONFLICT : SubmitStatus::OK;
  res.remaining_budget = ledger_->total() - ledger_->spent();
  return res;
}

std::vector<std::pair<std::string, PixelLabel>> AnnotationHub::drain() {
  std::lock_guard lock(mu_);
  auto out = std::move(inbox_);
  inbox_.clear();
  return out;
}

void AnnotationHub::set_progress(int round, std::vector<double> miou_history) {
  std::lock_guard lock(mu_);
  round_ = round;
  miou_history_ = std::move(miou_history);
}

json AnnotationHub::status() const {
  std::lock_guard lock(mu_);
  json palette = json::array();
  for (const auto& c : palette_) palette.push_back({c[0], c[1], c[2]});
  return {{"round", round_},
          {"spent", ledger_->spent()},
          {"total", ledger_->total()},
          {"miou_history", miou_history_},
          {"num_classes", k_},
          {"classes", class_names_},
          {"palette", palette}};
}

std::optional<std::string> AnnotationHub::render_png(const std::string& image_id) const {
  std::lock_guard lock(mu_);
  auto it = images_.find(image_id);
  if (it == images_.end()) return std::nullopt;
  eval::RgbImage img = eval::render_image(it->second->image);
  auto u = uncertainty_.find(image_id);
  if (u != uncertainty_.end()) img = eval::overlay_uncertainty(img, u->second);
  return eval::encode_png(img);
}

json AnnotationHub::to_json() const {
  std::lock_guard lock(mu_);
  json items = json::array();
  for (const auto& [_, it] : items_) {
    json px = json::array();
    for (const auto& p : it.pixels) px.push_back({p.r, p.c});
    items.push_back({{"id", it.id}, {"image_id", it.image_id}, {"pixels", px}, {"priority", it.priority},
                     {"reservation", it.reservation}});
  }
  json answered = json::array();
  for (const auto& [id, p] : answered_) answered.push_back({id, p.r, p.c});
  json inbox = json::array();
  for (const auto& [id, l] : inbox_) inbox.push_back({id, l.r, l.c, l.cls});
  return {{"items", items}, {"next_item", next_item_}, {"answered", answered}, {"inbox", inbox}};
}

void AnnotationHub::restore(const json& j) {
  std::lock_guard lock(mu_);
  items_.clear();
  answered_.clear();
  inbox_.clear();
  next_item_ = j.at("next_item").get<std::uint64_t>();
  for (const auto& it : j.at("items")) {
    QueueItem q;
    q.id = it.at("id").get<std::uint64_t>();
    q.image_id = it.at("image_id").get<std::string>();
    for (const auto& p : it.at("pixels")) q.pixels.push_back({p.at(0).get<int>(), p.at(1).get<int>()});
    q.priority = it.at("priority").get<double>();
    q.reservation = it.at("reservation").get<BudgetLedger::ReservationId>();
    items_.emplace(q.id, std::move(q));
  }
  for (const auto& a : j.at("answered"))
    answered_.insert({a.at(0).get<std::string>(), Pixel{a.at(1).get<int>(), a.at(2).get<int>()}});
  for (const auto& l : j.at("inbox"))
    inbox_.push_back({l.at(0).get<std::string>(), PixelLabel{l.at(1).get<int>(), l.at(2).get<int>(), l.at(3).get<int>()}});
}

}  // namespace plarseg::loop
