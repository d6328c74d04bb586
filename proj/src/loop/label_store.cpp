#include "plarseg/loop/label_store.hpp"

#include <algorithm>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace plarseg::loop {

bool LabelStore::set(const std::string& image_id, int r, int c, int cls) {
  if (r < 0 || r >= height_ || c < 0 || c >= width_) throw std::out_of_range("label outside the image");
  if (cls < 0 || cls >= static_cast<int>(synth::kIgnore)) throw std::out_of_range("class id out of range");
  auto it = maps_.try_emplace(image_id, height_, width_).first;
  std::uint8_t& slot = it->second.at(r, c);
  if (slot != synth::kIgnore) return false;
  slot = static_cast<std::uint8_t>(cls);
  ++pixels_;
  return true;
}

bool LabelStore::has(const std::string& image_id, int r, int c) const {
  const auto* m = find(image_id);
  return m && m->at(r, c) != synth::kIgnore;
}

const synth::LabelMap* LabelStore::find(const std::string& image_id) const {
  auto it = maps_.find(image_id);
  return it == maps_.end() ? nullptr : &it->second;
}

std::int64_t LabelStore::pixels(const std::string& image_id) const {
  const auto* m = find(image_id);
  if (!m) return 0;
  return std::count_if(m->ids.begin(), m->ids.end(), [](std::uint8_t v) { return v != synth::kIgnore; });
}

void LabelStore::overlay(const std::string& image_id, tsf::PseudoLabelMap& map) const {
  const auto* m = find(image_id);
  if (!m) return;
  if (map.height != m->height || map.width != m->width) throw numkit::DimensionError("label store size mismatch");
  for (std::size_t i = 0; i < m->ids.size(); ++i) {
    if (m->ids[i] == synth::kIgnore) continue;
    map.cls[i] = m->ids[i];
    map.conf[i] = 1.0f;
    map.prov[i] = tsf::Provenance::MANUAL;
  }
}

nlohmann::json LabelStore::to_json() const {
  nlohmann::json images = nlohmann::json::object();
  for (const auto& [id, m] : maps_) {
    nlohmann::json px = nlohmann::json::array();
    for (int r = 0; r < m.height; ++r)
      for (int c = 0; c < m.width; ++c)
        if (m.at(r, c) != synth::kIgnore) px.push_back({r, c, m.at(r, c)});
    images[id] = px;
  }
  return {{"height", height_}, {"width", width_}, {"images", images}};
}

LabelStore LabelStore::from_json(const nlohmann::json& j) {
  LabelStore s(j.at("height").get<int>(), j.at("width").get<int>());
  for (const auto& [id, px] : j.at("images").items())
    for (const auto& p : px) s.set(id, p.at(0).get<int>(), p.at(1).get<int>(), p.at(2).get<int>());
  return s;
}

void CandidatePool::add(Candidate c) {
  auto key = std::make_pair(c.image_id, c.cell);
  auto it = items_.find(key);
  if (it == items_.end()) {
    items_.emplace(std::move(key), std::move(c));
    return;
  }
  // The newest pixel list wins: pixels labelled since the older request are excluded.
  it->second.priority = std::max(it->second.priority, c.priority);
  it->second.pixels = std::move(c.pixels);
}

std::vector<Candidate> CandidatePool::ranked() const {
  std::vector<Candidate> out;
  out.reserve(items_.size());
  for (const auto& [_, c] : items_) out.push_back(c);
  std::stable_sort(out.begin(), out.end(), [](const Candidate& a, const Candidate& b) { return a.priority > b.priority; });
  return out;
}

}  // namespace plarseg::loop
