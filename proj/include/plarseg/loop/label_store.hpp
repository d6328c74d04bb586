#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "plarseg/loop/oracle.hpp"
#include "plarseg/synth/sample.hpp"
#include "plarseg/tsf/pseudo_label.hpp"

namespace plarseg::loop {

struct PixelLabel {
  int r = 0;
  int c = 0;
  int cls = 0;
};

// Manual labels received so far, per unlabelled image at image resolution.
// A pixel is written at most once.
class LabelStore {
 public:
  LabelStore() = default;
  LabelStore(int height, int width) : height_(height), width_(width) {}

  // False if the pixel already holds a label.
  bool set(const std::string& image_id, int r, int c, int cls);
  bool has(const std::string& image_id, int r, int c) const;
  const synth::LabelMap* find(const std::string& image_id) const;
  std::int64_t pixels() const { return pixels_; }
  std::int64_t pixels(const std::string& image_id) const;

  // Writes stored labels into a pseudo-label map as MANUAL with confidence 1.
  void overlay(const std::string& image_id, tsf::PseudoLabelMap& map) const;

  nlohmann::json to_json() const;
  static LabelStore from_json(const nlohmann::json& j);

 private:
  int height_ = 0;
  int width_ = 0;
  std::int64_t pixels_ = 0;
  std::map<std::string, synth::LabelMap> maps_;
};

// A manual-label request for one grid cell.
struct Candidate {
  std::string image_id;
  int cell = 0;  // row-major grid index
  std::vector<Pixel> pixels;
  double priority = 0.0;
};

// Requests gathered during a round, deduplicated per (image, cell) keeping the
// highest priority.
class CandidatePool {
 public:
  void add(Candidate c);
  std::size_t size() const { return items_.size(); }
  bool empty() const { return items_.empty(); }
  void clear() { items_.clear(); }
  // Highest priority first; ties by image id then cell.
  std::vector<Candidate> ranked() const;

 private:
  std::map<std::pair<std::string, int>, Candidate> items_;
};

}  // namespace plarseg::loop
