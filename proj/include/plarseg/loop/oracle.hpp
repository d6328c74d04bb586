#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "plarseg/synth/dataset.hpp"

namespace plarseg::loop {

struct Pixel {
  int r = 0;
  int c = 0;
  bool operator==(const Pixel&) const = default;
  auto operator<=>(const Pixel&) const = default;
};

inline constexpr int kSkip = -1;

struct OracleRequest {
  std::string image_id;
  std::vector<Pixel> pixels;
};

enum class OracleStatus { ANSWERED, PENDING, FAILED };

struct OracleResponse {
  OracleStatus status = OracleStatus::FAILED;
  std::vector<int> classes;  // one per requested pixel; kSkip reverts the pixel unbilled
  std::string error;
};

class Oracle {
 public:
  virtual ~Oracle() = default;
  virtual OracleResponse query(const OracleRequest& request) = 0;
  virtual std::string kind() const = 0;
};

// Answers from retained ground truth. With noise rate eta each returned class
// is replaced, with probability eta, by a different class drawn uniformly. The
// draw for a pixel depends only on (seed, image id, r, c).
class SimulatedOracle : public Oracle {
 public:
  SimulatedOracle(const synth::GroundTruthVault& vault, int num_classes, double eta = 0.0, std::uint64_t seed = 0);

  OracleResponse query(const OracleRequest& request) override;
  std::string kind() const override { return "simulated"; }

 private:
  const synth::GroundTruthVault* vault_;
  int k_;
  double eta_;
  std::uint64_t seed_;
};

// Stands in for an unreachable remote annotator.
class UnavailableOracle : public Oracle {
 public:
  OracleResponse query(const OracleRequest&) override { return {OracleStatus::FAILED, {}, "oracle unavailable"}; }
  std::string kind() const override { return "unavailable"; }
};

}  // namespace plarseg::loop
