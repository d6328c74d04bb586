#include "plarseg/loop/oracle.hpp"

#include <stdexcept>

#include "plarseg/numkit/rng.hpp"

namespace plarseg::loop {

namespace {

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace

SimulatedOracle::SimulatedOracle(const synth::GroundTruthVault& vault, int num_classes, double eta,
                                 std::uint64_t seed)
    : vault_(&vault), k_(num_classes), eta_(eta), seed_(seed) {
  if (num_classes < 2) throw std::invalid_argument("oracle needs at least two classes");
  if (eta < 0.0 || eta > 1.0) throw std::invalid_argument("label noise rate must lie in [0, 1]");
}

OracleResponse SimulatedOracle::query(const OracleRequest& request) {
  if (!vault_->contains(request.image_id))
    throw std::out_of_range("simulated oracle: unknown image id '" + request.image_id + "'");
  const synth::LabelMap& gt = vault_->reveal(request.image_id);
  OracleResponse resp;
  resp.status = OracleStatus::ANSWERED;
  resp.classes.reserve(request.pixels.size());
  const std::uint64_t image_seed = numkit::mix_seed(seed_, fnv1a(request.image_id));
  for (const Pixel& p : request.pixels) {
    if (p.r < 0 || p.r >= gt.height || p.c < 0 || p.c >= gt.width)
      throw std::out_of_range("simulated oracle: pixel outside image");
    const int truth = gt.at(p.r, p.c);
    if (truth == synth::kIgnore) {
      resp.classes.push_back(kSkip);
      continue;
    }
    int answer = truth;
    if (eta_ > 0.0) {
      numkit::Rng rng(numkit::mix_seed(image_seed, static_cast<std::uint64_t>(p.r) * 1000003ull + p.c));
      if (rng.uniform() < eta_) {
        const int shift = static_cast<int>(rng.randint(1, k_ - 1));
        answer = (truth + shift) % k_;
      }
    }
    resp.classes.push_back(answer);
  }
  return resp;
}

}  // namespace plarseg::loop
