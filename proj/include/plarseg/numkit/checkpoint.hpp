#pragma once

#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

#include "plarseg/numkit/optim.hpp"

namespace plarseg::numkit {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Little-endian tensor archive:
//   8 bytes   magic "PLSGTNSR"
//   u32       version (1)
//   u32       tensor count
//   per tensor:
//     u32 name length, name bytes (UTF-8, no terminator)
//     u32 rank, rank x u32 dims
//     prod(dims) x float32 payload
inline constexpr char kCheckpointMagic[8] = {'P', 'L', 'S', 'G', 'T', 'N', 'S', 'R'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

void write_tensors(std::ostream& os, const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> read_tensors(std::istream& is);

void save_tensors(const std::string& path, const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> load_tensors(const std::string& path);

// Copies archive entries into `params` by name; every parameter must be present
// with a matching shape.
void assign_params(ParamSet& params, const std::vector<NamedTensor>& archive, const std::string& prefix = "");

}  // namespace plarseg::numkit
