#include "plarseg/numkit/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <unordered_map>

namespace plarseg::numkit {

namespace {

void put_u32(std::ostream& os, std::uint32_t v) {
  const char bytes[4] = {static_cast<char>(v & 0xFF), static_cast<char>((v >> 8) & 0xFF),
                         static_cast<char>((v >> 16) & 0xFF), static_cast<char>((v >> 24) & 0xFF)};
  os.write(bytes, 4);
}

std::uint32_t get_u32(std::istream& is) {
  unsigned char bytes[4];
  if (!is.read(reinterpret_cast<char*>(bytes), 4)) throw CheckpointError("checkpoint truncated");
  return static_cast<std::uint32_t>(bytes[0]) | (static_cast<std::uint32_t>(bytes[1]) << 8) |
         (static_cast<std::uint32_t>(bytes[2]) << 16) | (static_cast<std::uint32_t>(bytes[3]) << 24);
}

}  // namespace

void write_tensors(std::ostream& os, const std::vector<NamedTensor>& tensors) {
  os.write(kCheckpointMagic, sizeof kCheckpointMagic);
  put_u32(os, kCheckpointVersion);
  put_u32(os, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    put_u32(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_u32(os, static_cast<std::uint32_t>(t.rank()));
    for (int d : t.shape()) put_u32(os, static_cast<std::uint32_t>(d));
    for (float v : t.data()) {
      std::uint32_t bits;
      std::memcpy(&bits, &v, 4);
      put_u32(os, bits);
    }
  }
  if (!os) throw CheckpointError("checkpoint write failed");
}

std::vector<NamedTensor> read_tensors(std::istream& is) {
  char magic[8];
  if (!is.read(magic, 8) || std::memcmp(magic, kCheckpointMagic, 8) != 0)
    throw CheckpointError("not a tensor checkpoint (bad magic)");
  const auto version = get_u32(is);
  if (version != kCheckpointVersion) throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  const auto count = get_u32(is);
  std::vector<NamedTensor> out;
  out.reserve(count);
  for (std::uint32_t k = 0; k < count; ++k) {
    const auto len = get_u32(is);
    if (len > (1u << 20)) throw CheckpointError("implausible tensor name length");
    std::string name(len, '\0');
    if (!is.read(name.data(), len)) throw CheckpointError("checkpoint truncated");
    const auto rank = get_u32(is);
    if (rank == 0 || rank > 8) throw CheckpointError("implausible tensor rank");
    Shape shape(rank);
    for (auto& d : shape) {
      d = static_cast<int>(get_u32(is));
      if (d <= 0) throw CheckpointError("non-positive dimension in checkpoint");
    }
    std::vector<float> data(shape_numel(shape));
    for (auto& v : data) {
      const auto bits = get_u32(is);
      std::memcpy(&v, &bits, 4);
    }
    out.push_back({std::move(name), Tensor(std::move(shape), std::move(data))});
  }
  return out;
}

void save_tensors(const std::string& path, const std::vector<NamedTensor>& tensors) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw CheckpointError("cannot open " + path + " for writing");
  write_tensors(os, tensors);
}

std::vector<NamedTensor> load_tensors(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("cannot open " + path);
  return read_tensors(is);
}

void assign_params(ParamSet& params, const std::vector<NamedTensor>& archive, const std::string& prefix) {
  std::unordered_map<std::string, const Tensor*> index;
  for (const auto& e : archive) index[e.name] = &e.tensor;
  for (auto& p : params) {
    const auto it = index.find(prefix + p.name);
    if (it == index.end()) throw CheckpointError("checkpoint lacks tensor " + prefix + p.name);
    if (it->second->shape() != p.tensor.shape())
      throw CheckpointError("shape mismatch for " + prefix + p.name);
    const auto src = it->second->data();
    std::copy(src.begin(), src.end(), p.tensor.data().begin());
  }
}

}  // namespace plarseg::numkit
