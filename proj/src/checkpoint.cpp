#include "kavi/checkpoint.hpp"

#include <bit>
#include <fstream>
#include <unordered_map>

namespace kavi {

namespace {

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

struct Cursor {
  const std::string& buf;
  std::size_t pos = 0;

  void need(std::size_t n) const {
    if (pos + n > buf.size()) throw TensorError("checkpoint: truncated file");
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[pos++])) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[pos++])) << (8 * i);
    return v;
  }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s = buf.substr(pos, n);
    pos += n;
    return s;
  }
};

}  // namespace

void save_checkpoint(const std::string& path, const std::vector<NamedTensor>& tensors) {
  std::string out;
  put_u32(out, kCheckpointMagic);
  put_u32(out, kCheckpointVersion);
  put_u64(out, tensors.size());
  for (const auto& [name, tensor] : tensors) {
    if (!tensor.defined()) throw TensorError("save_checkpoint: undefined tensor " + name);
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out.append(name);
    put_u32(out, static_cast<std::uint32_t>(tensor.rank()));
    for (std::size_t d : tensor.shape()) put_u64(out, d);
    for (double v : tensor.data()) put_u64(out, std::bit_cast<std::uint64_t>(v));
  }
  std::ofstream file(path, std::ios::binary | std::ios::trunc);
  if (!file) throw TensorError("save_checkpoint: cannot open " + path);
  file.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!file) throw TensorError("save_checkpoint: write failed for " + path);
}

std::vector<NamedTensor> load_checkpoint(const std::string& path) {
  std::ifstream file(path, std::ios::binary);
  if (!file) throw TensorError("load_checkpoint: cannot open " + path);
  std::string buf((std::istreambuf_iterator<char>(file)), std::istreambuf_iterator<char>());

  Cursor cur{buf};
  if (cur.u32() != kCheckpointMagic) throw TensorError("checkpoint: bad magic");
  const std::uint32_t version = cur.u32();
  if (version != kCheckpointVersion)
    throw TensorError("checkpoint: unsupported version " + std::to_string(version));
  const std::uint64_t count = cur.u64();

  std::vector<NamedTensor> tensors;
  tensors.reserve(count);
  for (std::uint64_t t = 0; t < count; ++t) {
    const std::uint32_t name_len = cur.u32();
    std::string name = cur.bytes(name_len);
    const std::uint32_t rank = cur.u32();
    if (rank > 8) throw TensorError("checkpoint: implausible rank for " + name);
    Shape shape(rank);
    std::size_t numel = 1;
    for (std::uint32_t r = 0; r < rank; ++r) {
      shape[r] = static_cast<std::size_t>(cur.u64());
      numel *= shape[r];
    }
    cur.need(numel * 8);
    std::vector<double> data(numel);
    for (std::size_t i = 0; i < numel; ++i) data[i] = std::bit_cast<double>(cur.u64());
    tensors.emplace_back(std::move(name), Tensor::from_data(std::move(shape), std::move(data)));
  }
  if (cur.pos != buf.size()) throw TensorError("checkpoint: trailing bytes");
  return tensors;
}

void restore_state(const std::vector<NamedTensor>& destination,
                   const std::vector<NamedTensor>& loaded) {
  std::unordered_map<std::string, const Tensor*> by_name;
  for (const auto& [name, tensor] : loaded) {
    if (!by_name.emplace(name, &tensor).second)
      throw TensorError("restore_state: duplicate tensor " + name);
  }
  for (const auto& [name, tensor] : destination) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw TensorError("restore_state: missing tensor " + name);
    const Tensor& src = *it->second;
    if (src.shape() != tensor.shape())
      throw TensorError("restore_state: shape mismatch for " + name + ", have " +
                        shape_to_string(tensor.shape()) + " loaded " +
                        shape_to_string(src.shape()));
    tensor.mutable_data() = src.data();
    by_name.erase(it);
  }
  if (!by_name.empty())
    throw TensorError("restore_state: unexpected tensor " + by_name.begin()->first);
}

}  // namespace kavi
