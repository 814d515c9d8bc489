#include "denet/checkpoint.hpp"

#include <cstring>

#include "denet/binary_io.hpp"
#include "denet/errors.hpp"

namespace denet {

std::string encode_checkpoint(const NamedTensors& tensors) {
  std::string out(kCheckpointMagic);
  for (const auto& [name, t] : tensors) {
    binio::put_u32(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    binio::put_u32(out, static_cast<std::uint32_t>(t.rank()));
    for (auto e : t.shape()) binio::put_u32(out, static_cast<std::uint32_t>(e));
    for (double v : t.data()) binio::put_f64(out, v);
  }
  return out;
}

NamedTensors decode_checkpoint(const std::string& bytes) {
  const std::size_t magic_len = std::strlen(kCheckpointMagic);
  if (bytes.compare(0, magic_len, kCheckpointMagic) != 0)
    throw ValidationError("checkpoint: missing DENETCKPT1 magic");
  binio::Reader r(std::string_view(bytes).substr(magic_len), "checkpoint");
  NamedTensors out;
  while (!r.at_end()) {
    const auto name_len = r.u32();
    std::string name(r.take(name_len));
    const auto rank = r.u32();
    if (rank == 0) throw ValidationError("checkpoint: tensor '" + name + "' has rank 0");
    Shape shape(rank);
    for (auto& e : shape) {
      e = r.u32();
      if (e == 0) throw ValidationError("checkpoint: tensor '" + name + "' has a zero extent");
    }
    const std::size_t n = shape_numel(shape);
    if (r.remaining() / 8 < n) throw ValidationError("checkpoint: truncated data for '" + name + "'");
    std::vector<double> data(n);
    for (auto& v : data) v = r.f64();
    out.emplace_back(std::move(name), Tensor(std::move(shape), std::move(data)));
  }
  return out;
}

void save_checkpoint(const std::filesystem::path& path, const NamedTensors& tensors) {
  binio::write_file(path, encode_checkpoint(tensors));
}

NamedTensors load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(binio::read_file(path));
}

}  // namespace denet
