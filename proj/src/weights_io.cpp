#include <fstream>
#include <iterator>

#include "bladefl/learner.hpp"

namespace bladefl {

namespace {
constexpr std::uint32_t kWeightMagic = 0x574c4642;  // "BFLW"
}

Bytes encode_weights(const WeightVector& w) {
  Bytes out;
  out.reserve(24 + static_cast<std::size_t>(w.values.size()) * sizeof(double));
  ByteWriter wr(out);
  wr.put<std::uint32_t>(kWeightMagic);
  wr.put<std::uint32_t>(static_cast<std::uint32_t>(w.topology.input_dim));
  wr.put<std::uint32_t>(static_cast<std::uint32_t>(w.topology.hidden_dim));
  wr.put<std::uint32_t>(static_cast<std::uint32_t>(w.topology.classes));
  wr.put<std::uint64_t>(static_cast<std::uint64_t>(w.values.size()));
  const auto* p = reinterpret_cast<const std::uint8_t*>(w.values.data());
  wr.put_bytes({p, static_cast<std::size_t>(w.values.size()) * sizeof(double)});
  return out;
}

WeightVector decode_weights(std::span<const std::uint8_t> bytes) {
  ByteReader rd(bytes);
  if (rd.get<std::uint32_t>() != kWeightMagic) throw Error(ErrorCode::BadMagic, "not a weight record");
  WeightVector w;
  w.topology.input_dim = static_cast<int>(rd.get<std::uint32_t>());
  w.topology.hidden_dim = static_cast<int>(rd.get<std::uint32_t>());
  w.topology.classes = static_cast<int>(rd.get<std::uint32_t>());
  const auto count = rd.get<std::uint64_t>();
  if (count != static_cast<std::uint64_t>(w.topology.size())) {
    throw Error(ErrorCode::TopologyMismatch, "weight count does not match topology");
  }
  if (rd.remaining() != count * sizeof(double)) {
    throw Error(ErrorCode::TruncatedFile, "weight payload length mismatch");
  }
  const auto raw = rd.get_bytes(count * sizeof(double));
  w.values.resize(static_cast<Eigen::Index>(count));
  std::memcpy(w.values.data(), raw.data(), raw.size());
  if (!w.values.allFinite()) throw Error(ErrorCode::InvalidParameter, "non-finite weight");
  return w;
}

void save_checkpoint(const WeightVector& w, const std::filesystem::path& path) {
  const Bytes b = encode_weights(w);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
}

WeightVector load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path.string());
  const Bytes b((std::istreambuf_iterator<char>(in)), {});
  return decode_weights(b);
}

}  // namespace bladefl
