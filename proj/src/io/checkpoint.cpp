#include "vqamask/io/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "vqamask/error.hpp"

namespace vqamask::io {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'V', 'Q', 'M', 'K'};
constexpr std::uint32_t kVersion = 1;

template <class T>
void put(std::ostream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <class T>
T get(std::istream& in, const std::string& where) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (in.gcount() != static_cast<std::streamsize>(sizeof(T))) fail(ErrorCode::Unreadable, where + ": truncated");
  return value;
}

std::string get_bytes(std::istream& in, std::uint64_t count, const std::string& where) {
  if (count > (1ULL << 32)) fail(ErrorCode::Unreadable, where + ": implausible field length");
  std::string bytes(count, '\0');
  in.read(bytes.data(), static_cast<std::streamsize>(count));
  if (in.gcount() != static_cast<std::streamsize>(count)) fail(ErrorCode::Unreadable, where + ": truncated");
  return bytes;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const nn::ParamSet& params, const std::string& metadata) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::WriteFailure, path.string() + ": cannot open for writing");
  out.write(kMagic, 4);
  put<std::uint32_t>(out, kVersion);
  put<std::uint64_t>(out, metadata.size());
  out.write(metadata.data(), static_cast<std::streamsize>(metadata.size()));
  put<std::uint64_t>(out, params.entries().size());
  for (const auto& [name, tensor] : params.entries()) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put<std::uint8_t>(out, params.is_frozen(name) ? 1 : 0);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(tensor.rank()));
    for (std::size_t a = 0; a < tensor.rank(); ++a) put<std::uint64_t>(out, tensor.dim(a));
    const auto values = tensor.values();
    out.write(reinterpret_cast<const char*>(values.data()), static_cast<std::streamsize>(values.size() * sizeof(double)));
  }
  out.flush();
  if (!out) fail(ErrorCode::WriteFailure, path.string() + ": write failed");
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const std::string where = path.string();
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::Unreadable, where + ": cannot open checkpoint");
  if (get_bytes(in, 4, where) != std::string(kMagic, 4)) fail(ErrorCode::Unreadable, where + ": not a checkpoint");
  const auto version = get<std::uint32_t>(in, where);
  if (version != kVersion) fail(ErrorCode::Unreadable, where + ": unsupported version " + std::to_string(version));
  Checkpoint ckpt;
  ckpt.metadata = get_bytes(in, get<std::uint64_t>(in, where), where);
  const auto count = get<std::uint64_t>(in, where);
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::string name = get_bytes(in, get<std::uint32_t>(in, where), where);
    const bool frozen = get<std::uint8_t>(in, where) != 0;
    const auto rank = get<std::uint32_t>(in, where);
    if (rank > 8) fail(ErrorCode::Unreadable, where + ": implausible rank for " + name);
    nn::Shape shape;
    for (std::uint32_t a = 0; a < rank; ++a) shape.push_back(get<std::uint64_t>(in, where));
    const std::size_t numel = nn::shape_numel(shape);
    const std::string raw = get_bytes(in, numel * sizeof(double), where);
    std::vector<double> values(numel);
    std::memcpy(values.data(), raw.data(), raw.size());
    ckpt.params.add(name, nn::Tensor(shape, std::move(values)));
    if (frozen) ckpt.params.freeze(name);
  }
  ckpt.params.sync_requires_grad();
  return ckpt;
}

}  // namespace vqamask::io
