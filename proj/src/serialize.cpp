#include "multicos/serialize.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

namespace multicos {

namespace {

template <typename T>
void put_le(std::ostream& os, T value) {
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  os.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <typename T>
T get_le(std::istream& is) {
  unsigned char bytes[sizeof(T)];
  if (!is.read(reinterpret_cast<char*>(bytes), sizeof(T))) throw IoError("unexpected end of tensor stream");
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  T value;
  std::memcpy(&value, bytes, sizeof(T));
  return value;
}

void expect_magic(std::istream& is, const char (&magic)[4]) {
  char got[4];
  if (!is.read(got, 4)) throw IoError("unexpected end of stream reading magic");
  if (std::memcmp(got, magic, 4) != 0) throw MalformedHeader("bad magic bytes");
}

}  // namespace

void write_tensor(std::ostream& os, const Tensor& t) {
  os.write(kTensorMagic, 4);
  put_le<uint16_t>(os, kTensorVersion);
  put_le<uint16_t>(os, static_cast<uint16_t>(t.rank()));
  for (int64_t e : t.shape()) put_le<uint64_t>(os, static_cast<uint64_t>(e));
  for (double v : t.values()) put_le<double>(os, v);
  if (!os) throw IoError("failed writing tensor");
}

Tensor read_tensor(std::istream& is) {
  expect_magic(is, kTensorMagic);
  const auto version = get_le<uint16_t>(is);
  if (version != kTensorVersion) throw MalformedHeader("unsupported tensor version " + std::to_string(version));
  const auto rank = get_le<uint16_t>(is);
  Shape shape(rank);
  for (auto& e : shape) {
    const auto v = get_le<uint64_t>(is);
    if (v > (uint64_t{1} << 40)) throw MalformedHeader("implausible extent");
    e = static_cast<int64_t>(v);
  }
  std::vector<double> data(static_cast<size_t>(shape_numel(shape)));
  for (double& v : data) v = get_le<double>(is);
  return Tensor(std::move(shape), std::move(data));
}

void save_tensor(const std::filesystem::path& path, const Tensor& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  write_tensor(os, t);
}

Tensor load_tensor(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  return read_tensor(is);
}

void save_checkpoint(const std::filesystem::path& path, const NamedTensors& entries) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  os.write(kCheckpointMagic, 4);
  put_le<uint16_t>(os, kTensorVersion);
  put_le<uint16_t>(os, 0);
  put_le<uint64_t>(os, entries.size());
  for (const auto& [name, t] : entries) {
    put_le<uint32_t>(os, static_cast<uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_tensor(os, t);
  }
  if (!os) throw IoError("failed writing checkpoint " + path.string());
}

NamedTensors load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  expect_magic(is, kCheckpointMagic);
  const auto version = get_le<uint16_t>(is);
  if (version != kTensorVersion) throw MalformedHeader("unsupported checkpoint version");
  get_le<uint16_t>(is);
  const auto count = get_le<uint64_t>(is);
  NamedTensors out;
  for (uint64_t i = 0; i < count; ++i) {
    const auto len = get_le<uint32_t>(is);
    if (len > 4096) throw MalformedHeader("implausible entry name length");
    std::string name(len, '\0');
    if (!is.read(name.data(), len)) throw IoError("truncated checkpoint entry name");
    out.emplace_back(std::move(name), read_tensor(is));
  }
  return out;
}

}  // namespace multicos
