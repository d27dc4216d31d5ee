#include "sca/serialize.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>

#include "sca/errors.hpp"

namespace sca {

namespace {

constexpr char kMagic[4] = {'S', 'C', 'A', 'T'};

template <class U>
void put_le(std::vector<std::uint8_t>& out, U value) {
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    out.push_back(static_cast<std::uint8_t>(value >> (8 * i)));
  }
}

template <class U>
U get_le(std::span<const std::uint8_t> bytes, std::size_t& offset,
         const char* what) {
  if (bytes.size() - offset < sizeof(U) || offset > bytes.size()) {
    throw FormatError(std::string("truncated ") + what, offset);
  }
  U value = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    value |= static_cast<U>(bytes[offset + i]) << (8 * i);
  }
  offset += sizeof(U);
  return value;
}

}  // namespace

void append_tensor(std::vector<std::uint8_t>& out, const Tensor& tensor,
                   DType dtype) {
  if (tensor.rank() == 0 || tensor.rank() > 255) {
    throw DimensionError("SCAT supports ranks 1..255, got " +
                         std::to_string(tensor.rank()));
  }
  out.insert(out.end(), std::begin(kMagic), std::end(kMagic));
  out.push_back(kScatVersion);
  out.push_back(static_cast<std::uint8_t>(dtype));
  out.push_back(static_cast<std::uint8_t>(tensor.rank()));
  for (auto extent : tensor.shape()) {
    if (extent > std::numeric_limits<std::uint32_t>::max()) {
      throw DimensionError("extent does not fit in u32");
    }
    put_le(out, static_cast<std::uint32_t>(extent));
  }
  for (double x : tensor.data()) {
    if (dtype == DType::F64) {
      put_le(out, std::bit_cast<std::uint64_t>(x));
    } else {
      put_le(out, std::bit_cast<std::uint32_t>(static_cast<float>(x)));
    }
  }
}

std::vector<std::uint8_t> encode_tensor(const Tensor& tensor, DType dtype) {
  std::vector<std::uint8_t> out;
  append_tensor(out, tensor, dtype);
  return out;
}

Tensor decode_tensor(std::span<const std::uint8_t> bytes, std::size_t& offset) {
  const std::size_t start = offset;
  if (bytes.size() < offset + 4) throw FormatError("truncated magic", offset);
  if (std::memcmp(bytes.data() + offset, kMagic, 4) != 0) {
    throw FormatError("bad magic, expected \"SCAT\"", offset);
  }
  offset += 4;
  const auto version = get_le<std::uint8_t>(bytes, offset, "version");
  if (version != kScatVersion) {
    throw FormatError("unsupported SCAT version " + std::to_string(version),
                      offset - 1);
  }
  const auto dtype = get_le<std::uint8_t>(bytes, offset, "dtype");
  if (dtype != static_cast<std::uint8_t>(DType::F32) &&
      dtype != static_cast<std::uint8_t>(DType::F64)) {
    throw FormatError("unknown dtype code " + std::to_string(dtype),
                      offset - 1);
  }
  const auto rank = get_le<std::uint8_t>(bytes, offset, "rank");
  if (rank == 0) throw FormatError("rank 0 tensor", offset - 1);
  Shape shape(rank);
  for (auto& extent : shape) {
    extent = get_le<std::uint32_t>(bytes, offset, "extent");
    if (extent == 0) throw FormatError("zero extent", offset - 4);
  }
  const std::size_t count = shape_size(shape);
  const std::size_t width = dtype == static_cast<std::uint8_t>(DType::F64) ? 8 : 4;
  if ((bytes.size() - offset) / width < count) {
    throw FormatError("truncated payload for shape " + shape_to_string(shape) +
                          " (container starts at byte " +
                          std::to_string(start) + ")",
                      bytes.size());
  }
  std::vector<double> data(count);
  for (auto& x : data) {
    if (width == 8) {
      x = std::bit_cast<double>(get_le<std::uint64_t>(bytes, offset, "payload"));
    } else {
      x = std::bit_cast<float>(get_le<std::uint32_t>(bytes, offset, "payload"));
    }
  }
  return Tensor(std::move(shape), std::move(data));
}

Tensor decode_tensor(std::span<const std::uint8_t> bytes) {
  std::size_t offset = 0;
  Tensor t = decode_tensor(bytes, offset);
  if (offset != bytes.size()) {
    throw FormatError("trailing bytes after tensor", offset);
  }
  return t;
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

void write_file_bytes(const std::filesystem::path& path,
                      std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

void save_tensor(const std::filesystem::path& path, const Tensor& tensor,
                 DType dtype) {
  write_file_bytes(path, encode_tensor(tensor, dtype));
}

Tensor load_tensor(const std::filesystem::path& path) {
  return decode_tensor(read_file_bytes(path));
}

std::vector<std::uint8_t> encode_archive(const NamedTensors& entries) {
  std::vector<std::uint8_t> out;
  put_le(out, static_cast<std::uint32_t>(entries.size()));
  for (const auto& [name, tensor] : entries) {
    if (name.size() > std::numeric_limits<std::uint16_t>::max()) {
      throw DimensionError("entry name too long: " + name);
    }
    put_le(out, static_cast<std::uint16_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    append_tensor(out, tensor, DType::F64);
  }
  return out;
}

NamedTensors decode_archive(std::span<const std::uint8_t> bytes) {
  std::size_t offset = 0;
  const auto count = get_le<std::uint32_t>(bytes, offset, "entry count");
  NamedTensors entries;
  for (std::uint32_t e = 0; e < count; ++e) {
    const auto length = get_le<std::uint16_t>(bytes, offset, "name length");
    if (bytes.size() - offset < length) {
      throw FormatError("truncated entry name", offset);
    }
    std::string name(reinterpret_cast<const char*>(bytes.data() + offset),
                     length);
    offset += length;
    Tensor t = decode_tensor(bytes, offset);
    entries.emplace_back(std::move(name), std::move(t));
  }
  if (offset != bytes.size()) {
    throw FormatError("trailing bytes after archive", offset);
  }
  return entries;
}

void save_archive(const std::filesystem::path& path,
                  const NamedTensors& entries) {
  write_file_bytes(path, encode_archive(entries));
}

NamedTensors load_archive(const std::filesystem::path& path) {
  return decode_archive(read_file_bytes(path));
}

}  // namespace sca
