#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "sca/tensor.hpp"

namespace sca {

// SCAT tensor container:
//   "SCAT" | version 0x01 | dtype (0x01 f32, 0x02 f64) | rank |
//   rank x u32 LE extents | payload LE row-major
enum class DType : std::uint8_t { F32 = 0x01, F64 = 0x02 };

inline constexpr std::uint8_t kScatVersion = 0x01;

std::vector<std::uint8_t> encode_tensor(const Tensor& tensor,
                                        DType dtype = DType::F64);
void append_tensor(std::vector<std::uint8_t>& out, const Tensor& tensor,
                   DType dtype = DType::F64);
// Decodes one container starting at `offset` and advances it. f32 payloads
// are promoted to f64. Throws FormatError with the offending byte offset.
Tensor decode_tensor(std::span<const std::uint8_t> bytes, std::size_t& offset);
Tensor decode_tensor(std::span<const std::uint8_t> bytes);

void save_tensor(const std::filesystem::path& path, const Tensor& tensor,
                 DType dtype = DType::F64);
Tensor load_tensor(const std::filesystem::path& path);

// Checkpoint archive: u32 LE count, then per entry u16 LE name length,
// UTF-8 name, embedded SCAT container.
using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

std::vector<std::uint8_t> encode_archive(const NamedTensors& entries);
NamedTensors decode_archive(std::span<const std::uint8_t> bytes);
void save_archive(const std::filesystem::path& path,
                  const NamedTensors& entries);
NamedTensors load_archive(const std::filesystem::path& path);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path,
                      std::span<const std::uint8_t> bytes);

}  // namespace sca
