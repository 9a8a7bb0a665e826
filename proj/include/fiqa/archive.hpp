#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace fiqa {

// One entry of a named-tensor archive. Dims follow the exporting framework's
// convention with trailing unit dims stripped, so [C,1,1,1] and [C] compare
// equal.
struct NamedTensor {
  std::string name;
  std::vector<std::int64_t> dims;
  std::vector<float> data;
};

// Binary layout (little endian):
//   "FIQATNSR" | u32 version=1 | u32 count |
//   count x { u32 name_len | name | u32 ndim | i64 dims[ndim] | f32 data[prod(dims)] }
void write_archive(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> read_archive(const std::filesystem::path& path);

std::vector<std::int64_t> canonical_dims(std::vector<std::int64_t> dims);

// 64-bit FNV-1a, used for config fingerprints and file digests.
std::uint64_t fnv1a64(std::string_view bytes);
std::string hex64(std::uint64_t value);
std::string file_digest(const std::filesystem::path& path);

}  // namespace fiqa
