#include "fiqa/archive.hpp"

#include <array>
#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include "fiqa/error.hpp"

namespace fiqa {

namespace {

static_assert(std::endian::native == std::endian::little,
              "archive I/O assumes a little-endian host");

constexpr std::array<char, 8> kMagic{'F', 'I', 'Q', 'A', 'T', 'N', 'S', 'R'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put(std::ostream& os, T value) {
  os.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T get(std::istream& is, const std::filesystem::path& path) {
  T value{};
  if (!is.read(reinterpret_cast<char*>(&value), sizeof(T))) {
    throw Error(ErrorKind::Io, "truncated archive " + path.string());
  }
  return value;
}

}  // namespace

std::vector<std::int64_t> canonical_dims(std::vector<std::int64_t> dims) {
  while (dims.size() > 1 && dims.back() == 1) dims.pop_back();
  return dims;
}

void write_archive(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error(ErrorKind::Io, "cannot write " + path.string());
  os.write(kMagic.data(), kMagic.size());
  put<std::uint32_t>(os, kVersion);
  put<std::uint32_t>(os, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& t : tensors) {
    const auto dims = canonical_dims(t.dims);
    std::int64_t count = 1;
    for (auto d : dims) count *= d;
    if (count != static_cast<std::int64_t>(t.data.size())) {
      throw Error(ErrorKind::ShapeMismatch, "tensor " + t.name + " dims disagree with data");
    }
    put<std::uint32_t>(os, static_cast<std::uint32_t>(t.name.size()));
    os.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
    put<std::uint32_t>(os, static_cast<std::uint32_t>(dims.size()));
    for (auto d : dims) put<std::int64_t>(os, d);
    os.write(reinterpret_cast<const char*>(t.data.data()),
             static_cast<std::streamsize>(t.data.size() * sizeof(float)));
  }
  if (!os) throw Error(ErrorKind::Io, "failed writing " + path.string());
}

std::vector<NamedTensor> read_archive(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(ErrorKind::MissingFile, path.string());
  std::array<char, 8> magic{};
  is.read(magic.data(), magic.size());
  if (!is || magic != kMagic) {
    throw Error(ErrorKind::Io, path.string() + " is not a tensor archive");
  }
  const auto version = get<std::uint32_t>(is, path);
  if (version != kVersion) {
    throw Error(ErrorKind::Io, "unsupported archive version " + std::to_string(version));
  }
  const auto count = get<std::uint32_t>(is, path);
  std::vector<NamedTensor> out;
  out.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor t;
    const auto name_len = get<std::uint32_t>(is, path);
    t.name.resize(name_len);
    if (!is.read(t.name.data(), name_len)) throw Error(ErrorKind::Io, "truncated archive");
    const auto ndim = get<std::uint32_t>(is, path);
    std::int64_t elems = 1;
    for (std::uint32_t d = 0; d < ndim; ++d) {
      t.dims.push_back(get<std::int64_t>(is, path));
      elems *= t.dims.back();
    }
    if (elems < 0 || elems > (std::int64_t{1} << 32)) {
      throw Error(ErrorKind::Io, "implausible tensor size in " + path.string());
    }
    t.data.resize(static_cast<std::size_t>(elems));
    if (!is.read(reinterpret_cast<char*>(t.data.data()),
                 static_cast<std::streamsize>(elems * sizeof(float)))) {
      throw Error(ErrorKind::Io, "truncated archive " + path.string());
    }
    out.push_back(std::move(t));
  }
  return out;
}

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t value) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(value));
  return buf;
}

std::string file_digest(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(ErrorKind::MissingFile, path.string());
  std::string bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return hex64(fnv1a64(bytes));
}

}  // namespace fiqa
