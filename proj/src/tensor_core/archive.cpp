#include "matten/archive.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>

#include "matten/error.hpp"

namespace matten {

static_assert(std::endian::native == std::endian::little,
              "archive I/O assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'M', 'T', 'T', 'N'};

void put_u32(std::ostream& out, std::uint32_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

std::uint32_t get_u32(std::istream& in, const std::string& field) {
  std::uint32_t v = 0;
  if (!in.read(reinterpret_cast<char*>(&v), sizeof v)) {
    throw LoadError("archive truncated while reading " + field);
  }
  return v;
}

std::uint32_t checked_u32(std::size_t v, const char* what) {
  if (v > 0xFFFFFFFFu) throw SizeError(std::string(what) + " exceeds u32 range");
  return static_cast<std::uint32_t>(v);
}

}  // namespace

void write_archive(std::ostream& out, std::span<const NamedTensor> tensors) {
  out.write(kMagic, 4);
  put_u32(out, kArchiveVersion);
  put_u32(out, checked_u32(tensors.size(), "tensor count"));
  for (const auto& [name, t] : tensors) {
    put_u32(out, checked_u32(name.size(), "name length"));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_u32(out, checked_u32(t.rank(), "rank"));
    for (auto e : t.shape()) put_u32(out, checked_u32(e, "extent"));
    put_u32(out, static_cast<std::uint32_t>(t.dtype()));
    const auto values = t.data();
    if (t.dtype() == DType::F32) {
      std::vector<float> buf(values.begin(), values.end());
      out.write(reinterpret_cast<const char*>(buf.data()),
                static_cast<std::streamsize>(buf.size() * sizeof(float)));
    } else {
      out.write(reinterpret_cast<const char*>(values.data()),
                static_cast<std::streamsize>(values.size() * sizeof(double)));
    }
  }
  if (!out) throw Error("archive write failed");
}

std::vector<NamedTensor> read_archive(std::istream& in) {
  char magic[4] = {};
  if (!in.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) {
    throw LoadError("archive: bad magic bytes (expected \"MTTN\")");
  }
  const auto version = get_u32(in, "version");
  if (version != kArchiveVersion) {
    throw LoadError("archive: unsupported version " + std::to_string(version));
  }
  const auto count = get_u32(in, "tensor count");
  std::vector<NamedTensor> result;
  result.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string where = "tensor #" + std::to_string(i);
    const auto name_len = get_u32(in, where + " name length");
    std::string name(name_len, '\0');
    if (name_len && !in.read(name.data(), name_len)) {
      throw LoadError("archive truncated while reading " + where + " name");
    }
    const std::string field = "tensor '" + name + "'";
    const auto rank = get_u32(in, field + " rank");
    if (rank > 16) throw LoadError(field + ": implausible rank " + std::to_string(rank));
    Shape shape(rank);
    for (auto& e : shape) {
      e = get_u32(in, field + " extents");
      if (e == 0) throw LoadError(field + ": zero extent");
    }
    const auto tag = get_u32(in, field + " dtype");
    if (tag > 1) throw LoadError(field + ": unknown dtype tag " + std::to_string(tag));
    const DType dtype = static_cast<DType>(tag);
    const std::size_t n = numel(shape);
    std::vector<double> values(n);
    if (dtype == DType::F32) {
      std::vector<float> buf(n);
      if (!in.read(reinterpret_cast<char*>(buf.data()),
                   static_cast<std::streamsize>(n * sizeof(float)))) {
        throw LoadError("archive truncated in " + field + " payload");
      }
      std::copy(buf.begin(), buf.end(), values.begin());
    } else if (!in.read(reinterpret_cast<char*>(values.data()),
                        static_cast<std::streamsize>(n * sizeof(double)))) {
      throw LoadError("archive truncated in " + field + " payload");
    }
    result.push_back({std::move(name), Tensor::from_vector(std::move(shape), std::move(values), dtype)});
  }
  return result;
}

void save_archive(const std::filesystem::path& path,
                  std::span<const NamedTensor> tensors) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  write_archive(out, tensors);
}

std::vector<NamedTensor> load_archive(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open " + path.string());
  try {
    return read_archive(in);
  } catch (const LoadError& e) {
    throw LoadError(path.string() + ": " + e.what());
  }
}

}  // namespace matten
