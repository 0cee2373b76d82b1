#include "tsmt/io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace tsmt::io {

namespace {

static_assert(std::endian::native == std::endian::little, "TSMT files are little-endian; big-endian hosts unsupported");

void put_u32(std::ostream& os, std::uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); }

std::uint32_t get_u32(std::istream& is) {
  std::uint32_t v = 0;
  if (!is.read(reinterpret_cast<char*>(&v), 4)) throw FormatError("truncated TSMT header");
  return v;
}

Shape read_header(std::istream& is) {
  char magic[4];
  if (!is.read(magic, 4)) throw FormatError("truncated TSMT header");
  if (std::memcmp(magic, kMagic, 4) != 0) throw FormatError("bad magic, not a TSMT tensor");
  const std::uint32_t version = get_u32(is);
  if (version != kVersion) throw FormatError("unsupported TSMT version " + std::to_string(version));
  const std::uint32_t ndim = get_u32(is);
  if (ndim > 16) throw FormatError("implausible TSMT rank " + std::to_string(ndim));
  Shape shape(ndim);
  for (auto& d : shape) {
    d = get_u32(is);
    if (d == 0) throw FormatError("zero dimension in TSMT file");
  }
  return shape;
}

}  // namespace

void write_tensor_f32(std::ostream& os, const Shape& shape, const float* data) {
  os.write(kMagic, 4);
  put_u32(os, kVersion);
  put_u32(os, static_cast<std::uint32_t>(shape.size()));
  for (Index d : shape) put_u32(os, static_cast<std::uint32_t>(d));
  os.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(shape_numel(shape) * sizeof(float)));
}

void write_tensor(std::ostream& os, const Tensor& t) {
  std::vector<float> f(static_cast<std::size_t>(t.numel()));
  for (Index i = 0; i < t.numel(); ++i) f[i] = static_cast<float>(t[i]);
  write_tensor_f32(os, t.shape(), f.data());
}

Shape read_tensor_f32(std::istream& is, std::vector<float>& out) {
  Shape shape = read_header(is);
  out.resize(static_cast<std::size_t>(shape_numel(shape)));
  if (!is.read(reinterpret_cast<char*>(out.data()), static_cast<std::streamsize>(out.size() * sizeof(float))))
    throw FormatError("truncated TSMT payload");
  return shape;
}

Tensor read_tensor(std::istream& is) {
  std::vector<float> f;
  Shape shape = read_tensor_f32(is, f);
  Vector v(static_cast<Index>(f.size()));
  for (std::size_t i = 0; i < f.size(); ++i) v[static_cast<Index>(i)] = f[i];
  return Tensor(std::move(shape), std::move(v));
}

void save_tensor(const std::filesystem::path& path, const Tensor& t) {
  std::ostringstream os(std::ios::binary);
  write_tensor(os, t);
  write_file_atomic(path, os.str());
}

Tensor load_tensor(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open " + path.string());
  return read_tensor(is);
}

void write_file_atomic(const std::filesystem::path& path, const std::string& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw FormatError("cannot write " + tmp.string());
    os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!os) throw FormatError("short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

}  // namespace tsmt::io
