#ifndef TSMT_IO_HPP
#define TSMT_IO_HPP

#include <filesystem>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

#include "tsmt/tensor.hpp"

namespace tsmt::io {

/// Malformed or unreadable TSMT files.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr char kMagic[4] = {'T', 'S', 'M', 'T'};
inline constexpr std::uint32_t kVersion = 1;

/// One tensor record: "TSMT", u32 LE version, u32 LE ndim, ndim x u32 LE
/// dims, then the row-major payload as little-endian float32.
void write_tensor(std::ostream& os, const Tensor& t);
void write_tensor_f32(std::ostream& os, const Shape& shape, const float* data);
Tensor read_tensor(std::istream& is);
/// Reads one record into float storage; returns its shape.
Shape read_tensor_f32(std::istream& is, std::vector<float>& out);

void save_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor load_tensor(const std::filesystem::path& path);

/// Writes `bytes` next to `path` and renames it into place.
void write_file_atomic(const std::filesystem::path& path, const std::string& bytes);
std::string read_file(const std::filesystem::path& path);

}  // namespace tsmt::io

#endif  // TSMT_IO_HPP
