#include <doctest.h>

#include <cstring>
#include <fstream>
#include <sstream>

#include "support.hpp"
#include "tsmt/io.hpp"

using namespace tsmt;

namespace {

std::uint32_t le32(const std::string& bytes, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(bytes[at + i]);
  return v;
}

}  // namespace

TEST_CASE("tensor record layout is little-endian float32 after a dimension header") {
  Tensor t = Tensor::from({2, 3}, {1.0, -2.5, 0.0, 3.25, 1e-3, 7.0});
  std::ostringstream os;
  io::write_tensor(os, t);
  const std::string b = os.str();
  REQUIRE(b.size() == 4 + 4 + 4 + 2 * 4 + 6 * 4);
  CHECK(b.substr(0, 4) == "TSMT");
  CHECK(le32(b, 4) == 1);
  CHECK(le32(b, 8) == 2);
  CHECK(le32(b, 12) == 2);
  CHECK(le32(b, 16) == 3);
  const std::uint32_t bits = le32(b, 20 + 4);
  float f;
  std::memcpy(&f, &bits, 4);
  CHECK(f == -2.5f);
}

TEST_CASE("tensor round trip rounds to float32") {
  Rng rng(3);
  Tensor t = test::random_tensor({3, 4, 5}, rng);
  std::stringstream ss;
  io::write_tensor(ss, t);
  io::write_tensor(ss, Tensor::scalar(0.1));
  Tensor back = io::read_tensor(ss);
  CHECK(back.shape() == t.shape());
  for (Index i = 0; i < t.numel(); ++i) CHECK(back[i] == static_cast<double>(static_cast<float>(t[i])));
  Tensor s = io::read_tensor(ss);
  CHECK(s.ndim() == 0);
  CHECK(s.item() == static_cast<double>(0.1f));
}

TEST_CASE("malformed records raise FormatError") {
  auto read = [](const std::string& bytes) {
    std::istringstream is(bytes);
    return io::read_tensor(is);
  };
  std::ostringstream os;
  io::write_tensor(os, Tensor::from({2}, {1, 2}));
  const std::string good = os.str();
  CHECK_THROWS_AS(read(""), io::FormatError);
  CHECK_THROWS_AS(read("XSMT" + good.substr(4)), io::FormatError);
  std::string bad_version = good;
  bad_version[4] = 9;
  CHECK_THROWS_AS(read(bad_version), io::FormatError);
  CHECK_THROWS_AS(read(good.substr(0, good.size() - 1)), io::FormatError);
  std::string zero_dim = good;
  zero_dim[12] = 0;
  CHECK_THROWS_AS(read(zero_dim), io::FormatError);
}

TEST_CASE("files are written atomically and read back") {
  test::TempDir dir("io");
  const auto path = dir.path() / "x.tsmt";
  Tensor t = Tensor::from({1, 2}, {0.5, 4.0});
  io::save_tensor(path, t);
  CHECK(io::load_tensor(path).data() == t.data());
  io::write_file_atomic(dir.path() / "a.txt", "hello");
  io::write_file_atomic(dir.path() / "a.txt", "again");
  CHECK(io::read_file(dir.path() / "a.txt") == "again");
  std::size_t entries = 0;
  for ([[maybe_unused]] const auto& e : std::filesystem::directory_iterator(dir.path())) ++entries;
  CHECK(entries == 2);
  CHECK_THROWS(io::load_tensor(dir.path() / "missing.tsmt"));
}
