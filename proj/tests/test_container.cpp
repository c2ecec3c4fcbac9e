#include "doctest.h"

#include "logo/container.hpp"

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>

using namespace logo;
namespace fs = std::filesystem;

namespace {

std::string le32(std::uint32_t v) {
  std::string s(4, '\0');
  for (int k = 0; k < 4; ++k) s[static_cast<std::size_t>(k)] = static_cast<char>((v >> (8 * k)) & 0xffu);
  return s;
}

std::string le_float(float f) {
  std::uint32_t u;
  std::memcpy(&u, &f, 4);
  return le32(u);
}

Container sample() {
  Container c;
  c.tag = "PARM";
  c.tensors.push_back({"w", {2, 2}, {1.0f, -2.5f, 0.0f, 3.25f}});
  c.tensors.push_back({"b", {1}, {std::numeric_limits<float>::denorm_min()}});
  return c;
}

fs::path temp_file(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "logo_test_container";
  fs::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST_CASE("encoding matches a hand-built byte layout") {
  Container c;
  c.tag = "DATA";
  c.tensors.push_back({"ab", {1, 2}, {1.5f, -0.25f}});
  const std::string expected = "LOGO" + le32(1) + "DATA" + le32(1) + le32(2) + "ab" + le32(2) + le32(1) + le32(2) +
                               le_float(1.5f) + le_float(-0.25f);
  CHECK(encode_container(c) == expected);
}

TEST_CASE("container round trips bitwise") {
  const Container c = sample();
  const std::string bytes = encode_container(c);
  const Container back = decode_container(bytes);
  CHECK(back.tag == c.tag);
  CHECK(back.tensors == c.tensors);
  CHECK(encode_container(back) == bytes);

  const fs::path p = temp_file("rt.logo");
  write_container(p, c);
  CHECK(encode_container(read_container(p, "PARM")) == bytes);
  CHECK_THROWS_AS(read_container(p, "WMDL"), BadFormatError);
}

TEST_CASE("corrupt files raise distinct errors") {
  std::string bytes = encode_container(sample());
  std::string bad_magic = bytes;
  bad_magic[0] = 'X';
  CHECK_THROWS_AS(decode_container(bad_magic), BadFormatError);
  std::string bad_version = bytes;
  bad_version[4] = 7;
  CHECK_THROWS_AS(decode_container(bad_version), VersionMismatchError);
  CHECK_THROWS_AS(decode_container(bytes.substr(0, bytes.size() - 3)), TruncatedFileError);
  CHECK_THROWS_AS(decode_container(bytes + "x"), BadFormatError);
}

TEST_CASE("parameter stores round trip through PARM files") {
  ad::ParamStore<float> p;
  p.add("layer.w", ad::Matrix<float>::Random(3, 5));
  p.add("layer.b", ad::Matrix<float>::Random(1, 5));
  const fs::path path = temp_file("params.logo");
  save_params(path, p);
  const auto q = load_params(path);
  REQUIRE(q.entries().size() == 2);
  for (const auto& [name, m] : p.entries()) CHECK(q.at(name) == m);
  std::ifstream in(path, std::ios::binary);
  std::string head(12, '\0');
  in.read(head.data(), 12);
  CHECK(head.substr(8, 4) == "PARM");
}
