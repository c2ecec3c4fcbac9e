#include "logo/container.hpp"

#include <bit>
#include <fstream>
#include <iterator>
#include <sstream>

namespace logo {

namespace {

constexpr std::string_view kMagic = "LOGO";

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  std::string_view take(std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n)
      throw TruncatedFileError(std::string("truncated container while reading ") + what);
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  std::uint32_t u32(const char* what) {
    auto s = take(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(s[static_cast<std::size_t>(i)]))
           << (8 * i);
    return v;
  }

  bool done() const { return pos_ == bytes_.size(); }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

const Tensor* Container::find(std::string_view name) const {
  for (const auto& t : tensors)
    if (t.name == name) return &t;
  return nullptr;
}

const Tensor& Container::get(std::string_view name) const {
  const Tensor* t = find(name);
  if (!t) throw BadFormatError("container is missing tensor '" + std::string(name) + "'");
  return *t;
}

std::string encode_container(const Container& c) {
  if (c.tag.size() != 4) throw std::invalid_argument("section tag must be four bytes");
  std::string out;
  out.append(kMagic);
  put_u32(out, kContainerVersion);
  out.append(c.tag);
  put_u32(out, static_cast<std::uint32_t>(c.tensors.size()));
  for (const auto& t : c.tensors) {
    std::size_t expected = 1;
    for (auto d : t.shape) expected *= d;
    if (expected != t.data.size())
      throw std::invalid_argument("tensor '" + t.name + "' shape does not match payload");
    put_u32(out, static_cast<std::uint32_t>(t.name.size()));
    out.append(t.name);
    put_u32(out, static_cast<std::uint32_t>(t.shape.size()));
    for (auto d : t.shape) put_u32(out, d);
    for (float f : t.data) put_u32(out, std::bit_cast<std::uint32_t>(f));
  }
  return out;
}

Container decode_container(std::string_view bytes) {
  Reader in(bytes);
  if (bytes.size() < 4 || bytes.substr(0, 4) != kMagic)
    throw BadFormatError("bad format: missing LOGO magic bytes");
  in.take(4, "magic");
  const std::uint32_t version = in.u32("version");
  if (version != kContainerVersion)
    throw VersionMismatchError("unsupported container version " + std::to_string(version));
  Container c;
  c.tag = std::string(in.take(4, "section tag"));
  const std::uint32_t count = in.u32("tensor count");
  for (std::uint32_t i = 0; i < count; ++i) {
    Tensor t;
    const std::uint32_t name_len = in.u32("name length");
    t.name = std::string(in.take(name_len, "tensor name"));
    const std::uint32_t rank = in.u32("rank");
    std::size_t total = 1;
    for (std::uint32_t r = 0; r < rank; ++r) {
      t.shape.push_back(in.u32("dimension"));
      total *= t.shape.back();
    }
    if (total > in.remaining() / 4) throw TruncatedFileError("truncated container payload for '" + t.name + "'");
    t.data.resize(total);
    for (std::size_t k = 0; k < total; ++k) t.data[k] = std::bit_cast<float>(in.u32("payload"));
    c.tensors.push_back(std::move(t));
  }
  if (!in.done()) throw BadFormatError("bad format: trailing bytes after last tensor");
  return c;
}

void write_container(const std::filesystem::path& path, const Container& c) {
  const std::string bytes = encode_container(c);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("failed writing '" + path.string() + "'");
}

Container read_container(const std::filesystem::path& path, std::string_view expected_tag) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path.string() + "'");
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  Container c = decode_container(bytes);
  if (!expected_tag.empty() && c.tag != expected_tag)
    throw BadFormatError("bad format: expected section '" + std::string(expected_tag) +
                         "', found '" + c.tag + "'");
  return c;
}

std::vector<Tensor> to_tensors(const ad::ParamStore<float>& params) {
  std::vector<Tensor> out;
  for (const auto& [name, m] : params.entries()) {
    Tensor t;
    t.name = name;
    t.shape = {static_cast<std::uint32_t>(m.rows()), static_cast<std::uint32_t>(m.cols())};
    t.data.assign(m.data(), m.data() + m.size());
    out.push_back(std::move(t));
  }
  return out;
}

ad::ParamStore<float> from_tensors(const std::vector<Tensor>& tensors) {
  ad::ParamStore<float> params;
  for (const auto& t : tensors) {
    Eigen::Index rows = 1;
    Eigen::Index cols = 1;
    if (t.shape.size() == 1) {
      cols = t.shape[0];
    } else if (!t.shape.empty()) {
      rows = t.shape[0];
      for (std::size_t k = 1; k < t.shape.size(); ++k) cols *= t.shape[k];
    }
    ad::Matrix<float> m(rows, cols);
    std::copy(t.data.begin(), t.data.end(), m.data());
    params.add(t.name, std::move(m));
  }
  return params;
}

void save_params(const std::filesystem::path& path, const ad::ParamStore<float>& params) {
  write_container(path, Container{"PARM", to_tensors(params)});
}

ad::ParamStore<float> load_params(const std::filesystem::path& path) {
  return from_tensors(read_container(path, "PARM").tensors);
}

}  // namespace logo
