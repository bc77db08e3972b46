#include "rcorl/container.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

namespace rcorl {

namespace {

constexpr char kMagic[8] = {'R', 'C', 'O', 'R', 'L', 'B', 'I', 'N'};
constexpr std::uint32_t kVersion = 1;

void append_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void append_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

struct Reader {
  const std::string& buf;
  std::size_t pos = 0;

  void need(std::size_t n) const {
    if (pos + n > buf.size()) throw std::runtime_error("container: truncated file");
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
    pos += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
    pos += 8;
    return v;
  }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s = buf.substr(pos, n);
    pos += n;
    return s;
  }
};

}  // namespace

const Mat& Container::array(std::string_view name) const {
  for (const auto& a : arrays)
    if (a.name == name) return a.data;
  throw std::out_of_range("container: missing array '" + std::string(name) + "'");
}

bool Container::has_array(std::string_view name) const {
  for (const auto& a : arrays)
    if (a.name == name) return true;
  return false;
}

void write_container(const std::filesystem::path& path, const json& manifest,
                     const std::vector<NamedArray>& arrays) {
  std::string body;
  append_u32(body, kVersion);
  const std::string mstr = manifest.dump();
  append_u32(body, static_cast<std::uint32_t>(mstr.size()));
  body += mstr;
  append_u32(body, static_cast<std::uint32_t>(arrays.size()));
  for (const auto& a : arrays) {
    append_u32(body, static_cast<std::uint32_t>(a.name.size()));
    body += a.name;
    append_u64(body, static_cast<std::uint64_t>(a.data.rows()));
    append_u64(body, static_cast<std::uint64_t>(a.data.cols()));
    // row-major float64, little-endian
    for (Eigen::Index r = 0; r < a.data.rows(); ++r) {
      for (Eigen::Index c = 0; c < a.data.cols(); ++c) {
        double v = a.data(r, c);
        std::uint64_t bits;
        std::memcpy(&bits, &v, 8);
        append_u64(body, bits);
      }
    }
  }
  const std::uint64_t checksum = fnv1a64(body);

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("container: cannot open for write: " + path.string());
  f.write(kMagic, 8);
  f.write(body.data(), static_cast<std::streamsize>(body.size()));
  std::string tail;
  append_u64(tail, checksum);
  f.write(tail.data(), 8);
  if (!f) throw std::runtime_error("container: write failed: " + path.string());
}

Container read_container(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("container: cannot open: " + path.string());
  std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

  if (buf.size() < 8 + 8 || std::memcmp(buf.data(), kMagic, 8) != 0)
    throw std::runtime_error("container: bad magic: " + path.string());
  const std::string body = buf.substr(8, buf.size() - 16);
  std::uint64_t stored = 0;
  for (int i = 0; i < 8; ++i)
    stored |= std::uint64_t(static_cast<unsigned char>(buf[buf.size() - 8 + i])) << (8 * i);
  if (fnv1a64(body) != stored)
    throw std::runtime_error("container: checksum failure: " + path.string());

  Reader r{body};
  const std::uint32_t version = r.u32();
  if (version != kVersion)
    throw std::runtime_error("container: version mismatch (got " + std::to_string(version) + ")");
  const std::uint32_t mlen = r.u32();
  Container out;
  out.manifest = json::parse(r.bytes(mlen));
  const std::uint32_t n_arrays = r.u32();
  out.arrays.reserve(n_arrays);
  for (std::uint32_t k = 0; k < n_arrays; ++k) {
    NamedArray a;
    const std::uint32_t nlen = r.u32();
    a.name = r.bytes(nlen);
    const auto rows = static_cast<Eigen::Index>(r.u64());
    const auto cols = static_cast<Eigen::Index>(r.u64());
    a.data.resize(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i) {
      for (Eigen::Index j = 0; j < cols; ++j) {
        const std::uint64_t bits = r.u64();
        double v;
        std::memcpy(&v, &bits, 8);
        a.data(i, j) = v;
      }
    }
    out.arrays.push_back(std::move(a));
  }
  return out;
}

}  // namespace rcorl
