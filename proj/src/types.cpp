#include "rcorl/types.hpp"

namespace rcorl {

std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t seed) {
  std::uint64_t h = seed;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag) {
  char buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = static_cast<char>((seed >> (8 * i)) & 0xff);
  std::uint64_t h = fnv1a64(std::string_view(buf, 8));
  return fnv1a64(tag, h);
}

Mat randn(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  std::normal_distribution<double> dist(0.0, 1.0);
  Mat out(rows, cols);
  double* p = out.data();  // column-major storage
  for (Eigen::Index i = 0; i < rows * cols; ++i) p[i] = dist(rng);
  return out;
}

bool all_finite(const Mat& m) { return m.allFinite(); }

}  // namespace rcorl
