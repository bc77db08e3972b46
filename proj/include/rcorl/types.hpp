#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <random>
#include <string_view>

namespace rcorl {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using Rng = std::mt19937_64;

/// 64-bit FNV-1a over raw bytes; used for cache keys and file checksums.
std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t seed = 0xcbf29ce484222325ull);

/// Derive an independent seed from a parent seed and a stream tag.
std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag);

/// Standard-normal matrix, entries drawn in column-major order.
Mat randn(Eigen::Index rows, Eigen::Index cols, Rng& rng);

bool all_finite(const Mat& m);

}  // namespace rcorl
