#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>

namespace ptpai {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Rng = std::mt19937_64;

// Error taxonomy shared across the library. Call sites match on the code,
// messages are for humans.
enum class ErrorCode {
  invalid_spec,
  insufficient_noise,
  config,
  empty_result,
  invalid_input,
  key_not_found,
  format,
  file_not_found,
  shape,
  insufficient_data,
  degenerate_weights,
  invalid_batch,
  unsupported_methods,
  divergence,
  io,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) {
  throw Error(code, what);
}

inline void require(bool ok, ErrorCode code, const std::string& what) {
  if (!ok) fail(code, what);
}

inline std::uint64_t fnv1a64(std::string_view bytes,
                             std::uint64_t seed = 0xcbf29ce484222325ull) {
  std::uint64_t h = seed;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

// Independent, reproducible substream: the same (seed, tag, index) always
// yields the same generator, and distinct tags decorrelate streams.
inline Rng substream(std::uint64_t seed, std::string_view tag,
                     std::uint64_t index = 0) {
  std::uint64_t h = fnv1a64(tag, seed ^ 0x9e3779b97f4a7c15ull);
  return Rng(splitmix64(h ^ splitmix64(index)));
}

}  // namespace ptpai
