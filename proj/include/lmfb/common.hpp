#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace lmfb {

// Bad run configuration or unusable corpus.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Malformed data fed to a valid API (unknown token, reserved token in a hypothesis, ...).
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// API misused by the caller (non-scalar loss, misaligned batch, a+ == a-).
struct UsageError : std::logic_error {
  using std::logic_error::logic_error;
};

// Metric with an empty denominator.
struct MetricError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Decoding produced no finished hypothesis within the length budget.
struct DecodeError : std::runtime_error {
  DecodeError(const std::string& what, std::vector<std::vector<int>> partials)
      : std::runtime_error(what), partial_sequences(std::move(partials)) {}
  std::vector<std::vector<int>> partial_sequences;
};

// FNV-1a, used for checkpoint ids, manifests and RNG substream derivation.
inline std::uint64_t fnv1a(const void* data, std::size_t n, std::uint64_t h = 0xcbf29ce484222325ull) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::uint64_t fnv1a(const std::string& s, std::uint64_t h = 0xcbf29ce484222325ull) {
  return fnv1a(s.data(), s.size(), h);
}

inline std::string hex64(std::uint64_t v) {
  static const char* d = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = d[v & 0xf];
    v >>= 4;
  }
  return out;
}

}  // namespace lmfb
