#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>

namespace bandmatch {

// All failures surface as Error with a stable machine-readable code
// ("FormatError", "BudgetTooSmall", ...) plus a human-oriented message.
class Error : public std::runtime_error {
 public:
  Error(std::string code, const std::string& message)
      : std::runtime_error(code + ": " + message), code_(std::move(code)) {}

  const std::string& code() const { return code_; }

 private:
  std::string code_;
};

[[noreturn]] inline void fail(std::string code, const std::string& message) {
  throw Error(std::move(code), message);
}

// splitmix64 finalizer; used to derive well-mixed seeds for engine streams.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Deterministic per-stage seed: root seed combined with a stage tag so every
// pipeline stage draws from its own independent stream.
inline std::uint64_t seed_for(std::uint64_t root, std::string_view stage) {
  std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a over the tag
  for (char c : stage) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return splitmix64(root ^ splitmix64(h));
}

using ImageId = std::uint64_t;

// Unordered image pair stored as (min, max) so (a,b) and (b,a) compare equal.
struct IdPair {
  ImageId a = 0;
  ImageId b = 0;

  IdPair() = default;
  IdPair(ImageId x, ImageId y) : a(x < y ? x : y), b(x < y ? y : x) {}

  friend bool operator==(const IdPair&, const IdPair&) = default;
  friend auto operator<=>(const IdPair&, const IdPair&) = default;
};

}  // namespace bandmatch
