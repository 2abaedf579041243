#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace keenkt {

// Shape or rank disagreement between operands.
class ShapeError : public std::runtime_error {
 public:
  explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

// Input outside an operation's mathematical domain (sqrt of non-positive, ...).
class DomainError : public std::runtime_error {
 public:
  explicit DomainError(const std::string& msg) : std::runtime_error(msg) {}
};

// An op produced NaN/Inf. Carries the op name so training aborts can say
// which computation diverged.
class NonFiniteError : public std::runtime_error {
 public:
  explicit NonFiniteError(const std::string& op)
      : std::runtime_error("non-finite output in op '" + op + "'"), op_(op) {}
  const std::string& op() const { return op_; }

 private:
  std::string op_;
};

class ParseError : public std::runtime_error {
 public:
  explicit ParseError(const std::string& msg) : std::runtime_error(msg) {}
};

class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// splitmix64 step; decorrelates sub-seeds derived from (seed, tag) pairs so
// every component (init, shuffling, noise, folds) gets an independent stream.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (tag + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace keenkt
