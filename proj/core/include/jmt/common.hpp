#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace jmt {

// Error categories. The CLI maps these onto process exit codes, so new
// failure modes should reuse one of the existing categories where possible.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Incompatible tensor shapes or layer dimensions.
struct ShapeError : Error {
  using Error::Error;
};

// Invalid configuration value (bad rate, bad fold count, unknown enum, ...).
struct ConfigError : Error {
  using Error::Error;
};

// File and serialization failures.
struct IoError : Error {
  using Error::Error;
};

// Malformed or empty input data.
struct DataError : Error {
  using Error::Error;
};

// Non-finite values where finite ones are required (NaN into softmax,
// diverged training loss).
struct NumericError : Error {
  using Error::Error;
};

using Shape = std::vector<int64_t>;

std::string shape_to_string(const Shape& s);

inline int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

// All randomness in the project flows through explicitly seeded mt19937_64
// instances so that (config, seed) pins every generated byte.
using Rng = std::mt19937_64;

// Derives a stream-specific seed from a base seed and a tag, so independent
// consumers (dataset, model init, dropout, shuffling) never share a stream.
uint64_t derive_seed(uint64_t base, std::string_view tag);

// FNV-1a, used for config hashes and data-order hashes.
uint64_t fnv1a(const void* data, size_t n, uint64_t seed = 0xcbf29ce484222325ull);
uint64_t fnv1a(std::string_view s, uint64_t seed = 0xcbf29ce484222325ull);

std::string hash_to_hex(uint64_t h);

}  // namespace jmt
