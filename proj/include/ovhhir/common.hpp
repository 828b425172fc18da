#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace ovhhir {

// Error taxonomy. The CLI maps these to distinct exit codes
// (usage = 2, data/config = 3, numeric = 4).
struct usage_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct data_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct config_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct numeric_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Malformed input with the byte offset where parsing gave up.
struct parse_error : data_error {
    size_t offset;
    parse_error(const std::string & msg, size_t off)
        : data_error(msg + " (byte " + std::to_string(off) + ")"), offset(off) {}
};

// FNV-1a 64-bit. Used for weight checksums and derived seeds.
constexpr uint64_t FNV64_BASIS = 0xcbf29ce484222325ull;
constexpr uint64_t FNV64_PRIME = 0x00000100000001b3ull;

inline uint64_t fnv1a64(const void * data, size_t n, uint64_t h = FNV64_BASIS) {
    const auto * p = static_cast<const unsigned char *>(data);
    for (size_t i = 0; i < n; i++) {
        h ^= p[i];
        h *= FNV64_PRIME;
    }
    return h;
}

inline uint64_t fnv1a64(const std::string & s, uint64_t h = FNV64_BASIS) {
    return fnv1a64(s.data(), s.size(), h);
}

std::string hex64(uint64_t v);

// Seeded generator. Gaussian sampling is hand-rolled (Box-Muller) so draws
// do not depend on the standard library's distribution implementations.
class Rng {
  public:
    explicit Rng(uint64_t seed) : seed_(seed), gen_(seed) {}

    uint64_t seed() const { return seed_; }

    uint64_t next_u64() { return gen_(); }

    // [0, 1)
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double gaussian();

    // inclusive bounds
    int64_t uniform_int(int64_t lo, int64_t hi);

    // Child stream with a seed derived from (root seed, name). Stable under
    // reordering of sibling streams.
    Rng fork(const std::string & name) const {
        return Rng(fnv1a64(name, seed_ ^ FNV64_BASIS));
    }

  private:
    uint64_t seed_;
    std::mt19937_64 gen_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

// string helpers
std::string lowercase(const std::string & s);
std::string trim(const std::string & s);
std::string collapse_whitespace(const std::string & s);
std::vector<std::string> split_words(const std::string & s);

} // namespace ovhhir
