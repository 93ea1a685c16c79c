#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>

namespace mvdetr {

// Shape/precondition violations at module boundaries.
struct ContractError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// NaN/Inf escaping a forward op, or a numeric abort during training.
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// All randomness flows from one root seed; consumers get independent
// streams keyed by a purpose string so adding a consumer never perturbs
// the others. mt19937 output is standardized, so streams are portable.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(static_cast<std::uint32_t>(seed ^ (seed >> 32))) {}

    // FNV-1a over the purpose string mixed with the root seed.
    static std::uint64_t substream_seed(std::uint64_t seed, std::string_view purpose) {
        std::uint64_t h = 14695981039346656037ull ^ seed;
        for (char c : purpose) {
            h ^= static_cast<std::uint8_t>(c);
            h *= 1099511628211ull;
        }
        h ^= h >> 33;
        return h;
    }

    static Rng substream(std::uint64_t seed, std::string_view purpose) {
        return Rng(substream_seed(seed, purpose));
    }

    std::uint32_t next_u32() { return gen_(); }

    // Uniform in [0,1) with an implementation-pinned conversion; the
    // standard distributions are not bit-stable across libraries.
    double uniform() { return (gen_() >> 8) * (1.0 / 16777216.0); }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n) by rejection, bias-free.
    std::uint32_t uniform_index(std::uint32_t n) {
        if (n == 0) throw ContractError("uniform_index: n must be positive");
        std::uint32_t limit = std::numeric_limits<std::uint32_t>::max() - std::numeric_limits<std::uint32_t>::max() % n;
        std::uint32_t x;
        do { x = gen_(); } while (x >= limit);
        return x % n;
    }

private:
    std::mt19937 gen_;
};

}  // namespace mvdetr
