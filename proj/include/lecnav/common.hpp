#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace lecnav {

// Bad configuration or violated precondition; the CLI maps this to exit code 2.
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

struct ChannelError : std::runtime_error {
  explicit ChannelError(const std::string& msg) : std::runtime_error(msg) {}
};

struct PlannerError : std::runtime_error {
  explicit PlannerError(const std::string& msg) : std::runtime_error(msg) {}
};

struct TeacherError : std::runtime_error {
  explicit TeacherError(const std::string& msg) : std::runtime_error(msg) {}
};

struct MetricError : std::runtime_error {
  explicit MetricError(const std::string& msg) : std::runtime_error(msg) {}
};

// Training diverged (non-finite loss or return).
struct TrainError : std::runtime_error {
  explicit TrainError(const std::string& msg) : std::runtime_error(msg) {}
};

// Seeded RNG with hand-rolled distributions so streams are identical across
// standard libraries. All randomness in the project flows through this.
class Rng {
 public:
  explicit Rng(uint64_t seed) : gen_(seed) {}

  uint64_t next_u64() { return gen_(); }

  // uniform in [0, 1)
  double uniform() {
    return (gen_() >> 11) * (1.0 / 9007199254740992.0);  // 53-bit mantissa
  }

  // uniform integer in [0, n)
  int uniform_int(int n) { return static_cast<int>(gen_() % static_cast<uint64_t>(n)); }

  // standard normal via Marsaglia polar method
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u, v, s;
    do {
      u = 2.0 * uniform() - 1.0;
      v = 2.0 * uniform() - 1.0;
      s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    const double m = std::sqrt(-2.0 * std::log(s) / s);
    spare_ = v * m;
    have_spare_ = true;
    return u * m;
  }

  // independent child stream
  Rng spawn() { return Rng(next_u64() ^ 0x9e3779b97f4a7c15ULL); }

 private:
  std::mt19937_64 gen_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

// FNV-1a, used for config hashes in output headers.
inline uint64_t fnv1a(const std::string& s) {
  uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::string to_hex(uint64_t v);

}  // namespace lecnav
