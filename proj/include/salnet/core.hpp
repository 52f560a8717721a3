#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace salnet {

// Error categories map onto process exit codes: config=2, data=3, numeric=4.
enum class ErrorKind { config = 2, data = 3, numeric = 4 };

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& msg) : std::runtime_error(msg), kind_(kind) {}
  ErrorKind kind() const { return kind_; }
  int exit_code() const { return static_cast<int>(kind_); }

 private:
  ErrorKind kind_;
};

inline Error config_error(const std::string& msg) { return Error(ErrorKind::config, msg); }
inline Error data_error(const std::string& msg) { return Error(ErrorKind::data, msg); }
inline Error numeric_error(const std::string& msg) { return Error(ErrorKind::numeric, msg); }

using Shape = std::vector<int>;

inline std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (int d : s) n *= static_cast<std::size_t>(d);
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Deterministic RNG. mt19937_64 is fully specified by the standard; the
// distribution helpers below are hand-rolled because std:: distributions are
// implementation-defined and would break bit-exact rerun guarantees.
class Rng {
 public:
  explicit Rng(uint64_t seed) : gen_(splitmix64(seed)), seed_(seed) {}

  uint64_t u64() { return gen_(); }

  // uniform double in [0,1) with 53 random bits
  double uniform() { return static_cast<double>(u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // uniform index in [0,n); modulo bias is negligible against a 64-bit range
  std::size_t index(std::size_t n) { return static_cast<std::size_t>(u64() % n); }

  int range(int lo, int hi) {  // inclusive bounds
    return lo + static_cast<int>(index(static_cast<std::size_t>(hi - lo + 1)));
  }

  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = uniform(), u2 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    double mag = std::sqrt(-2.0 * std::log(u1));
    spare_ = mag * std::sin(2.0 * M_PI * u2);
    have_spare_ = true;
    return mag * std::cos(2.0 * M_PI * u2);
  }

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = index(i);
      std::swap(v[i - 1], v[j]);
    }
  }

  // Draw k distinct indices from [0,n) by partial Fisher-Yates.
  std::vector<int> sample_without_replacement(int n, int k) {
    std::vector<int> pool(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) pool[static_cast<std::size_t>(i)] = i;
    std::vector<int> out;
    out.reserve(static_cast<std::size_t>(k));
    for (int i = 0; i < k; ++i) {
      std::size_t j = i + index(static_cast<std::size_t>(n - i));
      std::swap(pool[static_cast<std::size_t>(i)], pool[j]);
      out.push_back(pool[static_cast<std::size_t>(i)]);
    }
    return out;
  }

  // Derive an independent child stream; deterministic in (seed, salt).
  Rng split(uint64_t salt) const {
    return Rng(splitmix64(seed_ ^ splitmix64(salt ^ 0x5851f42d4c957f2dULL)));
  }

 private:
  std::mt19937_64 gen_;
  uint64_t seed_ = 0;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

// Deterministic, locale-independent float formatting for logs and tables.
inline std::string fmt_double(double v, int precision = 10) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*g", precision, v);
  return std::string(buf);
}

}  // namespace salnet
