#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <sstream>
#include <vector>

namespace d2d {

// Error taxonomy. Everything user-facing derives from Error so the CLI can
// catch one type and exit nonzero with the message.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ParseError : Error { using Error::Error; };
struct SchemaError : Error { using Error::Error; };
struct DimError : Error { using Error::Error; };
struct ContractError : Error { using Error::Error; };
struct TrainError : Error { using Error::Error; };

namespace detail {
inline void cat_into(std::ostringstream&) {}
template <class T, class... Rest>
void cat_into(std::ostringstream& os, const T& v, const Rest&... rest) {
  os << v;
  cat_into(os, rest...);
}
}  // namespace detail

template <class... Args>
std::string cat(const Args&... args) {
  std::ostringstream os;
  detail::cat_into(os, args...);
  return os.str();
}

// Deterministic, platform-independent RNG (splitmix64 core). std::mt19937
// itself is portable but the standard distributions are not; everything that
// must be byte-reproducible goes through this.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {}

  uint64_t next_u64() {
    uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  // uniform in [0,1)
  double real() { return double(next_u64() >> 11) * 0x1.0p-53; }

  // uniform integer in [lo, hi] inclusive
  int64_t uniform_int(int64_t lo, int64_t hi) {
    if (hi < lo) throw ContractError(cat("uniform_int: empty range [", lo, ",", hi, "]"));
    uint64_t span = uint64_t(hi - lo) + 1;
    return lo + int64_t(next_u64() % span);
  }

  float uniform(float lo, float hi) { return lo + float(real()) * (hi - lo); }

  bool bernoulli(double p) { return real() < p; }

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = size_t(uniform_int(0, int64_t(i) - 1));
      std::swap(v[i - 1], v[j]);
    }
  }

  template <class T>
  const T& pick(const std::vector<T>& v) {
    if (v.empty()) throw ContractError("pick from empty vector");
    return v[size_t(uniform_int(0, int64_t(v.size()) - 1))];
  }

  // Independent stream derived from this seed; used to give each worker
  // (ensemble member, noise channel) its own generator.
  Rng fork(uint64_t stream) const {
    Rng r(state_ ^ (0x94d049bb133111ebull * (stream + 1)));
    r.next_u64();
    return r;
  }

 private:
  uint64_t state_;
};

inline std::string join_tokens(const std::vector<std::string>& toks, size_t lo, size_t hi,
                               const char* sep = " ") {
  std::string out;
  for (size_t i = lo; i < hi; ++i) {
    if (i > lo) out += sep;
    out += toks[i];
  }
  return out;
}

inline std::vector<std::string> split_ws(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream is(s);
  std::string t;
  while (is >> t) out.push_back(t);
  return out;
}

}  // namespace d2d
