#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "twodpo/dataset.hpp"
#include "twodpo/error.hpp"

namespace twodpo::testing {

inline std::string fixture(std::string_view name) { return std::string(TWODPO_FIXTURES) + "/" + std::string(name); }

// Random instances for property tests.
class Gen {
 public:
  explicit Gen(std::uint64_t seed) : rng_(seed) {}

  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng_); }
  double normal(double sd = 1.0) { return std::normal_distribution<double>(0.0, sd)(rng_); }
  // Inclusive on both ends.
  std::size_t index(std::size_t lo, std::size_t hi) {
    return std::uniform_int_distribution<std::size_t>(lo, hi)(rng_);
  }
  int likert() { return static_cast<int>(index(0, 4)); }
  bool coin(double p = 0.5) { return uniform(0.0, 1.0) < p; }

  std::vector<double> doubles(std::size_t n, double lo, double hi) {
    std::vector<double> v(n);
    for (auto& x : v) x = uniform(lo, hi);
    return v;
  }

  // Random contiguous partition of `tokens` into `parts` non-empty spans.
  std::vector<TokenSpan> partition(std::size_t tokens, std::size_t parts) {
    std::vector<std::size_t> cuts;
    for (std::size_t i = 1; i < tokens; ++i) cuts.push_back(i);
    std::shuffle(cuts.begin(), cuts.end(), rng_);
    cuts.resize(parts - 1);
    std::sort(cuts.begin(), cuts.end());
    cuts.push_back(tokens);
    std::vector<TokenSpan> spans;
    std::size_t start = 0;
    for (std::size_t c : cuts) {
      spans.push_back({start, c - start});
      start = c;
    }
    return spans;
  }

  // A matrix that satisfies every stored-matrix invariant.
  ScoreMatrix matrix(std::size_t segments) {
    ScoreMatrix m;
    int completeness = likert();
    for (std::size_t k = 0; k < segments; ++k) {
      completeness = std::min(4, completeness + static_cast<int>(index(0, 1)));
      m.rows.push_back({likert(), likert(), coin() ? 4 : 0, completeness, likert()});
    }
    return m;
  }

  std::mt19937_64& engine() { return rng_; }

 private:
  std::mt19937_64 rng_;
};

// Code of the Error thrown by f, empty if f returns normally.
template <class F>
std::optional<ErrorCode> thrown_code(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  return std::nullopt;
}

inline double rel_error(double analytic, double numeric) {
  if (analytic == numeric) return 0.0;
  return std::abs(analytic - numeric) / std::max(std::abs(analytic), std::abs(numeric));
}

// Central difference of f at x[i].
template <class F>
double central_difference(F&& f, std::vector<double>& x, std::size_t i, double h = 1e-5) {
  const double saved = x[i];
  x[i] = saved + h;
  const double up = f(x);
  x[i] = saved - h;
  const double down = f(x);
  x[i] = saved;
  return (up - down) / (2.0 * h);
}

}  // namespace twodpo::testing
