#pragma once

// Shared helpers for the unit and acceptance suites: seeded value
// generators, a central-difference gradient checker, and a scoped temp
// directory for file-format tests.

#include <unistd.h>

#include <atomic>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "tabor/ops.hpp"
#include "tabor/rng.hpp"
#include "tabor/tape.hpp"
#include "tabor/tensor.hpp"

namespace testutil {

using DTensor = tabor::TensorT<double>;

// Uniform values in [lo, hi].
inline std::vector<double> uniform_values(tabor::Rng& rng, size_t n, double lo, double hi) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(lo, hi);
  return v;
}

// Uniform in [-mag, -margin] ∪ [margin, mag]: keeps finite differences away
// from the kink of relu/l1 at zero.
inline std::vector<double> kink_free_values(tabor::Rng& rng, size_t n, double margin = 0.05,
                                            double mag = 1.0) {
  std::vector<double> v(n);
  for (double& x : v) {
    double m = rng.uniform(margin, mag);
    x = rng.next_double() < 0.5 ? -m : m;
  }
  return v;
}

// Strictly distinct values with pairwise gaps far above the finite-difference
// step, so max-pool argmaxes cannot flip under perturbation.
inline std::vector<double> distinct_values(tabor::Rng& rng, size_t n) {
  std::vector<double> v(n);
  std::vector<int> rank(n);
  for (size_t i = 0; i < n; ++i) rank[i] = static_cast<int>(i);
  rng.shuffle(rank);
  for (size_t i = 0; i < n; ++i) {
    double base = -1.0 + 2.0 * rank[i] / static_cast<double>(n);
    v[i] = base + rng.uniform(0.0, 0.5 / static_cast<double>(n));
  }
  return v;
}

// Worst element of |analytic - numeric| / max(1, |analytic|, |numeric|) over
// every element of every input.  `build` receives freshly constructed
// tensors each evaluation and must return a scalar; only the analytic pass
// records on a tape.
template <class Build>
double grad_check(const std::vector<std::vector<int>>& shapes,
                  std::vector<std::vector<double>> vals, Build&& build, double h = 1e-4) {
  tabor::TapeT<double> tape;
  std::vector<DTensor> xs;
  xs.reserve(shapes.size());
  for (size_t i = 0; i < shapes.size(); ++i) {
    DTensor t(shapes[i], vals[i]);
    tape.watch(t);
    xs.push_back(t);
  }
  DTensor loss = build(xs);
  tape.backward(loss);
  std::vector<std::vector<double>> analytic;
  analytic.reserve(xs.size());
  for (const DTensor& t : xs) analytic.push_back(t.grad());

  auto eval = [&](const std::vector<std::vector<double>>& v) {
    std::vector<DTensor> ys;
    ys.reserve(shapes.size());
    for (size_t i = 0; i < shapes.size(); ++i) ys.emplace_back(shapes[i], v[i]);
    return build(ys).item();
  };

  double worst = 0.0;
  for (size_t i = 0; i < vals.size(); ++i) {
    for (size_t j = 0; j < vals[i].size(); ++j) {
      const double save = vals[i][j];
      vals[i][j] = save + h;
      const double fp = eval(vals);
      vals[i][j] = save - h;
      const double fm = eval(vals);
      vals[i][j] = save;
      const double numeric = (fp - fm) / (2.0 * h);
      const double a = analytic[i][j];
      const double denom = std::max({1.0, std::abs(a), std::abs(numeric)});
      worst = std::max(worst, std::abs(a - numeric) / denom);
    }
  }
  return worst;
}

// Reduces an arbitrary tensor to a scalar through a fixed random weighting,
// so gradient checks exercise non-uniform upstream gradients.
inline DTensor weighted_sum(const DTensor& t, uint64_t seed) {
  tabor::Rng rng(seed);
  std::vector<double> w(static_cast<size_t>(t.numel()));
  for (double& x : w) x = rng.uniform(-1.0, 1.0);
  return tabor::sum(tabor::mul(t, DTensor(t.shape(), std::move(w))));
}

// Self-cleaning unique directory under the system temp root.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    namespace fs = std::filesystem;
    static std::atomic<int> counter{0};
    path_ = fs::temp_directory_path() /
            ("tabor-test-" + tag + "-" + std::to_string(::getpid()) + "-" +
             std::to_string(counter.fetch_add(1)));
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  std::string file(const std::string& name) const { return (path_ / name).string(); }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

inline std::vector<uint8_t> slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  return std::vector<uint8_t>((std::istreambuf_iterator<char>(f)),
                              std::istreambuf_iterator<char>());
}

inline void spit(const std::string& path, const std::vector<uint8_t>& bytes) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  f.write(reinterpret_cast<const char*>(bytes.data()),
          static_cast<std::streamsize>(bytes.size()));
}

}  // namespace testutil
