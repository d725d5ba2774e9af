#pragma once

// Finite-difference validation of every differentiable primitive and of the
// full detection objective, shared by the unit suite and the acceptance
// gate.  All checks run in 64-bit precision; each named check maps a seed to
// the worst relative gradient error over one random instance.

#include <array>
#include <functional>
#include <string>
#include <vector>

#include "support.hpp"
#include "tabor/architecture.hpp"
#include "tabor/detector.hpp"
#include "tabor/network.hpp"

namespace testutil {

struct FdCheck {
  std::string name;
  std::function<double(uint64_t seed)> run;
};

// d6 draws a small positive dimension so instances vary in shape as well as
// in values.
inline int vary_dim(tabor::Rng& rng, int lo, int hi) { return rng.uniform_int(lo, hi); }

inline std::vector<FdCheck> primitive_fd_checks() {
  using tabor::Rng;
  std::vector<FdCheck> checks;
  auto add = [&](std::string name, std::function<double(uint64_t)> fn) {
    checks.push_back({std::move(name), std::move(fn)});
  };

  add("add", [](uint64_t seed) {
    Rng rng(seed);
    int n = vary_dim(rng, 2, 6), m = vary_dim(rng, 2, 6);
    std::vector<int> shape{n, m};
    size_t count = static_cast<size_t>(n) * m;
    return grad_check({shape, shape},
                      {uniform_values(rng, count, -2, 2), uniform_values(rng, count, -2, 2)},
                      [seed](const std::vector<DTensor>& x) {
                        return weighted_sum(tabor::add(x[0], x[1]), seed + 1);
                      });
  });
  add("sub", [](uint64_t seed) {
    Rng rng(seed);
    int n = vary_dim(rng, 2, 6), m = vary_dim(rng, 2, 6);
    std::vector<int> shape{n, m};
    size_t count = static_cast<size_t>(n) * m;
    return grad_check({shape, shape},
                      {uniform_values(rng, count, -2, 2), uniform_values(rng, count, -2, 2)},
                      [seed](const std::vector<DTensor>& x) {
                        return weighted_sum(tabor::sub(x[0], x[1]), seed + 1);
                      });
  });
  add("mul", [](uint64_t seed) {
    Rng rng(seed);
    int n = vary_dim(rng, 2, 6), m = vary_dim(rng, 2, 6);
    std::vector<int> shape{n, m};
    size_t count = static_cast<size_t>(n) * m;
    return grad_check({shape, shape},
                      {uniform_values(rng, count, -2, 2), uniform_values(rng, count, -2, 2)},
                      [seed](const std::vector<DTensor>& x) {
                        return weighted_sum(tabor::mul(x[0], x[1]), seed + 1);
                      });
  });
  add("add_scalar", [](uint64_t seed) {
    Rng rng(seed);
    int n = vary_dim(rng, 2, 8);
    double c = rng.uniform(-2, 2);
    return grad_check({{n}}, {uniform_values(rng, static_cast<size_t>(n), -2, 2)},
                      [seed, c](const std::vector<DTensor>& x) {
                        return weighted_sum(tabor::add_scalar(x[0], c), seed + 1);
                      });
  });
  add("mul_scalar", [](uint64_t seed) {
    Rng rng(seed);
    int n = vary_dim(rng, 2, 8);
    double c = rng.uniform(-2, 2);
    return grad_check({{n}}, {uniform_values(rng, static_cast<size_t>(n), -2, 2)},
                      [seed, c](const std::vector<DTensor>& x) {
                        return weighted_sum(tabor::mul_scalar(x[0], c), seed + 1);
                      });
  });
  add("rsub_scalar", [](uint64_t seed) {
    Rng rng(seed);
    int n = vary_dim(rng, 2, 8);
    double c = rng.uniform(-2, 2);
    return grad_check({{n}}, {uniform_values(rng, static_cast<size_t>(n), -2, 2)},
                      [seed, c](const std::vector<DTensor>& x) {
                        return weighted_sum(tabor::rsub_scalar(c, x[0]), seed + 1);
                      });
  });
  add("relu", [](uint64_t seed) {
    Rng rng(seed);
    int n = vary_dim(rng, 4, 12);
    return grad_check({{n}}, {kink_free_values(rng, static_cast<size_t>(n))},
                      [seed](const std::vector<DTensor>& x) {
                        return weighted_sum(tabor::relu(x[0]), seed + 1);
                      });
  });
  add("sigmoid", [](uint64_t seed) {
    Rng rng(seed);
    int n = vary_dim(rng, 4, 12);
    return grad_check({{n}}, {uniform_values(rng, static_cast<size_t>(n), -4, 4)},
                      [seed](const std::vector<DTensor>& x) {
                        return weighted_sum(tabor::sigmoid(x[0]), seed + 1);
                      });
  });
  add("square", [](uint64_t seed) {
    Rng rng(seed);
    int n = vary_dim(rng, 4, 12);
    return grad_check({{n}}, {uniform_values(rng, static_cast<size_t>(n), -2, 2)},
                      [seed](const std::vector<DTensor>& x) {
                        return weighted_sum(tabor::square(x[0]), seed + 1);
                      });
  });
  add("log", [](uint64_t seed) {
    Rng rng(seed);
    int n = vary_dim(rng, 4, 12);
    return grad_check({{n}}, {uniform_values(rng, static_cast<size_t>(n), 0.2, 3.0)},
                      [seed](const std::vector<DTensor>& x) {
                        return weighted_sum(tabor::log(x[0]), seed + 1);
                      });
  });
  add("sum", [](uint64_t seed) {
    Rng rng(seed);
    int n = vary_dim(rng, 4, 12);
    return grad_check({{n}}, {uniform_values(rng, static_cast<size_t>(n), -2, 2)},
                      [](const std::vector<DTensor>& x) { return tabor::sum(x[0]); });
  });
  add("mean", [](uint64_t seed) {
    Rng rng(seed);
    int n = vary_dim(rng, 4, 12);
    return grad_check({{n}}, {uniform_values(rng, static_cast<size_t>(n), -2, 2)},
                      [](const std::vector<DTensor>& x) { return tabor::mean(x[0]); });
  });
  add("l1_norm", [](uint64_t seed) {
    Rng rng(seed);
    int n = vary_dim(rng, 4, 12);
    return grad_check({{n}}, {kink_free_values(rng, static_cast<size_t>(n))},
                      [](const std::vector<DTensor>& x) { return tabor::l1_norm(x[0]); });
  });
  add("l2_norm", [](uint64_t seed) {
    Rng rng(seed);
    int n = vary_dim(rng, 4, 12);
    return grad_check({{n}}, {kink_free_values(rng, static_cast<size_t>(n), 0.2)},
                      [](const std::vector<DTensor>& x) { return tabor::l2_norm(x[0]); });
  });
  add("matmul", [](uint64_t seed) {
    Rng rng(seed);
    int n = vary_dim(rng, 2, 4), k = vary_dim(rng, 2, 4), m = vary_dim(rng, 2, 4);
    return grad_check({{n, k}, {k, m}},
                      {uniform_values(rng, static_cast<size_t>(n) * k, -1, 1),
                       uniform_values(rng, static_cast<size_t>(k) * m, -1, 1)},
                      [seed](const std::vector<DTensor>& x) {
                        return weighted_sum(tabor::matmul(x[0], x[1]), seed + 1);
                      });
  });
  add("add_rowvec", [](uint64_t seed) {
    Rng rng(seed);
    int n = vary_dim(rng, 2, 5), m = vary_dim(rng, 2, 5);
    return grad_check({{n, m}, {m}},
                      {uniform_values(rng, static_cast<size_t>(n) * m, -1, 1),
                       uniform_values(rng, static_cast<size_t>(m), -1, 1)},
                      [seed](const std::vector<DTensor>& x) {
                        return weighted_sum(tabor::add_rowvec(x[0], x[1]), seed + 1);
                      });
  });
  add("conv2d", [](uint64_t seed) {
    Rng rng(seed);
    int n = vary_dim(rng, 1, 2), h = vary_dim(rng, 4, 6), w = vary_dim(rng, 4, 6);
    int ci = vary_dim(rng, 1, 2), co = vary_dim(rng, 1, 2);
    return grad_check({{n, h, w, ci}, {3, 3, ci, co}},
                      {uniform_values(rng, static_cast<size_t>(n) * h * w * ci, -1, 1),
                       uniform_values(rng, static_cast<size_t>(9) * ci * co, -1, 1)},
                      [seed](const std::vector<DTensor>& x) {
                        return weighted_sum(tabor::conv2d(x[0], x[1]), seed + 1);
                      });
  });
  add("add_channel_bias", [](uint64_t seed) {
    Rng rng(seed);
    int n = vary_dim(rng, 1, 2), h = vary_dim(rng, 2, 4), w = vary_dim(rng, 2, 4);
    int c = vary_dim(rng, 1, 3);
    return grad_check({{n, h, w, c}, {c}},
                      {uniform_values(rng, static_cast<size_t>(n) * h * w * c, -1, 1),
                       uniform_values(rng, static_cast<size_t>(c), -1, 1)},
                      [seed](const std::vector<DTensor>& x) {
                        return weighted_sum(tabor::add_channel_bias(x[0], x[1]), seed + 1);
                      });
  });
  add("maxpool2", [](uint64_t seed) {
    Rng rng(seed);
    int n = vary_dim(rng, 1, 2), h = 2 * vary_dim(rng, 1, 3), w = 2 * vary_dim(rng, 1, 3);
    int c = vary_dim(rng, 1, 2);
    return grad_check({{n, h, w, c}},
                      {distinct_values(rng, static_cast<size_t>(n) * h * w * c)},
                      [seed](const std::vector<DTensor>& x) {
                        return weighted_sum(tabor::maxpool2(x[0]), seed + 1);
                      });
  });
  add("softmax_rows", [](uint64_t seed) {
    Rng rng(seed);
    int n = vary_dim(rng, 1, 3), c = vary_dim(rng, 2, 5);
    return grad_check({{n, c}},
                      {uniform_values(rng, static_cast<size_t>(n) * c, -2, 2)},
                      [seed](const std::vector<DTensor>& x) {
                        return weighted_sum(tabor::softmax_rows(x[0]), seed + 1);
                      });
  });
  add("cross_entropy_softmax", [](uint64_t seed) {
    Rng rng(seed);
    int n = vary_dim(rng, 1, 4), c = vary_dim(rng, 2, 5);
    std::vector<int> labels(static_cast<size_t>(n));
    for (int& y : labels) y = rng.uniform_int(0, c - 1);
    return grad_check({{n, c}},
                      {uniform_values(rng, static_cast<size_t>(n) * c, -2, 2)},
                      [labels](const std::vector<DTensor>& x) {
                        return tabor::cross_entropy_softmax(x[0], labels);
                      });
  });
  add("reshape", [](uint64_t seed) {
    Rng rng(seed);
    int n = vary_dim(rng, 2, 4), m = vary_dim(rng, 2, 4);
    return grad_check({{n, m}},
                      {uniform_values(rng, static_cast<size_t>(n) * m, -2, 2)},
                      [seed, n, m](const std::vector<DTensor>& x) {
                        return weighted_sum(tabor::reshape(x[0], {m, n}), seed + 1);
                      });
  });
  add("broadcast_channels", [](uint64_t seed) {
    Rng rng(seed);
    int h = vary_dim(rng, 2, 4), w = vary_dim(rng, 2, 4), c = vary_dim(rng, 1, 3);
    return grad_check({{h, w}},
                      {uniform_values(rng, static_cast<size_t>(h) * w, -2, 2)},
                      [seed, c](const std::vector<DTensor>& x) {
                        return weighted_sum(tabor::broadcast_channels(x[0], c), seed + 1);
                      });
  });
  add("broadcast_batch", [](uint64_t seed) {
    Rng rng(seed);
    int h = vary_dim(rng, 2, 4), w = vary_dim(rng, 2, 4), n = vary_dim(rng, 1, 3);
    return grad_check({{h, w}},
                      {uniform_values(rng, static_cast<size_t>(h) * w, -2, 2)},
                      [seed, n](const std::vector<DTensor>& x) {
                        return weighted_sum(tabor::broadcast_batch(x[0], n), seed + 1);
                      });
  });
  add("smoothness", [](uint64_t seed) {
    Rng rng(seed);
    int h = vary_dim(rng, 2, 5), w = vary_dim(rng, 2, 5);
    bool stacked = rng.next_double() < 0.5;
    int c = stacked ? vary_dim(rng, 2, 3) : 1;
    std::vector<int> shape = stacked ? std::vector<int>{h, w, c} : std::vector<int>{h, w};
    return grad_check({shape},
                      {uniform_values(rng, static_cast<size_t>(h) * w * c, -2, 2)},
                      [](const std::vector<DTensor>& x) { return tabor::smoothness(x[0]); });
  });
  add("sigmoid_conv_dense_chain", [](uint64_t seed) {
    // Composite: a two-layer network end to end, weights and input all
    // differentiated at once.
    Rng rng(seed);
    int n = 2, h = 6, w = 6, ci = 1, co = 2, classes = 3;
    int flat = (h - 2) * (w - 2) * co;
    std::vector<int> labels(static_cast<size_t>(n));
    for (int& y : labels) y = rng.uniform_int(0, classes - 1);
    return grad_check(
        {{n, h, w, ci}, {3, 3, ci, co}, {co}, {flat, classes}, {classes}},
        {uniform_values(rng, static_cast<size_t>(n) * h * w * ci, -1, 1),
         uniform_values(rng, static_cast<size_t>(9) * ci * co, -0.5, 0.5),
         uniform_values(rng, static_cast<size_t>(co), -0.5, 0.5),
         uniform_values(rng, static_cast<size_t>(flat) * classes, -0.5, 0.5),
         uniform_values(rng, static_cast<size_t>(classes), -0.5, 0.5)},
        [labels, n](const std::vector<DTensor>& x) {
          DTensor a = tabor::sigmoid(tabor::add_channel_bias(tabor::conv2d(x[0], x[1]), x[2]));
          DTensor flatd = tabor::reshape(a, {n, static_cast<int>(a.numel() / n)});
          DTensor z = tabor::add_rowvec(tabor::matmul(flatd, x[3]), x[4]);
          return tabor::cross_entropy_softmax(z, labels);
        });
  });
  return checks;
}

// Full detection objective differentiated through a small real network with
// every regularizer active; checks the gradients that the solver actually
// consumes (mask and pattern logits).
inline double objective_fd_error(uint64_t seed) {
  using tabor::Rng;
  Rng rng(seed);
  const int n = 2, h = 8, w = 8, c = 3, classes = 3;
  tabor::Architecture arch =
      tabor::Architecture::parse("conv2,relu,maxpool,flatten,dense3,softmax", h, w, c, classes);
  auto net = tabor::NetworkT<double>::build(arch, seed ^ 0x5eedf00dull);

  tabor::DetectorConfig cfg;
  cfg.mode = tabor::DetectorConfig::Mode::Tabor;
  const std::array<double, 6> lambdas{1e-2, 1e-2, 1e-3, 1e-3, 1e-2, 1e-2};

  DTensor batch({n, h, w, c},
                uniform_values(rng, static_cast<size_t>(n) * h * w * c, 0.0, 1.0));
  std::vector<int> labels(static_cast<size_t>(n));
  for (int& y : labels) y = rng.uniform_int(0, classes - 1);
  const int target = rng.uniform_int(0, classes - 1);

  return grad_check(
      {{h, w}, {h, w, c}},
      {uniform_values(rng, static_cast<size_t>(h) * w, -3, 1),
       uniform_values(rng, static_cast<size_t>(h) * w * c, -1, 1)},
      [&](const std::vector<DTensor>& x) {
        return tabor::build_objective<double>(net, batch, labels, target, x[0], x[1], cfg,
                                              lambdas)
            .objective;
      });
}

}  // namespace testutil
