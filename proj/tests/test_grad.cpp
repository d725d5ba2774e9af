#include <doctest.h>

#include "fd_checks.hpp"

// Central-difference validation of every primitive (20 random instances per
// op, 64-bit, threshold 1e-4) and the full detection objective (threshold
// 1e-3).  Seeds are fixed, so a pass here is a pass forever.

TEST_SUITE("grad") {
  TEST_CASE("primitive gradients match central differences") {
    for (const testutil::FdCheck& check : testutil::primitive_fd_checks()) {
      CAPTURE(check.name);
      double worst = 0.0;
      for (uint64_t i = 0; i < 20; ++i)
        worst = std::max(worst, check.run(1000 + 17 * i));
      INFO(check.name << " worst relative error " << worst);
      CHECK(worst < 1e-4);
    }
  }

  TEST_CASE("full objective gradient matches central differences") {
    double worst = 0.0;
    for (uint64_t i = 0; i < 20; ++i)
      worst = std::max(worst, testutil::objective_fd_error(2000 + 31 * i));
    INFO("objective worst relative error " << worst);
    CHECK(worst < 1e-3);
  }
}
