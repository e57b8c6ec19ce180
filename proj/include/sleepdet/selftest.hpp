#pragma once

#include <cstdint>
#include <string>
#include <vector>

// Full-engine gradient verification: every operator against central finite
// differences (float64, h = 1e-5) over seeded random shapes, plus one
// composite check of a dilated dense unit.

namespace sleepdet::ad {

struct SelftestItem {
  std::string op;
  int shapes = 0;
  double max_rel_error = 0;
  double tolerance = 0;
  bool pass = false;
};

struct SelftestReport {
  std::vector<SelftestItem> items;
  bool all_pass = false;
  double seconds = 0;
};

SelftestReport run_gradient_selftest(uint64_t seed = 20240501, int shapes_per_op = 20);
std::string format_selftest(const SelftestReport& report);

}  // namespace sleepdet::ad
