#include <algorithm>
#include <numeric>

#include "sleepdet/training.hpp"

namespace sleepdet::train {

namespace {

constexpr int kReferenceCohort = 994;

// Slice boundaries of the reference cohort, scaled proportionally elsewhere.
int scaled(int boundary, int n) {
  if (n == kReferenceCohort) return boundary;
  const double f = static_cast<double>(boundary) * static_cast<double>(n) /
                   static_cast<double>(kReferenceCohort);
  return static_cast<int>(std::llround(f));
}

std::vector<int> slice(const std::vector<int>& order, int lo, int hi) {
  return {order.begin() + lo, order.begin() + hi};
}

std::vector<int> concat(std::vector<int> a, const std::vector<int>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

}  // namespace

std::array<FoldPlan, 4> make_folds(int n_records, uint64_t seed) {
  if (n_records < 10)
    throw ValidationError("folds: need at least 10 records for three non-empty splits");
  std::vector<int> order(static_cast<size_t>(n_records));
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);

  const int b100 = scaled(100, n_records), b200 = scaled(200, n_records);
  const int b300 = scaled(300, n_records), b400 = scaled(400, n_records);
  const int b600 = scaled(600, n_records), b700 = scaled(700, n_records);
  const int b894 = scaled(894, n_records), bEnd = n_records;
  if (b100 < 1 || b200 <= b100 || bEnd <= b894)
    throw ValidationError("folds: cohort too small for non-empty splits");

  std::array<FoldPlan, 4> folds;
  const auto testing = slice(order, 0, b100);  // consistent across folds
  folds[0] = {1, slice(order, b200, bEnd), slice(order, b100, b200), testing};
  folds[1] = {2, concat(slice(order, b100, b300), slice(order, b400, bEnd)),
              slice(order, b300, b400), testing};
  folds[2] = {3, concat(slice(order, b100, b600), slice(order, b700, bEnd)),
              slice(order, b600, b700), testing};
  folds[3] = {4, slice(order, b100, b894), slice(order, b894, bEnd), testing};
  for (const auto& f : folds)
    if (f.training.empty() || f.validation.empty() || f.testing.empty())
      throw ValidationError("folds: cohort too small for non-empty splits");
  return folds;
}

}  // namespace sleepdet::train
