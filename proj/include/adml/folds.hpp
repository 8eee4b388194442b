#pragma once

#include <cstdint>
#include <vector>

namespace adml {

// Balanced random partition of {0..n-1} into L folds; sizes differ by at most
// one and the assignment is deterministic in the seed.
std::vector<int> balanced_fold_assignment(int n, int L, std::uint64_t seed);

}  // namespace adml
