#pragma once

#include <vector>

#include "driftflow/types.hpp"

namespace driftflow {

/// Minimum-cost perfect matching on a square cost matrix by successive
/// shortest augmenting paths with dual potentials (Hungarian / Jonker-Volgenant
/// family). Returns col_of_row. O(n^3) worst case.
std::vector<int> solve_assignment(const Matrix& cost);

}  // namespace driftflow
